#pragma once

#include <string>
#include <vector>

#include "flonet/dialog.hpp"
#include "flonet/knowledge.hpp"

namespace fixtures {

inline std::string data(const std::string& leaf) { return std::string(FLONET_TEST_DATA) + "/" + leaf; }

inline std::string fixture(const std::string& leaf) { return std::string(FLONET_TEST_FIXTURES) + "/" + leaf; }

inline flonet::KnowledgeBase all_charts() { return flonet::KnowledgeBase::load(data("flowcharts"), data("faqs")); }

/// The three charts with hand-written paraphrase banks.
inline const std::vector<std::string>& toy_ids() {
  static const std::vector<std::string> ids = {"car-no-start-toy", "laptop-overheating", "wifi-no-connection"};
  return ids;
}

inline flonet::KnowledgeBase toy_charts() { return all_charts().subset(toy_ids()); }

inline flonet::ParaphraseBank bank() { return flonet::ParaphraseBank::load(data("paraphrases")); }

inline flonet::Flowchart car() { return flonet::load_flowchart_file(data("flowcharts/car-no-start-toy.json")); }

/// root --no--> a (terminal), root --yes--> b --no--> c, b --yes--> d.
inline flonet::Flowchart small_chart() {
  return flonet::load_flowchart(R"({"name": "small", "root": "r",
    "nodes": {"r": {"utterance": "Is it plugged in?"}, "a": {"utterance": "Plug it in."},
              "b": {"utterance": "Is the light on?"}, "c": {"utterance": "Replace the bulb."},
              "d": {"utterance": "Call support."}},
    "edges": {"r": {"no": "a", "yes": "b"}, "b": {"no": "c", "yes": "d"}}})",
                                "small");
}

inline flonet::FaqSet small_faqs() {
  return flonet::load_faqs(R"({"flowchart": "small", "faqs": [
    {"q": "Where is the plug?", "a": "Behind the unit."},
    {"q": "What light?", "a": "The green lamp on the front."}]})");
}

inline flonet::Utterance user(std::string text) { return {flonet::Speaker::user, std::move(text), std::nullopt}; }
inline flonet::Utterance agent(std::string text) { return {flonet::Speaker::agent, std::move(text), std::nullopt}; }

}  // namespace fixtures
