#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flonet/eval.hpp"

namespace flonet {

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string event_log;  // empty: no persistence
};

/// Everything a CLI run needs. Loaded from JSON; unknown keys are rejected at
/// every level.
struct RunConfig {
  std::string data_dir = "data";
  /// Default to <data_dir>/flowcharts, <data_dir>/faqs, <data_dir>/paraphrases.
  std::string flowchart_dir, faq_dir, paraphrase_dir;
  std::vector<std::string> flowcharts;  // empty: every chart found
  std::string out_dir = "out";
  /// Default to <out_dir>/corpus.jsonl, <out_dir>/split.json, <out_dir>/checkpoints.
  std::string corpus, split_file, checkpoint_dir;
  std::uint64_t seed = 7;
  SplitMode split = SplitMode::seen;
  KnowledgeSources sources = KnowledgeSources::flowchart_faq;
  kernels::Exec exec = kernels::Exec::serial;

  SynthConfig synth;
  RagConfig rag;
  RetrieverConfig retriever;
  RetrieverTrainConfig retriever_train;
  TransformerConfig generator;
  GeneratorTrainConfig generator_train;
  RagTrainConfig rag_train;
  ServeConfig serve;

  std::string flowchart_path() const;
  std::string faq_path() const;
  std::string paraphrase_path() const;
  std::string corpus_path() const;
  std::string split_path() const;
  std::string checkpoint_path(const std::string& name) const;

  nlohmann::json to_json() const;
  /// Overlays the keys present in `j` on `base`.
  static RunConfig from_json(const nlohmann::json& j, RunConfig base);
  static RunConfig from_json(const nlohmann::json& j) { return from_json(j, RunConfig{}); }
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

/// Process environment.
std::optional<std::string> process_env(const std::string& name);

/// Defaults, then the file (if any), then FLONET_DATA_DIR, FLONET_SEED and
/// FLONET_PORT.
RunConfig load_run_config(const std::string& path, const EnvLookup& env = process_env);

}  // namespace flonet
