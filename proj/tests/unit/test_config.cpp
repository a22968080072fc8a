#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>

#include <unistd.h>

#include "flonet/config.hpp"
#include "flonet/error.hpp"

using namespace flonet;
using nlohmann::json;

namespace {

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars](const std::string& k) -> std::optional<std::string> {
    auto it = vars.find(k);
    if (it == vars.end()) return std::nullopt;
    return it->second;
  };
}

std::string write_temp(const std::string& leaf, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / ("flonet-" + std::to_string(::getpid()) + "-" + leaf);
  std::ofstream(p) << text;
  return p.string();
}

}  // namespace

TEST_CASE("defaults and derived paths") {
  const RunConfig c;
  CHECK(c.seed == 7);
  CHECK(c.rag.k_train == 5);
  CHECK(c.rag.k_infer == 1);
  CHECK(c.rag.beam_width == 5);
  CHECK(c.rag.max_decode_len == 60);
  CHECK(c.flowchart_path() == "data/flowcharts");
  CHECK(c.paraphrase_path() == "data/paraphrases");
  CHECK(c.corpus_path() == "out/corpus.jsonl");
  CHECK(c.checkpoint_path("g.json") == "out/checkpoints/g.json");
  RunConfig d;
  d.checkpoint_dir = "ck";
  d.faq_dir = "elsewhere";
  CHECK(d.checkpoint_path("g.json") == "ck/g.json");
  CHECK(d.faq_path() == "elsewhere");
}

TEST_CASE("JSON overlay and round trip") {
  const auto c = RunConfig::from_json(json::parse(R"({
    "seed": 11, "split": "unseen", "sources": "history+flowchart", "exec": "parallel",
    "rag": {"k_infer": 2, "nucleus_p": 0.9},
    "retriever": {"embed_dim": 16},
    "generator_train": {"epochs": 3},
    "serve": {"port": 9000}
  })"));
  CHECK(c.seed == 11);
  CHECK(c.split == SplitMode::unseen);
  CHECK(c.sources == KnowledgeSources::flowchart);
  CHECK(c.rag.k_infer == 2);
  CHECK(c.rag.k_train == 5);
  CHECK(c.rag.nucleus_p == 0.9);
  CHECK(c.retriever.embed_dim == 16);
  CHECK(c.generator_train.epochs == 3);
  CHECK(c.generator_train.exec == kernels::Exec::parallel);
  CHECK(c.rag_train.exec == kernels::Exec::parallel);
  CHECK(c.serve.port == 9000);
  CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("unknown keys and bad values are rejected") {
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"sed": 1})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"retriever": {"embed": 1}})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"rag": {"beam": 1}})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"seed": "x"})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"exec": "gpu"})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"serve": {"port": 70000}})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse(R"({"rag": {"k_infer": 9, "k_train": 2}})")), ValidationError);
  CHECK_THROWS_AS(RunConfig::from_json(json::parse("[1]")), ValidationError);
}

TEST_CASE("precedence: defaults < file < environment") {
  const auto path = write_temp("cfg.json", R"({"seed": 3, "data_dir": "fromfile", "serve": {"port": 1234}})");
  auto c = load_run_config(path, env_of({}));
  CHECK(c.seed == 3);
  CHECK(c.data_dir == "fromfile");
  CHECK(c.serve.port == 1234);
  c = load_run_config(path, env_of({{"FLONET_SEED", "99"}, {"FLONET_DATA_DIR", "fromenv"}, {"FLONET_PORT", "8181"}}));
  CHECK(c.seed == 99);
  CHECK(c.data_dir == "fromenv");
  CHECK(c.serve.port == 8181);
  CHECK(load_run_config("", env_of({})).seed == 7);
  CHECK_THROWS_AS(load_run_config("", env_of({{"FLONET_SEED", "12x"}})), ValidationError);
  CHECK_THROWS_AS(load_run_config("", env_of({{"FLONET_PORT", "-1"}})), ValidationError);
  std::filesystem::remove(path);

  const auto broken = write_temp("broken.json", "{ \"seed\": ");
  CHECK_THROWS_AS(load_run_config(broken, env_of({})), ParseError);
  std::filesystem::remove(broken);
  CHECK_THROWS_AS(load_run_config("/nonexistent/flonet.json", env_of({})), Error);
}
