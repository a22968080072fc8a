#include "flonet/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "flonet/error.hpp"

namespace flonet {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

/// Reads the keys of one JSON object and rejects anything left over.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw ValidationError("config: '" + name_ + "' must be an object");
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ValidationError("config: unknown key '" + name_ + "." + k + "'");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ValidationError("config: bad value for '" + name_ + "." + key + "': " + e.what());
    }
  }
  const json* sub(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

kernels::Exec exec_from_string(const std::string& s) {
  if (s == "serial") return kernels::Exec::serial;
  if (s == "parallel") return kernels::Exec::parallel;
  throw ValidationError("config: exec must be 'serial' or 'parallel'");
}

std::string_view exec_name(kernels::Exec e) { return e == kernels::Exec::serial ? "serial" : "parallel"; }

std::string join(const std::string& dir, const std::string& leaf) { return (fs::path(dir) / leaf).string(); }

}  // namespace

std::string RunConfig::flowchart_path() const { return flowchart_dir.empty() ? join(data_dir, "flowcharts") : flowchart_dir; }
std::string RunConfig::faq_path() const { return faq_dir.empty() ? join(data_dir, "faqs") : faq_dir; }
std::string RunConfig::paraphrase_path() const {
  return paraphrase_dir.empty() ? join(data_dir, "paraphrases") : paraphrase_dir;
}
std::string RunConfig::corpus_path() const { return corpus.empty() ? join(out_dir, "corpus.jsonl") : corpus; }
std::string RunConfig::split_path() const { return split_file.empty() ? join(out_dir, "split.json") : split_file; }
std::string RunConfig::checkpoint_path(const std::string& name) const {
  return join(checkpoint_dir.empty() ? join(out_dir, "checkpoints") : checkpoint_dir, name);
}

json RunConfig::to_json() const {
  return {{"data_dir", data_dir},
          {"flowchart_dir", flowchart_dir},
          {"faq_dir", faq_dir},
          {"paraphrase_dir", paraphrase_dir},
          {"flowcharts", flowcharts},
          {"out_dir", out_dir},
          {"corpus", corpus},
          {"split_file", split_file},
          {"checkpoint_dir", checkpoint_dir},
          {"seed", seed},
          {"split", to_string(split)},
          {"sources", to_string(sources)},
          {"exec", exec_name(exec)},
          {"synth",
           {{"complex_prob", synth.complex_prob},
            {"secondary_prob", synth.secondary_prob},
            {"irrelevant_prob", synth.irrelevant_prob},
            {"user_digression_share", synth.user_digression_share},
            {"outlines_per_flowchart", synth.outlines_per_flowchart},
            {"interchange_factor", synth.interchange_factor}}},
          {"rag", rag.to_json()},
          {"retriever",
           {{"embed_dim", retriever.embed_dim},
            {"hidden_dim", retriever.hidden_dim},
            {"speaker_embeddings", retriever.speaker_embeddings},
            {"shared_encoder", retriever.shared_encoder}}},
          {"retriever_train",
           {{"epochs", retriever_train.epochs},
            {"batch_dialogs", retriever_train.batch_dialogs},
            {"lr", retriever_train.lr},
            {"margin", retriever_train.margin},
            {"negatives", retriever_train.negatives},
            {"patience", retriever_train.patience},
            {"freeze_embeddings", retriever_train.freeze_embeddings},
            {"chunk", retriever_train.chunk}}},
          {"generator",
           {{"d_model", generator.d_model},
            {"layers", generator.layers},
            {"heads", generator.heads},
            {"ff_mult", generator.ff_mult},
            {"max_positions", generator.max_positions},
            {"max_response", generator.max_response}}},
          {"generator_train",
           {{"epochs", generator_train.epochs},
            {"batch", generator_train.batch},
            {"lr", generator_train.lr},
            {"lambda", generator_train.lambda},
            {"patience", generator_train.patience},
            {"val_decode_limit", generator_train.val_decode_limit},
            {"chunk", generator_train.chunk}}},
          {"rag_train",
           {{"epochs", rag_train.epochs},
            {"batch", rag_train.batch},
            {"lr_generator", rag_train.lr_generator},
            {"lr_retriever", rag_train.lr_retriever},
            {"freeze_retriever", rag_train.freeze_retriever},
            {"patience", rag_train.patience},
            {"chunk", rag_train.chunk}}},
          {"serve", {{"host", serve.host}, {"port", serve.port}, {"event_log", serve.event_log}}}};
}

RunConfig RunConfig::from_json(const json& j, RunConfig c) {
  Section s(j, "config");
  s.get("data_dir", c.data_dir);
  s.get("flowchart_dir", c.flowchart_dir);
  s.get("faq_dir", c.faq_dir);
  s.get("paraphrase_dir", c.paraphrase_dir);
  s.get("flowcharts", c.flowcharts);
  s.get("out_dir", c.out_dir);
  s.get("corpus", c.corpus);
  s.get("split_file", c.split_file);
  s.get("checkpoint_dir", c.checkpoint_dir);
  s.get("seed", c.seed);
  std::string str;
  if (const auto* v = s.sub("split")) c.split = split_mode_from_string(v->get<std::string>());
  if (const auto* v = s.sub("sources")) c.sources = knowledge_sources_from_string(v->get<std::string>());
  if (const auto* v = s.sub("exec")) c.exec = exec_from_string(v->get<std::string>());
  if (const auto* v = s.sub("synth")) {
    Section t(*v, "synth");
    t.get("complex_prob", c.synth.complex_prob);
    t.get("secondary_prob", c.synth.secondary_prob);
    t.get("irrelevant_prob", c.synth.irrelevant_prob);
    t.get("user_digression_share", c.synth.user_digression_share);
    t.get("outlines_per_flowchart", c.synth.outlines_per_flowchart);
    t.get("interchange_factor", c.synth.interchange_factor);
  }
  if (const auto* v = s.sub("rag")) {
    json merged = c.rag.to_json();
    for (const auto& [k, x] : v->items()) merged[k] = x;
    c.rag = RagConfig::from_json(merged);
  }
  if (const auto* v = s.sub("retriever")) {
    Section t(*v, "retriever");
    t.get("embed_dim", c.retriever.embed_dim);
    t.get("hidden_dim", c.retriever.hidden_dim);
    t.get("speaker_embeddings", c.retriever.speaker_embeddings);
    t.get("shared_encoder", c.retriever.shared_encoder);
  }
  if (const auto* v = s.sub("retriever_train")) {
    Section t(*v, "retriever_train");
    t.get("epochs", c.retriever_train.epochs);
    t.get("batch_dialogs", c.retriever_train.batch_dialogs);
    t.get("lr", c.retriever_train.lr);
    t.get("margin", c.retriever_train.margin);
    t.get("negatives", c.retriever_train.negatives);
    t.get("patience", c.retriever_train.patience);
    t.get("freeze_embeddings", c.retriever_train.freeze_embeddings);
    t.get("chunk", c.retriever_train.chunk);
  }
  if (const auto* v = s.sub("generator")) {
    Section t(*v, "generator");
    t.get("d_model", c.generator.d_model);
    t.get("layers", c.generator.layers);
    t.get("heads", c.generator.heads);
    t.get("ff_mult", c.generator.ff_mult);
    t.get("max_positions", c.generator.max_positions);
    t.get("max_response", c.generator.max_response);
  }
  if (const auto* v = s.sub("generator_train")) {
    Section t(*v, "generator_train");
    t.get("epochs", c.generator_train.epochs);
    t.get("batch", c.generator_train.batch);
    t.get("lr", c.generator_train.lr);
    t.get("lambda", c.generator_train.lambda);
    t.get("patience", c.generator_train.patience);
    t.get("val_decode_limit", c.generator_train.val_decode_limit);
    t.get("chunk", c.generator_train.chunk);
  }
  if (const auto* v = s.sub("rag_train")) {
    Section t(*v, "rag_train");
    t.get("epochs", c.rag_train.epochs);
    t.get("batch", c.rag_train.batch);
    t.get("lr_generator", c.rag_train.lr_generator);
    t.get("lr_retriever", c.rag_train.lr_retriever);
    t.get("freeze_retriever", c.rag_train.freeze_retriever);
    t.get("patience", c.rag_train.patience);
    t.get("chunk", c.rag_train.chunk);
  }
  if (const auto* v = s.sub("serve")) {
    Section t(*v, "serve");
    t.get("host", c.serve.host);
    t.get("port", c.serve.port);
    t.get("event_log", c.serve.event_log);
  }
  if (c.serve.port < 0 || c.serve.port > 65535) throw ValidationError("config: serve.port out of range");
  c.retriever_train.exec = c.generator_train.exec = c.rag_train.exec = c.exec;
  return c;
}

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (!v) return std::nullopt;
  return std::string(v);
}

RunConfig load_run_config(const std::string& path, const EnvLookup& env) {
  RunConfig c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config " + path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError(path + ": " + e.what());
    }
    c = RunConfig::from_json(j, c);
  }
  if (auto v = env("FLONET_DATA_DIR")) c.data_dir = *v;
  if (auto v = env("FLONET_SEED")) {
    try {
      std::size_t used = 0;
      c.seed = std::stoull(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ValidationError("FLONET_SEED is not an unsigned integer: '" + *v + "'");
    }
  }
  if (auto v = env("FLONET_PORT")) {
    try {
      std::size_t used = 0;
      c.serve.port = std::stoi(*v, &used);
      if (used != v->size() || c.serve.port < 0 || c.serve.port > 65535) throw std::invalid_argument("range");
    } catch (const std::exception&) {
      throw ValidationError("FLONET_PORT is not a valid port: '" + *v + "'");
    }
  }
  return c;
}

}  // namespace flonet
