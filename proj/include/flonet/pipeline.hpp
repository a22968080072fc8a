#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "flonet/config.hpp"
#include "flonet/service.hpp"

namespace flonet {

/// Charts and FAQs named by the config (every chart when the list is empty).
KnowledgeBase load_knowledge(const RunConfig& cfg);

struct SplitData {
  SplitSpec spec;
  std::vector<Dialog> train, val, test;

  const std::vector<Dialog>& by_name(const std::string& name) const;
};

/// Forges the corpus and its split; writes both and returns them.
SplitData run_synth(const RunConfig& cfg, const KnowledgeBase& kb);
SplitData load_split_data(const RunConfig& cfg);

/// Stage checkpoints under the checkpoint directory.
inline constexpr const char* kPretrainedRetriever = "pretrained-retriever.json";
inline constexpr const char* kPretrainedGenerator = "pretrained-generator.json";
inline constexpr const char* kRetriever = "retriever.json";
inline constexpr const char* kGenerator = "generator.json";
inline constexpr const char* kDocumentIndex = "document-index.json";

RetrieverTrainLog run_pretrain_retriever(const RunConfig& cfg, const KnowledgeBase& kb, const SplitData& data,
                                         std::ostream& log);
GeneratorTrainLog run_pretrain_generator(const RunConfig& cfg, const KnowledgeBase& kb, const SplitData& data,
                                         std::ostream& log);
/// Joint training from the pre-trained checkpoints, or from fresh models when
/// `from_scratch` is set.
RagTrainLog run_train(const RunConfig& cfg, const KnowledgeBase& kb, const SplitData& data, bool from_scratch,
                      std::ostream& log);

enum class SystemKind { flonet, tfidf, oracle };
SystemKind system_from_string(const std::string& s);

/// Models behind one evaluation or serving run.
struct LoadedModels {
  std::unique_ptr<Retriever> retriever;
  std::unique_ptr<Generator> generator;
};

/// flonet: the jointly trained checkpoints (falling back to pre-trained ones);
/// tfidf: TF-IDF retrieval with the flonet generator; oracle: gold retrieval
/// over `dialogs` with the template generator.
LoadedModels load_models(const RunConfig& cfg, const KnowledgeBase& kb, SystemKind system,
                         const std::vector<Dialog>& dialogs);

/// Evaluates one split and writes report.txt, report.json and records.ndjson
/// to the output directory.
EvalResult run_eval(const RunConfig& cfg, const KnowledgeBase& kb, const SplitData& data, SystemKind system,
                    const std::string& split_name, std::ostream& log);

}  // namespace flonet
