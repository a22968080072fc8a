#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flonet/rag.hpp"

namespace flonet {

/// Fraction of positions where retrieved == gold.
double recall_at_1(const std::vector<std::string>& retrieved, const std::vector<std::string>& gold);

/// Fraction of dialogs whose every position is correct. Dialogs with no
/// positions count as successes.
double success_rate(const std::vector<std::vector<std::string>>& retrieved,
                    const std::vector<std::vector<std::string>>& gold);

/// Mean over dialogs of the per-dialog R@1. Always >= success_rate.
double dialog_recall_at_1(const std::vector<std::vector<std::string>>& retrieved,
                          const std::vector<std::vector<std::string>>& gold);

/// exp of the mean per-token NLL under the top-k marginal (k = 1 gives the
/// top-1 conditional perplexity).
double perplexity(const Retriever& r, const Generator& g, const std::vector<RagExample>& examples, std::size_t k);

enum class RetrievalErrorKind { sibling, parent, faq, other };

std::string_view to_string(RetrievalErrorKind k);

/// Taxonomy of a wrong retrieval for a node-grounded turn. Throws
/// ValidationError when gold is an FAQ document or retrieved == gold.
RetrievalErrorKind classify_retrieval_error(const Document& retrieved, const Document& gold, const Flowchart& f);

/// One evaluated agent turn.
struct TurnRecord {
  std::string dialog_id;
  std::string flowchart_id;
  std::size_t utterance_index = 0;
  Digression digression = Digression::none;
  bool closing = false;
  std::string gold_doc_id;       // empty when the turn has no grounding
  std::string retrieved_doc_id;
  std::string reference;
  std::string prediction;
  std::optional<RetrievalErrorKind> error;

  bool counts_for_retrieval() const { return !closing && !gold_doc_id.empty(); }
  nlohmann::json to_json() const;
};

struct ErrorBucket {
  std::size_t count = 0;
  double percent = 0;
};

struct DigressionStats {
  std::size_t turns = 0;
  double bleu = 0;
  std::optional<double> recall_at_1;
};

struct EvalReport {
  std::string system;
  std::string split;
  KnowledgeSources sources = KnowledgeSources::flowchart_faq;
  std::size_t dialogs = 0;
  std::size_t turns = 0;
  std::size_t retrieval_turns = 0;
  double bleu = 0;
  std::optional<double> perplexity;
  /// Retrieval metrics are absent when no document carries a gold grounding
  /// (history-only).
  std::optional<double> recall_at_1;
  std::optional<double> success_rate;
  std::optional<double> dialog_recall_at_1;
  std::map<std::string, ErrorBucket> errors;  // sibling, parent, faq, other
  std::map<std::string, DigressionStats> digressions;  // none, user, agent

  nlohmann::json to_json() const;
};

struct EvalOptions {
  bool compute_perplexity = true;
  bool perplexity_top1 = false;
  /// Nucleus decoding seed; used only when the RagConfig sets nucleus_p.
  std::uint64_t seed = 1;
  kernels::Exec exec = kernels::Exec::serial;
};

struct EvalResult {
  EvalReport report;
  std::vector<TurnRecord> records;
};

/// Decodes every agent turn of `dialogs` and aggregates the report. Retrieval
/// metrics skip closing turns and use the synthesized grounding as gold.
EvalResult evaluate(const KnowledgeBase& kb, const std::vector<Dialog>& dialogs, KnowledgeSources sources,
                    const Retriever& r, const Generator& g, const RagConfig& rag, const EvalOptions& opts,
                    std::string system = "flonet", std::string split = "test");

/// Rebuilds a report from turn records (BLEU, R@1, SR, error and digression
/// breakdowns); perplexity is left unset.
EvalReport aggregate(const std::vector<TurnRecord>& records, KnowledgeSources sources, std::string system,
                     std::string split);

/// Everything needed to train and evaluate one knowledge-source configuration.
struct AblationConfig {
  RetrieverConfig retriever;
  RetrieverTrainConfig retriever_train;
  TransformerConfig generator;
  GeneratorTrainConfig generator_train;
  RagConfig rag;
  /// Joint fine-tuning after pre-training; skipped when epochs == 0.
  RagTrainConfig rag_train{.epochs = 0};
  EvalOptions eval;
  std::uint64_t seed = 1;
};

struct AblationResult {
  EvalResult eval;
  std::unique_ptr<TransformerGenerator> generator;
  std::unique_ptr<HierarchicalRetriever> retriever;  // null when a shared one was supplied
  GeneratorTrainLog generator_log;
  RetrieverTrainLog retriever_log;
};

/// Trains a generator on pseudo-grounded examples from the setting's documents
/// and evaluates it on `test`. When `shared_retriever` is null a retriever is
/// pre-trained on the setting's documents (history-only needs none). The
/// generator vocabulary is built from `kb` and `train`.
AblationResult run_ablation(KnowledgeSources sources, const KnowledgeBase& kb, const std::vector<Dialog>& train,
                            const std::vector<Dialog>& val, const std::vector<Dialog>& test, const AblationConfig& cfg,
                            const Retriever* shared_retriever = nullptr);

/// Document lists of every chart of `kb` under a setting.
std::map<std::string, std::vector<Document>> documents_by_chart(const KnowledgeBase& kb, KnowledgeSources sources);

/// Plain-text table, one row per report.
void write_report(std::ostream& out, const std::vector<EvalReport>& reports);
/// One JSON object per line.
void write_records(std::ostream& out, const std::vector<TurnRecord>& records);

}  // namespace flonet
