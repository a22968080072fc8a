#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "flonet/generator.hpp"
#include "flonet/retriever.hpp"

namespace flonet {

struct RagConfig {
  int k_train = 5;
  int k_infer = 1;
  int beam_width = 5;
  int max_decode_len = 60;  // generated tokens, excluding [end]
  bool length_normalize = true;
  std::optional<double> nucleus_p;

  /// Throws ValidationError on violated invariants. k values larger than a
  /// chart's document count are clamped at use.
  void validate() const;
  nlohmann::json to_json() const;
  /// Unknown keys are rejected.
  static RagConfig from_json(const nlohmann::json& j);
};

/// Log-probability tolerance shared by tests and consistency checks.
inline constexpr double kLogTolerance = 1e-6;
inline constexpr double kProbTolerance = 1e-9;

double log_sum_exp(const std::vector<double>& xs);

/// log p(y|h) = log sum over the top-k documents of p_eta(z|h) prod_t p_theta.
/// y ends with [end].
double rag_sequence_log_prob(const DialogHistory& h, std::span<const TokenId> y, const std::vector<Document>& docs,
                             const Retriever& r, const Generator& g, std::size_t k);
double rag_sequence_log_prob(const DialogHistory& h, const std::string& response, const std::vector<Document>& docs,
                             const Retriever& r, const Generator& g, std::size_t k);

/// One finished beam hypothesis.
struct Hypothesis {
  std::vector<TokenId> tokens;  // excludes [end]
  double log_prob = 0;          // sum of token log-probs, [end] included unless forced
  bool forced_end = false;      // hit the length limit
  /// Scored length: generated tokens plus the end marker.
  std::size_t length() const { return tokens.size() + 1; }
};

/// Beam search. Each step keeps the `width` best expansions of the active
/// hypotheses by raw log-prob (ties: lower token id, then earlier hypothesis).
/// Expansions ending in [end] are finished and leave the beam, so the active
/// set shrinks. Hypotheses reaching `max_len` tokens are closed with a forced
/// [end] that adds no probability. Finished hypotheses are returned in
/// completion order.
std::vector<Hypothesis> beam_search(const Generator& g, const LmInput& ctx, int width, int max_len);

/// A decoded response for one retrieved document.
struct Candidate {
  std::string doc_id;
  std::size_t doc_index = 0;
  std::vector<TokenId> tokens;
  std::string text;
  double retrieval_log_prob = 0;  // log p_eta(z|h) over the top-k shortlist
  double raw_log_prob = 0;        // sum log p_theta
  double normalized_log_prob = 0; // raw / length
  double score = 0;               // retrieval_log_prob + raw or normalized
};

/// Index of the best candidate by score; the earlier candidate wins ties.
std::size_t select_candidate(const std::vector<Candidate>& candidates);

/// Fills normalized_log_prob and score.
void score_candidate(Candidate& c, std::size_t length, bool length_normalize);

struct DecodeResult {
  std::string text;
  std::vector<TokenId> tokens;
  std::string doc_id;
  double raw_log_prob = 0;
  double normalized_log_prob = 0;
  double score = 0;
  std::vector<Candidate> candidates;
  RetrievalResult retrieval;
};

/// Retrieves the top k_infer documents, beam-decodes each and returns the
/// best candidate across documents.
DecodeResult decode(const DialogHistory& h, const std::vector<Document>& docs, const Retriever& r, const Generator& g,
                    const RagConfig& cfg);

/// Nucleus sampling per retrieved document, then candidate selection as in
/// decode. Each step samples from the smallest set of most likely tokens
/// (ties: lower id first) whose mass reaches p.
DecodeResult nucleus_decode(const DialogHistory& h, const std::vector<Document>& docs, const Retriever& r,
                            const Generator& g, const RagConfig& cfg, std::uint64_t seed);

/// decode, or nucleus_decode when cfg.nucleus_p is set; the sampling seed is
/// derived from `seed` and the history content.
DecodeResult respond(const DialogHistory& h, const std::vector<Document>& docs, const Retriever& r, const Generator& g,
                     const RagConfig& cfg, std::uint64_t seed);

/// Samples one token from the nucleus of a log-prob vector.
TokenId nucleus_sample(const Eigen::VectorXd& log_probs, double p, Rng& rng);

// ---------------------------------------------------------------- training

struct RagExample {
  DialogHistory history;
  std::string response;
  const std::vector<Document>* docs = nullptr;
};

/// Every agent turn of the dialogs, paired with its chart's documents (which
/// must outlive the examples).
std::vector<RagExample> make_rag_examples(const std::vector<Dialog>& dialogs,
                                          const std::map<std::string, std::vector<Document>>& docs);

/// Mean per-token negative log-likelihood under the top-k marginal.
double rag_nll(const Retriever& r, const Generator& g, const std::vector<RagExample>& examples, std::size_t k);

struct RagTrainConfig {
  int epochs = 5;
  int batch = 16;
  double lr_generator = 3e-4;
  double lr_retriever = 1e-3;
  bool freeze_retriever = false;
  int patience = 2;  // epochs without validation NLL improvement
  std::size_t chunk = 4;
  kernels::Exec exec = kernels::Exec::serial;
  std::uint64_t seed = 1;
};

struct RagTrainLog {
  double initial_val_nll = 0;
  std::vector<double> epoch_loss;  // mean per-token NLL on the training batches
  std::vector<double> val_nll;
  int best_epoch = -1;  // -1: initial parameters kept
};

/// Joint fine-tuning on the negative log of the top-k marginal. The top-k
/// membership is computed outside the graph; gradients reach the retriever
/// through the softmax over the shortlisted scores. Keeps the parameters with
/// the best validation NLL.
RagTrainLog train_rag(HierarchicalRetriever& r, Generator& g, const std::vector<RagExample>& train,
                      const std::vector<RagExample>& val, const RagConfig& rag, const RagTrainConfig& cfg);

}  // namespace flonet
