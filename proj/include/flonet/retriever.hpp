#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "flonet/dialog.hpp"
#include "flonet/kernels.hpp"
#include "flonet/nn.hpp"
#include "flonet/text.hpp"

namespace flonet {

/// Top-k shortlist with a softmax over the shortlisted scores.
struct RetrievalResult {
  struct Entry {
    std::string doc_id;
    std::size_t index = 0;  // position in the scored document list
    double score = 0;
    double prob = 0;
  };
  std::vector<Entry> ranked;
  std::size_t k = 0;
};

/// Ranks scores descending; ties go to the earlier document. Softmax is taken
/// over the first k entries only.
RetrievalResult topk_from_scores(const std::vector<double>& scores, const std::vector<Document>& docs, std::size_t k);

class Retriever {
 public:
  virtual ~Retriever() = default;
  virtual std::string name() const = 0;
  /// One raw score per document, higher is better.
  virtual std::vector<double> scores(const DialogHistory& h, const std::vector<Document>& docs) const = 0;
};

RetrievalResult retrieve_topk(const Retriever& r, const DialogHistory& h, const std::vector<Document>& docs,
                              std::size_t k);

/// -||hv - kv||_2.
double euclidean_score(const Eigen::VectorXd& hv, const Eigen::VectorXd& kv);

/// max(0, margin - d_neg) + d_pos.
double contrastive_loss(double d_pos, double d_neg, double margin = 1.0);

/// Sentence-BLEU argmax of the response over document values; the first
/// document wins ties.
std::size_t pseudo_label(const std::string& response, const std::vector<Document>& docs,
                         kernels::Exec exec = kernels::Exec::serial);

// ---------------------------------------------------------------- TF-IDF

/// TF-IDF over document keys. idf = log((1 + N) / (1 + df)) + 1 per chart;
/// the history is the concatenation of all its utterances.
class TfidfRetriever : public Retriever {
 public:
  explicit TfidfRetriever(kernels::Exec exec = kernels::Exec::serial) : exec_(exec) {}
  std::string name() const override { return "tfidf"; }
  std::vector<double> scores(const DialogHistory& h, const std::vector<Document>& docs) const override;

 private:
  kernels::Exec exec_;
};

// ---------------------------------------------------------------- oracle

/// Test retriever: scores 1 for the gold document of a history, 0 elsewhere.
class OracleRetriever : public Retriever {
 public:
  void add(const DialogHistory& h, std::string gold_doc_id);
  std::string name() const override { return "oracle"; }
  std::vector<double> scores(const DialogHistory& h, const std::vector<Document>& docs) const override;

  /// Origin tag when present, else content_hash.
  static std::uint64_t history_hash(const DialogHistory& h);
  /// Speakers and texts only.
  static std::uint64_t content_hash(const DialogHistory& h);

 private:
  std::unordered_map<std::uint64_t, std::string> gold_;
};

// ---------------------------------------------------------------- dense

struct RetrieverConfig {
  int embed_dim = 32;
  int hidden_dim = 0;  // 0 means 3 * embed_dim
  bool speaker_embeddings = true;
  /// Histories and keys share every encoder parameter when true; otherwise
  /// keys get their own context-level encoder.
  bool shared_encoder = true;

  int hidden() const { return hidden_dim > 0 ? hidden_dim : 3 * embed_dim; }
};

/// Retriever vocabulary: lowercased tokens of every document and utterance.
Vocab build_retriever_vocab(const KnowledgeBase& kb, const std::vector<Dialog>& dialogs);

/// Hierarchical recurrent encoder: a word-level GRU encodes each utterance,
/// a context-level GRU runs over the utterance vectors. Score is the negative
/// Euclidean distance between history and key encodings.
class HierarchicalRetriever : public Retriever {
 public:
  HierarchicalRetriever(Vocab vocab, RetrieverConfig cfg, std::uint64_t seed);

  std::string name() const override { return "hierarchical"; }
  std::vector<double> scores(const DialogHistory& h, const std::vector<Document>& docs) const override;

  Eigen::VectorXd encode_history(const DialogHistory& h) const;
  /// Context state after every utterance of the sequence.
  std::vector<Eigen::VectorXd> encode_prefixes(const std::vector<Utterance>& utterances) const;
  Eigen::VectorXd encode_key(const Document& d) const;
  /// One row per document. Cached by document content until the parameters
  /// change (call invalidate_cache after updates).
  Eigen::MatrixXd encode_documents(const std::vector<Document>& docs) const;
  void invalidate_cache() const;

  const Vocab& vocab() const { return vocab_; }
  const RetrieverConfig& config() const { return cfg_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  /// Parameter slots, public for the training graph.
  struct Slots {
    std::size_t emb, speaker;
    std::size_t u_wx, u_wh, u_bx, u_bh;      // utterance GRU
    std::size_t c_wx, c_wh, c_bx, c_bh;      // context GRU (histories)
    std::size_t k_wx, k_wh, k_bx, k_bh;      // context GRU for keys (== c_* when shared)
  };
  const Slots& slots() const { return slots_; }

  /// Token ids of an utterance under this retriever's tokenizer.
  std::vector<TokenId> ids(const std::string& text) const;

  nlohmann::json to_json() const;
  static std::unique_ptr<HierarchicalRetriever> from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static std::unique_ptr<HierarchicalRetriever> load(const std::string& path);

 private:
  Eigen::VectorXd encode_utterance(const std::string& text, Speaker s) const;
  Eigen::VectorXd run_context(const std::vector<Eigen::VectorXd>& xs, bool key) const;

  Vocab vocab_;
  RetrieverConfig cfg_;
  nn::ParameterSet params_;
  Slots slots_{};
  mutable std::mutex cache_mu_;
  mutable std::unordered_map<std::uint64_t, Eigen::MatrixXd> cache_;
};

/// Speaker of each element of a document key: node keys alternate agent/user
/// from the root question; an FAQ key is the user's question.
std::vector<Speaker> key_speakers(const Document& d);

/// Encodes inside an autodiff graph; memoizes utterance and key encodings per
/// graph.
class RetrieverGraph {
 public:
  RetrieverGraph(nn::Graph& g, const HierarchicalRetriever& r);

  /// Context states after each utterance.
  std::vector<nn::Var> prefixes(const std::vector<Utterance>& utterances);
  nn::Var key(const Document& d);

 private:
  nn::Var utterance(const std::string& text, Speaker s);
  nn::Var context(const std::vector<nn::Var>& xs, bool key, std::vector<nn::Var>* states);

  nn::Graph& g_;
  const HierarchicalRetriever& r_;
  std::map<std::pair<std::string, int>, nn::Var> utt_cache_;
  std::map<std::string, nn::Var> key_cache_;
};

/// One dialog prepared for retriever training: the agent-utterance positions
/// and their target document (an index into `docs`).
struct RetrievalExample {
  const Dialog* dialog = nullptr;
  const std::vector<Document>* docs = nullptr;
  std::vector<std::size_t> agent_positions;
  std::vector<std::size_t> targets;
};

/// Targets are pseudo labels (BLEU argmax) unless use_gold is set, in which
/// case the synthesized grounding is used. Document lists must outlive the
/// examples.
std::vector<RetrievalExample> make_retrieval_examples(const std::vector<Dialog>& dialogs,
                                                      const std::map<std::string, std::vector<Document>>& docs,
                                                      bool use_gold, kernels::Exec exec = kernels::Exec::serial);

struct RetrieverTrainConfig {
  int epochs = 20;
  int batch_dialogs = 8;
  double lr = 3e-3;
  double margin = 1.0;
  int negatives = 1;
  int patience = 4;  // epochs without validation R@1 improvement
  bool freeze_embeddings = false;
  std::size_t chunk = 4;
  kernels::Exec exec = kernels::Exec::serial;
  std::uint64_t seed = 1;
};

struct RetrieverTrainLog {
  std::vector<double> epoch_loss;   // mean per agent turn
  std::vector<double> val_recall;   // R@1 after each epoch
  int best_epoch = -1;              // -1: initial parameters kept
  double best_val_recall = 0;
};

/// R@1 of the retriever on the examples' targets.
double retrieval_recall(const HierarchicalRetriever& r, const std::vector<RetrievalExample>& examples);

/// Contrastive pre-training with one uniform negative per positive and early
/// stopping on validation R@1. Keeps the best parameters.
RetrieverTrainLog pretrain_retriever(HierarchicalRetriever& r, const std::vector<RetrievalExample>& train,
                                     const std::vector<RetrievalExample>& val, const RetrieverTrainConfig& cfg);

/// Document-index cache file: the encoded keys of every document of a
/// knowledge base, keyed by the knowledge-base fingerprint and the retriever
/// parameter hash.
struct DocumentIndex {
  std::uint64_t kb_fingerprint = 0;
  std::uint64_t model_hash = 0;
  std::map<std::string, Eigen::MatrixXd> encodings;  // flowchart id -> rows

  void save(const std::string& path) const;
  static DocumentIndex load(const std::string& path);
};

std::uint64_t parameter_hash(const nn::ParameterSet& p);
DocumentIndex build_document_index(const HierarchicalRetriever& r, const KnowledgeBase& kb);

}  // namespace flonet
