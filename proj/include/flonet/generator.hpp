#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "flonet/dialog.hpp"
#include "flonet/kernels.hpp"
#include "flonet/nn.hpp"
#include "flonet/text.hpp"

namespace flonet {

namespace special {
inline constexpr const char* begin = "[begin]";
inline constexpr const char* sep = "[sep]";
inline constexpr const char* agent = "[agent]";
inline constexpr const char* user = "[user]";
inline constexpr const char* end = "[end]";
inline constexpr const char* unk = "[unk]";
inline constexpr const char* pad = "[pad]";
}  // namespace special

/// Generator vocabulary: the fixed special tokens first, then case-preserving
/// word tokens of every document value and utterance.
Vocab build_generator_vocab(const KnowledgeBase& kb, const std::vector<Dialog>& dialogs);

/// Case-preserving tokenization used by the generator.
std::vector<std::string> generator_tokens(std::string_view text);

enum class Segment : int { document = 0, user = 1, agent = 2 };

/// Conditioning context: [begin] value [sep] u1 ... [sep] ui [agent].
/// Targets are appended by the model; `value_len` tokens of document value
/// follow [begin].
struct LmInput {
  std::vector<TokenId> tokens;
  std::vector<int> segments;
  std::size_t value_len = 0;
  std::size_t dropped_utterances = 0;

  std::size_t size() const { return tokens.size(); }
  std::span<const TokenId> value() const { return std::span<const TokenId>(tokens).subspan(1, value_len); }
};

/// Builds the context. When it would exceed `max_context` tokens the oldest
/// history utterances are dropped; the document value and the latest user
/// utterance are always kept (the latest utterance is cut from the front only
/// if it alone does not fit).
LmInput build_lm_input(const DialogHistory& h, const std::string& doc_value, const Vocab& vocab, std::size_t max_context);

/// Target ids for a response: its tokens followed by [end].
std::vector<TokenId> encode_response(const std::string& text, const Vocab& vocab);
/// Inverse of encode_response: drops specials after the first [end].
std::string decode_response(std::span<const TokenId> ids, const Vocab& vocab);

/// Incremental decoding state.
class GeneratorState {
 public:
  virtual ~GeneratorState() = default;
  /// log p(next token | context, generated so far), one entry per vocab id.
  virtual Eigen::VectorXd next_log_probs() const = 0;
  virtual void advance(TokenId t) = 0;
  virtual std::unique_ptr<GeneratorState> clone() const = 0;
  /// Tokens generated so far.
  virtual std::size_t generated() const = 0;
};

class Generator {
 public:
  virtual ~Generator() = default;
  virtual std::string name() const = 0;
  virtual const Vocab& vocab() const = 0;
  virtual std::unique_ptr<GeneratorState> begin(const LmInput& ctx) const = 0;
  /// Longest context this generator accepts for a given response budget.
  virtual std::size_t max_context() const = 0;
  /// Teacher-forced per-token log-probs of y (which ends with [end]).
  virtual std::vector<double> log_prob(const LmInput& ctx, std::span<const TokenId> y) const;
};

/// Argmax decoding (lowest id on ties) until [end] or `max_len` tokens; the
/// returned ids exclude [end].
std::vector<TokenId> greedy_decode(const Generator& g, const LmInput& ctx, std::size_t max_len);

/// Emits the document value verbatim and then [end]: log-prob 0 on the
/// expected token and `floor` elsewhere (renormalization is not applied; the
/// floor stands in for -infinity).
class TemplateOracleGenerator : public Generator {
 public:
  explicit TemplateOracleGenerator(Vocab vocab, double floor = -1e4) : vocab_(std::move(vocab)), floor_(floor) {}
  std::string name() const override { return "template-oracle"; }
  const Vocab& vocab() const override { return vocab_; }
  std::unique_ptr<GeneratorState> begin(const LmInput& ctx) const override;
  std::size_t max_context() const override { return 1u << 20; }

 private:
  Vocab vocab_;
  double floor_;
};

/// Uniform distribution over the vocabulary.
class UniformGenerator : public Generator {
 public:
  explicit UniformGenerator(Vocab vocab) : vocab_(std::move(vocab)) {}
  std::string name() const override { return "uniform"; }
  const Vocab& vocab() const override { return vocab_; }
  std::unique_ptr<GeneratorState> begin(const LmInput& ctx) const override;
  std::size_t max_context() const override { return 1u << 20; }

 private:
  Vocab vocab_;
};

struct TransformerConfig {
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int ff_mult = 4;
  int max_positions = 160;
  int max_response = 61;  // reserved for the response plus [end]
};

/// Small pre-LN causal transformer with learned positions, segment
/// embeddings, tied output embedding and a linear classification head on the
/// final hidden state.
class TransformerGenerator : public Generator {
 public:
  TransformerGenerator(Vocab vocab, TransformerConfig cfg, std::uint64_t seed);

  std::string name() const override { return "transformer"; }
  const Vocab& vocab() const override { return vocab_; }
  std::unique_ptr<GeneratorState> begin(const LmInput& ctx) const override;
  std::size_t max_context() const override;

  const TransformerConfig& config() const { return cfg_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  struct LayerSlots {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_o, b_o, ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Slots {
    std::size_t tok, pos, seg, lnf_g, lnf_b, cls_w, cls_b;
    std::vector<LayerSlots> layers;
  };
  const Slots& slots() const { return slots_; }

  /// Autodiff forward of context + y. Returns the final-layer hidden states
  /// (T x d) of the whole sequence.
  nn::Var forward(nn::Graph& g, const LmInput& ctx, std::span<const TokenId> y) const;
  /// Per-token log-probs of y inside the graph (|y| x 1).
  nn::Var target_log_probs(nn::Graph& g, nn::Var hidden, const LmInput& ctx, std::span<const TokenId> y) const;
  /// Classification logit from the last hidden row (1 x 1).
  nn::Var classify(nn::Graph& g, nn::Var hidden) const;

  nlohmann::json to_json() const;
  static std::unique_ptr<TransformerGenerator> from_json(const nlohmann::json& j);
  void save(const std::string& path) const;
  static std::unique_ptr<TransformerGenerator> load(const std::string& path);

 private:
  friend class TransformerState;
  Vocab vocab_;
  TransformerConfig cfg_;
  nn::ParameterSet params_;
  Slots slots_;
};

/// One supervised example: history, grounding document value, gold response.
struct GeneratorExample {
  DialogHistory history;
  std::string doc_value;
  std::string response;
};

/// Pseudo-grounded triples from every agent turn: the document is the BLEU
/// argmax over `docs` (a single empty document yields an empty value).
std::vector<GeneratorExample> make_generator_examples(const std::vector<Dialog>& dialogs,
                                                      const std::map<std::string, std::vector<Document>>& docs,
                                                      kernels::Exec exec = kernels::Exec::serial);

struct GeneratorTrainConfig {
  int epochs = 10;
  int batch = 16;
  double lr = 1e-3;
  double lambda = 1.0;  // weight of the next-utterance classification loss
  int patience = 3;     // epochs without validation improvement
  /// Early stopping metric: validation BLEU of greedy decodes on up to
  /// `val_decode_limit` examples (0 switches to validation NLL).
  std::size_t val_decode_limit = 200;
  std::size_t chunk = 4;
  kernels::Exec exec = kernels::Exec::serial;
  std::uint64_t seed = 1;
};

struct GeneratorTrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> val_metric;
  double initial_val_nll = 0;
  std::vector<double> val_nll;
  int best_epoch = -1;
};

/// Mean per-token NLL of gold responses given (history, document value).
double generator_nll(const TransformerGenerator& m, const std::vector<GeneratorExample>& examples);

/// Loss of one example: NLL(y) + lambda * 2-way classification loss between
/// the gold response and `negative`.
double generator_example_loss(const TransformerGenerator& m, const GeneratorExample& ex, const std::string& negative,
                              double lambda, nn::Gradients* sink);

/// NLL + lambda * next-utterance classification, with one negative response
/// per example drawn uniformly from the other examples of the batch.
GeneratorTrainLog pretrain_generator(TransformerGenerator& m, const std::vector<GeneratorExample>& train,
                                     const std::vector<GeneratorExample>& val, const GeneratorTrainConfig& cfg);

/// Rejects anything that is not trainable.
TransformerGenerator& as_trainable(Generator& g);

}  // namespace flonet
