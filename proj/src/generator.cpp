#include "flonet/generator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "flonet/bleu.hpp"
#include "flonet/error.hpp"
#include "flonet/retriever.hpp"

namespace flonet {

namespace {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;
using nlohmann::json;

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;

const std::vector<std::string>& specials() {
  static const std::vector<std::string> s = {special::begin, special::sep, special::agent, special::user,
                                             special::end,   special::unk, special::pad};
  return s;
}

int segment_of(Speaker s) { return static_cast<int>(s == Speaker::user ? Segment::user : Segment::agent); }

RowVectorXd layer_norm_row(const RowVectorXd& x, const MatrixXd& g, const MatrixXd& b) {
  const double mu = x.mean();
  const double var = (x.array() - mu).square().mean();
  RowVectorXd y = (x.array() - mu) / std::sqrt(var + kLnEps);
  return y.cwiseProduct(g.row(0)) + b.row(0);
}

VectorXd log_softmax_vec(const VectorXd& x) {
  const double mx = x.maxCoeff();
  const double lse = mx + std::log((x.array() - mx).exp().sum());
  return (x.array() - lse).matrix();
}

}  // namespace

// ---------------------------------------------------------------- inputs

std::vector<std::string> generator_tokens(std::string_view text) { return tokenize(text, TokenizerOptions{false}); }

Vocab build_generator_vocab(const KnowledgeBase& kb, const std::vector<Dialog>& dialogs) {
  std::set<std::string> words;
  for (const auto& id : kb.ids())
    for (const auto& d : kb.at(id).documents) {
      for (auto& t : generator_tokens(d.value)) words.insert(std::move(t));
      for (const auto& k : d.key)
        for (auto& t : generator_tokens(k)) words.insert(std::move(t));
    }
  for (const auto& d : dialogs)
    for (const auto& u : d.utterances)
      for (auto& t : generator_tokens(u.text)) words.insert(std::move(t));
  Vocab v(specials(), special::unk);
  for (const auto& w : words) v.add(w);
  return v;
}

LmInput build_lm_input(const DialogHistory& h, const std::string& doc_value, const Vocab& vocab,
                       std::size_t max_context) {
  const auto value = vocab.encode(generator_tokens(doc_value));
  const auto& utts = h.utterances();
  std::vector<std::vector<TokenId>> blocks;
  for (const auto& u : utts) blocks.push_back(vocab.encode(generator_tokens(u.text)));

  const std::size_t fixed = value.size() + 2;  // [begin] value ... [agent]
  if (fixed + 1 > max_context) throw ValidationError("document value does not fit the generator context");
  std::size_t first = 0;
  std::size_t total = fixed;
  for (const auto& b : blocks) total += b.size() + 1;
  while (total > max_context && first + 1 < blocks.size()) {
    total -= blocks[first].size() + 1;
    ++first;
  }
  std::size_t cut = 0;  // leading tokens removed from the latest utterance
  if (total > max_context) cut = total - max_context;

  LmInput in;
  in.value_len = value.size();
  in.dropped_utterances = first;
  in.tokens.push_back(vocab.id(special::begin));
  in.segments.push_back(static_cast<int>(Segment::document));
  for (auto t : value) {
    in.tokens.push_back(t);
    in.segments.push_back(static_cast<int>(Segment::document));
  }
  for (std::size_t i = first; i < blocks.size(); ++i) {
    const int seg = segment_of(utts[i].speaker);
    in.tokens.push_back(vocab.id(special::sep));
    in.segments.push_back(seg);
    const std::size_t skip = i + 1 == blocks.size() ? cut : 0;
    for (std::size_t j = skip; j < blocks[i].size(); ++j) {
      in.tokens.push_back(blocks[i][j]);
      in.segments.push_back(seg);
    }
  }
  in.tokens.push_back(vocab.id(special::agent));
  in.segments.push_back(static_cast<int>(Segment::agent));
  return in;
}

std::vector<TokenId> encode_response(const std::string& text, const Vocab& vocab) {
  auto ids = vocab.encode(generator_tokens(text));
  ids.push_back(vocab.id(special::end));
  return ids;
}

std::string decode_response(std::span<const TokenId> ids, const Vocab& vocab) {
  const auto end = vocab.id(special::end);
  std::vector<std::string> toks;
  for (auto id : ids) {
    if (id == end) break;
    if (vocab.is_special(id)) continue;
    toks.push_back(vocab.token(id));
  }
  return detokenize(toks);
}

std::vector<double> Generator::log_prob(const LmInput& ctx, std::span<const TokenId> y) const {
  if (y.empty()) throw ValidationError("log_prob: empty target");
  if (y.back() != vocab().id(special::end)) throw ValidationError("log_prob: target must end with [end]");
  auto state = begin(ctx);
  std::vector<double> out;
  out.reserve(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto lp = state->next_log_probs();
    if (y[i] < 0 || y[i] >= lp.size()) throw ValidationError("log_prob: token outside vocabulary");
    out.push_back(lp(y[i]));
    if (i + 1 < y.size()) state->advance(y[i]);
  }
  return out;
}

std::vector<TokenId> greedy_decode(const Generator& g, const LmInput& ctx, std::size_t max_len) {
  const auto end = g.vocab().id(special::end);
  auto state = g.begin(ctx);
  std::vector<TokenId> out;
  while (out.size() < max_len) {
    const auto lp = state->next_log_probs();
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < lp.size(); ++i)
      if (lp(i) > lp(best)) best = i;
    if (static_cast<TokenId>(best) == end) break;
    out.push_back(static_cast<TokenId>(best));
    if (out.size() < max_len) state->advance(static_cast<TokenId>(best));
  }
  return out;
}

// ---------------------------------------------------------------- oracle backends

namespace {

class TemplateOracleState : public GeneratorState {
 public:
  TemplateOracleState(std::vector<TokenId> value, TokenId end, std::size_t vocab, double floor)
      : value_(std::move(value)), end_(end), vocab_(vocab), floor_(floor) {}

  VectorXd next_log_probs() const override {
    VectorXd lp = VectorXd::Constant(static_cast<Eigen::Index>(vocab_), floor_);
    const TokenId expected = on_track_ && pos_ < value_.size() ? value_[pos_] : end_;
    lp(expected) = 0.0;
    return lp;
  }
  void advance(TokenId t) override {
    if (!on_track_ || pos_ >= value_.size() || value_[pos_] != t) on_track_ = false;
    ++pos_;
  }
  std::unique_ptr<GeneratorState> clone() const override { return std::make_unique<TemplateOracleState>(*this); }
  std::size_t generated() const override { return pos_; }

 private:
  std::vector<TokenId> value_;
  TokenId end_;
  std::size_t vocab_;
  double floor_;
  std::size_t pos_ = 0;
  bool on_track_ = true;
};

class UniformState : public GeneratorState {
 public:
  explicit UniformState(std::size_t v) : v_(v) {}
  VectorXd next_log_probs() const override {
    return VectorXd::Constant(static_cast<Eigen::Index>(v_), -std::log(static_cast<double>(v_)));
  }
  void advance(TokenId) override { ++n_; }
  std::unique_ptr<GeneratorState> clone() const override { return std::make_unique<UniformState>(*this); }
  std::size_t generated() const override { return n_; }

 private:
  std::size_t v_;
  std::size_t n_ = 0;
};

}  // namespace

std::unique_ptr<GeneratorState> TemplateOracleGenerator::begin(const LmInput& ctx) const {
  const auto v = ctx.value();
  return std::make_unique<TemplateOracleState>(std::vector<TokenId>(v.begin(), v.end()), vocab_.id(special::end),
                                               vocab_.size(), floor_);
}

std::unique_ptr<GeneratorState> UniformGenerator::begin(const LmInput&) const {
  return std::make_unique<UniformState>(vocab_.size());
}

// ---------------------------------------------------------------- transformer

TransformerGenerator::TransformerGenerator(Vocab vocab, TransformerConfig cfg, std::uint64_t seed)
    : vocab_(std::move(vocab)), cfg_(cfg) {
  if (cfg_.d_model <= 0 || cfg_.layers <= 0 || cfg_.heads <= 0 || cfg_.d_model % cfg_.heads != 0)
    throw ValidationError("transformer: d_model must be a positive multiple of heads");
  if (cfg_.max_response < 2 || cfg_.max_positions <= cfg_.max_response + 2)
    throw ValidationError("transformer: max_positions too small for the response budget");
  std::mt19937_64 rng(seed);
  const Eigen::Index d = cfg_.d_model, ff = cfg_.ff_mult * cfg_.d_model;
  const double s = 0.02 * std::sqrt(3.0);  // uniform with std 0.02
  const double proj = s / std::sqrt(2.0 * cfg_.layers);
  slots_.tok = params_.add("tok", nn::uniform_matrix(static_cast<Eigen::Index>(vocab_.size()), d, s, rng));
  slots_.pos = params_.add("pos", nn::uniform_matrix(cfg_.max_positions, d, s, rng));
  slots_.seg = params_.add("seg", nn::uniform_matrix(3, d, s, rng));
  for (int l = 0; l < cfg_.layers; ++l) {
    const auto p = "layer" + std::to_string(l) + ".";
    LayerSlots ls{};
    ls.ln1_g = params_.add(p + "ln1.g", MatrixXd::Ones(1, d));
    ls.ln1_b = params_.add(p + "ln1.b", MatrixXd::Zero(1, d));
    ls.w_qkv = params_.add(p + "qkv.w", nn::uniform_matrix(d, 3 * d, s, rng));
    ls.b_qkv = params_.add(p + "qkv.b", MatrixXd::Zero(1, 3 * d));
    ls.w_o = params_.add(p + "o.w", nn::uniform_matrix(d, d, proj, rng));
    ls.b_o = params_.add(p + "o.b", MatrixXd::Zero(1, d));
    ls.ln2_g = params_.add(p + "ln2.g", MatrixXd::Ones(1, d));
    ls.ln2_b = params_.add(p + "ln2.b", MatrixXd::Zero(1, d));
    ls.w1 = params_.add(p + "ff1.w", nn::uniform_matrix(d, ff, s, rng));
    ls.b1 = params_.add(p + "ff1.b", MatrixXd::Zero(1, ff));
    ls.w2 = params_.add(p + "ff2.w", nn::uniform_matrix(ff, d, proj, rng));
    ls.b2 = params_.add(p + "ff2.b", MatrixXd::Zero(1, d));
    slots_.layers.push_back(ls);
  }
  slots_.lnf_g = params_.add("lnf.g", MatrixXd::Ones(1, d));
  slots_.lnf_b = params_.add("lnf.b", MatrixXd::Zero(1, d));
  slots_.cls_w = params_.add("cls.w", nn::uniform_matrix(d, 1, s, rng));
  slots_.cls_b = params_.add("cls.b", MatrixXd::Zero(1, 1));
}

std::size_t TransformerGenerator::max_context() const {
  return static_cast<std::size_t>(cfg_.max_positions - cfg_.max_response);
}

nn::Var TransformerGenerator::forward(nn::Graph& g, const LmInput& ctx, std::span<const TokenId> y) const {
  std::vector<TokenId> toks(ctx.tokens.begin(), ctx.tokens.end());
  std::vector<TokenId> segs(ctx.segments.begin(), ctx.segments.end());
  toks.insert(toks.end(), y.begin(), y.end());
  segs.insert(segs.end(), y.size(), static_cast<TokenId>(Segment::agent));
  if (toks.size() > static_cast<std::size_t>(cfg_.max_positions))
    throw ValidationError("transformer: sequence longer than max_positions");
  std::vector<TokenId> pos(toks.size());
  std::iota(pos.begin(), pos.end(), 0);
  const auto& p = params_;
  nn::Var x = g.add(g.add(g.embed(p, slots_.tok, toks), g.embed(p, slots_.pos, pos)), g.embed(p, slots_.seg, segs));
  for (const auto& ls : slots_.layers) {
    const auto a = g.layer_norm(x, g.param(p, ls.ln1_g), g.param(p, ls.ln1_b), kLnEps);
    const auto qkv = g.add_row(g.matmul(a, g.param(p, ls.w_qkv)), g.param(p, ls.b_qkv));
    const auto att = g.causal_attention(qkv, cfg_.heads);
    x = g.add(x, g.add_row(g.matmul(att, g.param(p, ls.w_o)), g.param(p, ls.b_o)));
    const auto m = g.layer_norm(x, g.param(p, ls.ln2_g), g.param(p, ls.ln2_b), kLnEps);
    const auto hdn = g.gelu(g.add_row(g.matmul(m, g.param(p, ls.w1)), g.param(p, ls.b1)));
    x = g.add(x, g.add_row(g.matmul(hdn, g.param(p, ls.w2)), g.param(p, ls.b2)));
  }
  return g.layer_norm(x, g.param(p, slots_.lnf_g), g.param(p, slots_.lnf_b), kLnEps);
}

nn::Var TransformerGenerator::target_log_probs(nn::Graph& g, nn::Var hidden, const LmInput& ctx,
                                               std::span<const TokenId> y) const {
  std::vector<int> rows(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) rows[j] = static_cast<int>(ctx.size() + j) - 1;
  const auto h = g.rows(hidden, rows);
  const auto logits = g.matmul_nt(h, g.param(params_, slots_.tok));
  return g.log_softmax_pick(logits, y);
}

nn::Var TransformerGenerator::classify(nn::Graph& g, nn::Var hidden) const {
  const int last = static_cast<int>(g.value(hidden).rows()) - 1;
  const int idx[] = {last};
  return g.add(g.matmul(g.rows(hidden, idx), g.param(params_, slots_.cls_w)), g.param(params_, slots_.cls_b));
}

/// KV-cache inference path; mirrors TransformerGenerator::forward one token at
/// a time.
class TransformerState : public GeneratorState {
 public:
  explicit TransformerState(const TransformerGenerator& m) : m_(&m), k_(m.cfg_.layers), v_(m.cfg_.layers) {}

  void feed(TokenId tok, int seg) {
    const auto& cfg = m_->cfg_;
    const auto& p = m_->params_;
    const auto& sl = m_->slots_;
    if (len_ >= static_cast<std::size_t>(cfg.max_positions)) throw ValidationError("transformer: context window exhausted");
    if (tok < 0 || tok >= p.value(sl.tok).rows()) throw ValidationError("transformer: token outside vocabulary");
    const Eigen::Index d = cfg.d_model, dh = d / cfg.heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    RowVectorXd x = p.value(sl.tok).row(tok) + p.value(sl.pos).row(static_cast<Eigen::Index>(len_)) + p.value(sl.seg).row(seg);
    const auto t = static_cast<Eigen::Index>(len_) + 1;
    for (std::size_t l = 0; l < sl.layers.size(); ++l) {
      const auto& ls = sl.layers[l];
      const RowVectorXd a = layer_norm_row(x, p.value(ls.ln1_g), p.value(ls.ln1_b));
      const RowVectorXd qkv = a * p.value(ls.w_qkv) + p.value(ls.b_qkv).row(0);
      auto& kc = k_[l];
      auto& vc = v_[l];
      kc.insert(kc.end(), qkv.data() + d, qkv.data() + 2 * d);
      vc.insert(vc.end(), qkv.data() + 2 * d, qkv.data() + 3 * d);
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> K(kc.data(), t, d), V(vc.data(), t, d);
      RowVectorXd att(d);
      for (int h = 0; h < cfg.heads; ++h) {
        VectorXd s = K.middleCols(h * dh, dh) * qkv.segment(h * dh, dh).transpose() * scale;
        const double mx = s.maxCoeff();
        s = (s.array() - mx).exp();
        s /= s.sum();
        att.segment(h * dh, dh) = s.transpose() * V.middleCols(h * dh, dh);
      }
      x += att * p.value(ls.w_o) + p.value(ls.b_o).row(0);
      const RowVectorXd mm = layer_norm_row(x, p.value(ls.ln2_g), p.value(ls.ln2_b));
      RowVectorXd hdn = mm * p.value(ls.w1) + p.value(ls.b1).row(0);
      hdn = hdn.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
      x += hdn * p.value(ls.w2) + p.value(ls.b2).row(0);
    }
    const RowVectorXd hf = layer_norm_row(x, p.value(sl.lnf_g), p.value(sl.lnf_b));
    logp_ = log_softmax_vec(p.value(sl.tok) * hf.transpose());
    ++len_;
  }

  VectorXd next_log_probs() const override { return logp_; }
  void advance(TokenId t) override {
    feed(t, static_cast<int>(Segment::agent));
    ++generated_;
  }
  std::unique_ptr<GeneratorState> clone() const override { return std::make_unique<TransformerState>(*this); }
  std::size_t generated() const override { return generated_; }

 private:
  const TransformerGenerator* m_;
  std::vector<std::vector<double>> k_, v_;  // per layer, row-major len x d
  VectorXd logp_;
  std::size_t len_ = 0;
  std::size_t generated_ = 0;
};

std::unique_ptr<GeneratorState> TransformerGenerator::begin(const LmInput& ctx) const {
  if (ctx.tokens.empty()) throw ValidationError("transformer: empty context");
  auto s = std::make_unique<TransformerState>(*this);
  for (std::size_t i = 0; i < ctx.tokens.size(); ++i) s->feed(ctx.tokens[i], ctx.segments[i]);
  return s;
}

json TransformerGenerator::to_json() const {
  return {{"format", "flonet-generator"},
          {"version", 1},
          {"config",
           {{"d_model", cfg_.d_model},
            {"layers", cfg_.layers},
            {"heads", cfg_.heads},
            {"ff_mult", cfg_.ff_mult},
            {"max_positions", cfg_.max_positions},
            {"max_response", cfg_.max_response}}},
          {"vocab", vocab_.tokens()},
          {"params", params_.to_json()}};
}

std::unique_ptr<TransformerGenerator> TransformerGenerator::from_json(const json& j) {
  if (j.value("format", "") != "flonet-generator") throw ParseError("not a generator checkpoint");
  if (j.value("version", 0) != 1) throw ParseError("unsupported generator checkpoint version");
  const auto& c = j.at("config");
  TransformerConfig cfg;
  cfg.d_model = c.at("d_model").get<int>();
  cfg.layers = c.at("layers").get<int>();
  cfg.heads = c.at("heads").get<int>();
  cfg.ff_mult = c.at("ff_mult").get<int>();
  cfg.max_positions = c.at("max_positions").get<int>();
  cfg.max_response = c.at("max_response").get<int>();
  const auto tokens = j.at("vocab").get<std::vector<std::string>>();
  if (tokens.size() < specials().size() || !std::equal(specials().begin(), specials().end(), tokens.begin()))
    throw ParseError("generator checkpoint: special tokens do not match");
  Vocab v(specials(), special::unk);
  for (std::size_t i = specials().size(); i < tokens.size(); ++i) v.add(tokens[i]);
  auto m = std::make_unique<TransformerGenerator>(std::move(v), cfg, 0);
  m->params_.load_json(j.at("params"));
  return m;
}

void TransformerGenerator::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << to_json().dump();
}

std::unique_ptr<TransformerGenerator> TransformerGenerator::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

TransformerGenerator& as_trainable(Generator& g) {
  auto* t = dynamic_cast<TransformerGenerator*>(&g);
  if (!t) throw UnsupportedError("generator backend '" + g.name() + "' cannot be trained");
  return *t;
}

// ---------------------------------------------------------------- training

std::vector<GeneratorExample> make_generator_examples(const std::vector<Dialog>& dialogs,
                                                      const std::map<std::string, std::vector<Document>>& docs,
                                                      kernels::Exec exec) {
  std::vector<GeneratorExample> out;
  for (const auto& d : dialogs) {
    auto it = docs.find(d.flowchart_id);
    if (it == docs.end()) throw ValidationError("no documents for flowchart '" + d.flowchart_id + "'");
    for (auto& turn : agent_turns(d)) {
      const auto idx = pseudo_label(turn.response, it->second, exec);
      out.push_back({std::move(turn.history), it->second[idx].value, turn.response});
    }
  }
  return out;
}

double generator_example_loss(const TransformerGenerator& m, const GeneratorExample& ex, const std::string& negative,
                              double lambda, nn::Gradients* sink) {
  const auto ctx = build_lm_input(ex.history, ex.doc_value, m.vocab(), m.max_context());
  auto y = encode_response(ex.response, m.vocab());
  if (y.size() > static_cast<std::size_t>(m.config().max_response)) y.erase(y.begin() + m.config().max_response - 1, y.end() - 1);
  nn::Graph g;
  const auto hidden = m.forward(g, ctx, y);
  const auto lp = m.target_log_probs(g, hidden, ctx, y);
  auto loss = g.scale(g.sum(lp), -1.0 / static_cast<double>(y.size()));
  if (lambda != 0.0) {
    auto yn = encode_response(negative, m.vocab());
    if (yn.size() > static_cast<std::size_t>(m.config().max_response)) yn.erase(yn.begin() + m.config().max_response - 1, yn.end() - 1);
    const auto hn = m.forward(g, ctx, yn);
    const nn::Var both[] = {m.classify(g, hidden), m.classify(g, hn)};
    const auto ls = g.log_softmax(g.stack(both));
    const int first[] = {0};
    loss = g.add(loss, g.scale(g.rows(ls, first), -lambda));
  }
  if (sink) g.backward(loss, {sink});
  return g.scalar(loss);
}

double generator_nll(const TransformerGenerator& m, const std::vector<GeneratorExample>& examples) {
  double nll = 0;
  std::size_t tokens = 0;
  for (const auto& ex : examples) {
    const auto ctx = build_lm_input(ex.history, ex.doc_value, m.vocab(), m.max_context());
    const auto y = encode_response(ex.response, m.vocab());
    for (double lp : m.log_prob(ctx, y)) nll -= lp;
    tokens += y.size();
  }
  return tokens ? nll / static_cast<double>(tokens) : 0.0;
}

namespace {

double validation_bleu(const TransformerGenerator& m, const std::vector<GeneratorExample>& val, std::size_t limit) {
  std::vector<std::string> refs, hyps;
  for (std::size_t i = 0; i < val.size() && i < limit; ++i) {
    const auto ctx = build_lm_input(val[i].history, val[i].doc_value, m.vocab(), m.max_context());
    const auto ids = greedy_decode(m, ctx, static_cast<std::size_t>(m.config().max_response - 1));
    hyps.push_back(decode_response(ids, m.vocab()));
    refs.push_back(val[i].response);
  }
  return refs.empty() ? 0.0 : corpus_bleu(refs, hyps);
}

}  // namespace

GeneratorTrainLog pretrain_generator(TransformerGenerator& m, const std::vector<GeneratorExample>& train,
                                     const std::vector<GeneratorExample>& val, const GeneratorTrainConfig& cfg) {
  if (train.empty()) throw ValidationError("pretrain_generator: no training examples");
  GeneratorTrainLog log;
  const bool use_bleu = cfg.val_decode_limit > 0;
  auto metric = [&] {
    if (val.empty()) return 0.0;
    return use_bleu ? validation_bleu(m, val, cfg.val_decode_limit) : -generator_nll(m, val);
  };
  if (!val.empty()) log.initial_val_nll = generator_nll(m, val);
  if (cfg.epochs <= 0) return log;

  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  acfg.weight_decay = 0.01;
  nn::Adam opt(m.params(), acfg);
  std::vector<nn::Matrix> best;
  auto snapshot = [&] {
    best.clear();
    for (std::size_t i = 0; i < m.params().size(); ++i) best.push_back(m.params().value(i));
  };
  double best_metric = metric();
  snapshot();
  int since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, "generator:shuffle"));
  const std::size_t batch = static_cast<std::size_t>(std::max(cfg.batch, 1));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t e = std::min(order.size(), b + batch);
      const std::size_t n = e - b;
      std::vector<std::size_t> negs(n);
      for (std::size_t i = 0; i < n; ++i) {
        if (n > 1) {
          std::uniform_int_distribution<std::size_t> pick(0, n - 2);
          auto j = pick(rng);
          if (j >= i) ++j;
          negs[i] = order[b + j];
        } else {
          std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);
          negs[i] = pick(rng);
        }
      }
      std::vector<nn::Gradients> grads;
      grads.emplace_back(m.params());
      const double loss = kernels::accumulate_gradients(
          n, cfg.chunk, grads,
          [&](std::size_t i, std::vector<nn::Gradients>& sinks) {
            return generator_example_loss(m, train[order[b + i]], train[negs[i]].response, cfg.lambda, &sinks[0]);
          },
          cfg.exec);
      grads[0].scale(1.0 / static_cast<double>(n));
      opt.step(grads[0]);
      total += loss;
      count += n;
    }
    log.epoch_loss.push_back(total / static_cast<double>(count));
    const double v = metric();
    log.val_metric.push_back(v);
    if (!val.empty()) log.val_nll.push_back(use_bleu ? generator_nll(m, val) : -v);
    if (val.empty() || v > best_metric) {
      best_metric = v;
      log.best_epoch = epoch;
      snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) m.params().value(i) = best[i];
  return log;
}

}  // namespace flonet
