#include "flonet/retriever.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "flonet/error.hpp"

namespace flonet {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

VectorXd gru_eval(const VectorXd& x, const VectorXd& h, const MatrixXd& wx, const MatrixXd& wh, const MatrixXd& bx,
                  const MatrixXd& bh) {
  const auto n = h.size();
  VectorXd gx = wx * x + bx.col(0);
  VectorXd gh = wh * h + bh.col(0);
  VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double r = sigmoid(gx(i) + gh(i));
    const double z = sigmoid(gx(n + i) + gh(n + i));
    const double c = std::tanh(gx(2 * n + i) + r * gh(2 * n + i));
    out(i) = (1.0 - z) * c + z * h(i);
  }
  return out;
}

std::vector<double> softmax(const std::vector<double>& xs) {
  std::vector<double> out(xs.size());
  if (xs.empty()) return out;
  const double mx = *std::max_element(xs.begin(), xs.end());
  double z = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) z += out[i] = std::exp(xs[i] - mx);
  for (auto& p : out) p /= z;
  return out;
}

std::uint64_t docs_hash(const std::vector<Document>& docs) {
  std::uint64_t h = fnv1a64("docs");
  for (const auto& d : docs) {
    h = fnv1a64(d.doc_id, h);
    h = fnv1a64(to_string(d.kind), h);
    for (const auto& k : d.key) h = fnv1a64(k, fnv1a64("\x1f", h));
  }
  return h;
}

}  // namespace

RetrievalResult topk_from_scores(const std::vector<double>& scores, const std::vector<Document>& docs, std::size_t k) {
  if (docs.empty()) throw ValidationError("retrieve: empty document set");
  if (scores.size() != docs.size()) throw ValidationError("retrieve: one score per document expected");
  if (k < 1 || k > docs.size()) throw ValidationError("retrieve: k must be in [1, |docs|]");
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<double> top;
  for (std::size_t i = 0; i < k; ++i) top.push_back(scores[order[i]]);
  const auto probs = softmax(top);
  RetrievalResult r;
  r.k = k;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto idx = order[i];
    r.ranked.push_back({docs[idx].doc_id, idx, scores[idx], i < k ? probs[i] : 0.0});
  }
  return r;
}

RetrievalResult retrieve_topk(const Retriever& r, const DialogHistory& h, const std::vector<Document>& docs,
                              std::size_t k) {
  if (docs.empty()) throw ValidationError("retrieve: empty document set");
  return topk_from_scores(r.scores(h, docs), docs, k);
}

double euclidean_score(const VectorXd& hv, const VectorXd& kv) {
  if (hv.size() != kv.size()) throw ValidationError("score: dimension mismatch");
  return -(hv - kv).norm();
}

double contrastive_loss(double d_pos, double d_neg, double margin) { return d_pos + std::max(0.0, margin - d_neg); }

std::size_t pseudo_label(const std::string& response, const std::vector<Document>& docs, kernels::Exec exec) {
  if (docs.empty()) throw ValidationError("pseudo_label: empty document set");
  std::vector<Tokens> values;
  values.reserve(docs.size());
  for (const auto& d : docs) values.push_back(tokenize(d.value));
  const auto scores = kernels::bleu_scan(values, tokenize(response), exec);
  return kernels::argmax_first(scores);
}

// ---------------------------------------------------------------- TF-IDF

std::vector<double> TfidfRetriever::scores(const DialogHistory& h, const std::vector<Document>& docs) const {
  std::map<std::string, int> term_ids;
  std::vector<std::map<int, double>> tf(docs.size());
  std::map<int, int> df;
  auto term = [&](const std::string& t) {
    auto [it, _] = term_ids.emplace(t, static_cast<int>(term_ids.size()));
    return it->second;
  };
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (const auto& k : docs[i].key)
      for (const auto& t : tokenize(k)) tf[i][term(t)] += 1.0;
    for (const auto& [t, _] : tf[i]) ++df[t];
  }
  const double n = static_cast<double>(docs.size());
  auto idf = [&](int t) {
    auto it = df.find(t);
    const double d = it == df.end() ? 0.0 : it->second;
    return std::log((1.0 + n) / (1.0 + d)) + 1.0;
  };
  std::vector<kernels::SparseVec> vecs(docs.size());
  for (std::size_t i = 0; i < docs.size(); ++i)
    for (const auto& [t, c] : tf[i]) vecs[i].push_back({t, c * idf(t)});
  std::map<int, double> qtf;
  for (const auto& u : h.utterances())
    for (const auto& t : tokenize(u.text)) {
      auto it = term_ids.find(t);
      if (it != term_ids.end()) qtf[it->second] += 1.0;
    }
  kernels::SparseVec q;
  for (const auto& [t, c] : qtf) q.push_back({t, c * idf(t)});
  return kernels::cosine(vecs, q, exec_);
}

// ---------------------------------------------------------------- oracle

std::uint64_t OracleRetriever::history_hash(const DialogHistory& h) {
  if (!h.origin().empty()) return fnv1a64(h.origin(), fnv1a64("origin"));
  return content_hash(h);
}

std::uint64_t OracleRetriever::content_hash(const DialogHistory& h) {
  std::uint64_t x = fnv1a64("history");
  for (const auto& u : h.utterances()) x = fnv1a64(u.text, fnv1a64(to_string(u.speaker), x));
  return x;
}

void OracleRetriever::add(const DialogHistory& h, std::string gold_doc_id) { gold_[history_hash(h)] = std::move(gold_doc_id); }

std::vector<double> OracleRetriever::scores(const DialogHistory& h, const std::vector<Document>& docs) const {
  std::vector<double> out(docs.size(), 0.0);
  auto it = gold_.find(history_hash(h));
  if (it == gold_.end()) return out;
  for (std::size_t i = 0; i < docs.size(); ++i)
    if (docs[i].doc_id == it->second) out[i] = 1.0;
  return out;
}

// ---------------------------------------------------------------- dense

Vocab build_retriever_vocab(const KnowledgeBase& kb, const std::vector<Dialog>& dialogs) {
  std::set<std::string> words;
  for (const auto& id : kb.ids()) {
    for (const auto& d : kb.at(id).documents) {
      for (const auto& k : d.key)
        for (auto& t : tokenize(k)) words.insert(std::move(t));
      for (auto& t : tokenize(d.value)) words.insert(std::move(t));
    }
  }
  for (const auto& d : dialogs)
    for (const auto& u : d.utterances)
      for (auto& t : tokenize(u.text)) words.insert(std::move(t));
  Vocab v({"<pad>", "<unk>"}, "<unk>");
  for (const auto& w : words) v.add(w);
  return v;
}

std::vector<Speaker> key_speakers(const Document& d) {
  std::vector<Speaker> out;
  if (d.kind == DocKind::faq) return std::vector<Speaker>(d.key.size(), Speaker::user);
  for (std::size_t i = 0; i < d.key.size(); ++i) out.push_back(i % 2 == 0 ? Speaker::agent : Speaker::user);
  return out;
}

HierarchicalRetriever::HierarchicalRetriever(Vocab vocab, RetrieverConfig cfg, std::uint64_t seed)
    : vocab_(std::move(vocab)), cfg_(cfg) {
  if (cfg_.embed_dim <= 0) throw ValidationError("retriever: embed_dim must be positive");
  std::mt19937_64 rng(seed);
  const auto e = cfg_.embed_dim;
  const auto h = cfg_.hidden();
  const double ws = 1.0 / std::sqrt(static_cast<double>(h));
  const auto v = static_cast<Eigen::Index>(vocab_.size());
  slots_.emb = params_.add("emb", nn::uniform_matrix(v, e, 0.5, rng));
  slots_.speaker = params_.add("speaker", nn::uniform_matrix(2, h, cfg_.speaker_embeddings ? 0.1 : 0.0, rng));
  slots_.u_wx = params_.add("utt.wx", nn::uniform_matrix(3 * h, e, ws, rng));
  slots_.u_wh = params_.add("utt.wh", nn::uniform_matrix(3 * h, h, ws, rng));
  slots_.u_bx = params_.add("utt.bx", nn::Matrix::Zero(3 * h, 1));
  slots_.u_bh = params_.add("utt.bh", nn::Matrix::Zero(3 * h, 1));
  slots_.c_wx = params_.add("ctx.wx", nn::uniform_matrix(3 * h, h, ws, rng));
  slots_.c_wh = params_.add("ctx.wh", nn::uniform_matrix(3 * h, h, ws, rng));
  slots_.c_bx = params_.add("ctx.bx", nn::Matrix::Zero(3 * h, 1));
  slots_.c_bh = params_.add("ctx.bh", nn::Matrix::Zero(3 * h, 1));
  if (cfg_.shared_encoder) {
    slots_.k_wx = slots_.c_wx;
    slots_.k_wh = slots_.c_wh;
    slots_.k_bx = slots_.c_bx;
    slots_.k_bh = slots_.c_bh;
  } else {
    slots_.k_wx = params_.add("key.wx", nn::uniform_matrix(3 * h, h, ws, rng));
    slots_.k_wh = params_.add("key.wh", nn::uniform_matrix(3 * h, h, ws, rng));
    slots_.k_bx = params_.add("key.bx", nn::Matrix::Zero(3 * h, 1));
    slots_.k_bh = params_.add("key.bh", nn::Matrix::Zero(3 * h, 1));
  }
}

std::vector<TokenId> HierarchicalRetriever::ids(const std::string& text) const {
  const auto toks = tokenize(text);
  return vocab_.encode(toks);
}

VectorXd HierarchicalRetriever::encode_utterance(const std::string& text, Speaker s) const {
  const auto& p = params_;
  VectorXd h = VectorXd::Zero(cfg_.hidden());
  for (auto id : ids(text))
    h = gru_eval(p.value(slots_.emb).row(id).transpose(), h, p.value(slots_.u_wx), p.value(slots_.u_wh),
                 p.value(slots_.u_bx), p.value(slots_.u_bh));
  if (cfg_.speaker_embeddings) h += p.value(slots_.speaker).row(s == Speaker::user ? 0 : 1).transpose();
  return h;
}

VectorXd HierarchicalRetriever::run_context(const std::vector<VectorXd>& xs, bool key) const {
  const auto& p = params_;
  VectorXd h = VectorXd::Zero(cfg_.hidden());
  const auto wx = key ? slots_.k_wx : slots_.c_wx, wh = key ? slots_.k_wh : slots_.c_wh;
  const auto bx = key ? slots_.k_bx : slots_.c_bx, bh = key ? slots_.k_bh : slots_.c_bh;
  for (const auto& x : xs) h = gru_eval(x, h, p.value(wx), p.value(wh), p.value(bx), p.value(bh));
  return h;
}

std::vector<VectorXd> HierarchicalRetriever::encode_prefixes(const std::vector<Utterance>& utterances) const {
  const auto& p = params_;
  std::vector<VectorXd> out;
  VectorXd h = VectorXd::Zero(cfg_.hidden());
  for (const auto& u : utterances) {
    h = gru_eval(encode_utterance(u.text, u.speaker), h, p.value(slots_.c_wx), p.value(slots_.c_wh),
                 p.value(slots_.c_bx), p.value(slots_.c_bh));
    out.push_back(h);
  }
  return out;
}

VectorXd HierarchicalRetriever::encode_history(const DialogHistory& h) const { return encode_prefixes(h.utterances()).back(); }

VectorXd HierarchicalRetriever::encode_key(const Document& d) const {
  const auto speakers = key_speakers(d);
  std::vector<VectorXd> xs;
  for (std::size_t i = 0; i < d.key.size(); ++i) xs.push_back(encode_utterance(d.key[i], speakers[i]));
  return run_context(xs, true);
}

MatrixXd HierarchicalRetriever::encode_documents(const std::vector<Document>& docs) const {
  const auto key = docs_hash(docs);
  {
    std::lock_guard<std::mutex> lock(cache_mu_);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
  }
  MatrixXd out(static_cast<Eigen::Index>(docs.size()), cfg_.hidden());
  for (std::size_t i = 0; i < docs.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = encode_key(docs[i]).transpose();
  std::lock_guard<std::mutex> lock(cache_mu_);
  cache_[key] = out;
  return out;
}

void HierarchicalRetriever::invalidate_cache() const {
  std::lock_guard<std::mutex> lock(cache_mu_);
  cache_.clear();
}

std::vector<double> HierarchicalRetriever::scores(const DialogHistory& h, const std::vector<Document>& docs) const {
  return kernels::neg_euclidean(encode_documents(docs), encode_history(h), kernels::Exec::serial);
}

json HierarchicalRetriever::to_json() const {
  return {{"format", "flonet-retriever"},
          {"version", 1},
          {"config",
           {{"embed_dim", cfg_.embed_dim},
            {"hidden_dim", cfg_.hidden()},
            {"speaker_embeddings", cfg_.speaker_embeddings},
            {"shared_encoder", cfg_.shared_encoder}}},
          {"vocab", vocab_.tokens()},
          {"num_specials", vocab_.num_specials()},
          {"params", params_.to_json()}};
}

std::unique_ptr<HierarchicalRetriever> HierarchicalRetriever::from_json(const json& j) {
  if (j.value("format", "") != "flonet-retriever") throw ParseError("not a retriever checkpoint");
  if (j.value("version", 0) != 1) throw ParseError("unsupported retriever checkpoint version");
  RetrieverConfig cfg;
  const auto& c = j.at("config");
  cfg.embed_dim = c.at("embed_dim").get<int>();
  cfg.hidden_dim = c.at("hidden_dim").get<int>();
  cfg.speaker_embeddings = c.at("speaker_embeddings").get<bool>();
  cfg.shared_encoder = c.at("shared_encoder").get<bool>();
  const auto tokens = j.at("vocab").get<std::vector<std::string>>();
  const auto ns = j.at("num_specials").get<std::size_t>();
  Vocab v(std::vector<std::string>(tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(ns)), "<unk>");
  for (std::size_t i = ns; i < tokens.size(); ++i) v.add(tokens[i]);
  auto r = std::make_unique<HierarchicalRetriever>(std::move(v), cfg, 0);
  r->params_.load_json(j.at("params"));
  return r;
}

void HierarchicalRetriever::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << to_json().dump();
}

std::unique_ptr<HierarchicalRetriever> HierarchicalRetriever::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- graph encoder

RetrieverGraph::RetrieverGraph(nn::Graph& g, const HierarchicalRetriever& r) : g_(g), r_(r) {}

nn::Var RetrieverGraph::utterance(const std::string& text, Speaker s) {
  const auto key = std::make_pair(text, s == Speaker::user ? 0 : 1);
  auto it = utt_cache_.find(key);
  if (it != utt_cache_.end()) return it->second;
  const auto& sl = r_.slots();
  const auto& p = r_.params();
  const auto wx = g_.param(p, sl.u_wx), wh = g_.param(p, sl.u_wh);
  const auto bx = g_.param(p, sl.u_bx), bh = g_.param(p, sl.u_bh);
  nn::Var h = g_.input(nn::Matrix::Zero(r_.config().hidden(), 1));
  for (auto id : r_.ids(text)) {
    const TokenId one[] = {id};
    const auto x = g_.transpose(g_.embed(p, sl.emb, one));
    h = g_.gru_step(x, h, wx, wh, bx, bh);
  }
  if (r_.config().speaker_embeddings) {
    const TokenId sid[] = {s == Speaker::user ? 0 : 1};
    h = g_.add(h, g_.transpose(g_.embed(p, sl.speaker, sid)));
  }
  utt_cache_.emplace(key, h);
  return h;
}

nn::Var RetrieverGraph::context(const std::vector<nn::Var>& xs, bool key, std::vector<nn::Var>* states) {
  const auto& sl = r_.slots();
  const auto& p = r_.params();
  const auto wx = g_.param(p, key ? sl.k_wx : sl.c_wx), wh = g_.param(p, key ? sl.k_wh : sl.c_wh);
  const auto bx = g_.param(p, key ? sl.k_bx : sl.c_bx), bh = g_.param(p, key ? sl.k_bh : sl.c_bh);
  nn::Var h = g_.input(nn::Matrix::Zero(r_.config().hidden(), 1));
  for (const auto& x : xs) {
    h = g_.gru_step(x, h, wx, wh, bx, bh);
    if (states) states->push_back(h);
  }
  return h;
}

std::vector<nn::Var> RetrieverGraph::prefixes(const std::vector<Utterance>& utterances) {
  std::vector<nn::Var> xs, states;
  for (const auto& u : utterances) xs.push_back(utterance(u.text, u.speaker));
  context(xs, false, &states);
  return states;
}

nn::Var RetrieverGraph::key(const Document& d) {
  auto it = key_cache_.find(d.doc_id + '\x1f' + d.flowchart_id);
  if (it != key_cache_.end()) return it->second;
  const auto speakers = key_speakers(d);
  std::vector<nn::Var> xs;
  for (std::size_t i = 0; i < d.key.size(); ++i) xs.push_back(utterance(d.key[i], speakers[i]));
  auto v = context(xs, true, nullptr);
  key_cache_.emplace(d.doc_id + '\x1f' + d.flowchart_id, v);
  return v;
}

// ---------------------------------------------------------------- training

std::vector<RetrievalExample> make_retrieval_examples(const std::vector<Dialog>& dialogs,
                                                      const std::map<std::string, std::vector<Document>>& docs,
                                                      bool use_gold, kernels::Exec exec) {
  std::vector<RetrievalExample> out;
  out.reserve(dialogs.size());
  for (const auto& d : dialogs) {
    auto dit = docs.find(d.flowchart_id);
    if (dit == docs.end()) throw ValidationError("no documents for flowchart '" + d.flowchart_id + "'");
    RetrievalExample ex;
    ex.dialog = &d;
    ex.docs = &dit->second;
    for (std::size_t i = 1; i < d.utterances.size(); ++i) {
      const auto& u = d.utterances[i];
      if (u.speaker != Speaker::agent || u.closing) continue;
      std::optional<std::size_t> target;
      if (use_gold && u.grounding) {
        const auto gid = u.grounding->doc_id();
        for (std::size_t k = 0; k < dit->second.size(); ++k)
          if (dit->second[k].doc_id == gid) target = k;
      }
      if (!target) target = pseudo_label(u.text, dit->second, exec);
      ex.agent_positions.push_back(i);
      ex.targets.push_back(*target);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

double retrieval_recall(const HierarchicalRetriever& r, const std::vector<RetrievalExample>& examples) {
  std::size_t hits = 0, total = 0;
  for (const auto& ex : examples) {
    const auto keys = r.encode_documents(*ex.docs);
    const auto states = r.encode_prefixes(ex.dialog->utterances);
    for (std::size_t t = 0; t < ex.agent_positions.size(); ++t) {
      const auto s = kernels::neg_euclidean(keys, states[ex.agent_positions[t] - 1], kernels::Exec::serial);
      hits += kernels::argmax_first(s) == ex.targets[t];
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

RetrieverTrainLog pretrain_retriever(HierarchicalRetriever& r, const std::vector<RetrievalExample>& train,
                                     const std::vector<RetrievalExample>& val, const RetrieverTrainConfig& cfg) {
  for (const auto& ex : train)
    if (ex.docs->size() < 2) throw ValidationError("pretrain_retriever: need at least two documents for negatives");
  RetrieverTrainLog log;
  if (cfg.epochs <= 0 || train.empty()) return log;

  nn::AdamConfig acfg;
  acfg.lr = cfg.lr;
  nn::Adam opt(r.params(), acfg);
  std::vector<nn::Matrix> best;
  auto snapshot = [&] {
    best.clear();
    for (std::size_t i = 0; i < r.params().size(); ++i) best.push_back(r.params().value(i));
  };
  r.invalidate_cache();
  log.best_val_recall = val.empty() ? 0.0 : retrieval_recall(r, val);
  snapshot();
  int since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(cfg.seed, "retriever:shuffle"));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;
    std::size_t epoch_turns = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_dialogs)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_dialogs));
      std::size_t turns = 0;
      for (std::size_t i = b; i < e; ++i) turns += train[order[i]].agent_positions.size();
      if (turns == 0) continue;
      const double inv = 1.0 / static_cast<double>(turns);
      std::vector<nn::Gradients> grads;
      grads.emplace_back(r.params());
      const double loss = kernels::accumulate_gradients(
          e - b, cfg.chunk, grads,
          [&](std::size_t i, std::vector<nn::Gradients>& sinks) {
            const auto& ex = train[order[b + i]];
            Rng neg_rng(derive_seed(cfg.seed, "retriever:neg:" + std::to_string(epoch) + ":" + ex.dialog->dialog_id));
            nn::Graph g;
            RetrieverGraph rg(g, r);
            const auto states = rg.prefixes(ex.dialog->utterances);
            const auto& docs = *ex.docs;
            std::vector<nn::Var> terms;
            const auto margin = g.input(nn::Matrix::Constant(1, 1, cfg.margin));
            for (std::size_t t = 0; t < ex.agent_positions.size(); ++t) {
              const auto h = states[ex.agent_positions[t] - 1];
              const auto pos = ex.targets[t];
              terms.push_back(g.euclidean(h, rg.key(docs[pos])));
              for (int n = 0; n < cfg.negatives; ++n) {
                std::uniform_int_distribution<std::size_t> pick(0, docs.size() - 2);
                auto neg = pick(neg_rng);
                if (neg >= pos) ++neg;
                const auto dn = g.euclidean(h, rg.key(docs[neg]));
                terms.push_back(g.relu(g.sub(margin, dn)));
              }
            }
            if (terms.empty()) return 0.0;
            const auto loss = g.scale(g.sum(g.stack(terms)), inv);
            g.backward(loss, {&sinks[0]});
            return g.scalar(loss);
          },
          cfg.exec);
      if (cfg.freeze_embeddings) grads[0][r.slots().emb].setZero();
      opt.step(grads[0]);
      epoch_loss += loss * static_cast<double>(turns);
      epoch_turns += turns;
    }
    r.invalidate_cache();
    log.epoch_loss.push_back(epoch_turns ? epoch_loss / static_cast<double>(epoch_turns) : 0.0);
    const double rec = val.empty() ? 0.0 : retrieval_recall(r, val);
    log.val_recall.push_back(rec);
    if (val.empty() || rec > log.best_val_recall) {
      log.best_val_recall = rec;
      log.best_epoch = epoch;
      snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) r.params().value(i) = best[i];
  r.invalidate_cache();
  return log;
}

// ---------------------------------------------------------------- index cache

std::uint64_t parameter_hash(const nn::ParameterSet& p) {
  std::uint64_t h = fnv1a64("params");
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& m = p.value(i);
    h = fnv1a64(p.name(i), h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double)), h);
  }
  return h;
}

DocumentIndex build_document_index(const HierarchicalRetriever& r, const KnowledgeBase& kb) {
  DocumentIndex idx;
  idx.kb_fingerprint = kb.fingerprint();
  idx.model_hash = parameter_hash(r.params());
  for (const auto& id : kb.ids()) idx.encodings[id] = r.encode_documents(kb.at(id).documents);
  return idx;
}

void DocumentIndex::save(const std::string& path) const {
  json j = {{"format", "flonet-doc-index"},
            {"kb_fingerprint", std::to_string(kb_fingerprint)},
            {"model_hash", std::to_string(model_hash)},
            {"charts", json::object()}};
  for (const auto& [id, m] : encodings) {
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    Eigen::Map<MatrixXd>(data.data(), m.rows(), m.cols()) = m;
    j["charts"][id] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << j.dump();
}

DocumentIndex DocumentIndex::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  try {
    const auto j = json::parse(in);
    if (j.value("format", "") != "flonet-doc-index") throw ParseError(path + ": not a document index");
    DocumentIndex idx;
    idx.kb_fingerprint = std::stoull(j.at("kb_fingerprint").get<std::string>());
    idx.model_hash = std::stoull(j.at("model_hash").get<std::string>());
    for (const auto& [id, c] : j.at("charts").items()) {
      auto data = c.at("data").get<std::vector<double>>();
      idx.encodings[id] = Eigen::Map<MatrixXd>(data.data(), c.at("rows").get<Eigen::Index>(), c.at("cols").get<Eigen::Index>());
    }
    return idx;
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace flonet
