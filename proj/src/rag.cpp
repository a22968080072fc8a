#include "flonet/rag.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "flonet/error.hpp"

namespace flonet {

namespace {

using nlohmann::json;

std::size_t clamp_k(int k, std::size_t num_docs) {
  if (k < 1) throw ValidationError("rag: k must be at least 1");
  if (num_docs == 0) throw ValidationError("rag: empty document set");
  return std::min(static_cast<std::size_t>(k), num_docs);
}

/// log p_eta(z|h) for the shortlisted entries.
std::vector<double> shortlist_log_probs(const RetrievalResult& rr) {
  std::vector<double> s;
  for (std::size_t i = 0; i < rr.k; ++i) s.push_back(rr.ranked[i].score);
  const double lse = log_sum_exp(s);
  for (auto& x : s) x -= lse;
  return s;
}

std::vector<TokenId> clip_target(std::vector<TokenId> y, const Generator& g) {
  if (const auto* t = dynamic_cast<const TransformerGenerator*>(&g)) {
    const auto cap = static_cast<std::size_t>(t->config().max_response);
    if (y.size() > cap) y.erase(y.begin() + static_cast<std::ptrdiff_t>(cap) - 1, y.end() - 1);
  }
  return y;
}

DecodeResult finish(std::vector<Candidate> cands, RetrievalResult rr) {
  const auto best = select_candidate(cands);
  DecodeResult out;
  const auto& c = cands[best];
  out.text = c.text;
  out.tokens = c.tokens;
  out.doc_id = c.doc_id;
  out.raw_log_prob = c.raw_log_prob;
  out.normalized_log_prob = c.normalized_log_prob;
  out.score = c.score;
  out.candidates = std::move(cands);
  out.retrieval = std::move(rr);
  return out;
}

}  // namespace

void RagConfig::validate() const {
  if (k_infer < 1) throw ValidationError("rag config: k_infer must be at least 1");
  if (k_train < k_infer) throw ValidationError("rag config: k_train must be at least k_infer");
  if (beam_width < 1) throw ValidationError("rag config: beam_width must be at least 1");
  if (max_decode_len < 0) throw ValidationError("rag config: max_decode_len must be non-negative");
  if (nucleus_p && (*nucleus_p <= 0.0 || *nucleus_p > 1.0))
    throw ValidationError("rag config: nucleus_p must be in (0, 1]");
}

json RagConfig::to_json() const {
  json j = {{"k_train", k_train},
            {"k_infer", k_infer},
            {"beam_width", beam_width},
            {"max_decode_len", max_decode_len},
            {"length_normalize", length_normalize}};
  j["nucleus_p"] = nucleus_p ? json(*nucleus_p) : json(nullptr);
  return j;
}

RagConfig RagConfig::from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("rag config: expected an object");
  RagConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "k_train") c.k_train = v.get<int>();
    else if (key == "k_infer") c.k_infer = v.get<int>();
    else if (key == "beam_width") c.beam_width = v.get<int>();
    else if (key == "max_decode_len") c.max_decode_len = v.get<int>();
    else if (key == "length_normalize") c.length_normalize = v.get<bool>();
    else if (key == "nucleus_p") c.nucleus_p = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    else throw ValidationError("rag config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

double log_sum_exp(const std::vector<double>& xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double mx = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

double rag_sequence_log_prob(const DialogHistory& h, std::span<const TokenId> y, const std::vector<Document>& docs,
                             const Retriever& r, const Generator& g, std::size_t k) {
  if (docs.empty()) throw ValidationError("rag: empty document set");
  const auto rr = retrieve_topk(r, h, docs, clamp_k(static_cast<int>(k), docs.size()));
  auto terms = shortlist_log_probs(rr);
  for (std::size_t i = 0; i < rr.k; ++i) {
    const auto ctx = build_lm_input(h, docs[rr.ranked[i].index].value, g.vocab(), g.max_context());
    const auto lp = g.log_prob(ctx, y);
    terms[i] += std::accumulate(lp.begin(), lp.end(), 0.0);
  }
  return log_sum_exp(terms);
}

double rag_sequence_log_prob(const DialogHistory& h, const std::string& response, const std::vector<Document>& docs,
                             const Retriever& r, const Generator& g, std::size_t k) {
  const auto y = encode_response(response, g.vocab());
  return rag_sequence_log_prob(h, std::span<const TokenId>(y), docs, r, g, k);
}

// ---------------------------------------------------------------- decoding

std::vector<Hypothesis> beam_search(const Generator& g, const LmInput& ctx, int width, int max_len) {
  if (width < 1) throw ValidationError("beam_search: width must be at least 1");
  if (max_len < 0) throw ValidationError("beam_search: negative max_len");
  const TokenId end = g.vocab().id(special::end);
  struct Beam {
    std::unique_ptr<GeneratorState> state;
    std::vector<TokenId> tokens;
    double lp = 0;
  };
  struct Expansion {
    double lp;
    TokenId tok;
    std::size_t beam;
  };
  std::vector<Beam> active;
  active.push_back({g.begin(ctx), {}, 0.0});
  std::vector<Hypothesis> finished;
  const auto budget = static_cast<std::size_t>(width);

  while (!active.empty()) {
    if (active.front().tokens.size() >= static_cast<std::size_t>(max_len)) {
      for (auto& b : active) finished.push_back({std::move(b.tokens), b.lp, true});
      break;
    }
    std::vector<Expansion> ex;
    for (std::size_t b = 0; b < active.size(); ++b) {
      const auto lp = active[b].state->next_log_probs();
      for (Eigen::Index v = 0; v < lp.size(); ++v) ex.push_back({active[b].lp + lp(v), static_cast<TokenId>(v), b});
    }
    const std::size_t keep = std::min(budget - finished.size(), ex.size());
    std::partial_sort(ex.begin(), ex.begin() + static_cast<std::ptrdiff_t>(keep), ex.end(),
                      [](const Expansion& a, const Expansion& b) {
                        if (a.lp != b.lp) return a.lp > b.lp;
                        if (a.tok != b.tok) return a.tok < b.tok;
                        return a.beam < b.beam;
                      });
    std::vector<Beam> next;
    for (std::size_t i = 0; i < keep; ++i) {
      const auto& e = ex[i];
      auto tokens = active[e.beam].tokens;
      if (e.tok == end) {
        finished.push_back({std::move(tokens), e.lp, false});
        continue;
      }
      tokens.push_back(e.tok);
      auto st = active[e.beam].state->clone();
      if (tokens.size() < static_cast<std::size_t>(max_len)) st->advance(e.tok);
      next.push_back({std::move(st), std::move(tokens), e.lp});
    }
    active = std::move(next);
    if (finished.size() >= budget) break;
  }
  return finished;
}

void score_candidate(Candidate& c, std::size_t length, bool length_normalize) {
  if (length == 0) throw ValidationError("score_candidate: zero length");
  c.normalized_log_prob = c.raw_log_prob / static_cast<double>(length);
  c.score = c.retrieval_log_prob + (length_normalize ? c.normalized_log_prob : c.raw_log_prob);
}

std::size_t select_candidate(const std::vector<Candidate>& candidates) {
  if (candidates.empty()) throw ValidationError("select_candidate: no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i)
    if (candidates[i].score > candidates[best].score) best = i;
  return best;
}

DecodeResult decode(const DialogHistory& h, const std::vector<Document>& docs, const Retriever& r, const Generator& g,
                    const RagConfig& cfg) {
  cfg.validate();
  auto rr = retrieve_topk(r, h, docs, clamp_k(cfg.k_infer, docs.size()));
  const auto lpeta = shortlist_log_probs(rr);
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < rr.k; ++i) {
    const auto& doc = docs[rr.ranked[i].index];
    const auto ctx = build_lm_input(h, doc.value, g.vocab(), g.max_context());
    const auto hyps = beam_search(g, ctx, cfg.beam_width, cfg.max_decode_len);
    std::vector<Candidate> per_doc;
    for (const auto& hy : hyps) {
      Candidate c;
      c.doc_id = doc.doc_id;
      c.doc_index = rr.ranked[i].index;
      c.tokens = hy.tokens;
      c.retrieval_log_prob = lpeta[i];
      c.raw_log_prob = hy.log_prob;
      score_candidate(c, hy.length(), cfg.length_normalize);
      per_doc.push_back(std::move(c));
    }
    auto best = std::move(per_doc[select_candidate(per_doc)]);
    best.text = decode_response(best.tokens, g.vocab());
    cands.push_back(std::move(best));
  }
  return finish(std::move(cands), std::move(rr));
}

TokenId nucleus_sample(const Eigen::VectorXd& log_probs, double p, Rng& rng) {
  if (log_probs.size() == 0) throw ValidationError("nucleus_sample: empty distribution");
  if (p <= 0.0 || p > 1.0) throw ValidationError("nucleus_sample: p must be in (0, 1]");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(log_probs.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return log_probs(a) > log_probs(b); });
  std::vector<double> mass;
  double total = 0;
  for (auto i : order) {
    const double q = std::exp(log_probs(i));
    mass.push_back(q);
    total += q;
    if (total >= p) break;
  }
  std::uniform_real_distribution<double> u(0.0, total);
  const double x = u(rng);
  double acc = 0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    acc += mass[i];
    if (x < acc) return static_cast<TokenId>(order[i]);
  }
  return static_cast<TokenId>(order[mass.size() - 1]);
}

DecodeResult nucleus_decode(const DialogHistory& h, const std::vector<Document>& docs, const Retriever& r,
                            const Generator& g, const RagConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (!cfg.nucleus_p) throw ValidationError("nucleus_decode: nucleus_p not set");
  auto rr = retrieve_topk(r, h, docs, clamp_k(cfg.k_infer, docs.size()));
  const auto lpeta = shortlist_log_probs(rr);
  const TokenId end = g.vocab().id(special::end);
  std::vector<Candidate> cands;
  for (std::size_t i = 0; i < rr.k; ++i) {
    const auto& doc = docs[rr.ranked[i].index];
    Rng rng(derive_seed(seed, "nucleus:" + doc.doc_id));
    auto st = g.begin(build_lm_input(h, doc.value, g.vocab(), g.max_context()));
    Candidate c;
    c.doc_id = doc.doc_id;
    c.doc_index = rr.ranked[i].index;
    c.retrieval_log_prob = lpeta[i];
    while (c.tokens.size() < static_cast<std::size_t>(cfg.max_decode_len)) {
      const auto lp = st->next_log_probs();
      const auto t = nucleus_sample(lp, *cfg.nucleus_p, rng);
      c.raw_log_prob += lp(t);
      if (t == end) break;
      c.tokens.push_back(t);
      if (c.tokens.size() < static_cast<std::size_t>(cfg.max_decode_len)) st->advance(t);
    }
    score_candidate(c, c.tokens.size() + 1, cfg.length_normalize);
    c.text = decode_response(c.tokens, g.vocab());
    cands.push_back(std::move(c));
  }
  return finish(std::move(cands), std::move(rr));
}

DecodeResult respond(const DialogHistory& h, const std::vector<Document>& docs, const Retriever& r, const Generator& g,
                     const RagConfig& cfg, std::uint64_t seed) {
  if (!cfg.nucleus_p) return decode(h, docs, r, g, cfg);
  return nucleus_decode(h, docs, r, g, cfg,
                        derive_seed(seed, "nucleus:" + std::to_string(OracleRetriever::content_hash(h))));
}

// ---------------------------------------------------------------- training

std::vector<RagExample> make_rag_examples(const std::vector<Dialog>& dialogs,
                                          const std::map<std::string, std::vector<Document>>& docs) {
  std::vector<RagExample> out;
  for (const auto& d : dialogs) {
    auto it = docs.find(d.flowchart_id);
    if (it == docs.end()) throw ValidationError("no documents for flowchart '" + d.flowchart_id + "'");
    for (auto& t : agent_turns(d)) out.push_back({std::move(t.history), t.response, &it->second});
  }
  return out;
}

double rag_nll(const Retriever& r, const Generator& g, const std::vector<RagExample>& examples, std::size_t k) {
  double nll = 0;
  std::size_t tokens = 0;
  for (const auto& ex : examples) {
    const auto y = clip_target(encode_response(ex.response, g.vocab()), g);
    nll -= rag_sequence_log_prob(ex.history, std::span<const TokenId>(y), *ex.docs, r, g, k);
    tokens += y.size();
  }
  if (tokens == 0) throw ValidationError("rag_nll: no tokens");
  return nll / static_cast<double>(tokens);
}

RagTrainLog train_rag(HierarchicalRetriever& r, Generator& gen, const std::vector<RagExample>& train,
                      const std::vector<RagExample>& val, const RagConfig& rag, const RagTrainConfig& cfg) {
  rag.validate();
  auto& m = as_trainable(gen);
  RagTrainLog log;
  if (!val.empty()) log.initial_val_nll = rag_nll(r, m, val, static_cast<std::size_t>(rag.k_train));
  if (cfg.epochs <= 0 || train.empty()) return log;

  nn::AdamConfig gcfg;
  gcfg.lr = cfg.lr_generator;
  nn::Adam gopt(m.params(), gcfg);
  nn::AdamConfig rcfg;
  rcfg.lr = cfg.lr_retriever;
  nn::Adam ropt(r.params(), rcfg);

  std::vector<nn::Matrix> best_g, best_r;
  auto snapshot = [&] {
    best_g.clear();
    best_r.clear();
    for (std::size_t i = 0; i < m.params().size(); ++i) best_g.push_back(m.params().value(i));
    for (std::size_t i = 0; i < r.params().size(); ++i) best_r.push_back(r.params().value(i));
  };
  snapshot();
  double best = log.initial_val_nll;
  int since_best = 0;

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, "rag:shuffle"));
  const std::size_t batch = static_cast<std::size_t>(std::max(cfg.batch, 1));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    std::size_t count = 0;
    for (std::size_t b = 0; b < order.size(); b += batch) {
      const std::size_t n = std::min(order.size(), b + batch) - b;
      std::vector<nn::Gradients> grads;
      grads.emplace_back(m.params());
      grads.emplace_back(r.params());
      const double loss = kernels::accumulate_gradients(
          n, cfg.chunk, grads,
          [&](std::size_t i, std::vector<nn::Gradients>& sinks) {
            const auto& ex = train[order[b + i]];
            const auto& docs = *ex.docs;
            const auto rr = retrieve_topk(r, ex.history, docs, clamp_k(rag.k_train, docs.size()));
            const auto y = clip_target(encode_response(ex.response, m.vocab()), m);
            nn::Graph g;
            RetrieverGraph rg(g, r);
            const auto hv = rg.prefixes(ex.history.utterances()).back();
            std::vector<nn::Var> scores, seqs;
            for (std::size_t z = 0; z < rr.k; ++z) {
              const auto& doc = docs[rr.ranked[z].index];
              scores.push_back(g.scale(g.euclidean(hv, rg.key(doc)), -1.0));
              const auto ctx = build_lm_input(ex.history, doc.value, m.vocab(), m.max_context());
              const auto hidden = m.forward(g, ctx, y);
              seqs.push_back(g.sum(m.target_log_probs(g, hidden, ctx, y)));
            }
            const auto joint = g.add(g.log_softmax(g.stack(scores)), g.stack(seqs));
            const auto l = g.scale(g.logsumexp(joint), -1.0 / static_cast<double>(y.size()));
            if (cfg.freeze_retriever) {
              g.backward(l, {&sinks[0]});
            } else {
              g.backward(l, {&sinks[0], &sinks[1]});
            }
            return g.scalar(l);
          },
          cfg.exec);
      grads[0].scale(1.0 / static_cast<double>(n));
      gopt.step(grads[0]);
      if (!cfg.freeze_retriever) {
        grads[1].scale(1.0 / static_cast<double>(n));
        ropt.step(grads[1]);
        r.invalidate_cache();
      }
      total += loss;
      count += n;
    }
    log.epoch_loss.push_back(total / static_cast<double>(count));
    if (val.empty()) {
      log.best_epoch = epoch;
      snapshot();
      continue;
    }
    const double v = rag_nll(r, m, val, static_cast<std::size_t>(rag.k_train));
    log.val_nll.push_back(v);
    if (v < best) {
      best = v;
      log.best_epoch = epoch;
      snapshot();
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  for (std::size_t i = 0; i < best_g.size(); ++i) m.params().value(i) = best_g[i];
  for (std::size_t i = 0; i < best_r.size(); ++i) r.params().value(i) = best_r[i];
  r.invalidate_cache();
  return log;
}

}  // namespace flonet
