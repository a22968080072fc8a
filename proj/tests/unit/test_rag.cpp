#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

#include "fixtures.hpp"
#include "flonet/rag.hpp"

using namespace flonet;

namespace {

Vocab tiny_vocab() {
  Vocab v({special::begin, special::sep, special::agent, special::user, special::end, special::unk, special::pad},
          special::unk);
  for (const auto* w : {"a", "b", "c"}) v.add(w);
  return v;
}

constexpr TokenId kEnd = 4, kA = 7, kB = 8, kC = 9;

/// Scores fixed per document position.
class FixedRetriever : public Retriever {
 public:
  explicit FixedRetriever(std::vector<double> s) : s_(std::move(s)) {}
  std::string name() const override { return "fixed"; }
  std::vector<double> scores(const DialogHistory&, const std::vector<Document>& docs) const override {
    return {s_.begin(), s_.begin() + static_cast<std::ptrdiff_t>(docs.size())};
  }

 private:
  std::vector<double> s_;
};

/// Next-token distribution given by a function of the document value and the
/// tokens generated so far.
using Script = std::function<Eigen::VectorXd(const std::vector<TokenId>& value, const std::vector<TokenId>& prefix)>;

class ScriptGenerator : public Generator {
 public:
  ScriptGenerator(Vocab v, Script s) : vocab_(std::move(v)), script_(std::move(s)) {}
  std::string name() const override { return "script"; }
  const Vocab& vocab() const override { return vocab_; }
  std::size_t max_context() const override { return 1024; }
  std::unique_ptr<GeneratorState> begin(const LmInput& ctx) const override {
    return std::make_unique<State>(this, std::vector<TokenId>(ctx.value().begin(), ctx.value().end()));
  }

 private:
  struct State : GeneratorState {
    State(const ScriptGenerator* g, std::vector<TokenId> v) : g(g), value(std::move(v)) {}
    Eigen::VectorXd next_log_probs() const override { return g->script_(value, prefix); }
    void advance(TokenId t) override { prefix.push_back(t); }
    std::unique_ptr<GeneratorState> clone() const override { return std::make_unique<State>(*this); }
    std::size_t generated() const override { return prefix.size(); }
    const ScriptGenerator* g;
    std::vector<TokenId> value, prefix;
  };
  Vocab vocab_;
  Script script_;
};

Eigen::VectorXd dist(std::map<TokenId, double> p) {
  Eigen::VectorXd out = Eigen::VectorXd::Constant(10, -1e9);
  for (auto [t, q] : p) out(t) = std::log(q);
  return out;
}

/// `t` with probability p, the rest spread evenly over the other tokens.
Eigen::VectorXd top(TokenId t, double p) {
  Eigen::VectorXd out = Eigen::VectorXd::Constant(10, std::log((1 - p) / 9));
  out(t) = std::log(p);
  return out;
}

Document doc(std::string id, std::string value) {
  Document d;
  d.doc_id = std::move(id);
  d.flowchart_id = "t";
  d.key = {"x"};
  d.value = std::move(value);
  return d;
}

DialogHistory one_turn(const std::string& text) { return DialogHistory({fixtures::user(text)}); }

TransformerGenerator tiny_transformer(std::uint64_t seed) {
  TransformerConfig c;
  c.d_model = 8;
  c.layers = 1;
  c.heads = 2;
  c.ff_mult = 2;
  c.max_positions = 48;
  c.max_response = 12;
  return TransformerGenerator(tiny_vocab(), c, seed);
}

double seq_log_prob(const Generator& g, const DialogHistory& h, const std::string& value, const std::vector<TokenId>& y) {
  double s = 0;
  for (double lp : g.log_prob(build_lm_input(h, value, g.vocab(), g.max_context()), y)) s += lp;
  return s;
}

}  // namespace

TEST_CASE("log_sum_exp") {
  CHECK(log_sum_exp({std::log(0.25), std::log(0.5)}) == doctest::Approx(std::log(0.75)).epsilon(1e-12));
  CHECK(log_sum_exp({1000.0, 1000.0}) == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
  CHECK(std::isinf(log_sum_exp({})));
}

TEST_CASE("sequence marginal matches a hand expansion over the top-k") {
  const auto g = tiny_transformer(3);
  const std::vector<Document> docs{doc("d0", "a b"), doc("d1", "c"), doc("d2", "b b c")};
  const FixedRetriever r({1.0, 0.2, -0.5});
  const auto h = one_turn("a c");
  const std::vector<TokenId> y{kB, kA, kEnd};
  std::vector<double> lp;
  for (const auto& d : docs) lp.push_back(seq_log_prob(g, h, d.value, y));

  // k = 1: retrieval prob 1 on d0
  CHECK(rag_sequence_log_prob(h, y, docs, r, g, 1) == doctest::Approx(lp[0]).epsilon(kLogTolerance));
  // k = 2 and 3: softmax over the shortlisted scores
  for (std::size_t k : {2u, 3u}) {
    const std::vector<double> s{1.0, 0.2, -0.5};
    double z = 0, p = 0;
    for (std::size_t i = 0; i < k; ++i) z += std::exp(s[i]);
    for (std::size_t i = 0; i < k; ++i) p += std::exp(s[i]) / z * std::exp(lp[i]);
    CHECK(std::abs(rag_sequence_log_prob(h, y, docs, r, g, k) - std::log(p)) < kLogTolerance);
  }
  // k beyond the document count is clamped
  CHECK(rag_sequence_log_prob(h, y, docs, r, g, 9) == rag_sequence_log_prob(h, y, docs, r, g, 3));
  // string overload
  CHECK(rag_sequence_log_prob(h, "b a", docs, r, g, 2) == rag_sequence_log_prob(h, y, docs, r, g, 2));
}

TEST_CASE("single document and equal retrieval probabilities") {
  const auto g = tiny_transformer(4);
  const auto h = one_turn("b");
  const std::vector<TokenId> y{kC, kEnd};
  const std::vector<Document> one{doc("only", "a")};
  CHECK(std::abs(rag_sequence_log_prob(h, y, one, FixedRetriever({-3.0}), g, 5) - seq_log_prob(g, h, "a", y)) <
        kLogTolerance);

  const std::vector<Document> pair{doc("p", "a"), doc("q", "b c")};
  const double expect = std::log(0.5 * std::exp(seq_log_prob(g, h, "a", y)) + 0.5 * std::exp(seq_log_prob(g, h, "b c", y)));
  CHECK(std::abs(rag_sequence_log_prob(h, y, pair, FixedRetriever({0.7, 0.7}), g, 2) - expect) < kLogTolerance);

  // history-only: one empty document
  const std::vector<Document> none{empty_document("t")};
  CHECK(std::abs(rag_sequence_log_prob(h, y, none, FixedRetriever({0.0}), g, 5) - seq_log_prob(g, h, "", y)) <
        kLogTolerance);
}

TEST_CASE("beam search") {
  const auto g = tiny_transformer(5);
  const auto ctx = build_lm_input(one_turn("a b"), "c a", g.vocab(), g.max_context());

  SUBCASE("width 1 is greedy") {
    const auto hyps = beam_search(g, ctx, 1, 10);
    REQUIRE(hyps.size() == 1);
    CHECK(hyps[0].tokens == greedy_decode(g, ctx, 10));
    if (!hyps[0].forced_end) {
      auto y = hyps[0].tokens;
      y.push_back(kEnd);
      double s = 0;
      for (double lp : g.log_prob(ctx, y)) s += lp;
      CHECK(hyps[0].log_prob == doctest::Approx(s).epsilon(1e-12));
    }
  }

  SUBCASE("finished hypotheses leave the beam") {
    // [end] .5, a .3, b .2 at the first step, then [end] with certainty
    const ScriptGenerator sg(tiny_vocab(), [](const auto&, const auto& prefix) {
      return prefix.empty() ? dist({{kEnd, 0.5}, {kA, 0.3}, {kB, 0.2}}) : dist({{kEnd, 1.0}});
    });
    const auto hyps = beam_search(sg, ctx, 2, 10);
    REQUIRE(hyps.size() == 2);
    CHECK(hyps[0].tokens.empty());
    CHECK(hyps[0].log_prob == doctest::Approx(std::log(0.5)));
    CHECK(hyps[0].length() == 1);
    CHECK(hyps[1].tokens == std::vector<TokenId>{kA});
    CHECK(hyps[1].log_prob == doctest::Approx(std::log(0.3)));
    CHECK(hyps[1].length() == 2);
  }

  SUBCASE("length limit closes hypotheses without adding probability") {
    const UniformGenerator u(tiny_vocab());
    const auto hyps = beam_search(u, ctx, 2, 60);
    REQUIRE(!hyps.empty());
    for (const auto& hy : hyps) {
      CHECK(hy.forced_end);
      CHECK(hy.tokens.size() == 60);
      CHECK(hy.log_prob == doctest::Approx(-60 * std::log(10.0)).epsilon(1e-12));
    }
    RagConfig cfg;
    cfg.beam_width = 3;
    const auto res = decode(one_turn("a"), {doc("d", "a")}, FixedRetriever({0.0}), u, cfg);
    CHECK(res.tokens.size() == 60);
  }

  CHECK_THROWS_AS(beam_search(g, ctx, 0, 10), ValidationError);
}

TEST_CASE("length normalization decides between candidates") {
  // rigged: raw -2.0 over length 2 against raw -3.6 over length 4
  Candidate shortc, longc;
  shortc.retrieval_log_prob = longc.retrieval_log_prob = std::log(0.5);
  shortc.raw_log_prob = -2.0;
  longc.raw_log_prob = -3.6;
  score_candidate(shortc, 2, true);
  score_candidate(longc, 4, true);
  CHECK(shortc.normalized_log_prob == doctest::Approx(-1.0));
  CHECK(longc.normalized_log_prob == doctest::Approx(-0.9));
  CHECK(select_candidate({shortc, longc}) == 1);
  score_candidate(shortc, 2, false);
  score_candidate(longc, 4, false);
  CHECK(select_candidate({shortc, longc}) == 0);
  // ties go to the earlier candidate
  CHECK(select_candidate({longc, longc}) == 0);

  // the same choice through decode: two documents, each with one scripted reply
  const ScriptGenerator sg(tiny_vocab(), [](const std::vector<TokenId>& value, const std::vector<TokenId>& prefix) {
    // value "a": reply "a" (raw -2 over length 2); value "b": "b b b" (raw -3.6 over length 4)
    if (value.front() == kA) return top(prefix.empty() ? kA : kEnd, std::exp(-1.0));
    return top(prefix.size() < 3 ? kB : kEnd, std::exp(-0.9));
  });
  const std::vector<Document> docs{doc("short", "a"), doc("long", "b")};
  RagConfig cfg;
  cfg.k_infer = 2;
  cfg.beam_width = 1;
  const FixedRetriever r({0.0, 0.0});
  cfg.length_normalize = true;
  const auto norm = decode(one_turn("x"), docs, r, sg, cfg);
  CHECK(norm.candidates.size() == 2);
  CHECK(norm.doc_id == "long");
  CHECK(norm.text == "b b b");
  CHECK(norm.raw_log_prob == doctest::Approx(-3.6));
  cfg.length_normalize = false;
  CHECK(decode(one_turn("x"), docs, r, sg, cfg).doc_id == "short");
}

TEST_CASE("nucleus sampling") {
  Rng rng(11);
  const auto peaked = dist({{kA, 0.9}, {kB, 0.06}, {kC, 0.04}});
  for (int i = 0; i < 200; ++i) CHECK(nucleus_sample(peaked, 0.5, rng) == kA);
  // ties: lower id first
  const auto flat = dist({{kA, 0.5}, {kB, 0.5}});
  for (int i = 0; i < 50; ++i) CHECK(nucleus_sample(flat, 0.4, rng) == kA);

  // p = 1 samples the full distribution
  const auto spread = dist({{kA, 0.5}, {kB, 0.3}, {kC, 0.2}});
  std::map<TokenId, int> counts;
  const int n = 40000;
  for (int i = 0; i < n; ++i) ++counts[nucleus_sample(spread, 1.0, rng)];
  CHECK(counts[kA] / double(n) == doctest::Approx(0.5).epsilon(0.04));
  CHECK(counts[kB] / double(n) == doctest::Approx(0.3).epsilon(0.05));
  CHECK(counts[kC] / double(n) == doctest::Approx(0.2).epsilon(0.06));
  // p = 0.8 drops the tail
  counts.clear();
  for (int i = 0; i < 5000; ++i) ++counts[nucleus_sample(spread, 0.8, rng)];
  CHECK(counts[kC] == 0);
  CHECK_THROWS_AS(nucleus_sample(spread, 0.0, rng), ValidationError);
  CHECK_THROWS_AS(nucleus_sample(spread, 1.5, rng), ValidationError);
}

TEST_CASE("respond: beam by default, seeded nucleus when configured") {
  const auto g = tiny_transformer(6);
  const std::vector<Document> docs{doc("d0", "a b"), doc("d1", "c")};
  const FixedRetriever r({0.3, 0.1});
  const auto h = one_turn("b a");
  RagConfig cfg;
  cfg.max_decode_len = 8;
  CHECK(respond(h, docs, r, g, cfg, 1).text == decode(h, docs, r, g, cfg).text);
  cfg.nucleus_p = 0.9;
  const auto x = respond(h, docs, r, g, cfg, 1);
  CHECK(respond(h, docs, r, g, cfg, 1).tokens == x.tokens);
  CHECK(respond(h, docs, r, g, cfg, 1).doc_id == x.doc_id);
  bool differs = false;
  for (std::uint64_t s = 2; s < 40 && !differs; ++s) differs = respond(h, docs, r, g, cfg, s).tokens != x.tokens;
  CHECK(differs);
  for (const auto& c : x.candidates) CHECK(c.tokens.size() <= 8);
}

TEST_CASE("oracle retriever with the template generator reproduces the gold value") {
  const auto kb = fixtures::toy_charts();
  const auto dialogs = forge_corpus(kb, fixtures::bank(), SynthConfig{}, 7);
  OracleRetriever r;
  std::vector<AgentTurn> turns;
  for (std::size_t i = 0; i < dialogs.size(); i += 7)
    for (auto& t : agent_turns(dialogs[i]))
      if (t.gold && !t.closing) {
        r.add(t.history, t.gold->doc_id());
        turns.push_back(std::move(t));
      }
  REQUIRE(turns.size() > 100);
  const TemplateOracleGenerator g(build_generator_vocab(kb, dialogs));
  RagConfig cfg;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < dialogs.size(); i += 7) {
    const auto docs = kb.documents(dialogs[i].flowchart_id, KnowledgeSources::flowchart_faq);
    for (const auto& t : agent_turns(dialogs[i])) {
      if (!t.gold || t.closing) continue;
      const auto res = decode(t.history, docs, r, g, cfg);
      const auto gold = std::find_if(docs.begin(), docs.end(), [&](const Document& d) { return d.doc_id == t.gold->doc_id(); });
      REQUIRE(gold != docs.end());
      CHECK(res.doc_id == gold->doc_id);
      CHECK(res.text == decode_response(encode_response(gold->value, g.vocab()), g.vocab()));
      exact += res.text == decode_response(encode_response(gold->value, g.vocab()), g.vocab());
    }
  }
  CHECK(exact == turns.size());
}

TEST_CASE("RagConfig validation and JSON") {
  RagConfig c;
  CHECK_NOTHROW(c.validate());
  const auto back = RagConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  c.nucleus_p = 0.7;
  CHECK(RagConfig::from_json(c.to_json()).nucleus_p == 0.7);

  auto bad = [](auto mutate) {
    RagConfig x;
    mutate(x);
    return x;
  };
  CHECK_THROWS_AS(bad([](RagConfig& x) { x.k_train = 0; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](RagConfig& x) { x.k_infer = 0; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](RagConfig& x) { x.beam_width = 0; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](RagConfig& x) { x.max_decode_len = -1; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](RagConfig& x) { x.nucleus_p = 0.0; }).validate(), ValidationError);
  CHECK_THROWS_AS(bad([](RagConfig& x) { x.nucleus_p = 1.2; }).validate(), ValidationError);
  auto j = RagConfig{}.to_json();
  j["beam"] = 3;
  CHECK_THROWS_AS(RagConfig::from_json(j), ValidationError);
}

TEST_CASE("joint training") {
  KnowledgeBase kb;
  kb.add(fixtures::small_chart(), fixtures::small_faqs());
  SynthConfig sc;
  sc.outlines_per_flowchart = 20;
  const auto ds = forge_corpus(kb, ParaphraseBank{}, sc, 8);
  const std::vector<Dialog> train(ds.begin(), ds.begin() + 24), val(ds.begin() + 24, ds.begin() + 32);
  const std::map<std::string, std::vector<Document>> docs{{"small", kb.at("small").documents}};
  const auto tr = make_rag_examples(train, docs), va = make_rag_examples(val, docs);
  REQUIRE(!tr.empty());
  CHECK(tr.front().docs == &docs.at("small"));

  TransformerConfig gc;
  gc.d_model = 16;
  gc.layers = 1;
  gc.heads = 2;
  gc.ff_mult = 2;
  gc.max_positions = 96;
  gc.max_response = 16;
  RetrieverConfig rc;
  rc.embed_dim = 8;
  const auto gv = build_generator_vocab(kb, train);
  const auto rv = build_retriever_vocab(kb, train);
  RagConfig rag;
  rag.k_train = 3;
  RagTrainConfig tc;
  tc.lr_generator = 3e-3;

  SUBCASE("zero epochs leave both models unchanged") {
    HierarchicalRetriever r(rv, rc, 1), r0(rv, rc, 1);
    TransformerGenerator g(gv, gc, 2), g0(gv, gc, 2);
    tc.epochs = 0;
    const auto log = train_rag(r, g, tr, va, rag, tc);
    CHECK(log.best_epoch == -1);
    CHECK(log.initial_val_nll == doctest::Approx(rag_nll(r0, g0, va, 3)).epsilon(1e-12));
    for (std::size_t i = 0; i < g.params().size(); ++i) CHECK(g.params().value(i) == g0.params().value(i));
    for (std::size_t i = 0; i < r.params().size(); ++i) CHECK(r.params().value(i) == r0.params().value(i));
  }

  SUBCASE("training keeps the best validation parameters") {
    HierarchicalRetriever r(rv, rc, 1);
    TransformerGenerator g(gv, gc, 2);
    tc.epochs = 2;
    const auto log = train_rag(r, g, tr, va, rag, tc);
    REQUIRE(log.val_nll.size() == 2);
    double best = log.initial_val_nll;
    for (double v : log.val_nll) best = std::min(best, v);
    CHECK(best < log.initial_val_nll);
    CHECK(rag_nll(r, g, va, 3) == doctest::Approx(best).epsilon(1e-9));
  }

  SUBCASE("frozen retriever") {
    HierarchicalRetriever r(rv, rc, 1), r0(rv, rc, 1);
    TransformerGenerator g(gv, gc, 2), g0(gv, gc, 2);
    tc.epochs = 1;
    tc.freeze_retriever = true;
    train_rag(r, g, tr, va, rag, tc);
    for (std::size_t i = 0; i < r.params().size(); ++i) CHECK(r.params().value(i) == r0.params().value(i));
    bool moved = false;
    for (std::size_t i = 0; i < g.params().size(); ++i) moved |= g.params().value(i) != g0.params().value(i);
    CHECK(moved);
  }

  SUBCASE("the template generator is not trainable") {
    HierarchicalRetriever r(rv, rc, 1);
    TemplateOracleGenerator t(gv);
    CHECK_THROWS_AS(train_rag(r, t, tr, va, rag, tc), UnsupportedError);
  }
}
