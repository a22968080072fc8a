#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "flonet/bleu.hpp"
#include "flonet/eval.hpp"

using namespace flonet;

namespace {

using Dialogs = std::vector<std::vector<std::string>>;

const Document& find_doc(const std::vector<Document>& docs, const std::string& id) {
  const auto it = std::find_if(docs.begin(), docs.end(), [&](const Document& d) { return d.doc_id == id; });
  REQUIRE(it != docs.end());
  return *it;
}

std::vector<std::string> flatten(const Dialogs& d) {
  std::vector<std::string> out;
  for (const auto& x : d) out.insert(out.end(), x.begin(), x.end());
  return out;
}

}  // namespace

TEST_CASE("R@1, success rate and per-dialog R@1 on a hand example") {
  const Dialogs gold{{"a", "b", "c"}, {"a", "b"}, {"d"}};
  const Dialogs got{{"a", "b", "c"}, {"a", "x"}, {"y"}};
  CHECK(recall_at_1(flatten(got), flatten(gold)) == doctest::Approx(4.0 / 6));
  CHECK(success_rate(got, gold) == doctest::Approx(1.0 / 3));
  CHECK(dialog_recall_at_1(got, gold) == doctest::Approx((1.0 + 0.5 + 0.0) / 3));
  CHECK(success_rate({{}}, {{}}) == 1.0);
  CHECK_THROWS_AS(recall_at_1({"a"}, {"a", "b"}), ValidationError);
  CHECK_THROWS_AS(recall_at_1({}, {}), ValidationError);
  CHECK_THROWS_AS(success_rate({{"a"}}, {{"a", "b"}}), ValidationError);
  CHECK_THROWS_AS(success_rate({}, {}), ValidationError);
}

TEST_CASE("SR never exceeds R@1 on equal-length dialogs (1000 random sets)") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 12, len = 1 + rng() % 8;
    const double p_err = std::uniform_real_distribution<double>(0, 0.6)(rng);
    Dialogs gold(n), got(n);
    for (std::size_t d = 0; d < n; ++d)
      for (std::size_t i = 0; i < len; ++i) {
        const std::string g = "node:n" + std::to_string(rng() % 6);
        gold[d].push_back(g);
        got[d].push_back(std::bernoulli_distribution(p_err)(rng) ? "node:n" + std::to_string(rng() % 6) : g);
      }
    const double sr = success_rate(got, gold), r1 = recall_at_1(flatten(got), flatten(gold));
    CHECK(sr <= r1 + 1e-12);
    // with equal lengths the per-dialog mean is the micro average
    CHECK(dialog_recall_at_1(got, gold) == doctest::Approx(r1).epsilon(1e-12));
  }
}

TEST_CASE("SR never exceeds per-dialog R@1 on variable-length dialogs (1000 random sets)") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    Dialogs gold(n), got(n);
    for (std::size_t d = 0; d < n; ++d) {
      const std::size_t len = rng() % 10;
      for (std::size_t i = 0; i < len; ++i) {
        const std::string g = "faq:" + std::to_string(rng() % 4);
        gold[d].push_back(g);
        got[d].push_back(rng() % 4 == 0 ? "faq:" + std::to_string(rng() % 4) : g);
      }
    }
    CHECK(success_rate(got, gold) <= dialog_recall_at_1(got, gold) + 1e-12);
  }
  // micro-averaged R@1 can fall below SR when lengths differ
  const Dialogs gold{{"a"}, std::vector<std::string>(10, "b")};
  const Dialogs got{{"a"}, std::vector<std::string>(10, "c")};
  CHECK(success_rate(got, gold) == 0.5);
  CHECK(recall_at_1(flatten(got), flatten(gold)) == doctest::Approx(1.0 / 11));
}

TEST_CASE("perplexity: uniform model gives |V|, template oracle gives 1") {
  KnowledgeBase kb;
  kb.add(fixtures::small_chart(), fixtures::small_faqs());
  SynthConfig sc;
  sc.outlines_per_flowchart = 12;
  const auto ds = forge_corpus(kb, ParaphraseBank{}, sc, 3);
  const std::map<std::string, std::vector<Document>> docs{{"small", kb.at("small").documents}};
  const auto examples = make_rag_examples(ds, docs);
  const auto v = build_generator_vocab(kb, ds);
  const TfidfRetriever tfidf;
  for (std::size_t k : {1u, 3u})
    CHECK(std::abs(perplexity(tfidf, UniformGenerator(v), examples, k) - static_cast<double>(v.size())) < 1e-6);

  // verbatim agent turns under gold retrieval
  OracleRetriever oracle;
  std::vector<RagExample> verbatim;
  for (const auto& d : ds)
    for (const auto& t : agent_turns(d)) {
      if (!t.gold || t.closing) continue;
      oracle.add(t.history, t.gold->doc_id());
      if (find_doc(docs.at("small"), t.gold->doc_id()).value == t.response)
        verbatim.push_back({t.history, t.response, &docs.at("small")});
    }
  REQUIRE(verbatim.size() > 20);
  CHECK(std::abs(perplexity(oracle, TemplateOracleGenerator(v), verbatim, 1) - 1.0) < 1e-12);
}

TEST_CASE("retrieval error taxonomy") {
  const auto f = fixtures::car();
  FaqSet faqs{f.id(), {{"Where is the battery?", "Under the hood."}}};
  const auto docs = build_documents(f, faqs);
  const auto& n1 = find_doc(docs, "node:n1");
  const auto& n3 = find_doc(docs, "node:n3");
  const auto& n4 = find_doc(docs, "node:n4");
  const auto& n5 = find_doc(docs, "node:n5");
  const auto& faq = find_doc(docs, "faq:0");
  CHECK(classify_retrieval_error(n4, n3, f) == RetrievalErrorKind::sibling);
  CHECK(classify_retrieval_error(n1, n3, f) == RetrievalErrorKind::parent);
  CHECK(classify_retrieval_error(faq, n3, f) == RetrievalErrorKind::faq);
  CHECK(classify_retrieval_error(n5, n3, f) == RetrievalErrorKind::other);
  // child of the gold node is not its parent
  CHECK(classify_retrieval_error(n3, n1, f) == RetrievalErrorKind::other);
  CHECK_THROWS_AS(classify_retrieval_error(n3, n3, f), ValidationError);
  CHECK_THROWS_AS(classify_retrieval_error(n3, faq, f), ValidationError);
  CHECK(to_string(RetrievalErrorKind::sibling) == "sibling");
}

TEST_CASE("evaluate: oracle systems score perfectly and the report matches its records") {
  const auto kb = fixtures::toy_charts();
  const auto all = forge_corpus(kb, fixtures::bank(), SynthConfig{}, 5);
  std::vector<Dialog> dialogs;
  for (std::size_t i = 0; i < all.size(); i += 11) dialogs.push_back(all[i]);

  OracleRetriever oracle;
  for (const auto& d : dialogs)
    for (const auto& t : agent_turns(d))
      if (t.gold) oracle.add(t.history, t.gold->doc_id());
  const TemplateOracleGenerator tmpl(build_generator_vocab(kb, dialogs));
  EvalOptions opts;
  opts.compute_perplexity = false;
  const auto res = evaluate(kb, dialogs, KnowledgeSources::flowchart_faq, oracle, tmpl, RagConfig{}, opts, "oracle",
                            "seen/test");
  CHECK(res.report.dialogs == dialogs.size());
  CHECK(res.report.recall_at_1 == 1.0);
  CHECK(res.report.success_rate == 1.0);
  CHECK(res.report.dialog_recall_at_1 == 1.0);
  for (const auto& [k, b] : res.report.errors) CHECK(b.count == 0);
  std::size_t closing = 0;
  for (const auto& r : res.records) closing += r.closing;
  CHECK(closing > 0);
  CHECK(res.report.retrieval_turns == res.records.size() - closing);

  // TF-IDF makes mistakes; every wrong node-grounded turn is classified
  const TfidfRetriever tfidf;
  const auto tf = evaluate(kb, dialogs, KnowledgeSources::flowchart_faq, tfidf, tmpl, RagConfig{}, opts, "tfidf");
  REQUIRE(tf.report.recall_at_1);
  CHECK(*tf.report.recall_at_1 < 1.0);
  std::size_t wrong_nodes = 0, classified = 0;
  for (const auto& r : tf.records) {
    if (r.counts_for_retrieval() && r.retrieved_doc_id != r.gold_doc_id && r.gold_doc_id.rfind("node:", 0) == 0)
      ++wrong_nodes;
    classified += r.error.has_value();
  }
  CHECK(wrong_nodes == classified);
  double pct = 0;
  for (const auto& [k, b] : tf.report.errors) pct += b.percent;
  CHECK(pct == doctest::Approx(100.0));
  CHECK(*tf.report.success_rate <= *tf.report.dialog_recall_at_1 + 1e-12);

  // BLEU over the records
  std::vector<std::string> refs, hyps;
  for (const auto& r : tf.records) {
    refs.push_back(r.reference);
    hyps.push_back(r.prediction);
  }
  CHECK(tf.report.bleu == doctest::Approx(corpus_bleu(refs, hyps)).epsilon(1e-12));
  const auto again = aggregate(tf.records, KnowledgeSources::flowchart_faq, "tfidf", "test");
  CHECK(again.to_json() == tf.report.to_json());

  // history-only carries no retrieval metrics
  const auto h = evaluate(kb, dialogs, KnowledgeSources::history_only, tfidf, tmpl, RagConfig{}, opts, "h");
  CHECK(!h.report.recall_at_1);
  CHECK(!h.report.success_rate);
  for (const auto& r : h.records) CHECK(r.retrieved_doc_id == "none");

  SUBCASE("report and records output") {
    std::ostringstream table, lines;
    write_report(table, {res.report, tf.report});
    CHECK(table.str().find("R@1") != std::string::npos);
    CHECK(table.str().find("tfidf") != std::string::npos);
    CHECK(table.str().find("1.000") != std::string::npos);
    write_records(lines, tf.records);
    std::istringstream in(lines.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.at("dialog_id") == tf.records[n].dialog_id);
      ++n;
    }
    CHECK(n == tf.records.size());
    const auto j = tf.report.to_json();
    CHECK(j.at("errors").size() == 4);
    CHECK(j.at("perplexity").is_null());
  }
}

TEST_CASE("documents by chart") {
  const auto kb = fixtures::toy_charts();
  const auto full = documents_by_chart(kb, KnowledgeSources::flowchart_faq);
  const auto fc = documents_by_chart(kb, KnowledgeSources::flowchart);
  const auto none = documents_by_chart(kb, KnowledgeSources::history_only);
  CHECK(full.size() == 3);
  for (const auto& id : fixtures::toy_ids()) {
    CHECK(full.at(id).size() > fc.at(id).size());
    for (const auto& d : fc.at(id)) CHECK(d.kind == DocKind::node);
    REQUIRE(none.at(id).size() == 1);
    CHECK(none.at(id)[0].doc_id == "none");
  }
}
