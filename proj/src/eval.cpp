#include "flonet/eval.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "flonet/bleu.hpp"
#include "flonet/error.hpp"

namespace flonet {

namespace {

using nlohmann::json;

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fmt(const std::optional<double>& v, int precision) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << *v;
  return s.str();
}

const Document* find_doc(const std::vector<Document>& docs, const std::string& id) {
  for (const auto& d : docs)
    if (d.doc_id == id) return &d;
  return nullptr;
}

}  // namespace

double recall_at_1(const std::vector<std::string>& retrieved, const std::vector<std::string>& gold) {
  if (retrieved.size() != gold.size()) throw ValidationError("recall_at_1: length mismatch");
  if (gold.empty()) throw ValidationError("recall_at_1: no positions");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hit += retrieved[i] == gold[i];
  return static_cast<double>(hit) / static_cast<double>(gold.size());
}

double success_rate(const std::vector<std::vector<std::string>>& retrieved,
                    const std::vector<std::vector<std::string>>& gold) {
  if (retrieved.size() != gold.size()) throw ValidationError("success_rate: dialog count mismatch");
  if (gold.empty()) throw ValidationError("success_rate: no dialogs");
  std::size_t ok = 0;
  for (std::size_t d = 0; d < gold.size(); ++d) {
    if (retrieved[d].size() != gold[d].size()) throw ValidationError("success_rate: misaligned dialog");
    ok += retrieved[d] == gold[d];
  }
  return static_cast<double>(ok) / static_cast<double>(gold.size());
}

double dialog_recall_at_1(const std::vector<std::vector<std::string>>& retrieved,
                          const std::vector<std::vector<std::string>>& gold) {
  if (retrieved.size() != gold.size()) throw ValidationError("dialog_recall_at_1: dialog count mismatch");
  if (gold.empty()) throw ValidationError("dialog_recall_at_1: no dialogs");
  double sum = 0;
  for (std::size_t d = 0; d < gold.size(); ++d) sum += gold[d].empty() ? 1.0 : recall_at_1(retrieved[d], gold[d]);
  return sum / static_cast<double>(gold.size());
}

double perplexity(const Retriever& r, const Generator& g, const std::vector<RagExample>& examples, std::size_t k) {
  return std::exp(rag_nll(r, g, examples, k));
}

std::string_view to_string(RetrievalErrorKind k) {
  switch (k) {
    case RetrievalErrorKind::sibling: return "sibling";
    case RetrievalErrorKind::parent: return "parent";
    case RetrievalErrorKind::faq: return "faq";
    case RetrievalErrorKind::other: return "other";
  }
  return "other";
}

RetrievalErrorKind classify_retrieval_error(const Document& retrieved, const Document& gold, const Flowchart& f) {
  if (gold.kind != DocKind::node) throw ValidationError("classify_retrieval_error: gold must be a node document");
  if (retrieved.doc_id == gold.doc_id && retrieved.flowchart_id == gold.flowchart_id)
    throw ValidationError("classify_retrieval_error: retrieval is correct");
  if (retrieved.kind == DocKind::faq) return RetrievalErrorKind::faq;
  if (retrieved.flowchart_id != f.id() || !f.has_node(retrieved.source_id)) return RetrievalErrorKind::other;
  const auto gp = f.parent(gold.source_id);
  if (gp && *gp == retrieved.source_id) return RetrievalErrorKind::parent;
  if (gp && f.parent(retrieved.source_id) == gp) return RetrievalErrorKind::sibling;
  return RetrievalErrorKind::other;
}

json TurnRecord::to_json() const {
  return {{"dialog_id", dialog_id},
          {"flowchart", flowchart_id},
          {"utterance_index", utterance_index},
          {"digression", to_string(digression)},
          {"closing", closing},
          {"gold_doc_id", gold_doc_id.empty() ? json(nullptr) : json(gold_doc_id)},
          {"retrieved_doc_id", retrieved_doc_id},
          {"reference", reference},
          {"prediction", prediction},
          {"error", error ? json(to_string(*error)) : json(nullptr)}};
}

json EvalReport::to_json() const {
  json j = {{"system", system},
            {"split", split},
            {"sources", to_string(sources)},
            {"dialogs", dialogs},
            {"turns", turns},
            {"retrieval_turns", retrieval_turns},
            {"bleu", bleu},
            {"perplexity", opt(perplexity)},
            {"recall_at_1", opt(recall_at_1)},
            {"success_rate", opt(success_rate)},
            {"dialog_recall_at_1", opt(dialog_recall_at_1)}};
  json e = json::object();
  for (const auto& [k, b] : errors) e[k] = {{"count", b.count}, {"percent", b.percent}};
  j["errors"] = e;
  json d = json::object();
  for (const auto& [k, s] : digressions) d[k] = {{"turns", s.turns}, {"bleu", s.bleu}, {"recall_at_1", opt(s.recall_at_1)}};
  j["digressions"] = d;
  return j;
}

EvalReport aggregate(const std::vector<TurnRecord>& records, KnowledgeSources sources, std::string system,
                     std::string split) {
  EvalReport rep;
  rep.system = std::move(system);
  rep.split = std::move(split);
  rep.sources = sources;
  rep.turns = records.size();
  if (records.empty()) return rep;

  std::vector<std::string> refs, hyps;
  std::vector<std::vector<std::string>> by_dialog_ret, by_dialog_gold;
  std::vector<std::string> ret, gold;
  std::string current;
  for (const auto& t : records) {
    refs.push_back(t.reference);
    hyps.push_back(t.prediction);
    if (by_dialog_ret.empty() || t.dialog_id != current) {
      current = t.dialog_id;
      by_dialog_ret.emplace_back();
      by_dialog_gold.emplace_back();
    }
    if (t.counts_for_retrieval()) {
      ret.push_back(t.retrieved_doc_id);
      gold.push_back(t.gold_doc_id);
      by_dialog_ret.back().push_back(t.retrieved_doc_id);
      by_dialog_gold.back().push_back(t.gold_doc_id);
    }
  }
  rep.dialogs = by_dialog_ret.size();
  rep.bleu = corpus_bleu(refs, hyps);
  const bool retrieval = sources != KnowledgeSources::history_only && !gold.empty();
  rep.retrieval_turns = retrieval ? gold.size() : 0;
  if (retrieval) {
    rep.recall_at_1 = recall_at_1(ret, gold);
    rep.success_rate = success_rate(by_dialog_ret, by_dialog_gold);
    rep.dialog_recall_at_1 = dialog_recall_at_1(by_dialog_ret, by_dialog_gold);
    std::size_t total = 0;
    for (auto k : {RetrievalErrorKind::sibling, RetrievalErrorKind::parent, RetrievalErrorKind::faq,
                   RetrievalErrorKind::other})
      rep.errors[std::string(to_string(k))] = {};
    for (const auto& t : records)
      if (t.error) {
        ++rep.errors[std::string(to_string(*t.error))].count;
        ++total;
      }
    for (auto& [k, b] : rep.errors)
      b.percent = total ? 100.0 * static_cast<double>(b.count) / static_cast<double>(total) : 0.0;
  }
  for (auto d : {Digression::none, Digression::user, Digression::agent}) {
    std::vector<std::string> r, h, rr, gg;
    for (const auto& t : records) {
      if (t.digression != d) continue;
      r.push_back(t.reference);
      h.push_back(t.prediction);
      if (retrieval && t.counts_for_retrieval()) {
        rr.push_back(t.retrieved_doc_id);
        gg.push_back(t.gold_doc_id);
      }
    }
    if (r.empty()) continue;
    DigressionStats s;
    s.turns = r.size();
    s.bleu = corpus_bleu(r, h);
    if (!gg.empty()) s.recall_at_1 = recall_at_1(rr, gg);
    rep.digressions[std::string(to_string(d))] = s;
  }
  return rep;
}

EvalResult evaluate(const KnowledgeBase& kb, const std::vector<Dialog>& dialogs, KnowledgeSources sources,
                    const Retriever& r, const Generator& g, const RagConfig& rag, const EvalOptions& opts,
                    std::string system, std::string split) {
  if (dialogs.empty()) throw ValidationError("evaluate: no dialogs");
  rag.validate();
  const auto docs = documents_by_chart(kb, sources);
  std::vector<TurnRecord> records;
  std::vector<RagExample> examples;
  for (const auto& d : dialogs) {
    const auto& chart_docs = docs.at(d.flowchart_id);
    const auto& all_docs = kb.at(d.flowchart_id).documents;
    for (auto& turn : agent_turns(d)) {
      const auto res = respond(turn.history, chart_docs, r, g, rag, opts.seed);
      TurnRecord t;
      t.dialog_id = d.dialog_id;
      t.flowchart_id = d.flowchart_id;
      t.utterance_index = turn.utterance_index;
      t.digression = turn.digression;
      t.closing = turn.closing;
      t.gold_doc_id = turn.gold ? turn.gold->doc_id() : "";
      t.retrieved_doc_id = res.doc_id;
      t.reference = turn.response;
      t.prediction = res.text;
      if (sources != KnowledgeSources::history_only && t.counts_for_retrieval() && t.retrieved_doc_id != t.gold_doc_id) {
        const auto* gd = find_doc(all_docs, t.gold_doc_id);
        const auto* rd = find_doc(all_docs, t.retrieved_doc_id);
        if (gd && rd && gd->kind == DocKind::node)
          t.error = classify_retrieval_error(*rd, *gd, kb.at(d.flowchart_id).chart);
      }
      records.push_back(std::move(t));
      if (opts.compute_perplexity) examples.push_back({std::move(turn.history), turn.response, &chart_docs});
    }
  }
  EvalResult out;
  out.report = aggregate(records, sources, std::move(system), std::move(split));
  if (opts.compute_perplexity)
    out.report.perplexity =
        perplexity(r, g, examples, opts.perplexity_top1 ? 1 : static_cast<std::size_t>(rag.k_train));
  out.records = std::move(records);
  return out;
}

std::map<std::string, std::vector<Document>> documents_by_chart(const KnowledgeBase& kb, KnowledgeSources sources) {
  std::map<std::string, std::vector<Document>> out;
  for (const auto& id : kb.ids()) out[id] = kb.documents(id, sources);
  return out;
}

AblationResult run_ablation(KnowledgeSources sources, const KnowledgeBase& kb, const std::vector<Dialog>& train,
                            const std::vector<Dialog>& val, const std::vector<Dialog>& test, const AblationConfig& cfg,
                            const Retriever* shared_retriever) {
  const auto docs = documents_by_chart(kb, sources);
  AblationResult res;
  const bool history_only = sources == KnowledgeSources::history_only;
  const bool joint = cfg.rag_train.epochs > 0;

  const Retriever* retriever = shared_retriever;
  TfidfRetriever trivial;
  if (!retriever || joint) {
    if (shared_retriever && joint) throw UnsupportedError("run_ablation: joint training needs an owned retriever");
    if (history_only && !joint) {
      retriever = &trivial;  // one document: every retriever agrees
    } else {
      res.retriever = std::make_unique<HierarchicalRetriever>(build_retriever_vocab(kb, train), cfg.retriever,
                                                              derive_seed(cfg.seed, "retriever"));
      if (!history_only) {
        auto rcfg = cfg.retriever_train;
        rcfg.seed = derive_seed(cfg.seed, "retriever:train");
        res.retriever_log = pretrain_retriever(*res.retriever, make_retrieval_examples(train, docs, false, rcfg.exec),
                                               make_retrieval_examples(val, docs, false, rcfg.exec), rcfg);
      }
      retriever = res.retriever.get();
    }
  }

  res.generator = std::make_unique<TransformerGenerator>(build_generator_vocab(kb, train), cfg.generator,
                                                         derive_seed(cfg.seed, "generator"));
  auto gcfg = cfg.generator_train;
  gcfg.seed = derive_seed(cfg.seed, "generator:train");
  res.generator_log = pretrain_generator(*res.generator, make_generator_examples(train, docs, gcfg.exec),
                                         make_generator_examples(val, docs, gcfg.exec), gcfg);
  if (joint) {
    auto tcfg = cfg.rag_train;
    tcfg.seed = derive_seed(cfg.seed, "rag:train");
    train_rag(*res.retriever, *res.generator, make_rag_examples(train, docs), make_rag_examples(val, docs), cfg.rag,
              tcfg);
  }
  res.eval = evaluate(kb, test, sources, *retriever, *res.generator, cfg.rag, cfg.eval, "flonet", "test");
  return res;
}

void write_report(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << std::left << std::setw(12) << "system" << std::setw(14) << "split" << std::setw(24) << "sources"
      << std::right << std::setw(8) << "dialogs" << std::setw(8) << "turns" << std::setw(8) << "BLEU" << std::setw(8)
      << "PPL" << std::setw(8) << "R@1" << std::setw(8) << "SR" << "\n";
  for (const auto& r : reports)
    out << std::left << std::setw(12) << r.system << std::setw(14) << r.split << std::setw(24) << to_string(r.sources)
        << std::right << std::setw(8) << r.dialogs << std::setw(8) << r.turns << std::setw(8) << fmt(r.bleu, 2)
        << std::setw(8) << fmt(r.perplexity, 2) << std::setw(8) << fmt(r.recall_at_1, 3) << std::setw(8)
        << fmt(r.success_rate, 3) << "\n";
  for (const auto& r : reports) {
    if (!r.errors.empty()) {
      out << "\nretrieval errors on node-grounded turns (" << r.system << ", " << to_string(r.sources) << ")\n";
      for (const auto& [k, b] : r.errors)
        out << "  " << std::left << std::setw(10) << k << std::right << std::setw(8) << fmt(b.percent, 1) << "%"
            << std::setw(6) << b.count << "\n";
    }
    if (!r.digressions.empty()) {
      out << "\nby digression (" << r.system << ", " << to_string(r.sources) << ")\n";
      for (const auto& [k, s] : r.digressions)
        out << "  " << std::left << std::setw(10) << k << std::right << std::setw(6) << s.turns << "  BLEU "
            << fmt(s.bleu, 2) << "  R@1 " << fmt(s.recall_at_1, 3) << "\n";
    }
  }
}

void write_records(std::ostream& out, const std::vector<TurnRecord>& records) {
  for (const auto& r : records) out << r.to_json().dump() << "\n";
}

}  // namespace flonet
