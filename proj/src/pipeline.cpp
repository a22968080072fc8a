#include "flonet/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <ostream>

#include "flonet/error.hpp"

namespace flonet {

namespace fs = std::filesystem;

namespace {

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::unique_ptr<HierarchicalRetriever> load_retriever_checkpoint(const RunConfig& cfg, bool joint_first) {
  for (const char* name : joint_first ? std::vector<const char*>{kRetriever, kPretrainedRetriever}
                                      : std::vector<const char*>{kPretrainedRetriever}) {
    const auto p = cfg.checkpoint_path(name);
    if (fs::exists(p)) return HierarchicalRetriever::load(p);
  }
  return nullptr;
}

std::unique_ptr<TransformerGenerator> load_generator_checkpoint(const RunConfig& cfg, bool joint_first) {
  for (const char* name : joint_first ? std::vector<const char*>{kGenerator, kPretrainedGenerator}
                                      : std::vector<const char*>{kPretrainedGenerator}) {
    const auto p = cfg.checkpoint_path(name);
    if (fs::exists(p)) return TransformerGenerator::load(p);
  }
  return nullptr;
}

}  // namespace

KnowledgeBase load_knowledge(const RunConfig& cfg) {
  auto kb = KnowledgeBase::load(cfg.flowchart_path(), cfg.faq_path());
  if (!cfg.flowcharts.empty()) kb = kb.subset(cfg.flowcharts);
  if (kb.size() == 0) throw ValidationError("no flowcharts found under " + cfg.flowchart_path());
  return kb;
}

const std::vector<Dialog>& SplitData::by_name(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw ValidationError("unknown split part '" + name + "' (expected train, val or test)");
}

SplitData run_synth(const RunConfig& cfg, const KnowledgeBase& kb) {
  const auto bank = ParaphraseBank::load(cfg.paraphrase_path());
  const auto dialogs = forge_corpus(kb, bank, cfg.synth, cfg.seed);
  Rng rng(derive_seed(cfg.seed, "split"));
  SplitData d;
  d.spec = make_splits(dialogs, kb.ids(), cfg.split, rng);
  d.train = select_dialogs(dialogs, d.spec.train);
  d.val = select_dialogs(dialogs, d.spec.val);
  d.test = select_dialogs(dialogs, d.spec.test);
  ensure_parent(cfg.corpus_path());
  ensure_parent(cfg.split_path());
  write_corpus_file(cfg.corpus_path(), dialogs);
  write_split_file(cfg.split_path(), d.spec);
  return d;
}

SplitData load_split_data(const RunConfig& cfg) {
  const auto dialogs = read_corpus_file(cfg.corpus_path());
  SplitData d;
  d.spec = read_split_file(cfg.split_path());
  d.train = select_dialogs(dialogs, d.spec.train);
  d.val = select_dialogs(dialogs, d.spec.val);
  d.test = select_dialogs(dialogs, d.spec.test);
  return d;
}

RetrieverTrainLog run_pretrain_retriever(const RunConfig& cfg, const KnowledgeBase& kb, const SplitData& data,
                                         std::ostream& log) {
  if (cfg.sources == KnowledgeSources::history_only)
    throw UnsupportedError("the history-only setting has no documents to retrieve");
  const auto docs = documents_by_chart(kb, cfg.sources);
  HierarchicalRetriever r(build_retriever_vocab(kb, data.train), cfg.retriever, derive_seed(cfg.seed, "retriever"));
  auto tcfg = cfg.retriever_train;
  tcfg.seed = derive_seed(cfg.seed, "retriever:train");
  const auto tr = make_retrieval_examples(data.train, docs, false, tcfg.exec);
  const auto va = make_retrieval_examples(data.val, docs, false, tcfg.exec);
  auto out = pretrain_retriever(r, tr, va, tcfg);
  for (std::size_t e = 0; e < out.epoch_loss.size(); ++e)
    log << "epoch " << e + 1 << " loss " << out.epoch_loss[e] << " val_r@1 " << out.val_recall[e] << "\n";
  log << "best epoch " << out.best_epoch + 1 << " val_r@1 " << out.best_val_recall << "\n";
  const auto path = cfg.checkpoint_path(kPretrainedRetriever);
  ensure_parent(path);
  r.save(path);
  build_document_index(r, kb).save(cfg.checkpoint_path(kDocumentIndex));
  log << "wrote " << path << "\n";
  return out;
}

GeneratorTrainLog run_pretrain_generator(const RunConfig& cfg, const KnowledgeBase& kb, const SplitData& data,
                                         std::ostream& log) {
  const auto docs = documents_by_chart(kb, cfg.sources);
  TransformerGenerator g(build_generator_vocab(kb, data.train), cfg.generator, derive_seed(cfg.seed, "generator"));
  auto tcfg = cfg.generator_train;
  tcfg.seed = derive_seed(cfg.seed, "generator:train");
  auto out = pretrain_generator(g, make_generator_examples(data.train, docs, tcfg.exec),
                                make_generator_examples(data.val, docs, tcfg.exec), tcfg);
  log << "initial val nll " << out.initial_val_nll << "\n";
  for (std::size_t e = 0; e < out.epoch_loss.size(); ++e)
    log << "epoch " << e + 1 << " loss " << out.epoch_loss[e] << " val " << out.val_metric[e] << "\n";
  log << "best epoch " << out.best_epoch + 1 << "\n";
  const auto path = cfg.checkpoint_path(kPretrainedGenerator);
  ensure_parent(path);
  g.save(path);
  log << "wrote " << path << "\n";
  return out;
}

RagTrainLog run_train(const RunConfig& cfg, const KnowledgeBase& kb, const SplitData& data, bool from_scratch,
                      std::ostream& log) {
  std::unique_ptr<HierarchicalRetriever> r;
  std::unique_ptr<TransformerGenerator> g;
  if (!from_scratch) {
    r = load_retriever_checkpoint(cfg, false);
    g = load_generator_checkpoint(cfg, false);
    if (!r || !g) throw Error("pre-trained checkpoints missing; run pretrain-retriever and pretrain-generator first");
  } else {
    r = std::make_unique<HierarchicalRetriever>(build_retriever_vocab(kb, data.train), cfg.retriever,
                                                derive_seed(cfg.seed, "retriever"));
    g = std::make_unique<TransformerGenerator>(build_generator_vocab(kb, data.train), cfg.generator,
                                               derive_seed(cfg.seed, "generator"));
  }
  const auto docs = documents_by_chart(kb, cfg.sources);
  auto tcfg = cfg.rag_train;
  tcfg.seed = derive_seed(cfg.seed, "rag:train");
  auto out = train_rag(*r, *g, make_rag_examples(data.train, docs), make_rag_examples(data.val, docs), cfg.rag, tcfg);
  log << "initial val nll " << out.initial_val_nll << "\n";
  for (std::size_t e = 0; e < out.epoch_loss.size(); ++e)
    log << "epoch " << e + 1 << " loss " << out.epoch_loss[e]
        << (e < out.val_nll.size() ? " val_nll " + std::to_string(out.val_nll[e]) : "") << "\n";
  const auto rp = cfg.checkpoint_path(kRetriever), gp = cfg.checkpoint_path(kGenerator);
  ensure_parent(rp);
  r->save(rp);
  g->save(gp);
  log << "wrote " << rp << " and " << gp << "\n";
  return out;
}

SystemKind system_from_string(const std::string& s) {
  if (s == "flonet") return SystemKind::flonet;
  if (s == "tfidf") return SystemKind::tfidf;
  if (s == "oracle") return SystemKind::oracle;
  throw ValidationError("unknown system '" + s + "' (expected flonet, tfidf or oracle)");
}

LoadedModels load_models(const RunConfig& cfg, const KnowledgeBase& kb, SystemKind system,
                         const std::vector<Dialog>& dialogs) {
  LoadedModels m;
  if (system == SystemKind::oracle) {
    auto r = std::make_unique<OracleRetriever>();
    for (const auto& d : dialogs)
      for (const auto& t : agent_turns(d))
        if (t.gold) r->add(t.history, t.gold->doc_id());
    m.retriever = std::move(r);
    m.generator = std::make_unique<TemplateOracleGenerator>(build_generator_vocab(kb, dialogs));
    return m;
  }
  auto g = load_generator_checkpoint(cfg, true);
  if (!g) throw Error("no generator checkpoint under " + cfg.checkpoint_path(""));
  m.generator = std::move(g);
  if (system == SystemKind::tfidf || cfg.sources == KnowledgeSources::history_only) {
    m.retriever = std::make_unique<TfidfRetriever>(cfg.exec);
  } else {
    auto r = load_retriever_checkpoint(cfg, true);
    if (!r) throw Error("no retriever checkpoint under " + cfg.checkpoint_path(""));
    m.retriever = std::move(r);
  }
  return m;
}

EvalResult run_eval(const RunConfig& cfg, const KnowledgeBase& kb, const SplitData& data, SystemKind system,
                    const std::string& split_name, std::ostream& log) {
  const auto& dialogs = data.by_name(split_name);
  const auto models = load_models(cfg, kb, system, dialogs);
  EvalOptions opts;
  opts.seed = cfg.seed;
  opts.exec = cfg.exec;
  // template-oracle probabilities are not normalized
  opts.compute_perplexity = system != SystemKind::oracle;
  const std::string name = system == SystemKind::flonet ? "flonet" : system == SystemKind::tfidf ? "tfidf" : "oracle";
  auto res = evaluate(kb, dialogs, cfg.sources, *models.retriever, *models.generator, cfg.rag, opts, name,
                      std::string(to_string(data.spec.mode)) + "/" + split_name);
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream out(fs::path(cfg.out_dir) / "report.txt");
    write_report(out, {res.report});
  }
  {
    std::ofstream out(fs::path(cfg.out_dir) / "report.json");
    out << res.report.to_json().dump(2) << "\n";
  }
  {
    std::ofstream out(fs::path(cfg.out_dir) / "records.ndjson");
    write_records(out, res.records);
  }
  write_report(log, {res.report});
  return res;
}

}  // namespace flonet
