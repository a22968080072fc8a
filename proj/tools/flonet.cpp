#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "flonet/error.hpp"
#include "flonet/pipeline.hpp"

// after Eigen: <resolv.h> defines _res
#include <httplib.h>

using namespace flonet;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> split;
  std::optional<std::string> out;
  std::optional<std::string> sources;
};

RunConfig resolve(const GlobalOptions& o) {
  auto cfg = load_run_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.split) cfg.split = split_mode_from_string(*o.split);
  if (o.out) cfg.out_dir = *o.out;
  if (o.sources) cfg.sources = knowledge_sources_from_string(*o.sources);
  return cfg;
}

int serve(const RunConfig& cfg, const KnowledgeBase& kb) {
  const auto models = load_models(cfg, kb, SystemKind::flonet, {});
  TurnPipeline pipeline;
  pipeline.kb = &kb;
  pipeline.sources = cfg.sources;
  pipeline.retriever = models.retriever.get();
  pipeline.generator = models.generator.get();
  pipeline.rag = cfg.rag;
  pipeline.seed = cfg.seed;

  std::unique_ptr<SessionStore> store = std::make_unique<SessionStore>(cfg.seed);
  if (!cfg.serve.event_log.empty()) {
    auto [replayed, report] = SessionStore::replay_file(cfg.serve.event_log, cfg.seed);
    if (!report.ok()) {
      std::cerr << "event log " << cfg.serve.event_log << ": replay stopped at line " << *report.bad_line << " ("
                << report.error << "); " << report.applied << " events applied\n";
      return 3;
    }
    store = std::move(replayed);
    store->attach_log(cfg.serve.event_log);
    std::cerr << "replayed " << report.applied << " events, " << store->size() << " sessions\n";
  }
  SessionService service(pipeline, *store);
  httplib::Server server;
  service.mount(server);
  std::cerr << "listening on " << cfg.serve.host << ":" << cfg.serve.port << "\n";
  if (!server.listen(cfg.serve.host, cfg.serve.port)) {
    std::cerr << "cannot listen on " << cfg.serve.host << ":" << cfg.serve.port << "\n";
    return 4;
  }
  return 0;
}

int chat(const RunConfig& cfg, const KnowledgeBase& kb, const std::string& chart) {
  if (!kb.contains(chart)) throw ValidationError("unknown flowchart '" + chart + "'");
  const auto models = load_models(cfg, kb, SystemKind::flonet, {});
  TurnPipeline pipeline;
  pipeline.kb = &kb;
  pipeline.sources = cfg.sources;
  pipeline.retriever = models.retriever.get();
  pipeline.generator = models.generator.get();
  pipeline.rag = cfg.rag;
  pipeline.seed = cfg.seed;
  std::vector<Utterance> history;
  std::cout << kb.at(chart).chart.title() << " (empty line or /quit ends the session)\n";
  std::string line;
  while (std::cout << "you> " << std::flush, std::getline(std::cin, line)) {
    if (line.empty() || line == "/quit") break;
    history.push_back({Speaker::user, line, std::nullopt, Digression::none});
    const auto res = pipeline.respond(DialogHistory(history), chart);
    std::cout << "agent> " << res.text << "   [" << res.doc_id << "]\n";
    history.push_back({Speaker::agent, res.text, std::nullopt, Digression::none});
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Flowchart-grounded troubleshooting dialog engine"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions o;
  app.add_option("--config", o.config, "Run config (JSON)");
  app.add_option("--seed", o.seed, "Random seed (overrides config and FLONET_SEED)");
  app.add_option("--split", o.split, "Split mode")->check(CLI::IsMember({"seen", "unseen"}));
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--sources", o.sources, "Knowledge sources: history, history+flowchart, history+flowchart+faq");

  auto* synth = app.add_subcommand("synth", "Forge the synthetic corpus and its split");
  auto* pre_r = app.add_subcommand("pretrain-retriever", "Contrastive retriever pre-training");
  auto* pre_g = app.add_subcommand("pretrain-generator", "Generator pre-training on pseudo-grounded responses");
  auto* train = app.add_subcommand("train", "Joint fine-tuning of retriever and generator");
  bool scratch = false;
  train->add_flag("--from-scratch", scratch, "Start from untrained models (no pre-training)");
  auto* eval = app.add_subcommand("eval", "Evaluate a split and write the report");
  std::string system = "flonet", part = "test";
  eval->add_option("--system", system, "flonet, tfidf or oracle");
  eval->add_option("--part", part, "train, val or test");
  auto* srv = app.add_subcommand("serve", "Run the HTTP session service");
  auto* ch = app.add_subcommand("chat", "Interactive terminal session");
  std::string chart;
  ch->add_option("--flowchart", chart, "Flowchart id")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    const auto cfg = resolve(o);
    const auto kb = load_knowledge(cfg);
    if (synth->parsed()) {
      const auto d = run_synth(cfg, kb);
      std::cout << "wrote " << cfg.corpus_path() << " (" << d.train.size() + d.val.size() + d.test.size()
                << " dialogs: " << d.train.size() << " train, " << d.val.size() << " val, " << d.test.size()
                << " test)\n";
    } else if (pre_r->parsed()) {
      run_pretrain_retriever(cfg, kb, load_split_data(cfg), std::cout);
    } else if (pre_g->parsed()) {
      run_pretrain_generator(cfg, kb, load_split_data(cfg), std::cout);
    } else if (train->parsed()) {
      run_train(cfg, kb, load_split_data(cfg), scratch, std::cout);
    } else if (eval->parsed()) {
      run_eval(cfg, kb, load_split_data(cfg), system_from_string(system), part, std::cout);
    } else if (srv->parsed()) {
      return serve(cfg, kb);
    } else if (ch->parsed()) {
      return chat(cfg, kb, chart);
    }
  } catch (const Error& e) {
    const std::string kind = dynamic_cast<const ParseError*>(&e)        ? "parse"
                             : dynamic_cast<const ValidationError*>(&e) ? "validation"
                             : dynamic_cast<const UnsupportedError*>(&e) ? "unsupported"
                                                                          : "error";
    std::cerr << nlohmann::json{{"error", kind}, {"message", e.what()}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}
