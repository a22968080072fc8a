#include "flonet/dialog.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "flonet/text.hpp"

namespace flonet {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  // splitmix64 finalizer over the seed mixed with the stream name
  std::uint64_t z = seed ^ fnv1a64(stream);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string_view to_string(Speaker s) { return s == Speaker::user ? "user" : "agent"; }

std::string_view to_string(Digression d) {
  switch (d) {
    case Digression::none: return "none";
    case Digression::user: return "user";
    case Digression::agent: return "agent";
  }
  return "none";
}

std::string_view to_string(ExchangeType t) {
  switch (t) {
    case ExchangeType::simple: return "simple";
    case ExchangeType::user_digression: return "user_digression";
    case ExchangeType::agent_digression: return "agent_digression";
  }
  return "simple";
}

namespace {

Speaker speaker_from_string(std::string_view s) {
  if (s == "user") return Speaker::user;
  if (s == "agent") return Speaker::agent;
  throw ParseError("unknown speaker '" + std::string(s) + "'");
}

Digression digression_from_string(std::string_view s) {
  if (s == "none") return Digression::none;
  if (s == "user") return Digression::user;
  if (s == "agent") return Digression::agent;
  throw ParseError("unknown digression '" + std::string(s) + "'");
}

ExchangeType exchange_type_from_string(std::string_view s) {
  if (s == "simple") return ExchangeType::simple;
  if (s == "user_digression") return ExchangeType::user_digression;
  if (s == "agent_digression") return ExchangeType::agent_digression;
  throw ParseError("unknown exchange type '" + std::string(s) + "'");
}

bool coin(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return std::bernoulli_distribution(p)(rng);
}

std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::set<std::string> content_words(const std::string& text) {
  std::set<std::string> out;
  for (auto& t : tokenize(text))
    if (t.size() >= 4) out.insert(t);
  return out;
}

/// FAQ sharing the most content words with the node utterance; ties and the
/// no-overlap case are resolved by the generator.
std::size_t choose_faq(const std::string& node_text, const FaqSet& q, Rng& rng) {
  auto words = content_words(node_text);
  std::vector<std::size_t> best;
  std::size_t best_overlap = 0;
  for (std::size_t i = 0; i < q.entries.size(); ++i) {
    std::size_t overlap = 0;
    for (auto& w : content_words(q.entries[i].question)) overlap += words.count(w);
    if (overlap > best_overlap) {
      best_overlap = overlap;
      best.clear();
    }
    if (overlap == best_overlap) best.push_back(i);
  }
  return best.size() == 1 ? best.front() : best[uniform_index(rng, best.size())];
}

std::string canonical_answer(const std::string& label) {
  std::string s = label;
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s + ".";
}

std::string fill_issue(const std::string& tmpl, const std::string& issue) {
  auto pos = tmpl.find("{issue}");
  if (pos == std::string::npos) return tmpl;
  std::string text = issue;
  if (pos > 0 && !text.empty()) text[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(text[0])));
  return tmpl.substr(0, pos) + text + tmpl.substr(pos + 7);
}

std::string node_key(const std::string& chart, const NodeId& n) { return "node:" + chart + ":" + n; }
std::string edge_key(const std::string& chart, const NodeId& n, const std::string& label) {
  return "edge:" + chart + ":" + n + ":" + label;
}
std::string faq_key(const char* what, const std::string& chart, std::size_t i) {
  return std::string(what) + ":" + chart + ":" + std::to_string(i);
}

}  // namespace

DialogHistory::DialogHistory(std::vector<Utterance> utterances) : utterances_(std::move(utterances)) {
  if (utterances_.empty()) throw ValidationError("dialog history is empty");
  if (utterances_.back().speaker != Speaker::user) throw ValidationError("dialog history must end with a user utterance");
}

DialogHistory DialogHistory::with_agent_reply(std::string text, std::optional<Grounding> g, std::string next_user) const {
  auto u = utterances_;
  u.push_back({Speaker::agent, std::move(text), std::move(g), Digression::none});
  u.push_back({Speaker::user, std::move(next_user), std::nullopt, Digression::none});
  return DialogHistory(std::move(u));
}

std::vector<AgentTurn> agent_turns(const Dialog& d) {
  std::vector<AgentTurn> out;
  for (std::size_t i = 1; i < d.utterances.size(); ++i) {
    const auto& u = d.utterances[i];
    if (u.speaker != Speaker::agent) continue;
    std::vector<Utterance> prefix(d.utterances.begin(), d.utterances.begin() + static_cast<std::ptrdiff_t>(i));
    DialogHistory h(std::move(prefix));
    h.set_origin(d.dialog_id + "#" + std::to_string(i));
    out.push_back(AgentTurn{std::move(h), u.text, u.grounding, u.digression, i, u.closing});
  }
  return out;
}

const std::vector<std::string>& ParaphraseBank::lookup(const std::string& key) const {
  static const std::vector<std::string> none;
  auto it = components_.find(key);
  return it == components_.end() ? none : it->second;
}

std::string ParaphraseBank::pick(const std::string& key, const std::string& canonical, Rng& rng) const {
  const auto& list = lookup(key);
  if (list.empty()) return canonical;
  return list.size() == 1 ? list.front() : list[uniform_index(rng, list.size())];
}

void ParaphraseBank::merge(const ParaphraseBank& other) {
  for (const auto& [k, v] : other.components_) {
    auto& dst = components_[k];
    dst.insert(dst.end(), v.begin(), v.end());
  }
}

ParaphraseBank ParaphraseBank::parse(std::string_view raw) {
  try {
    auto j = json::parse(raw);
    std::map<std::string, std::vector<std::string>> comps;
    for (const auto& [k, v] : j.at("components").items()) comps[k] = v.get<std::vector<std::string>>();
    return ParaphraseBank(std::move(comps));
  } catch (const json::exception& e) {
    throw ParseError(std::string("paraphrase bank: ") + e.what());
  }
}

ParaphraseBank ParaphraseBank::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

ParaphraseBank ParaphraseBank::load(const std::string& path) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) return load_file(path);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(path))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  ParaphraseBank bank;
  for (const auto& f : files) bank.merge(load_file(f.string()));
  return bank;
}

Outline sample_outline(const Flowchart& f, const FlowPath& path, const FaqSet& q, const SynthConfig& cfg, Rng& rng) {
  Outline o;
  o.flowchart_id = f.id();
  o.path = path;
  o.problem.primary_issue = f.title();
  const std::size_t n = path.steps.size();
  if (n > 0 && coin(rng, cfg.secondary_prob)) {
    const std::size_t j = uniform_index(rng, n);
    o.problem.secondary = path.steps[j];
    o.skipped = j + 1;
  }
  if (coin(rng, cfg.irrelevant_prob)) o.problem.irrelevant = "distractor";
  for (std::size_t i = o.skipped; i < n; ++i) {
    Exchange e{path.steps[i].node, path.steps[i].label, ExchangeType::simple, std::nullopt};
    if (coin(rng, cfg.complex_prob)) {
      if (q.entries.empty()) {
        ++o.degraded_complex;
      } else {
        e.type = coin(rng, cfg.user_digression_share) ? ExchangeType::user_digression : ExchangeType::agent_digression;
        e.faq = choose_faq(f.utterance(e.node), q, rng);
      }
    }
    o.exchanges.push_back(std::move(e));
  }
  o.solution_node = path.terminal;
  return o;
}

Dialog stitch_dialog(const KnowledgeSource& src, const Outline& o, const ParaphraseBank& bank, Rng& rng,
                     std::string dialog_id) {
  const auto& f = src.chart;
  const auto& chart = f.id();
  if (o.flowchart_id != chart) throw ValidationError("outline does not belong to flowchart " + chart);
  Dialog d;
  d.dialog_id = std::move(dialog_id);
  d.flowchart_id = chart;
  d.path = o.path;
  d.outline = o;

  auto user = [&](std::string text, Digression dg = Digression::none) {
    d.utterances.push_back({Speaker::user, std::move(text), std::nullopt, dg});
  };
  auto agent = [&](std::string text, Grounding g, Digression dg = Digression::none) {
    d.utterances.push_back({Speaker::agent, std::move(text), std::move(g), dg});
  };
  auto node_grounding = [](const NodeId& n) { return Grounding{DocKind::node, n}; };

  std::string problem = fill_issue(bank.pick("problem-template", "{issue}", rng), o.problem.primary_issue);
  if (o.problem.secondary) {
    const auto& s = *o.problem.secondary;
    problem += " " + bank.pick(edge_key(chart, s.node, s.label), canonical_answer(s.label), rng);
  }
  if (o.problem.irrelevant) {
    auto extra = bank.pick(*o.problem.irrelevant, "", rng);
    if (!extra.empty()) problem += " " + extra;
  }
  user(problem);

  for (const auto& e : o.exchanges) {
    const auto question = [&] { return bank.pick(node_key(chart, e.node), f.utterance(e.node), rng); };
    const auto answer = [&] { return bank.pick(edge_key(chart, e.node, e.label), canonical_answer(e.label), rng); };
    switch (e.type) {
      case ExchangeType::simple:
        agent(question(), node_grounding(e.node));
        user(answer());
        break;
      case ExchangeType::user_digression: {
        const auto& faq = src.faqs.entries.at(*e.faq);
        agent(question(), node_grounding(e.node));
        user(bank.pick(faq_key("faq-q", chart, *e.faq), faq.question, rng), Digression::user);
        agent(bank.pick(faq_key("faq-a", chart, *e.faq), faq.answer, rng), Grounding{DocKind::faq, std::to_string(*e.faq)},
              Digression::user);
        user(answer());
        break;
      }
      case ExchangeType::agent_digression: {
        const auto& faq = src.faqs.entries.at(*e.faq);
        agent(bank.pick(faq_key("faq-prereq", chart, *e.faq), "Do you know this: " + faq.question, rng),
              node_grounding(e.node), Digression::agent);
        user(bank.pick("digression-template:decline", "No.", rng), Digression::agent);
        agent(bank.pick(faq_key("faq-a", chart, *e.faq), faq.answer, rng), Grounding{DocKind::faq, std::to_string(*e.faq)},
              Digression::agent);
        user(bank.pick("digression-template:ack", "Okay.", rng), Digression::agent);
        agent(question(), node_grounding(e.node));
        user(answer());
        break;
      }
    }
  }

  agent(bank.pick(node_key(chart, o.solution_node), f.utterance(o.solution_node), rng), node_grounding(o.solution_node));
  user(bank.pick("closing-template:user", "Thanks.", rng));
  agent(bank.pick("closing-template:agent", "You're welcome.", rng), node_grounding(o.solution_node));
  d.utterances[d.utterances.size() - 2].closing = true;
  d.utterances.back().closing = true;
  return d;
}

std::vector<Dialog> augment_by_interchange(const std::vector<Dialog>& dialogs, const KnowledgeBase& kb,
                                           const ParaphraseBank& bank, Rng& rng, int factor) {
  if (factor < 1) throw ValidationError("interchange factor must be >= 1");
  std::vector<Dialog> out(dialogs);
  out.reserve(dialogs.size() * static_cast<std::size_t>(factor));
  for (int c = 1; c < factor; ++c) {
    for (const auto& d : dialogs) {
      if (!d.outline) throw ValidationError("dialog " + d.dialog_id + " has no outline to re-stitch");
      out.push_back(stitch_dialog(kb.at(d.flowchart_id), *d.outline, bank, rng, d.dialog_id + "-x" + std::to_string(c)));
    }
  }
  return out;
}

std::vector<Dialog> forge_corpus(const KnowledgeBase& kb, const ParaphraseBank& bank, const SynthConfig& cfg,
                                 std::uint64_t seed) {
  const auto ids = kb.ids();
  std::vector<std::vector<Dialog>> per_chart(ids.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t c = 0; c < ids.size(); ++c) {
    const auto& src = kb.at(ids[c]);
    Rng rng(derive_seed(seed, "forge:" + ids[c]));
    const auto paths = enumerate_paths(src.chart);
    const std::size_t total = std::max<std::size_t>(static_cast<std::size_t>(std::max(cfg.outlines_per_flowchart, 0)), paths.size());
    std::size_t serial = 0;
    for (std::size_t p = 0; p < paths.size(); ++p) {
      const std::size_t count = total / paths.size() + (p < total % paths.size() ? 1 : 0);
      for (std::size_t k = 0; k < count; ++k) {
        auto outline = sample_outline(src.chart, paths[p], src.faqs, cfg, rng);
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04zu", serial++);
        per_chart[c].push_back(stitch_dialog(src, outline, bank, rng, ids[c] + "-" + buf));
      }
    }
  }
  std::vector<Dialog> all;
  for (auto& v : per_chart) std::move(v.begin(), v.end(), std::back_inserter(all));
  Rng rng(derive_seed(seed, "interchange"));
  return augment_by_interchange(all, kb, bank, rng, cfg.interchange_factor);
}

bool replays_path(const Dialog& d, const Flowchart& f) {
  if (d.flowchart_id != f.id() || !is_valid_path(f, d.path)) return false;
  std::vector<NodeId> observed;
  for (const auto& u : d.utterances) {
    if (u.speaker != Speaker::agent) continue;
    if (!u.grounding) return false;
    if (u.grounding->kind != DocKind::node) continue;
    if (observed.empty() || observed.back() != u.grounding->id) observed.push_back(u.grounding->id);
  }
  const auto expected = d.path.nodes();
  if (observed.size() > expected.size()) return false;
  const std::size_t skipped = expected.size() - observed.size();
  if (d.outline && d.outline->skipped != skipped) return false;
  if (skipped > 0 && d.outline && !d.outline->problem.secondary) return false;
  std::vector<NodeId> replay(expected.begin(), expected.begin() + static_cast<std::ptrdiff_t>(skipped));
  replay.insert(replay.end(), observed.begin(), observed.end());
  return replay == expected;
}

std::string_view to_string(SplitMode m) { return m == SplitMode::seen ? "seen" : "unseen"; }

SplitMode split_mode_from_string(std::string_view s) {
  if (s == "seen") return SplitMode::seen;
  if (s == "unseen") return SplitMode::unseen;
  throw ParseError("unknown split mode '" + std::string(s) + "'");
}

SplitSpec make_splits(const std::vector<Dialog>& dialogs, const std::vector<std::string>& flowchart_ids, SplitMode mode,
                      Rng& rng) {
  SplitSpec s;
  s.mode = mode;
  std::vector<std::string> charts = flowchart_ids;
  std::sort(charts.begin(), charts.end());
  charts.erase(std::unique(charts.begin(), charts.end()), charts.end());
  std::map<std::string, std::vector<std::string>> by_chart;
  for (const auto& d : dialogs) by_chart[d.flowchart_id].push_back(d.dialog_id);
  for (const auto& [chart, _] : by_chart)
    if (!std::binary_search(charts.begin(), charts.end(), chart))
      throw ValidationError("dialog references flowchart '" + chart + "' outside the split's flowchart list");

  if (mode == SplitMode::seen) {
    for (const auto& chart : charts) {
      auto ids = by_chart[chart];
      std::shuffle(ids.begin(), ids.end(), rng);
      const auto n = ids.size();
      const auto n_test = static_cast<std::size_t>(std::lround(0.17 * static_cast<double>(n)));
      const auto n_val = std::min(n - n_test, static_cast<std::size_t>(std::lround(0.17 * static_cast<double>(n))));
      s.test.insert(s.test.end(), ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
      s.val.insert(s.val.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_test),
                   ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val));
      s.train.insert(s.train.end(), ids.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), ids.end());
    }
    return s;
  }

  if (charts.size() < 3) throw ValidationError("unseen split needs at least 3 flowcharts");
  std::shuffle(charts.begin(), charts.end(), rng);
  const auto c = static_cast<double>(charts.size());
  const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(c / 6.0)));
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(c / 6.0)));
  for (std::size_t i = 0; i < charts.size(); ++i) {
    auto& bucket = i < n_test ? s.test : (i < n_test + n_val ? s.val : s.train);
    if (i < n_test + n_val) s.heldout_flowcharts.push_back(charts[i]);
    const auto& ids = by_chart[charts[i]];
    bucket.insert(bucket.end(), ids.begin(), ids.end());
  }
  return s;
}

std::vector<Dialog> select_dialogs(const std::vector<Dialog>& dialogs, const std::vector<std::string>& ids) {
  std::map<std::string, const Dialog*> index;
  for (const auto& d : dialogs) index[d.dialog_id] = &d;
  std::vector<Dialog> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw ValidationError("unknown dialog id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

namespace {

ojson outline_to_json(const Outline& o) {
  ojson problem = {{"primary_issue", o.problem.primary_issue}, {"secondary", nullptr}, {"irrelevant", nullptr}};
  if (o.problem.secondary) problem["secondary"] = {{"node", o.problem.secondary->node}, {"label", o.problem.secondary->label}};
  if (o.problem.irrelevant) problem["irrelevant"] = *o.problem.irrelevant;
  ojson ex = ojson::array();
  for (const auto& e : o.exchanges) {
    ojson je = {{"node", e.node}, {"label", e.label}, {"type", to_string(e.type)}, {"faq", nullptr}};
    if (e.faq) je["faq"] = *e.faq;
    ex.push_back(std::move(je));
  }
  return {{"problem", problem},
          {"skipped", o.skipped},
          {"exchanges", ex},
          {"solution_node", o.solution_node},
          {"degraded_complex", o.degraded_complex}};
}

Outline outline_from_json(const json& j, const Dialog& d) {
  Outline o;
  o.flowchart_id = d.flowchart_id;
  o.path = d.path;
  const auto& p = j.at("problem");
  o.problem.primary_issue = p.at("primary_issue").get<std::string>();
  if (!p.at("secondary").is_null())
    o.problem.secondary = PathStep{p["secondary"].at("node").get<std::string>(), p["secondary"].at("label").get<std::string>()};
  if (!p.at("irrelevant").is_null()) o.problem.irrelevant = p["irrelevant"].get<std::string>();
  o.skipped = j.at("skipped").get<std::size_t>();
  for (const auto& je : j.at("exchanges")) {
    Exchange e{je.at("node").get<std::string>(), je.at("label").get<std::string>(),
               exchange_type_from_string(je.at("type").get<std::string>()), std::nullopt};
    if (!je.at("faq").is_null()) e.faq = je["faq"].get<std::size_t>();
    o.exchanges.push_back(std::move(e));
  }
  o.solution_node = j.at("solution_node").get<std::string>();
  o.degraded_complex = j.value("degraded_complex", std::size_t{0});
  return o;
}

}  // namespace

void write_corpus(std::ostream& out, const std::vector<Dialog>& dialogs) {
  for (const auto& d : dialogs) {
    ojson utts = ojson::array();
    for (const auto& u : d.utterances) {
      ojson ju = {{"speaker", to_string(u.speaker)}, {"text", u.text}, {"grounding", nullptr}};
      if (u.grounding) ju["grounding"] = {{"kind", to_string(u.grounding->kind)}, {"id", u.grounding->id}};
      if (u.digression != Digression::none) ju["digression"] = to_string(u.digression);
      if (u.closing) ju["closing"] = true;
      utts.push_back(std::move(ju));
    }
    ojson steps = ojson::array();
    for (const auto& s : d.path.steps) steps.push_back({{"node", s.node}, {"label", s.label}});
    ojson rec = {{"dialog_id", d.dialog_id},
                 {"flowchart", d.flowchart_id},
                 {"utterances", utts},
                 {"path", {{"steps", steps}, {"terminal", d.path.terminal}}}};
    if (d.outline) rec["outline"] = outline_to_json(*d.outline);
    out << rec.dump() << '\n';
  }
}

std::vector<Dialog> read_corpus(std::istream& in) {
  std::vector<Dialog> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = json::parse(line);
      Dialog d;
      d.dialog_id = j.at("dialog_id").get<std::string>();
      d.flowchart_id = j.at("flowchart").get<std::string>();
      for (const auto& ju : j.at("utterances")) {
        Utterance u;
        u.speaker = speaker_from_string(ju.at("speaker").get<std::string>());
        u.text = ju.at("text").get<std::string>();
        if (ju.contains("grounding") && !ju["grounding"].is_null())
          u.grounding = Grounding{doc_kind_from_string(ju["grounding"].at("kind").get<std::string>()),
                                  ju["grounding"].at("id").get<std::string>()};
        if (ju.contains("digression")) u.digression = digression_from_string(ju["digression"].get<std::string>());
        u.closing = ju.value("closing", false);
        d.utterances.push_back(std::move(u));
      }
      if (j.contains("path")) {
        for (const auto& s : j["path"].at("steps"))
          d.path.steps.push_back({s.at("node").get<std::string>(), s.at("label").get<std::string>()});
        d.path.terminal = j["path"].at("terminal").get<std::string>();
      }
      if (j.contains("outline")) d.outline = outline_from_json(j["outline"], d);
      out.push_back(std::move(d));
    } catch (const json::exception& e) {
      throw ParseError("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_corpus_file(const std::string& path, const std::vector<Dialog>& dialogs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  write_corpus(out, dialogs);
}

std::vector<Dialog> read_corpus_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  return read_corpus(in);
}

void write_split_file(const std::string& path, const SplitSpec& s) {
  ojson j = {{"mode", to_string(s.mode)}, {"train", s.train}, {"val", s.val}, {"test", s.test},
             {"heldout_flowcharts", s.heldout_flowcharts}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path);
  out << j.dump(2) << '\n';
}

SplitSpec read_split_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path);
  try {
    auto j = json::parse(in);
    SplitSpec s;
    s.mode = split_mode_from_string(j.at("mode").get<std::string>());
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val = j.at("val").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    s.heldout_flowcharts = j.value("heldout_flowcharts", std::vector<std::string>{});
    return s;
  } catch (const json::exception& e) {
    throw ParseError("split file " + path + ": " + e.what());
  }
}

}  // namespace flonet
