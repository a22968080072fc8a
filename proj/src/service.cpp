#include "flonet/service.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <httplib.h>

#include "flonet/error.hpp"

namespace flonet {

namespace {

using nlohmann::json;

std::int64_t wall_clock_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string_view to_string(Session::Status s) { return s == Session::Status::active ? "active" : "closed"; }

json turn_json(const SessionTurn& t) {
  json topk = json::array();
  for (const auto& e : t.topk) topk.push_back({{"doc_id", e.doc_id}, {"score", e.score}, {"prob", e.prob}});
  return {{"user", t.user_text},
          {"agent", t.agent_text},
          {"doc_id", t.doc_id},
          {"doc_kind", to_string(t.doc_kind)},
          {"doc_source_id", t.doc_source_id},
          {"topk", topk},
          {"ts", t.ts}};
}

SessionTurn turn_from_json(const json& j) {
  SessionTurn t;
  t.user_text = j.at("user").get<std::string>();
  t.agent_text = j.at("agent").get<std::string>();
  t.doc_id = j.at("doc_id").get<std::string>();
  t.doc_kind = doc_kind_from_string(j.at("doc_kind").get<std::string>());
  t.doc_source_id = j.at("doc_source_id").get<std::string>();
  for (const auto& e : j.at("topk"))
    t.topk.push_back({e.at("doc_id").get<std::string>(), e.at("score").get<double>(), e.at("prob").get<double>()});
  t.ts = j.at("ts").get<std::int64_t>();
  return t;
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r\n") == std::string::npos; }

SessionService::Response error_response(int status, const std::string& msg) { return {status, {{"error", msg}}}; }

}  // namespace

// ---------------------------------------------------------------- pipeline

const std::vector<Document>& TurnPipeline::documents(const std::string& flowchart_id) const {
  std::lock_guard lock(mu_);
  auto it = docs_.find(flowchart_id);
  if (it == docs_.end()) it = docs_.emplace(flowchart_id, kb->documents(flowchart_id, sources)).first;
  return it->second;
}

DecodeResult TurnPipeline::respond(const DialogHistory& h, const std::string& flowchart_id) const {
  return flonet::respond(h, documents(flowchart_id), *retriever, *generator, rag, seed);
}

std::vector<TopkEntry> display_topk(const RetrievalResult& rr, std::size_t n) {
  n = std::min(n, rr.ranked.size());
  std::vector<double> s;
  for (std::size_t i = 0; i < n; ++i) s.push_back(rr.ranked[i].score);
  const double lse = log_sum_exp(s);
  std::vector<TopkEntry> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({rr.ranked[i].doc_id, s[i], std::exp(s[i] - lse)});
  return out;
}

// ---------------------------------------------------------------- sessions

std::vector<Utterance> Session::utterances() const {
  std::vector<Utterance> out;
  for (const auto& t : turns) {
    out.push_back({Speaker::user, t.user_text, std::nullopt, Digression::none});
    std::optional<Grounding> g;
    if (!t.doc_source_id.empty()) g = Grounding{t.doc_kind, t.doc_source_id};
    out.push_back({Speaker::agent, t.agent_text, g, Digression::none});
  }
  return out;
}

json Session::to_json() const {
  json utts = json::array();
  for (const auto& u : utterances()) {
    json j = {{"speaker", flonet::to_string(u.speaker)}, {"text", u.text}};
    if (u.grounding) j["doc"] = {{"kind", flonet::to_string(u.grounding->kind)}, {"id", u.grounding->id}};
    utts.push_back(j);
  }
  json ts = json::array();
  for (const auto& t : turns) ts.push_back(turn_json(t));
  return {{"session_id", session_id},
          {"flowchart", flowchart_id},
          {"status", to_string(status)},
          {"created", created},
          {"updated", updated},
          {"utterances", utts},
          {"turns", ts}};
}

SessionStore::SessionStore(std::uint64_t seed, Clock clock) : seed_(seed), clock_(std::move(clock)) {
  if (!clock_) clock_ = wall_clock_ms;
}

void SessionStore::attach_log(const std::string& path) {
  std::lock_guard lock(log_mu_);
  log_ = std::make_unique<std::ofstream>(path, std::ios::app);
  if (!*log_) throw Error("cannot open event log " + path);
}

void SessionStore::emit(const json& event) {
  std::lock_guard lock(log_mu_);
  if (!log_) return;
  *log_ << event.dump() << "\n";
  log_->flush();
}

std::string SessionStore::next_id() {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(derive_seed(seed_, "session:" + std::to_string(created_))));
  return buf;
}

std::string SessionStore::create(const std::string& flowchart_id) {
  std::lock_guard lock(mu_);
  auto id = next_id();
  auto e = std::make_unique<Entry>();
  e->session.session_id = id;
  e->session.flowchart_id = flowchart_id;
  e->session.created = e->session.updated = clock_();
  emit({{"event", "create"}, {"session_id", id}, {"flowchart", flowchart_id}, {"ts", e->session.created}});
  sessions_.emplace(id, std::move(e));
  ++created_;
  return id;
}

void SessionStore::with_session(const std::string& id, const std::function<void(Session&)>& fn) {
  Entry* e = nullptr;
  {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
    e = it->second.get();
  }
  std::lock_guard lock(e->mu);
  fn(e->session);
}

Session SessionStore::snapshot(const std::string& id) const {
  Entry* e = nullptr;
  {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
    e = it->second.get();
  }
  std::lock_guard lock(e->mu);
  return e->session;
}

bool SessionStore::contains(const std::string& id) const {
  std::lock_guard lock(mu_);
  return sessions_.count(id) > 0;
}

void SessionStore::append_turn(Session& s, SessionTurn t) {
  if (s.status != Session::Status::active) throw ValidationError("session " + s.session_id + " is closed");
  t.ts = clock_();
  emit({{"event", "turn"}, {"session_id", s.session_id}, {"turn", turn_json(t)}});
  s.updated = t.ts;
  s.turns.push_back(std::move(t));
}

void SessionStore::close(Session& s) {
  if (s.status != Session::Status::active) throw ValidationError("session " + s.session_id + " is closed");
  const auto ts = clock_();
  emit({{"event", "close"}, {"session_id", s.session_id}, {"ts", ts}});
  s.status = Session::Status::closed;
  s.updated = ts;
}

std::size_t SessionStore::size() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

json SessionStore::to_json() const {
  std::lock_guard lock(mu_);
  json out = json::array();
  for (const auto& [id, e] : sessions_) {
    std::lock_guard el(e->mu);
    out.push_back(e->session.to_json());
  }
  return out;
}

void SessionStore::apply(const json& ev) {
  const auto type = ev.at("event").get<std::string>();
  const auto id = ev.at("session_id").get<std::string>();
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (type == "create") {
    if (it != sessions_.end()) throw ValidationError("duplicate session '" + id + "'");
    auto e = std::make_unique<Entry>();
    e->session.session_id = id;
    e->session.flowchart_id = ev.at("flowchart").get<std::string>();
    e->session.created = e->session.updated = ev.at("ts").get<std::int64_t>();
    sessions_.emplace(id, std::move(e));
    ++created_;
    return;
  }
  if (it == sessions_.end()) throw ValidationError("event for unknown session '" + id + "'");
  auto& s = it->second->session;
  if (s.status != Session::Status::active) throw ValidationError("event for closed session '" + id + "'");
  if (type == "turn") {
    auto t = turn_from_json(ev.at("turn"));
    s.updated = t.ts;
    s.turns.push_back(std::move(t));
  } else if (type == "close") {
    s.status = Session::Status::closed;
    s.updated = ev.at("ts").get<std::int64_t>();
  } else {
    throw ValidationError("unknown event type '" + type + "'");
  }
}

ReplayReport SessionStore::replay(std::istream& in) {
  ReplayReport rep;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    try {
      apply(json::parse(line));
      ++rep.applied;
    } catch (const std::exception& e) {
      rep.bad_line = n;
      rep.error = e.what();
      break;
    }
  }
  return rep;
}

std::pair<std::unique_ptr<SessionStore>, ReplayReport> SessionStore::replay_file(const std::string& path,
                                                                                 std::uint64_t seed) {
  auto store = std::make_unique<SessionStore>(seed);
  std::ifstream in(path);
  if (!in) return {std::move(store), ReplayReport{}};
  auto rep = store->replay(in);
  return {std::move(store), rep};
}

// ---------------------------------------------------------------- API

json flowchart_json(const KnowledgeSource& src) {
  const auto& f = src.chart;
  json nodes = json::array(), edges = json::array(), faqs = json::array();
  for (const auto& n : f.nodes()) {
    const auto p = f.parent(n);
    nodes.push_back({{"id", n},
                     {"utterance", f.utterance(n)},
                     {"parent", p ? json(*p) : json(nullptr)},
                     {"label", f.incoming_label(n)},
                     {"terminal", f.is_terminal(n)},
                     {"depth", f.depth(n)}});
    for (const auto& [label, child] : f.children(n)) edges.push_back({{"from", n}, {"to", child}, {"label", label}});
  }
  for (std::size_t i = 0; i < src.faqs.entries.size(); ++i)
    faqs.push_back({{"index", i}, {"question", src.faqs.entries[i].question}, {"answer", src.faqs.entries[i].answer}});
  return {{"id", f.id()}, {"title", f.title()}, {"root", f.root()}, {"nodes", nodes}, {"edges", edges}, {"faqs", faqs}};
}

SessionService::Response SessionService::create_session(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    return error_response(400, "request body is not valid JSON");
  }
  if (!j.is_object() || !j.contains("flowchart") || !j["flowchart"].is_string())
    return error_response(400, "expected {\"flowchart\": <id>}");
  const auto chart = j["flowchart"].get<std::string>();
  if (!pipeline_.kb->contains(chart)) return error_response(404, "unknown flowchart '" + chart + "'");
  return {201, {{"session_id", store_.create(chart)}}};
}

SessionService::Response SessionService::post_message(const std::string& session_id, const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    return error_response(400, "request body is not valid JSON");
  }
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string())
    return error_response(400, "expected {\"text\": <message>}");
  const auto text = j["text"].get<std::string>();
  Response out;
  try {
    store_.with_session(session_id, [&](Session& s) {
      if (s.status != Session::Status::active) {
        out = error_response(409, "session is closed");
        return;
      }
      if (blank(text)) {
        out = error_response(400, "message text is empty");
        return;
      }
      auto utts = s.utterances();
      utts.push_back({Speaker::user, text, std::nullopt, Digression::none});
      const DialogHistory h(std::move(utts));
      const auto res = pipeline_.respond(h, s.flowchart_id);
      const auto& docs = pipeline_.documents(s.flowchart_id);
      const auto& doc = docs[res.candidates[select_candidate(res.candidates)].doc_index];
      SessionTurn t;
      t.user_text = text;
      t.agent_text = res.text;
      t.doc_id = res.doc_id;
      t.doc_kind = doc.kind;
      t.doc_source_id = doc.source_id;
      t.topk = display_topk(res.retrieval, topk_size());
      json topk = json::array();
      for (const auto& e : t.topk) topk.push_back({{"doc_id", e.doc_id}, {"prob", e.prob}});
      out.status = 200;
      out.body = {{"agent_text", t.agent_text},
                  {"doc", {{"kind", to_string(t.doc_kind)}, {"id", t.doc_source_id}, {"doc_id", t.doc_id}}},
                  {"topk", topk}};
      store_.append_turn(s, std::move(t));
    });
  } catch (const SessionStore::NotFound& e) {
    return error_response(404, e.what());
  }
  return out;
}

SessionService::Response SessionService::get_session(const std::string& session_id) const {
  try {
    return {200, store_.snapshot(session_id).to_json()};
  } catch (const SessionStore::NotFound& e) {
    return error_response(404, e.what());
  }
}

SessionService::Response SessionService::delete_session(const std::string& session_id) {
  Response out;
  try {
    store_.with_session(session_id, [&](Session& s) {
      if (s.status != Session::Status::active) {
        out = error_response(409, "session is already closed");
        return;
      }
      store_.close(s);
      out = {200, {{"session_id", s.session_id}, {"status", "closed"}}};
    });
  } catch (const SessionStore::NotFound& e) {
    return error_response(404, e.what());
  }
  return out;
}

SessionService::Response SessionService::list_flowcharts() const {
  json list = json::array();
  for (const auto& id : pipeline_.kb->ids()) {
    const auto& src = pipeline_.kb->at(id);
    list.push_back(
        {{"id", id}, {"title", src.chart.title()}, {"nodes", src.chart.size()}, {"faqs", src.faqs.entries.size()}});
  }
  return {200, {{"flowcharts", list}}};
}

SessionService::Response SessionService::get_flowchart(const std::string& flowchart_id) const {
  if (!pipeline_.kb->contains(flowchart_id)) return error_response(404, "unknown flowchart '" + flowchart_id + "'");
  return {200, flowchart_json(pipeline_.kb->at(flowchart_id))};
}

void SessionService::mount(httplib::Server& server) {
  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  auto guard = [send](auto&& fn) {
    return [send, fn](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, fn(req));
      } catch (const std::exception& e) {
        send(res, error_response(500, e.what()));
      }
    };
  };
  server.Post("/sessions", guard([this](const httplib::Request& req) { return create_session(req.body); }));
  server.Post("/sessions/:id/message", guard([this](const httplib::Request& req) {
                return post_message(req.path_params.at("id"), req.body);
              }));
  server.Get("/sessions/:id",
             guard([this](const httplib::Request& req) { return get_session(req.path_params.at("id")); }));
  server.Delete("/sessions/:id",
                guard([this](const httplib::Request& req) { return delete_session(req.path_params.at("id")); }));
  server.Get("/flowcharts", guard([this](const httplib::Request&) { return list_flowcharts(); }));
  server.Get("/flowcharts/:id",
             guard([this](const httplib::Request& req) { return get_flowchart(req.path_params.at("id")); }));
}

}  // namespace flonet
