#pragma once

#include <cstdint>
#include <functional>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "flonet/rag.hpp"

namespace httplib {
class Server;
}

namespace flonet {

/// retrieve_topk(k_infer) followed by decode: the one turn pipeline shared by
/// the service, the chat loop and offline evaluation.
struct TurnPipeline {
  const KnowledgeBase* kb = nullptr;
  KnowledgeSources sources = KnowledgeSources::flowchart_faq;
  const Retriever* retriever = nullptr;
  const Generator* generator = nullptr;
  RagConfig rag;
  std::uint64_t seed = 1;  // nucleus decoding only

  /// Documents retrievable for a chart under `sources`.
  const std::vector<Document>& documents(const std::string& flowchart_id) const;
  DecodeResult respond(const DialogHistory& h, const std::string& flowchart_id) const;

 private:
  mutable std::mutex mu_;
  mutable std::map<std::string, std::vector<Document>> docs_;
};

struct TopkEntry {
  std::string doc_id;
  double score = 0;
  double prob = 0;  // softmax over the displayed entries
};

/// One agent turn of a session.
struct SessionTurn {
  std::string user_text;
  std::string agent_text;
  std::string doc_id;
  DocKind doc_kind = DocKind::node;
  std::string doc_source_id;
  std::vector<TopkEntry> topk;
  std::int64_t ts = 0;
};

struct Session {
  enum class Status { active, closed };

  std::string session_id;
  std::string flowchart_id;
  std::vector<SessionTurn> turns;
  Status status = Status::active;
  std::int64_t created = 0;
  std::int64_t updated = 0;

  /// Alternating user / agent utterances.
  std::vector<Utterance> utterances() const;
  nlohmann::json to_json() const;
};

/// Outcome of reading an event log.
struct ReplayReport {
  std::size_t applied = 0;
  /// 1-based line of the first entry that could not be applied.
  std::optional<std::size_t> bad_line;
  std::string error;
  bool ok() const { return !bad_line; }
};

/// In-memory sessions with an optional append-only event log (one JSON
/// object per line). Sessions are guarded individually; the log is written
/// through a single appender.
class SessionStore {
 public:
  using Clock = std::function<std::int64_t()>;

  SessionStore(std::uint64_t seed, Clock clock = {});

  /// Appends every subsequent event to `path`.
  void attach_log(const std::string& path);

  /// New session id, deterministic in (seed, creation count).
  std::string create(const std::string& flowchart_id);
  /// Runs `fn` on the session under its lock. Throws NotFound.
  void with_session(const std::string& id, const std::function<void(Session&)>& fn);
  Session snapshot(const std::string& id) const;
  bool contains(const std::string& id) const;
  void append_turn(Session& s, SessionTurn t);
  void close(Session& s);

  std::size_t size() const;
  nlohmann::json to_json() const;

  /// Applies the events of a log to an empty store. Stops at the first line
  /// that does not parse or does not apply; later lines are ignored.
  ReplayReport replay(std::istream& in);
  static std::pair<std::unique_ptr<SessionStore>, ReplayReport> replay_file(const std::string& path,
                                                                          std::uint64_t seed);

  class NotFound : public Error {
   public:
    using Error::Error;
  };

 private:
  struct Entry {
    std::mutex mu;
    Session session;
  };
  void emit(const nlohmann::json& event);
  void apply(const nlohmann::json& event);
  std::string next_id();

  std::uint64_t seed_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Entry>> sessions_;
  std::uint64_t created_ = 0;
  std::mutex log_mu_;
  std::unique_ptr<std::ofstream> log_;
};

/// Transport-independent request handling for the HTTP API.
class SessionService {
 public:
  struct Response {
    int status = 200;
    nlohmann::json body;
  };

  SessionService(const TurnPipeline& pipeline, SessionStore& store) : pipeline_(pipeline), store_(store) {}

  Response create_session(const std::string& body);
  Response post_message(const std::string& session_id, const std::string& body);
  Response get_session(const std::string& session_id) const;
  Response delete_session(const std::string& session_id);
  Response list_flowcharts() const;
  Response get_flowchart(const std::string& flowchart_id) const;

  /// Registers the routes on an httplib server.
  void mount(httplib::Server& server);

  /// Number of top-k entries returned per turn: k_infer + 4.
  std::size_t topk_size() const { return static_cast<std::size_t>(pipeline_.rag.k_infer) + 4; }

 private:
  const TurnPipeline& pipeline_;
  SessionStore& store_;
};

/// Structure of a chart for clients: nodes, edges and FAQs.
nlohmann::json flowchart_json(const KnowledgeSource& src);

/// Top-k display entries from a retrieval: the first n ranked documents with
/// a softmax over their scores.
std::vector<TopkEntry> display_topk(const RetrievalResult& rr, std::size_t n);

}  // namespace flonet
