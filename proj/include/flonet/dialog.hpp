#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "flonet/flowchart.hpp"
#include "flonet/knowledge.hpp"

namespace flonet {

using Rng = std::mt19937_64;

/// Derives an independent generator seed for a named sub-stream.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream);

enum class Speaker { user, agent };
enum class Digression { none, user, agent };

std::string_view to_string(Speaker s);
std::string_view to_string(Digression d);

/// Which document an agent utterance realizes. `id` is the node id or the
/// FAQ index as a string.
struct Grounding {
  DocKind kind = DocKind::node;
  std::string id;

  std::string doc_id() const { return kind == DocKind::node ? node_doc_id(id) : "faq:" + id; }
  bool operator==(const Grounding&) const = default;
};

struct Utterance {
  Speaker speaker = Speaker::user;
  std::string text;
  std::optional<Grounding> grounding;
  Digression digression = Digression::none;  // set on utterances inside a digression
  /// Closing exchange after the solution. The agent's closing acknowledgement
  /// is grounded on the terminal node but realizes no document content, so
  /// retrieval training and retrieval metrics skip it.
  bool closing = false;
};

/// Dialog prefix ending with a user utterance.
class DialogHistory {
 public:
  explicit DialogHistory(std::vector<Utterance> utterances);

  const std::vector<Utterance>& utterances() const { return utterances_; }
  std::size_t size() const { return utterances_.size(); }

  DialogHistory with_agent_reply(std::string text, std::optional<Grounding> g, std::string next_user) const;

  /// "<dialog_id>#<utterance index>" for histories cut from a corpus dialog,
  /// empty otherwise. Models never read it; the gold-lookup oracle does,
  /// since identical openings can lead to different nodes.
  const std::string& origin() const { return origin_; }
  void set_origin(std::string o) { origin_ = std::move(o); }

 private:
  std::vector<Utterance> utterances_;
  std::string origin_;
};

enum class ExchangeType { simple, user_digression, agent_digression };

std::string_view to_string(ExchangeType t);

struct Exchange {
  NodeId node;
  std::string label;
  ExchangeType type = ExchangeType::simple;
  std::optional<std::size_t> faq;
};

struct ProblemDescription {
  std::string primary_issue;
  std::optional<PathStep> secondary;  // embedded (node, edge) evidence
  std::optional<std::string> irrelevant;
};

/// Symbolic plan of one dialog.
struct Outline {
  std::string flowchart_id;
  FlowPath path;
  ProblemDescription problem;
  /// Number of leading path steps covered by the problem description.
  std::size_t skipped = 0;
  std::vector<Exchange> exchanges;
  NodeId solution_node;
  /// Complex exchanges that fell back to simple because the FAQ set was empty.
  std::size_t degraded_complex = 0;
};

struct Dialog {
  std::string dialog_id;
  std::string flowchart_id;
  std::vector<Utterance> utterances;
  FlowPath path;
  std::optional<Outline> outline;
};

/// One next-response prediction example drawn from a dialog.
struct AgentTurn {
  DialogHistory history;
  std::string response;
  std::optional<Grounding> gold;
  Digression digression = Digression::none;
  std::size_t utterance_index = 0;
  bool closing = false;
};

std::vector<AgentTurn> agent_turns(const Dialog& d);

/// Paraphrases per outline component. Missing or empty lists fall back to the
/// canonical surface form.
///
/// Component keys:
///   node:<chart>:<node>            agent utterance of a node
///   edge:<chart>:<node>:<label>    user answer for an edge
///   faq-q:<chart>:<i>, faq-a:<chart>:<i>, faq-prereq:<chart>:<i>
///   problem-template               contains "{issue}"
///   closing-template:user, closing-template:agent
///   digression-template:decline, digression-template:ack
///   distractor                     irrelevant problem-description sentences
class ParaphraseBank {
 public:
  ParaphraseBank() = default;
  explicit ParaphraseBank(std::map<std::string, std::vector<std::string>> components)
      : components_(std::move(components)) {}

  const std::vector<std::string>& lookup(const std::string& key) const;
  std::string pick(const std::string& key, const std::string& canonical, Rng& rng) const;
  void merge(const ParaphraseBank& other);
  const std::map<std::string, std::vector<std::string>>& components() const { return components_; }

  static ParaphraseBank parse(std::string_view raw);
  static ParaphraseBank load_file(const std::string& path);
  /// Merges every *.json bank in a directory (or loads a single file).
  static ParaphraseBank load(const std::string& path);

 private:
  std::map<std::string, std::vector<std::string>> components_;
};

struct SynthConfig {
  double complex_prob = 0.3;
  double secondary_prob = 0.5;
  double irrelevant_prob = 0.5;
  double user_digression_share = 0.5;
  int outlines_per_flowchart = 110;
  int interchange_factor = 2;
};

Outline sample_outline(const Flowchart& f, const FlowPath& path, const FaqSet& q, const SynthConfig& cfg, Rng& rng);

Dialog stitch_dialog(const KnowledgeSource& src, const Outline& o, const ParaphraseBank& bank, Rng& rng,
                     std::string dialog_id = {});

/// Adds factor-1 re-stitched copies of every dialog; the first copy of each
/// dialog is the input itself.
std::vector<Dialog> augment_by_interchange(const std::vector<Dialog>& dialogs, const KnowledgeBase& kb,
                                           const ParaphraseBank& bank, Rng& rng, int factor);

/// Outlines for every path of every chart, stitched and augmented.
std::vector<Dialog> forge_corpus(const KnowledgeBase& kb, const ParaphraseBank& bank, const SynthConfig& cfg,
                                 std::uint64_t seed);

/// Checks that the agent node-grounding sequence (consecutive repeats merged,
/// skipped prefix re-inserted) equals the dialog's flowchart path.
bool replays_path(const Dialog& d, const Flowchart& f);

enum class SplitMode { seen, unseen };

std::string_view to_string(SplitMode m);
SplitMode split_mode_from_string(std::string_view s);

struct SplitSpec {
  SplitMode mode = SplitMode::seen;
  std::vector<std::string> train, val, test;
  std::vector<std::string> heldout_flowcharts;  // unseen mode: val + test charts
};

SplitSpec make_splits(const std::vector<Dialog>& dialogs, const std::vector<std::string>& flowchart_ids,
                      SplitMode mode, Rng& rng);

std::vector<Dialog> select_dialogs(const std::vector<Dialog>& dialogs, const std::vector<std::string>& ids);

void write_corpus(std::ostream& out, const std::vector<Dialog>& dialogs);
std::vector<Dialog> read_corpus(std::istream& in);
void write_corpus_file(const std::string& path, const std::vector<Dialog>& dialogs);
std::vector<Dialog> read_corpus_file(const std::string& path);

void write_split_file(const std::string& path, const SplitSpec& s);
SplitSpec read_split_file(const std::string& path);

}  // namespace flonet
