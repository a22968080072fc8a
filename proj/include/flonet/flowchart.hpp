#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "flonet/error.hpp"

namespace flonet {

using NodeId = std::string;

/// Raised by load_flowchart / load_faqs. `kind` identifies which check failed.
class FlowchartError : public ValidationError {
 public:
  enum class Kind { parse, missing_root, unknown_node, cycle, multiple_parents, unreachable, duplicate_edge_label };

  FlowchartError(Kind kind, const std::string& what) : ValidationError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// A troubleshooting flowchart: a rooted tree whose nodes hold agent
/// utterances (questions, or solutions at terminals) and whose edges are the
/// user responses. Immutable once constructed; all invariants are checked by
/// the constructor.
class Flowchart {
 public:
  using Children = std::map<std::string, NodeId>;  // normalized label -> child

  Flowchart(std::string id, std::string title, NodeId root, std::map<NodeId, std::string> utterances,
            std::map<NodeId, std::map<std::string, NodeId>> edges);

  const std::string& id() const { return id_; }
  const std::string& title() const { return title_; }
  const NodeId& root() const { return root_; }

  bool has_node(const NodeId& n) const { return utterances_.count(n) > 0; }
  const std::string& utterance(const NodeId& n) const;
  const Children& children(const NodeId& n) const;
  std::optional<NodeId> parent(const NodeId& n) const;
  /// Label on the edge parent(n) -> n; empty for the root.
  const std::string& incoming_label(const NodeId& n) const;
  bool is_terminal(const NodeId& n) const { return children(n).empty(); }
  std::size_t depth(const NodeId& n) const;
  std::size_t size() const { return utterances_.size(); }

  /// Nodes in depth-first preorder, children visited in label order.
  const std::vector<NodeId>& nodes() const { return preorder_; }
  std::vector<NodeId> terminals() const;

  /// Follow `label` (normalized before lookup) from `from`.
  std::optional<NodeId> follow(const NodeId& from, std::string_view label) const;

 private:
  std::string id_;
  std::string title_;
  NodeId root_;
  std::map<NodeId, std::string> utterances_;
  std::map<NodeId, Children> children_;
  std::map<NodeId, NodeId> parent_;
  std::map<NodeId, std::string> incoming_;
  std::vector<NodeId> preorder_;
};

struct FaqEntry {
  std::string question;
  std::string answer;
};

/// FAQs attached to one flowchart. The entry index is the stable FAQ id.
struct FaqSet {
  std::string flowchart_id;
  std::vector<FaqEntry> entries;
};

struct PathStep {
  NodeId node;
  std::string label;

  bool operator==(const PathStep&) const = default;
};

/// Root-to-terminal walk: (node, edge-label) steps followed by the terminal.
struct FlowPath {
  std::vector<PathStep> steps;
  NodeId terminal;

  bool operator==(const FlowPath&) const = default;
  /// Every node on the path, terminal included.
  std::vector<NodeId> nodes() const;
};

/// Parses the flowchart file format. `id` is the chart identifier (usually
/// the file stem); the file's "name" becomes the title.
Flowchart load_flowchart(std::string_view raw, std::string id);
Flowchart load_flowchart_file(const std::string& path);

FaqSet load_faqs(std::string_view raw);
FaqSet load_faqs_file(const std::string& path);

/// All root-to-terminal paths, children explored in label order.
std::vector<FlowPath> enumerate_paths(const Flowchart& f);

/// True if the path is a valid root-to-terminal walk of `f`.
bool is_valid_path(const Flowchart& f, const FlowPath& p);

enum class DocKind { node, faq };

std::string_view to_string(DocKind k);
DocKind doc_kind_from_string(std::string_view s);

/// Key-value retrieval unit. For a node: key = alternating question / edge
/// label sequence from the root down to the node's incoming edge, value = the
/// node utterance. For an FAQ: key = {question}, value = answer.
struct Document {
  std::string doc_id;  // "node:<id>" or "faq:<index>"
  std::string flowchart_id;
  DocKind kind = DocKind::node;
  std::string source_id;  // node id or faq index
  std::vector<std::string> key;
  std::string value;
};

std::string node_doc_id(const NodeId& n);
std::string faq_doc_id(std::size_t index);

/// Node documents (preorder) followed by FAQ documents (file order).
std::vector<Document> build_documents(const Flowchart& f, const FaqSet& q);

/// Node documents only (the "flowchart" knowledge source).
std::vector<Document> build_node_documents(const Flowchart& f);

}  // namespace flonet
