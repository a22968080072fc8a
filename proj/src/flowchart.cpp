#include "flonet/flowchart.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>

#include <json.hpp>

#include "flonet/text.hpp"

namespace flonet {

using json = nlohmann::json;
using Kind = FlowchartError::Kind;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

Flowchart::Flowchart(std::string id, std::string title, NodeId root, std::map<NodeId, std::string> utterances,
                     std::map<NodeId, std::map<std::string, NodeId>> edges)
    : id_(std::move(id)), title_(std::move(title)), root_(std::move(root)), utterances_(std::move(utterances)) {
  if (root_.empty() || !utterances_.count(root_))
    throw FlowchartError(Kind::missing_root, "flowchart " + id_ + ": root node '" + root_ + "' is not defined");

  for (const auto& [n, _] : utterances_) children_[n];
  for (const auto& [src, out] : edges) {
    if (!utterances_.count(src))
      throw FlowchartError(Kind::unknown_node, "flowchart " + id_ + ": edge source '" + src + "' is not a node");
    auto& kids = children_[src];
    for (const auto& [raw_label, dst] : out) {
      if (!utterances_.count(dst))
        throw FlowchartError(Kind::unknown_node, "flowchart " + id_ + ": edge target '" + dst + "' is not a node");
      auto label = normalize_label(raw_label);
      if (label.empty())
        throw FlowchartError(Kind::parse, "flowchart " + id_ + ": empty edge label on node '" + src + "'");
      if (!kids.emplace(label, dst).second)
        throw FlowchartError(Kind::duplicate_edge_label,
                             "flowchart " + id_ + ": duplicate edge label '" + label + "' on node '" + src + "'");
    }
  }

  // Cycle check over the whole graph (white/grey/black colouring).
  std::map<NodeId, int> colour;
  std::function<void(const NodeId&)> visit = [&](const NodeId& n) {
    colour[n] = 1;
    for (const auto& [_, c] : children_.at(n)) {
      if (colour[c] == 1) throw FlowchartError(Kind::cycle, "flowchart " + id_ + ": cycle through node '" + c + "'");
      if (colour[c] == 0) visit(c);
    }
    colour[n] = 2;
  };
  for (const auto& [n, _] : utterances_)
    if (colour[n] == 0) visit(n);

  for (const auto& [src, kids] : children_) {
    for (const auto& [label, dst] : kids) {
      if (!parent_.emplace(dst, src).second)
        throw FlowchartError(Kind::multiple_parents, "flowchart " + id_ + ": node '" + dst + "' has more than one parent");
      incoming_[dst] = label;
    }
  }

  std::function<void(const NodeId&)> walk = [&](const NodeId& n) {
    preorder_.push_back(n);
    for (const auto& [_, c] : children_.at(n)) walk(c);
  };
  walk(root_);
  if (preorder_.size() != utterances_.size()) {
    for (const auto& [n, _] : utterances_)
      if (n != root_ && !parent_.count(n)) throw FlowchartError(Kind::unreachable, "flowchart " + id_ + ": node '" + n + "' is unreachable from root");
    throw FlowchartError(Kind::unreachable, "flowchart " + id_ + ": unreachable nodes");
  }
}

const std::string& Flowchart::utterance(const NodeId& n) const {
  auto it = utterances_.find(n);
  if (it == utterances_.end()) throw std::out_of_range("flowchart " + id_ + ": no node '" + n + "'");
  return it->second;
}

const Flowchart::Children& Flowchart::children(const NodeId& n) const {
  auto it = children_.find(n);
  if (it == children_.end()) throw std::out_of_range("flowchart " + id_ + ": no node '" + n + "'");
  return it->second;
}

std::optional<NodeId> Flowchart::parent(const NodeId& n) const {
  auto it = parent_.find(n);
  if (it == parent_.end()) return std::nullopt;
  return it->second;
}

const std::string& Flowchart::incoming_label(const NodeId& n) const {
  static const std::string empty;
  auto it = incoming_.find(n);
  return it == incoming_.end() ? empty : it->second;
}

std::size_t Flowchart::depth(const NodeId& n) const {
  std::size_t d = 0;
  for (auto p = parent(n); p; p = parent(*p)) ++d;
  return d;
}

std::vector<NodeId> Flowchart::terminals() const {
  std::vector<NodeId> out;
  for (const auto& n : preorder_)
    if (is_terminal(n)) out.push_back(n);
  return out;
}

std::optional<NodeId> Flowchart::follow(const NodeId& from, std::string_view label) const {
  const auto& kids = children(from);
  auto it = kids.find(normalize_label(label));
  if (it == kids.end()) return std::nullopt;
  return it->second;
}

std::vector<NodeId> FlowPath::nodes() const {
  std::vector<NodeId> out;
  out.reserve(steps.size() + 1);
  for (const auto& s : steps) out.push_back(s.node);
  out.push_back(terminal);
  return out;
}

Flowchart load_flowchart(std::string_view raw, std::string id) {
  json j;
  try {
    j = json::parse(raw);
  } catch (const json::parse_error& e) {
    throw FlowchartError(Kind::parse, "flowchart " + id + ": " + e.what());
  }
  try {
    if (!j.is_object()) throw FlowchartError(Kind::parse, "flowchart " + id + ": top level must be an object");
    if (!j.contains("root")) throw FlowchartError(Kind::missing_root, "flowchart " + id + ": missing 'root'");
    std::map<NodeId, std::string> utterances;
    for (const auto& [nid, node] : j.at("nodes").items()) utterances[nid] = node.at("utterance").get<std::string>();
    std::map<NodeId, std::map<std::string, NodeId>> edges;
    if (j.contains("edges")) {
      for (const auto& [src, out] : j.at("edges").items()) {
        auto& e = edges[src];
        // Raw labels; collisions after normalization are reported by the constructor.
        for (const auto& [label, dst] : out.items()) e.emplace(label, dst.get<std::string>());
      }
    }
    return Flowchart(id, j.value("name", id), j.at("root").get<std::string>(), std::move(utterances), std::move(edges));
  } catch (const json::exception& e) {
    throw FlowchartError(Kind::parse, "flowchart " + id + ": " + e.what());
  }
}

Flowchart load_flowchart_file(const std::string& path) {
  return load_flowchart(read_file(path), std::filesystem::path(path).stem().string());
}

FaqSet load_faqs(std::string_view raw) {
  try {
    auto j = json::parse(raw);
    FaqSet out;
    out.flowchart_id = j.at("flowchart").get<std::string>();
    for (const auto& e : j.at("faqs")) {
      FaqEntry entry{e.at("q").get<std::string>(), e.at("a").get<std::string>()};
      if (entry.question.empty() || entry.answer.empty())
        throw ValidationError("faqs for " + out.flowchart_id + ": empty question or answer");
      out.entries.push_back(std::move(entry));
    }
    return out;
  } catch (const json::exception& e) {
    throw ParseError(std::string("faq file: ") + e.what());
  }
}

FaqSet load_faqs_file(const std::string& path) { return load_faqs(read_file(path)); }

std::vector<FlowPath> enumerate_paths(const Flowchart& f) {
  std::vector<FlowPath> out;
  FlowPath cur;
  std::function<void(const NodeId&)> dfs = [&](const NodeId& n) {
    const auto& kids = f.children(n);
    if (kids.empty()) {
      cur.terminal = n;
      out.push_back(cur);
      return;
    }
    for (const auto& [label, child] : kids) {
      cur.steps.push_back({n, label});
      dfs(child);
      cur.steps.pop_back();
    }
  };
  dfs(f.root());
  return out;
}

bool is_valid_path(const Flowchart& f, const FlowPath& p) {
  NodeId at = f.root();
  for (const auto& s : p.steps) {
    if (s.node != at) return false;
    auto next = f.follow(at, s.label);
    if (!next) return false;
    at = *next;
  }
  return at == p.terminal && f.is_terminal(at);
}

std::string_view to_string(DocKind k) { return k == DocKind::node ? "node" : "faq"; }

DocKind doc_kind_from_string(std::string_view s) {
  if (s == "node") return DocKind::node;
  if (s == "faq") return DocKind::faq;
  throw ParseError("unknown document kind '" + std::string(s) + "'");
}

std::string node_doc_id(const NodeId& n) { return "node:" + n; }
std::string faq_doc_id(std::size_t index) { return "faq:" + std::to_string(index); }

std::vector<Document> build_node_documents(const Flowchart& f) {
  std::vector<Document> docs;
  docs.reserve(f.size());
  for (const auto& n : f.nodes()) {
    Document d;
    d.doc_id = node_doc_id(n);
    d.flowchart_id = f.id();
    d.kind = DocKind::node;
    d.source_id = n;
    std::vector<NodeId> chain;
    for (auto p = f.parent(n); p; p = f.parent(*p)) chain.push_back(*p);
    NodeId below = n;
    std::vector<std::pair<std::string, std::string>> pairs;  // (question, label) bottom-up
    for (const auto& anc : chain) {
      pairs.emplace_back(f.utterance(anc), f.incoming_label(below));
      below = anc;
    }
    for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) {
      d.key.push_back(it->first);
      d.key.push_back(it->second);
    }
    d.value = f.utterance(n);
    docs.push_back(std::move(d));
  }
  return docs;
}

std::vector<Document> build_documents(const Flowchart& f, const FaqSet& q) {
  if (q.flowchart_id != f.id())
    throw ValidationError("faq set for '" + q.flowchart_id + "' does not belong to flowchart '" + f.id() + "'");
  auto docs = build_node_documents(f);
  for (std::size_t i = 0; i < q.entries.size(); ++i) {
    Document d;
    d.doc_id = faq_doc_id(i);
    d.flowchart_id = f.id();
    d.kind = DocKind::faq;
    d.source_id = std::to_string(i);
    d.key = {q.entries[i].question};
    d.value = q.entries[i].answer;
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace flonet
