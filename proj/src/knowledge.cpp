#include "flonet/knowledge.hpp"

#include <algorithm>
#include <filesystem>

#include "flonet/text.hpp"

namespace flonet {

namespace fs = std::filesystem;

std::string_view to_string(KnowledgeSources s) {
  switch (s) {
    case KnowledgeSources::history_only: return "history";
    case KnowledgeSources::flowchart: return "history+flowchart";
    case KnowledgeSources::flowchart_faq: return "history+flowchart+faq";
  }
  return "?";
}

KnowledgeSources knowledge_sources_from_string(std::string_view s) {
  if (s == "history" || s == "history-only") return KnowledgeSources::history_only;
  if (s == "history+flowchart") return KnowledgeSources::flowchart;
  if (s == "history+flowchart+faq") return KnowledgeSources::flowchart_faq;
  throw ParseError("unknown knowledge source setting '" + std::string(s) + "'");
}

void KnowledgeBase::add(Flowchart chart, FaqSet faqs) {
  if (faqs.flowchart_id.empty()) faqs.flowchart_id = chart.id();
  auto docs = build_documents(chart, faqs);
  auto id = chart.id();
  sources_.erase(id);
  sources_.emplace(id, KnowledgeSource{std::move(chart), std::move(faqs), std::move(docs)});
}

const KnowledgeSource& KnowledgeBase::at(const std::string& flowchart_id) const {
  auto it = sources_.find(flowchart_id);
  if (it == sources_.end()) throw ValidationError("unknown flowchart '" + flowchart_id + "'");
  return it->second;
}

std::vector<std::string> KnowledgeBase::ids() const {
  std::vector<std::string> out;
  for (const auto& [id, _] : sources_) out.push_back(id);
  return out;
}

KnowledgeBase KnowledgeBase::subset(const std::vector<std::string>& flowchart_ids) const {
  KnowledgeBase kb;
  for (const auto& id : flowchart_ids) kb.sources_.emplace(id, at(id));
  return kb;
}

Document empty_document(const std::string& flowchart_id) {
  Document d;
  d.doc_id = "none";
  d.flowchart_id = flowchart_id;
  d.kind = DocKind::node;
  return d;
}

std::vector<Document> KnowledgeBase::documents(const std::string& flowchart_id, KnowledgeSources sources) const {
  const auto& src = at(flowchart_id);
  switch (sources) {
    case KnowledgeSources::history_only: return {empty_document(flowchart_id)};
    case KnowledgeSources::flowchart: return build_node_documents(src.chart);
    case KnowledgeSources::flowchart_faq: return src.documents;
  }
  return {};
}

std::uint64_t KnowledgeBase::fingerprint() const {
  std::uint64_t h = fnv1a64("kb");
  for (const auto& [id, src] : sources_) {
    h = fnv1a64(id, h);
    for (const auto& d : src.documents) {
      h = fnv1a64(d.doc_id, h);
      for (const auto& k : d.key) h = fnv1a64(k, fnv1a64("\x1f", h));
      h = fnv1a64(d.value, fnv1a64("\x1e", h));
    }
  }
  return h;
}

KnowledgeBase KnowledgeBase::load(const std::string& flowchart_dir, const std::string& faq_dir) {
  std::vector<fs::path> chart_files, faq_files;
  if (!fs::is_directory(flowchart_dir)) throw Error("flowchart directory not found: " + flowchart_dir);
  for (const auto& e : fs::directory_iterator(flowchart_dir))
    if (e.path().extension() == ".json") chart_files.push_back(e.path());
  if (!faq_dir.empty() && fs::exists(faq_dir))
    for (const auto& e : fs::directory_iterator(faq_dir))
      if (e.path().extension() == ".json") faq_files.push_back(e.path());
  std::sort(chart_files.begin(), chart_files.end());
  std::sort(faq_files.begin(), faq_files.end());

  std::map<std::string, FaqSet> faqs;
  for (const auto& p : faq_files) {
    auto set = load_faqs_file(p.string());
    auto id = set.flowchart_id;
    faqs[id] = std::move(set);
  }
  KnowledgeBase kb;
  for (const auto& p : chart_files) {
    auto chart = load_flowchart_file(p.string());
    auto it = faqs.find(chart.id());
    FaqSet set = it != faqs.end() ? it->second : FaqSet{chart.id(), {}};
    kb.add(std::move(chart), std::move(set));
  }
  for (const auto& [id, _] : faqs)
    if (!kb.contains(id)) throw ValidationError("faq file refers to unknown flowchart '" + id + "'");
  return kb;
}

}  // namespace flonet
