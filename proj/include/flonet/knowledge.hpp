#pragma once

#include <map>
#include <string>
#include <vector>

#include "flonet/flowchart.hpp"

namespace flonet {

/// Which knowledge sources are exposed to retrieval.
enum class KnowledgeSources { history_only, flowchart, flowchart_faq };

std::string_view to_string(KnowledgeSources s);
KnowledgeSources knowledge_sources_from_string(std::string_view s);

struct KnowledgeSource {
  Flowchart chart;
  FaqSet faqs;
  std::vector<Document> documents;  // build_documents(chart, faqs)
};

/// All flowcharts and FAQ sets of a deployment, keyed by flowchart id.
class KnowledgeBase {
 public:
  void add(Flowchart chart, FaqSet faqs);

  const KnowledgeSource& at(const std::string& flowchart_id) const;
  bool contains(const std::string& flowchart_id) const { return sources_.count(flowchart_id) > 0; }
  std::vector<std::string> ids() const;
  std::size_t size() const { return sources_.size(); }
  /// Copy restricted to the given charts.
  KnowledgeBase subset(const std::vector<std::string>& flowchart_ids) const;

  /// Retrievable documents of one chart under a knowledge-source setting.
  /// history_only yields a single empty document.
  std::vector<Document> documents(const std::string& flowchart_id, KnowledgeSources sources) const;

  /// Stable content hash over every document of every chart.
  std::uint64_t fingerprint() const;

  /// Loads every *.json under `flowchart_dir`; FAQ files under `faq_dir` are
  /// matched through their "flowchart" field. Charts without FAQs get an
  /// empty set.
  static KnowledgeBase load(const std::string& flowchart_dir, const std::string& faq_dir);

 private:
  std::map<std::string, KnowledgeSource> sources_;
};

/// The degenerate document used when no knowledge source is available.
Document empty_document(const std::string& flowchart_id);

}  // namespace flonet
