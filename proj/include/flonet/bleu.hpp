#pragma once

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flonet {

using Tokens = std::vector<std::string>;

/// Sufficient statistics of BLEU-4 for one or more (hypothesis, reference)
/// pairs. Summing statistics and scoring once gives corpus BLEU.
struct BleuStats {
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  long hyp_len = 0;
  long ref_len = 0;

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(std::span<const std::string> hyp, std::span<const std::string> ref);

/// BLEU-4 in [0, 100] with brevity penalty. Orders with zero matches are
/// floored to 0.1 / total; orders with no hypothesis n-grams are dropped
/// (effective order). A score with no matches at any order is 0.
double bleu_score(const BleuStats& s);

double sentence_bleu(std::span<const std::string> hyp, std::span<const std::string> ref);
double corpus_bleu(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps);

/// String entry points: lowercased word tokenization first.
double sentence_bleu(std::string_view hyp, std::string_view ref);
double corpus_bleu(const std::vector<std::string>& refs, const std::vector<std::string>& hyps);

}  // namespace flonet
