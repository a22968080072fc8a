#include "flonet/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "flonet/error.hpp"
#include "flonet/text.hpp"

namespace flonet {

namespace {

constexpr double kFloor = 0.1;

std::map<std::vector<std::string_view>, long> ngram_counts(std::span<const std::string> toks, std::size_t n) {
  std::map<std::vector<std::string_view>, long> out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    std::vector<std::string_view> g(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                    toks.begin() + static_cast<std::ptrdiff_t>(i + n));
    ++out[g];
  }
  return out;
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_len += o.hyp_len;
  ref_len += o.ref_len;
  return *this;
}

BleuStats bleu_stats(std::span<const std::string> hyp, std::span<const std::string> ref) {
  BleuStats s;
  s.hyp_len = static_cast<long>(hyp.size());
  s.ref_len = static_cast<long>(ref.size());
  for (std::size_t n = 1; n <= 4; ++n) {
    auto h = ngram_counts(hyp, n);
    auto r = ngram_counts(ref, n);
    long total = 0, match = 0;
    for (const auto& [g, c] : h) {
      total += c;
      auto it = r.find(g);
      if (it != r.end()) match += std::min(c, it->second);
    }
    s.totals[n - 1] = total;
    s.matches[n - 1] = match;
  }
  return s;
}

double bleu_score(const BleuStats& s) {
  if (std::all_of(s.matches.begin(), s.matches.end(), [](long m) { return m == 0; })) return 0.0;
  double bp = 1.0;
  if (s.hyp_len < s.ref_len) bp = s.hyp_len > 0 ? std::exp(1.0 - static_cast<double>(s.ref_len) / s.hyp_len) : 0.0;
  double log_sum = 0.0;
  int order = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (s.totals[n] == 0) break;
    order = static_cast<int>(n) + 1;
    const double num = s.matches[n] == 0 ? kFloor : static_cast<double>(s.matches[n]);
    log_sum += std::log(100.0 * num / static_cast<double>(s.totals[n]));
  }
  return bp * std::exp(log_sum / order);
}

double sentence_bleu(std::span<const std::string> hyp, std::span<const std::string> ref) {
  return bleu_score(bleu_stats(hyp, ref));
}

double corpus_bleu(const std::vector<Tokens>& refs, const std::vector<Tokens>& hyps) {
  if (refs.size() != hyps.size()) throw ValidationError("corpus_bleu: reference/hypothesis count mismatch");
  if (refs.empty()) throw ValidationError("corpus_bleu: empty corpus");
  BleuStats total;
  for (std::size_t i = 0; i < refs.size(); ++i) total += bleu_stats(hyps[i], refs[i]);
  return bleu_score(total);
}

double sentence_bleu(std::string_view hyp, std::string_view ref) {
  const auto h = tokenize(hyp);
  const auto r = tokenize(ref);
  return sentence_bleu(h, r);
}

double corpus_bleu(const std::vector<std::string>& refs, const std::vector<std::string>& hyps) {
  std::vector<Tokens> r, h;
  for (const auto& s : refs) r.push_back(tokenize(s));
  for (const auto& s : hyps) h.push_back(tokenize(s));
  return corpus_bleu(r, h);
}

}  // namespace flonet
