#include "flonet/kernels.hpp"

#include <cmath>

#include "flonet/error.hpp"

namespace flonet::kernels {

namespace {

double dot(const SparseVec& a, const SparseVec& b) {
  double s = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i].first == b[j].first) {
      s += a[i].second * b[j].second;
      ++i;
      ++j;
    } else if (a[i].first < b[j].first) {
      ++i;
    } else {
      ++j;
    }
  }
  return s;
}

double norm(const SparseVec& a) {
  double s = 0;
  for (const auto& [_, w] : a) s += w * w;
  return std::sqrt(s);
}

std::vector<nn::Gradients> zeros_like(const std::vector<nn::Gradients>& g) {
  std::vector<nn::Gradients> out;
  out.reserve(g.size());
  for (const auto& x : g) out.emplace_back(x.params());
  return out;
}

}  // namespace

std::vector<double> neg_euclidean(const Eigen::MatrixXd& keys, const Eigen::VectorXd& q, Exec exec) {
  if (keys.cols() != q.size()) throw ValidationError("neg_euclidean: dimension mismatch");
  const auto n = keys.rows();
  std::vector<double> out(static_cast<std::size_t>(n));
  if (exec == Exec::serial) {
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = -(keys.row(i).transpose() - q).norm();
  } else {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = -(keys.row(i).transpose() - q).norm();
  }
  return out;
}

std::vector<double> cosine(const std::vector<SparseVec>& docs, const SparseVec& q, Exec exec) {
  const double qn = norm(q);
  std::vector<double> out(docs.size(), 0.0);
  const auto n = static_cast<long>(docs.size());
  auto one = [&](long i) {
    const auto& d = docs[static_cast<std::size_t>(i)];
    const double dn = norm(d);
    out[static_cast<std::size_t>(i)] = (qn == 0 || dn == 0) ? 0.0 : dot(d, q) / (qn * dn);
  };
  if (exec == Exec::serial) {
    for (long i = 0; i < n; ++i) one(i);
  } else {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) one(i);
  }
  return out;
}

std::vector<double> bleu_scan(const std::vector<Tokens>& candidates, const Tokens& ref, Exec exec) {
  std::vector<double> out(candidates.size(), 0.0);
  const auto n = static_cast<long>(candidates.size());
  if (exec == Exec::serial) {
    for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = sentence_bleu(candidates[static_cast<std::size_t>(i)], ref);
  } else {
#pragma omp parallel for schedule(dynamic)
    for (long i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = sentence_bleu(candidates[static_cast<std::size_t>(i)], ref);
  }
  return out;
}

std::size_t argmax_first(std::span<const double> xs) {
  if (xs.empty()) throw ValidationError("argmax of an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[best]) best = i;
  return best;
}

double accumulate_gradients(std::size_t n, std::size_t chunk, std::vector<nn::Gradients>& out, const ExampleFn& fn,
                            Exec exec) {
  if (chunk == 0) throw ValidationError("accumulate_gradients: chunk size must be positive");
  const std::size_t num_chunks = (n + chunk - 1) / chunk;
  std::vector<std::vector<nn::Gradients>> partial;
  partial.reserve(num_chunks);
  for (std::size_t c = 0; c < num_chunks; ++c) partial.push_back(zeros_like(out));
  std::vector<double> losses(num_chunks, 0.0);

  auto run_chunk = [&](std::size_t c) {
    const std::size_t end = std::min(n, (c + 1) * chunk);
    for (std::size_t i = c * chunk; i < end; ++i) losses[c] += fn(i, partial[c]);
  };
  const auto nc = static_cast<long>(num_chunks);
  if (exec == Exec::serial) {
    for (long c = 0; c < nc; ++c) run_chunk(static_cast<std::size_t>(c));
  } else {
#pragma omp parallel for schedule(dynamic)
    for (long c = 0; c < nc; ++c) run_chunk(static_cast<std::size_t>(c));
  }
  double loss = 0;
  for (std::size_t c = 0; c < num_chunks; ++c) {
    loss += losses[c];
    for (std::size_t s = 0; s < out.size(); ++s) out[s] += partial[c][s];
  }
  return loss;
}

}  // namespace flonet::kernels
