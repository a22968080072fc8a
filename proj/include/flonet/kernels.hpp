#pragma once

#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "flonet/bleu.hpp"
#include "flonet/nn.hpp"

// Hot loops with two implementations each: a plain serial reference and an
// OpenMP version. Both produce bit-identical results; tests compare them and
// bench/ times them.
namespace flonet::kernels {

enum class Exec { serial, parallel };

/// -||q - keys.row(i)||_2 for every row.
std::vector<double> neg_euclidean(const Eigen::MatrixXd& keys, const Eigen::VectorXd& q, Exec exec);

/// Sparse term-weight vector: (term id, weight), sorted by term id.
using SparseVec = std::vector<std::pair<int, double>>;

/// Cosine similarity of q against every document; 0 for empty vectors.
std::vector<double> cosine(const std::vector<SparseVec>& docs, const SparseVec& q, Exec exec);

/// Sentence BLEU of every candidate against `ref`.
std::vector<double> bleu_scan(const std::vector<Tokens>& candidates, const Tokens& ref, Exec exec);

/// First index of the maximum; 0 for an empty span is an error.
std::size_t argmax_first(std::span<const double> xs);

/// Per-example loss and gradient callback used by accumulate_gradients.
using ExampleFn = std::function<double(std::size_t example, std::vector<nn::Gradients>& sinks)>;

/// Sums per-example gradients over [0, n). Examples are grouped into fixed
/// chunks of `chunk` consecutive indices; each chunk accumulates into its own
/// buffers and chunks are reduced in index order, so the result does not
/// depend on the thread count. Returns the summed loss.
double accumulate_gradients(std::size_t n, std::size_t chunk, std::vector<nn::Gradients>& out, const ExampleFn& fn,
                            Exec exec);

}  // namespace flonet::kernels
