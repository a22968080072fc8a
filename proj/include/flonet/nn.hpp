#pragma once

#include <functional>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "flonet/text.hpp"

namespace flonet::nn {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Named, ordered collection of trainable matrices.
class ParameterSet {
 public:
  std::size_t add(std::string name, Matrix init);

  std::size_t size() const { return values_.size(); }
  Matrix& value(std::size_t i) { return values_.at(i); }
  const Matrix& value(std::size_t i) const { return values_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t num_scalars() const;

  nlohmann::json to_json() const;
  /// Loads values into an already-shaped set; names and shapes must match.
  void load_json(const nlohmann::json& j);

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
};

/// Gradient buffers shaped like a ParameterSet.
class Gradients {
 public:
  explicit Gradients(const ParameterSet& params);

  const ParameterSet& params() const { return *params_; }
  Matrix& operator[](std::size_t i) { return grads_.at(i); }
  const Matrix& operator[](std::size_t i) const { return grads_.at(i); }
  std::size_t size() const { return grads_.size(); }

  void zero();
  Gradients& operator+=(const Gradients& other);
  void scale(double s);
  double squared_norm() const;

 private:
  const ParameterSet* params_;
  std::vector<Matrix> grads_;
};

struct Var {
  int id = -1;
};

/// Reverse-mode tape. Build the forward computation with the op methods, then
/// call backward() on a 1x1 loss. One graph per thread; parameters are read
/// through const references and never copied.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Matrix m);
  Var param(const ParameterSet& set, std::size_t index);
  /// Row gather from an embedding table: result is ids.size() x cols.
  Var embed(const ParameterSet& set, std::size_t index, std::span<const TokenId> ids);

  const Matrix& value(Var v) const;
  double scalar(Var v) const { return value(v)(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var hadamard(Var a, Var b);
  Var scale(Var a, double s);
  Var transpose(Var a);
  /// Adds a 1 x n row to every row of a (broadcast).
  Var add_row(Var a, Var row);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var gelu(Var a);
  /// max(0, a) elementwise.
  Var relu(Var a);
  Var sum(Var a);
  Var rows(Var a, std::span<const int> indices);
  Var cols(Var a, int start, int count);
  /// Stacks 1x1 scalars into a k x 1 column.
  Var stack(std::span<const Var> scalars);

  /// Row-wise layer normalization with 1 x d gain and bias.
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  /// Multi-head causal self-attention over a fused [Q | K | V] (T x 3d) input.
  Var causal_attention(Var qkv, int heads);
  /// One GRU cell step (column vectors): x is n x 1, h is H x 1, weights
  /// are 3H x n and 3H x H stacked as [reset; update; candidate].
  Var gru_step(Var x, Var h, Var wx, Var wh, Var bx, Var bh);

  /// sqrt(|a - b|^2 + eps) for column vectors; 1x1 result.
  Var euclidean(Var a, Var b, double eps = 1e-12);
  /// Per-row log-softmax evaluated at targets: T x 1.
  Var log_softmax_pick(Var logits, std::span<const TokenId> targets);
  /// log-softmax of a k x 1 column.
  Var log_softmax(Var column);
  /// log(sum(exp(column))) of a k x 1 column; 1x1 result.
  Var logsumexp(Var column);

  /// Accumulates d(loss)/d(param) into the sink that owns each parameter set.
  /// Parameter sets without a sink are treated as frozen.
  void backward(Var loss, std::initializer_list<Gradients*> sinks);
  void backward(Var loss, std::span<Gradients* const> sinks);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    const Matrix* ref = nullptr;
    const ParameterSet* set = nullptr;
    std::size_t param_index = 0;
    std::vector<TokenId> ids;
    bool needs_grad = false;
    bool is_embed = false;
    std::function<void(Graph&, int)> back;
  };

  Var push(Matrix value, bool needs_grad, std::function<void(Graph&, int)> back);
  bool needs(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }
  Matrix& grad_of(int id);
  void accumulate(Var v, const Matrix& g);

  std::vector<Node> nodes_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 5.0;  // <= 0 disables clipping
};

/// AdamW with decoupled weight decay (applied to matrices, not vectors) and
/// optional global-norm clipping.
class Adam {
 public:
  Adam(ParameterSet& params, AdamConfig cfg);
  void step(Gradients grads);
  const AdamConfig& config() const { return cfg_; }

 private:
  ParameterSet* params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

/// Uniform(-scale, scale) initialization from an explicit generator.
Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng);

}  // namespace flonet::nn
