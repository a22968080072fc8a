#include "flonet/nn.hpp"

#include <cmath>
#include <unordered_map>

#include "flonet/error.hpp"

namespace flonet::nn {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double sigmoid_scalar(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

void require(bool ok, const char* what) {
  if (!ok) throw ValidationError(std::string("nn: ") + what);
}

}  // namespace

// ---------------------------------------------------------------- parameters

std::size_t ParameterSet::add(std::string name, Matrix init) {
  names_.push_back(std::move(name));
  values_.push_back(std::move(init));
  return values_.size() - 1;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return i;
  return std::nullopt;
}

std::size_t ParameterSet::num_scalars() const {
  std::size_t n = 0;
  for (const auto& v : values_) n += static_cast<std::size_t>(v.size());
  return n;
}

nlohmann::json ParameterSet::to_json() const {
  auto out = nlohmann::json::array();
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const auto& m = values_[i];
    std::vector<double> data(static_cast<std::size_t>(m.size()));
    Eigen::Map<Matrix>(data.data(), m.rows(), m.cols()) = m;
    out.push_back({{"name", names_[i]}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", data}});
  }
  return out;
}

void ParameterSet::load_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != values_.size()) throw ParseError("checkpoint: parameter count mismatch");
  for (std::size_t i = 0; i < values_.size(); ++i) {
    const auto& e = j[i];
    if (e.at("name").get<std::string>() != names_[i]) throw ParseError("checkpoint: parameter name mismatch at " + names_[i]);
    const auto rows = e.at("rows").get<Eigen::Index>();
    const auto cols = e.at("cols").get<Eigen::Index>();
    if (rows != values_[i].rows() || cols != values_[i].cols()) throw ParseError("checkpoint: shape mismatch for " + names_[i]);
    auto data = e.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) throw ParseError("checkpoint: data size mismatch for " + names_[i]);
    values_[i] = Eigen::Map<Matrix>(data.data(), rows, cols);
  }
}

Gradients::Gradients(const ParameterSet& params) : params_(&params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    grads_.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
}

void Gradients::zero() {
  for (auto& g : grads_) g.setZero();
}

Gradients& Gradients::operator+=(const Gradients& other) {
  require(other.grads_.size() == grads_.size(), "gradient size mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
  return *this;
}

void Gradients::scale(double s) {
  for (auto& g : grads_) g *= s;
}

double Gradients::squared_norm() const {
  double n = 0;
  for (const auto& g : grads_) n += g.squaredNorm();
  return n;
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
  return m;
}

// ---------------------------------------------------------------- graph

Var Graph::push(Matrix value, bool needs_grad, std::function<void(Graph&, int)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

const Matrix& Graph::value(Var v) const {
  const auto& n = nodes_.at(static_cast<std::size_t>(v.id));
  return n.ref ? *n.ref : n.value;
}

Matrix& Graph::grad_of(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) {
    const auto& v = n.ref ? *n.ref : n.value;
    n.grad = Matrix::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

void Graph::accumulate(Var v, const Matrix& g) {
  if (!needs(v)) return;
  grad_of(v.id) += g;
}

Var Graph::input(Matrix m) { return push(std::move(m), false, nullptr); }

Var Graph::param(const ParameterSet& set, std::size_t index) {
  Node n;
  n.ref = &set.value(index);
  n.set = &set;
  n.param_index = index;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Graph::embed(const ParameterSet& set, std::size_t index, std::span<const TokenId> ids) {
  const auto& table = set.value(index);
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < table.rows(), "embedding id out of range");
    out.row(static_cast<Eigen::Index>(i)) = table.row(ids[i]);
  }
  Node n;
  n.value = std::move(out);
  n.set = &set;
  n.param_index = index;
  n.ids.assign(ids.begin(), ids.end());
  n.needs_grad = true;
  n.is_embed = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Graph::matmul(Var a, Var b) {
  require(value(a).cols() == value(b).rows(), "matmul shape mismatch");
  return push(value(a) * value(b), needs(a) || needs(b), [a, b](Graph& g, int self) {
    const Matrix& d = g.nodes_[self].grad;
    if (g.needs(a)) g.grad_of(a.id).noalias() += d * g.value(b).transpose();
    if (g.needs(b)) g.grad_of(b.id).noalias() += g.value(a).transpose() * d;
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  require(value(a).cols() == value(b).cols(), "matmul_nt shape mismatch");
  return push(value(a) * value(b).transpose(), needs(a) || needs(b), [a, b](Graph& g, int self) {
    const Matrix& d = g.nodes_[self].grad;
    if (g.needs(a)) g.grad_of(a.id).noalias() += d * g.value(b);
    if (g.needs(b)) g.grad_of(b.id).noalias() += d.transpose() * g.value(a);
  });
}

Var Graph::add(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "add shape mismatch");
  return push(value(a) + value(b), needs(a) || needs(b), [a, b](Graph& g, int self) {
    const Matrix d = g.nodes_[self].grad;
    g.accumulate(a, d);
    g.accumulate(b, d);
  });
}

Var Graph::sub(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "sub shape mismatch");
  return push(value(a) - value(b), needs(a) || needs(b), [a, b](Graph& g, int self) {
    const Matrix d = g.nodes_[self].grad;
    g.accumulate(a, d);
    if (g.needs(b)) g.grad_of(b.id) -= d;
  });
}

Var Graph::hadamard(Var a, Var b) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "hadamard shape mismatch");
  return push(value(a).cwiseProduct(value(b)), needs(a) || needs(b), [a, b](Graph& g, int self) {
    const Matrix d = g.nodes_[self].grad;
    if (g.needs(a)) g.grad_of(a.id) += d.cwiseProduct(g.value(b));
    if (g.needs(b)) g.grad_of(b.id) += d.cwiseProduct(g.value(a));
  });
}

Var Graph::scale(Var a, double s) {
  return push(value(a) * s, needs(a), [a, s](Graph& g, int self) { g.grad_of(a.id) += g.nodes_[self].grad * s; });
}

Var Graph::transpose(Var a) {
  return push(value(a).transpose(), needs(a), [a](Graph& g, int self) { g.grad_of(a.id) += g.nodes_[self].grad.transpose(); });
}

Var Graph::add_row(Var a, Var row) {
  require(value(row).rows() == 1 && value(row).cols() == value(a).cols(), "add_row shape mismatch");
  Matrix out = value(a);
  out.rowwise() += value(row).row(0);
  return push(std::move(out), needs(a) || needs(row), [a, row](Graph& g, int self) {
    const Matrix d = g.nodes_[self].grad;
    g.accumulate(a, d);
    if (g.needs(row)) g.grad_of(row.id) += d.colwise().sum();
  });
}

Var Graph::tanh(Var a) {
  Matrix y = value(a).array().tanh().matrix();
  return push(y, needs(a), [a](Graph& g, int self) {
    const auto& n = g.nodes_[self];
    g.grad_of(a.id) += (n.grad.array() * (1.0 - n.value.array().square())).matrix();
  });
}

Var Graph::sigmoid(Var a) {
  Matrix y = value(a).unaryExpr([](double x) { return sigmoid_scalar(x); });
  return push(y, needs(a), [a](Graph& g, int self) {
    const auto& n = g.nodes_[self];
    g.grad_of(a.id) += (n.grad.array() * n.value.array() * (1.0 - n.value.array())).matrix();
  });
}

Var Graph::gelu(Var a) {
  const Matrix& x = value(a);
  Matrix y = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  return push(y, needs(a), [a](Graph& g, int self) {
    const Matrix& x = g.value(a);
    Matrix dydx = x.unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(-0.5 * v * v);
    });
    g.grad_of(a.id) += g.nodes_[self].grad.cwiseProduct(dydx);
  });
}

Var Graph::relu(Var a) {
  Matrix y = value(a).cwiseMax(0.0);
  return push(y, needs(a), [a](Graph& g, int self) {
    const Matrix& x = g.value(a);
    Matrix mask = (x.array() > 0.0).cast<double>().matrix();
    g.grad_of(a.id) += g.nodes_[self].grad.cwiseProduct(mask);
  });
}

Var Graph::sum(Var a) {
  Matrix s(1, 1);
  s(0, 0) = value(a).sum();
  return push(s, needs(a), [a](Graph& g, int self) {
    auto& ga = g.grad_of(a.id);
    ga.array() += g.nodes_[self].grad(0, 0);
  });
}

Var Graph::rows(Var a, std::span<const int> indices) {
  const Matrix& x = value(a);
  Matrix out(static_cast<Eigen::Index>(indices.size()), x.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    require(indices[i] >= 0 && indices[i] < x.rows(), "row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = x.row(indices[i]);
  }
  std::vector<int> idx(indices.begin(), indices.end());
  return push(std::move(out), needs(a), [a, idx](Graph& g, int self) {
    const Matrix d = g.nodes_[self].grad;
    auto& ga = g.grad_of(a.id);
    for (std::size_t i = 0; i < idx.size(); ++i) ga.row(idx[i]) += d.row(static_cast<Eigen::Index>(i));
  });
}

Var Graph::cols(Var a, int start, int count) {
  const Matrix& x = value(a);
  require(start >= 0 && count >= 0 && start + count <= x.cols(), "column slice out of range");
  return push(x.middleCols(start, count), needs(a), [a, start, count](Graph& g, int self) {
    g.grad_of(a.id).middleCols(start, count) += g.nodes_[self].grad;
  });
}

Var Graph::stack(std::span<const Var> scalars) {
  Matrix out(static_cast<Eigen::Index>(scalars.size()), 1);
  bool any = false;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    require(value(scalars[i]).size() == 1, "stack expects scalars");
    out(static_cast<Eigen::Index>(i), 0) = value(scalars[i])(0, 0);
    any = any || needs(scalars[i]);
  }
  std::vector<Var> parts(scalars.begin(), scalars.end());
  return push(std::move(out), any, [parts](Graph& g, int self) {
    const Matrix d = g.nodes_[self].grad;
    for (std::size_t i = 0; i < parts.size(); ++i)
      if (g.needs(parts[i])) g.grad_of(parts[i].id)(0, 0) += d(static_cast<Eigen::Index>(i), 0);
  });
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Matrix& in = value(x);
  const auto d = in.cols();
  require(value(gain).cols() == d && value(bias).cols() == d, "layer_norm shape mismatch");
  Matrix xhat(in.rows(), d);
  Eigen::VectorXd inv_std(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mu = in.row(r).mean();
    const double var = (in.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (in.row(r).array() - mu) * inv_std(r);
  }
  Matrix y = xhat;
  y.array().rowwise() *= value(gain).row(0).array();
  y.rowwise() += value(bias).row(0);
  return push(std::move(y), needs(x) || needs(gain) || needs(bias),
              [x, gain, bias, xhat, inv_std](Graph& g, int self) {
                const Matrix d = g.nodes_[self].grad;
                if (g.needs(gain)) g.grad_of(gain.id) += d.cwiseProduct(xhat).colwise().sum();
                if (g.needs(bias)) g.grad_of(bias.id) += d.colwise().sum();
                if (g.needs(x)) {
                  Matrix dxhat = d;
                  dxhat.array().rowwise() *= g.value(gain).row(0).array();
                  auto& gx = g.grad_of(x.id);
                  for (Eigen::Index r = 0; r < d.rows(); ++r) {
                    const double m1 = dxhat.row(r).mean();
                    const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                    gx.row(r).array() += inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
                  }
                }
              });
}

Var Graph::causal_attention(Var qkv, int heads) {
  const Matrix& in = value(qkv);
  const auto t = in.rows();
  require(in.cols() % 3 == 0, "attention input must be T x 3d");
  const auto d = in.cols() / 3;
  require(heads > 0 && d % heads == 0, "attention heads must divide model width");
  const auto dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Matrix out = Matrix::Zero(t, d);
  std::vector<Matrix> probs(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    auto q = in.middleCols(h * dh, dh);
    auto k = in.middleCols(d + h * dh, dh);
    auto v = in.middleCols(2 * d + h * dh, dh);
    Matrix s = (q * k.transpose()) * scale;
    Matrix& p = probs[static_cast<std::size_t>(h)];
    p = Matrix::Zero(t, t);
    for (Eigen::Index i = 0; i < t; ++i) {
      const double mx = s.row(i).head(i + 1).maxCoeff();
      double z = 0;
      for (Eigen::Index j = 0; j <= i; ++j) {
        p(i, j) = std::exp(s(i, j) - mx);
        z += p(i, j);
      }
      p.row(i).head(i + 1) /= z;
    }
    out.middleCols(h * dh, dh).noalias() = p * v;
  }
  return push(std::move(out), needs(qkv), [qkv, heads, d, dh, scale, probs](Graph& g, int self) {
    const Matrix& dout = g.nodes_[self].grad;
    const Matrix& in = g.value(qkv);
    auto& gin = g.grad_of(qkv.id);
    for (int h = 0; h < heads; ++h) {
      const Matrix& p = probs[static_cast<std::size_t>(h)];
      auto q = in.middleCols(h * dh, dh);
      auto k = in.middleCols(d + h * dh, dh);
      auto v = in.middleCols(2 * d + h * dh, dh);
      auto dO = dout.middleCols(h * dh, dh);
      Matrix dp = dO * v.transpose();
      gin.middleCols(2 * d + h * dh, dh).noalias() += p.transpose() * dO;
      Matrix ds = p.cwiseProduct(dp);
      Eigen::VectorXd rowdot = ds.rowwise().sum();
      ds -= (p.array().colwise() * rowdot.array()).matrix();
      ds *= scale;
      gin.middleCols(h * dh, dh).noalias() += ds * k;
      gin.middleCols(d + h * dh, dh).noalias() += ds.transpose() * q;
    }
  });
}

Var Graph::gru_step(Var x, Var h, Var wx, Var wh, Var bx, Var bh) {
  const Matrix& xv = value(x);
  const Matrix& hv = value(h);
  const auto hid = hv.rows();
  require(xv.cols() == 1 && hv.cols() == 1, "gru_step expects column vectors");
  require(value(wx).rows() == 3 * hid && value(wx).cols() == xv.rows(), "gru_step Wx shape");
  require(value(wh).rows() == 3 * hid && value(wh).cols() == hid, "gru_step Wh shape");
  Matrix gx = value(wx) * xv + value(bx);
  Matrix gh = value(wh) * hv + value(bh);
  Matrix r = (gx.topRows(hid) + gh.topRows(hid)).unaryExpr([](double v) { return sigmoid_scalar(v); });
  Matrix z = (gx.middleRows(hid, hid) + gh.middleRows(hid, hid)).unaryExpr([](double v) { return sigmoid_scalar(v); });
  Matrix ghn = gh.bottomRows(hid);
  Matrix n = (gx.bottomRows(hid) + r.cwiseProduct(ghn)).array().tanh().matrix();
  Matrix out = (1.0 - z.array()).matrix().cwiseProduct(n) + z.cwiseProduct(hv);
  const bool any = needs(x) || needs(h) || needs(wx) || needs(wh) || needs(bx) || needs(bh);
  return push(std::move(out), any, [=](Graph& g, int self) {
    const Matrix& dout = g.nodes_[self].grad;
    const Matrix& hv = g.value(h);
    Matrix dn = dout.cwiseProduct((1.0 - z.array()).matrix());
    Matrix dz = dout.cwiseProduct(hv - n);
    Matrix dn_pre = dn.cwiseProduct((1.0 - n.array().square()).matrix());
    Matrix dr = dn_pre.cwiseProduct(ghn);
    Matrix dr_pre = dr.cwiseProduct((r.array() * (1.0 - r.array())).matrix());
    Matrix dz_pre = dz.cwiseProduct((z.array() * (1.0 - z.array())).matrix());
    Matrix dgx(3 * hid, 1), dgh(3 * hid, 1);
    dgx << dr_pre, dz_pre, dn_pre;
    dgh << dr_pre, dz_pre, dn_pre.cwiseProduct(r);
    if (g.needs(wx)) g.grad_of(wx.id).noalias() += dgx * g.value(x).transpose();
    if (g.needs(x)) g.grad_of(x.id).noalias() += g.value(wx).transpose() * dgx;
    if (g.needs(bx)) g.grad_of(bx.id) += dgx;
    if (g.needs(wh)) g.grad_of(wh.id).noalias() += dgh * hv.transpose();
    if (g.needs(bh)) g.grad_of(bh.id) += dgh;
    if (g.needs(h)) {
      auto& gh = g.grad_of(h.id);
      gh.noalias() += g.value(wh).transpose() * dgh;
      gh += dout.cwiseProduct(z);
    }
  });
}

Var Graph::euclidean(Var a, Var b, double eps) {
  require(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), "euclidean shape mismatch");
  Matrix diff = value(a) - value(b);
  Matrix out(1, 1);
  out(0, 0) = std::sqrt(diff.squaredNorm() + eps);
  const double dist = out(0, 0);
  return push(std::move(out), needs(a) || needs(b), [a, b, diff, dist](Graph& g, int self) {
    const double d = g.nodes_[self].grad(0, 0);
    if (g.needs(a)) g.grad_of(a.id) += diff * (d / dist);
    if (g.needs(b)) g.grad_of(b.id) -= diff * (d / dist);
  });
}

Var Graph::log_softmax_pick(Var logits, std::span<const TokenId> targets) {
  const Matrix& x = value(logits);
  require(static_cast<std::size_t>(x.rows()) == targets.size(), "log_softmax_pick: one target per row");
  Matrix out(x.rows(), 1);
  Matrix probs(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    require(targets[static_cast<std::size_t>(r)] >= 0 && targets[static_cast<std::size_t>(r)] < x.cols(), "target out of range");
    const double mx = x.row(r).maxCoeff();
    probs.row(r) = (x.row(r).array() - mx).exp();
    const double z = probs.row(r).sum();
    probs.row(r) /= z;
    out(r, 0) = x(r, targets[static_cast<std::size_t>(r)]) - mx - std::log(z);
  }
  std::vector<TokenId> tg(targets.begin(), targets.end());
  return push(std::move(out), needs(logits), [logits, probs, tg](Graph& g, int self) {
    const Matrix& d = g.nodes_[self].grad;
    auto& gl = g.grad_of(logits.id);
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
      gl.row(r) -= probs.row(r) * d(r, 0);
      gl(r, tg[static_cast<std::size_t>(r)]) += d(r, 0);
    }
  });
}

Var Graph::log_softmax(Var column) {
  const Matrix& x = value(column);
  require(x.cols() == 1, "log_softmax expects a column");
  const double mx = x.maxCoeff();
  const double lse = mx + std::log((x.array() - mx).exp().sum());
  Matrix out = (x.array() - lse).matrix();
  return push(out, needs(column), [column](Graph& g, int self) {
    const auto& n = g.nodes_[self];
    Matrix p = n.value.array().exp().matrix();
    g.grad_of(column.id) += n.grad - p * n.grad.sum();
  });
}

Var Graph::logsumexp(Var column) {
  const Matrix& x = value(column);
  require(x.cols() == 1 && x.rows() > 0, "logsumexp expects a non-empty column");
  const double mx = x.maxCoeff();
  Matrix out(1, 1);
  out(0, 0) = mx + std::log((x.array() - mx).exp().sum());
  const double lse = out(0, 0);
  return push(std::move(out), needs(column), [column, lse](Graph& g, int self) {
    Matrix p = (g.value(column).array() - lse).exp().matrix();
    g.grad_of(column.id) += p * g.nodes_[self].grad(0, 0);
  });
}

void Graph::backward(Var loss, std::initializer_list<Gradients*> sinks) {
  backward(loss, std::span<Gradients* const>(sinks.begin(), sinks.size()));
}

void Graph::backward(Var loss, std::span<Gradients* const> sinks) {
  require(value(loss).size() == 1, "backward expects a scalar loss");
  std::unordered_map<const ParameterSet*, Gradients*> by_set;
  for (auto* s : sinks) by_set[&s->params()] = s;
  grad_of(loss.id)(0, 0) += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.set) {
      auto it = by_set.find(n.set);
      if (it != by_set.end()) {
        auto& sink = (*it->second)[n.param_index];
        if (n.is_embed) {
          for (std::size_t r = 0; r < n.ids.size(); ++r) sink.row(n.ids[r]) += n.grad.row(static_cast<Eigen::Index>(r));
        } else {
          sink += n.grad;
        }
      }
      continue;
    }
    if (n.back) n.back(*this, i);
  }
}

// ---------------------------------------------------------------- optimizer

Adam::Adam(ParameterSet& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
    v_.push_back(Matrix::Zero(params.value(i).rows(), params.value(i).cols()));
  }
}

void Adam::step(Gradients grads) {
  if (cfg_.clip_norm > 0) {
    const double norm = std::sqrt(grads.squared_norm());
    if (norm > cfg_.clip_norm) grads.scale(cfg_.clip_norm / norm);
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_->size(); ++i) {
    auto& p = params_->value(i);
    const auto& g = grads[i];
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    if (cfg_.weight_decay > 0 && p.rows() > 1 && p.cols() > 1) p *= (1.0 - cfg_.lr * cfg_.weight_decay);
    p.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

}  // namespace flonet::nn
