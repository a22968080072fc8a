#include <doctest.h>

#include <cmath>
#include <functional>

#include "flonet/error.hpp"
#include "flonet/nn.hpp"

using namespace flonet;
using namespace flonet::nn;

namespace {

// Builds a scalar loss from the parameters of `ps`.
using LossFn = std::function<Var(Graph&, const ParameterSet&)>;

// Max relative error between backprop and central differences.
double gradient_error(ParameterSet& ps, const LossFn& f, double h = 1e-5) {
  Gradients grads(ps);
  {
    Graph g;
    g.backward(f(g, ps), {&grads});
  }
  double worst = 0;
  for (std::size_t p = 0; p < ps.size(); ++p) {
    for (Eigen::Index i = 0; i < ps.value(p).size(); ++i) {
      double& x = ps.value(p).data()[i];
      const double keep = x;
      x = keep + h;
      double up, down;
      {
        Graph g;
        up = g.scalar(f(g, ps));
      }
      x = keep - h;
      {
        Graph g;
        down = g.scalar(f(g, ps));
      }
      x = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = grads[p].data()[i];
      const double err = std::abs(numeric - analytic) / std::max(1.0, std::abs(numeric) + std::abs(analytic));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

// Fixed random weights so every output element contributes differently.
Var weigh(Graph& g, Var x, unsigned seed) {
  std::mt19937_64 rng(seed);
  const auto& v = g.value(x);
  return g.sum(g.hadamard(x, g.input(uniform_matrix(v.rows(), v.cols(), 1.0, rng))));
}

struct Fixture {
  std::mt19937_64 rng{42};
  ParameterSet ps;
  std::size_t a, b, c, row, col, col2, emb, wqkv;
  Fixture() {
    a = ps.add("a", uniform_matrix(3, 4, 1.0, rng));
    b = ps.add("b", uniform_matrix(4, 2, 1.0, rng));
    c = ps.add("c", uniform_matrix(3, 4, 1.0, rng));
    row = ps.add("row", uniform_matrix(1, 4, 1.0, rng));
    col = ps.add("col", uniform_matrix(5, 1, 1.0, rng));
    col2 = ps.add("col2", uniform_matrix(5, 1, 1.0, rng));
    emb = ps.add("emb", uniform_matrix(6, 4, 1.0, rng));
    wqkv = ps.add("wqkv", uniform_matrix(4, 12, 1.0, rng));
  }
};

}  // namespace

TEST_CASE("elementwise and matrix ops match finite differences") {
  Fixture fx;
  auto& ps = fx.ps;
  const std::vector<std::pair<const char*, LossFn>> cases = {
      {"matmul", [&](Graph& g, const ParameterSet& p) { return weigh(g, g.matmul(g.param(p, fx.a), g.param(p, fx.b)), 1); }},
      {"matmul_nt", [&](Graph& g, const ParameterSet& p) { return weigh(g, g.matmul_nt(g.param(p, fx.a), g.param(p, fx.c)), 2); }},
      {"add/sub", [&](Graph& g, const ParameterSet& p) {
         return weigh(g, g.sub(g.add(g.param(p, fx.a), g.param(p, fx.c)), g.scale(g.param(p, fx.c), 3.0)), 3);
       }},
      {"hadamard", [&](Graph& g, const ParameterSet& p) { return weigh(g, g.hadamard(g.param(p, fx.a), g.param(p, fx.c)), 4); }},
      {"transpose", [&](Graph& g, const ParameterSet& p) { return weigh(g, g.transpose(g.param(p, fx.a)), 5); }},
      {"add_row", [&](Graph& g, const ParameterSet& p) { return weigh(g, g.add_row(g.param(p, fx.a), g.param(p, fx.row)), 6); }},
      {"tanh", [&](Graph& g, const ParameterSet& p) { return weigh(g, g.tanh(g.param(p, fx.a)), 7); }},
      {"sigmoid", [&](Graph& g, const ParameterSet& p) { return weigh(g, g.sigmoid(g.param(p, fx.a)), 8); }},
      {"gelu", [&](Graph& g, const ParameterSet& p) { return weigh(g, g.gelu(g.param(p, fx.a)), 9); }},
      {"relu", [&](Graph& g, const ParameterSet& p) { return weigh(g, g.relu(g.add(g.param(p, fx.a), g.param(p, fx.a))), 10); }},
      {"rows", [&](Graph& g, const ParameterSet& p) {
         const std::vector<int> idx{2, 0, 2};
         return weigh(g, g.rows(g.param(p, fx.a), idx), 11);
       }},
      {"cols", [&](Graph& g, const ParameterSet& p) { return weigh(g, g.cols(g.param(p, fx.a), 1, 2), 12); }},
      {"stack", [&](Graph& g, const ParameterSet& p) {
         const auto x = g.param(p, fx.a);
         const std::vector<Var> s{g.sum(x), g.sum(g.tanh(x))};
         return weigh(g, g.stack(s), 13);
       }},
      {"embed", [&](Graph& g, const ParameterSet& p) {
         const std::vector<TokenId> ids{3, 1, 3, 5};
         return weigh(g, g.embed(p, fx.emb, ids), 14);
       }},
      {"layer_norm", [&](Graph& g, const ParameterSet& p) {
         return weigh(g, g.layer_norm(g.param(p, fx.a), g.param(p, fx.row), g.tanh(g.param(p, fx.row))), 15);
       }},
      {"causal_attention", [&](Graph& g, const ParameterSet& p) {
         // T = 3, d = 4, two heads
         return weigh(g, g.causal_attention(g.matmul(g.param(p, fx.a), g.param(p, fx.wqkv)), 2), 16);
       }},
      {"euclidean", [&](Graph& g, const ParameterSet& p) { return g.euclidean(g.param(p, fx.col), g.param(p, fx.col2)); }},
      {"log_softmax_pick", [&](Graph& g, const ParameterSet& p) {
         const std::vector<TokenId> t{0, 3, 2};
         return weigh(g, g.log_softmax_pick(g.param(p, fx.a), t), 17);
       }},
      {"log_softmax", [&](Graph& g, const ParameterSet& p) { return weigh(g, g.log_softmax(g.param(p, fx.col)), 18); }},
      {"logsumexp", [&](Graph& g, const ParameterSet& p) { return g.logsumexp(g.param(p, fx.col)); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    CHECK(gradient_error(ps, fn) < 1e-6);
  }
}

TEST_CASE("gru step matches finite differences") {
  std::mt19937_64 rng(3);
  ParameterSet ps;
  const int n = 3, h = 2;
  const auto x = ps.add("x", uniform_matrix(n, 1, 1.0, rng));
  const auto h0 = ps.add("h", uniform_matrix(h, 1, 1.0, rng));
  const auto wx = ps.add("wx", uniform_matrix(3 * h, n, 1.0, rng));
  const auto wh = ps.add("wh", uniform_matrix(3 * h, h, 1.0, rng));
  const auto bx = ps.add("bx", uniform_matrix(3 * h, 1, 1.0, rng));
  const auto bh = ps.add("bh", uniform_matrix(3 * h, 1, 1.0, rng));
  const LossFn f = [&](Graph& g, const ParameterSet& p) {
    auto s = g.gru_step(g.param(p, x), g.param(p, h0), g.param(p, wx), g.param(p, wh), g.param(p, bx), g.param(p, bh));
    s = g.gru_step(g.param(p, x), s, g.param(p, wx), g.param(p, wh), g.param(p, bx), g.param(p, bh));
    return weigh(g, s, 21);
  };
  CHECK(gradient_error(ps, f) < 1e-6);
}

TEST_CASE("forward values") {
  Graph g;
  Matrix col(3, 1);
  col << 1, 2, 3;
  const auto c = g.input(col);
  const double lse = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0));
  CHECK(g.scalar(g.logsumexp(c)) == doctest::Approx(lse).epsilon(1e-12));
  CHECK(g.value(g.log_softmax(c))(2, 0) == doctest::Approx(3.0 - lse).epsilon(1e-12));
  Matrix a(2, 1), b(2, 1);
  a << 0, 0;
  b << 3, 4;
  CHECK(g.scalar(g.euclidean(g.input(a), g.input(b), 0.0)) == doctest::Approx(5.0));
  Matrix logits = Matrix::Zero(2, 4);
  const std::vector<TokenId> t{1, 3};
  const auto lp = g.value(g.log_softmax_pick(g.input(logits), t));
  CHECK(lp(0, 0) == doctest::Approx(-std::log(4.0)));
  CHECK_THROWS_AS(g.matmul(g.input(Matrix::Ones(2, 3)), g.input(Matrix::Ones(2, 3))), ValidationError);
}

TEST_CASE("frozen parameter sets get no gradient") {
  std::mt19937_64 rng(1);
  ParameterSet live, frozen;
  const auto a = live.add("a", uniform_matrix(2, 2, 1.0, rng));
  const auto b = frozen.add("b", uniform_matrix(2, 2, 1.0, rng));
  Gradients ga(live);
  Graph g;
  g.backward(g.sum(g.matmul(g.param(live, a), g.param(frozen, b))), {&ga});
  CHECK(ga[a].squaredNorm() > 0);
}

TEST_CASE("parameter set json round trip and shape checks") {
  std::mt19937_64 rng(1);
  ParameterSet ps;
  ps.add("w", uniform_matrix(2, 3, 1.0, rng));
  ps.add("b", uniform_matrix(1, 3, 1.0, rng));
  CHECK(ps.num_scalars() == 9);
  CHECK(ps.find("b") == 1u);
  CHECK_FALSE(ps.find("zz"));
  ParameterSet other;
  other.add("w", Matrix::Zero(2, 3));
  other.add("b", Matrix::Zero(1, 3));
  other.load_json(ps.to_json());
  CHECK(other.value(0) == ps.value(0));
  CHECK(other.value(1) == ps.value(1));
  ParameterSet wrong;
  wrong.add("w", Matrix::Zero(3, 2));
  wrong.add("b", Matrix::Zero(1, 3));
  CHECK_THROWS(wrong.load_json(ps.to_json()));
}

TEST_CASE("adam reduces a quadratic") {
  std::mt19937_64 rng(5);
  ParameterSet ps;
  const auto w = ps.add("w", uniform_matrix(3, 1, 2.0, rng));
  Adam opt(ps, {.lr = 0.1});
  auto loss = [&] {
    Graph g;
    const auto x = g.param(ps, w);
    return g.scalar(g.sum(g.hadamard(x, x)));
  };
  const double before = loss();
  for (int i = 0; i < 100; ++i) {
    Gradients gr(ps);
    Graph g;
    const auto x = g.param(ps, w);
    g.backward(g.sum(g.hadamard(x, x)), {&gr});
    opt.step(gr);
  }
  CHECK(loss() < 0.01 * before);
}
