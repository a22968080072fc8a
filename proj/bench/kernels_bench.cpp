// Serial reference vs OpenMP kernels. Set OMP_NUM_THREADS to vary the team.
#include <random>

#include <benchmark/benchmark.h>

#include "flonet/generator.hpp"
#include "flonet/kernels.hpp"

using namespace flonet;
using kernels::Exec;

namespace {

Exec exec_of(const benchmark::State& s) { return s.range(0) ? Exec::parallel : Exec::serial; }

void BM_neg_euclidean(benchmark::State& state) {
  const Eigen::MatrixXd keys = Eigen::MatrixXd::Random(state.range(1), 96);
  const Eigen::VectorXd q = Eigen::VectorXd::Random(96);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::neg_euclidean(keys, q, exec_of(state)));
}
BENCHMARK(BM_neg_euclidean)->ArgsProduct({{0, 1}, {64, 4096}});

void BM_cosine(benchmark::State& state) {
  std::mt19937 rng(1);
  auto vec = [&] {
    kernels::SparseVec v;
    for (int t = 0; t < 2000; t += 1 + static_cast<int>(rng() % 40)) v.push_back({t, 1.0 + rng() % 5});
    return v;
  };
  std::vector<kernels::SparseVec> docs;
  for (int i = 0; i < state.range(1); ++i) docs.push_back(vec());
  const auto q = vec();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::cosine(docs, q, exec_of(state)));
}
BENCHMARK(BM_cosine)->ArgsProduct({{0, 1}, {64, 4096}});

void BM_bleu_scan(benchmark::State& state) {
  std::mt19937 rng(2);
  auto sentence = [&] {
    Tokens t;
    for (int i = 0; i < 12; ++i) t.push_back("w" + std::to_string(rng() % 30));
    return t;
  };
  std::vector<Tokens> cands;
  for (int i = 0; i < state.range(1); ++i) cands.push_back(sentence());
  const auto ref = sentence();
  for (auto _ : state) benchmark::DoNotOptimize(kernels::bleu_scan(cands, ref, exec_of(state)));
}
BENCHMARK(BM_bleu_scan)->ArgsProduct({{0, 1}, {64, 2048}});

void BM_accumulate_gradients(benchmark::State& state) {
  Vocab v({special::begin, special::sep, special::agent, special::user, special::end, special::unk, special::pad},
          special::unk);
  for (const auto* w : {"is", "it", "plugged", "in", "the", "light", "on", "yes", "no"}) v.add(w);
  TransformerConfig c;
  c.d_model = 32;
  c.heads = 4;
  c.max_positions = 64;
  c.max_response = 16;
  const TransformerGenerator m(v, c, 1);
  const GeneratorExample ex{DialogHistory({{Speaker::user, "is it on", std::nullopt}}), "is it plugged in",
                            "is it plugged in"};
  for (auto _ : state) {
    std::vector<nn::Gradients> out;
    out.emplace_back(m.params());
    benchmark::DoNotOptimize(kernels::accumulate_gradients(
        16, 4, out,
        [&](std::size_t, std::vector<nn::Gradients>& sinks) {
          return generator_example_loss(m, ex, "the light is on", 1.0, &sinks[0]);
        },
        exec_of(state)));
  }
}
BENCHMARK(BM_accumulate_gradients)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
