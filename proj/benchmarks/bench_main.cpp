#include <benchmark/benchmark.h>

#include <random>

#include "lumia/bias.hpp"
#include "lumia/metrics.hpp"
#include "lumia/probe.hpp"
#include "lumia/toy_lm.hpp"

using namespace lumia;

static void BM_AucRank(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 g(1);
  std::normal_distribution<double> nd;
  std::vector<double> s(n);
  std::vector<std::uint8_t> l(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = nd(g);
    l[i] = static_cast<std::uint8_t>(i % 2);
  }
  for (auto _ : state) benchmark::DoNotOptimize(metrics::auc_rank(s, l));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_AucRank)->RangeMultiplier(8)->Range(64, 1 << 18)->Complexity(benchmark::oNLogN);

static void BM_ProbeGrad(benchmark::State& state) {
  const std::size_t dim = static_cast<std::size_t>(state.range(0));
  const std::vector<std::size_t> hidden{64};
  const auto model = probe::init_probe(dim, hidden, 3);
  probe::Batch b{Eigen::MatrixXd::Random(32, static_cast<Eigen::Index>(dim)), Eigen::VectorXd::Zero(32)};
  for (Eigen::Index i = 0; i < 32; i += 2) b.y(i) = 1.0;
  for (auto _ : state) benchmark::DoNotOptimize(probe::probe_grad(model, b));
}
BENCHMARK(BM_ProbeGrad)->Arg(64)->Arg(768)->Arg(4096);

static void BM_ToyForward(benchmark::State& state) {
  toy::ToyLMConfig cfg;
  cfg.seed = 5;
  const auto params = toy::init_params<float>(cfg);
  std::vector<std::uint32_t> tokens(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<std::uint32_t>(i % cfg.vocab_size);
  for (auto _ : state) benchmark::DoNotOptimize(toy::forward_with_hooks(params, cfg, tokens));
}
BENCHMARK(BM_ToyForward)->Arg(8)->Arg(32);

static void BM_Ssim(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 g(7);
  auto a = bias::make_image(side, side);
  auto b = bias::make_image(side, side);
  for (auto& p : a.pixels) p = static_cast<std::uint8_t>(g());
  for (auto& p : b.pixels) p = static_cast<std::uint8_t>(g());
  for (auto _ : state) benchmark::DoNotOptimize(bias::ssim(a, b));
}
BENCHMARK(BM_Ssim)->Arg(32)->Arg(128);
BENCHMARK_MAIN();
