// Serial reference kernels against the OpenMP kernels at several thread counts.
// Run: fpanel_bench --benchmark_counters_tabular=true

#include "fpanel/fpca.hpp"
#include "fpanel/kernel.hpp"
#include "fpanel/parallel.hpp"
#include "fpanel/synth.hpp"

#include <benchmark/benchmark.h>

#include <map>

using namespace fpanel;

namespace {

constexpr std::size_t kGrid = 51;

struct Fixture {
  KlSample sample;
  Eigen::VectorXd grid;
  KernelSpec spec{KernelKind::Gaussian, 0.06};
  GridCurve mean;
  FpcaFit fit;

  explicit Fixture(std::size_t n) : sample(generate_kl(KlTruth::standard(), n, uniform_grid(kGrid))), grid(uniform_grid(kGrid)) {
    mean = smooth_mean(sample.data, spec, grid);
    PaceConfig cfg;
    cfg.mean_bandwidth = cfg.cov_bandwidth = BandwidthSetting::fixed(0.06);
    fit = fit_pace(sample.data, cfg);
  }
};

const Fixture& fixture(std::size_t n) {
  static std::map<std::size_t, Fixture> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, Fixture(n)).first;
  return it->second;
}

void MeanReference(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(reference::smooth_mean(f.sample.data, f.spec, f.grid));
}

void MeanParallel(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
  set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(smooth_mean(f.sample.data, f.spec, f.grid));
  set_num_threads(0);
}

void CovarianceReference(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(reference::smooth_covariance(f.sample.data, f.mean, f.spec, f.spec, f.grid));
}

void CovarianceParallel(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
  set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state) benchmark::DoNotOptimize(smooth_covariance(f.sample.data, f.mean, f.spec, f.spec, f.grid));
  set_num_threads(0);
}

void ScoresReference(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state)
    benchmark::DoNotOptimize(
        reference::conditional_scores(f.sample.data, f.fit.mean(), f.fit.eigen, f.fit.sigma2, f.fit.K));
}

void ScoresParallel(benchmark::State& state) {
  const Fixture& f = fixture(static_cast<std::size_t>(state.range(0)));
  set_num_threads(static_cast<int>(state.range(1)));
  for (auto _ : state)
    benchmark::DoNotOptimize(conditional_scores(f.sample.data, f.fit.mean(), f.fit.eigen, f.fit.sigma2, f.fit.K));
  set_num_threads(0);
}

void SerialArgs(benchmark::internal::Benchmark* b) {
  for (long n : {300, 1000}) b->Arg(n);
  b->Unit(benchmark::kMillisecond);
}

void ParallelArgs(benchmark::internal::Benchmark* b) {
  for (long n : {300, 1000})
    for (long t : {1, 2, 4, 8}) b->Args({n, t});
  b->ArgNames({"n", "threads"})->Unit(benchmark::kMillisecond)->UseRealTime();
}

}  // namespace

BENCHMARK(MeanReference)->Apply(SerialArgs);
BENCHMARK(MeanParallel)->Apply(ParallelArgs);
BENCHMARK(CovarianceReference)->Apply(SerialArgs);
BENCHMARK(CovarianceParallel)->Apply(ParallelArgs);
BENCHMARK(ScoresReference)->Apply(SerialArgs);
BENCHMARK(ScoresParallel)->Apply(ParallelArgs);

BENCHMARK_MAIN();
