#include <benchmark/benchmark.h>

#include <random>

#include "qpkam/cocycle.hpp"
#include "qpkam/fourier.hpp"

using namespace qpkam;

namespace {

MatrixSeries denseSeries(int radius, double amp) {
  std::mt19937_64 rng(1234);
  std::uniform_real_distribution<double> u(-amp, amp);
  MatrixSeries s(1, true);
  for (int k = -radius; k <= radius; ++k) {
    MultiIndex m{k};
    s.set(m, Mat2(u(rng), u(rng), u(rng), -0.0));
  }
  return s.realPart();
}

}  // namespace

static void BM_SeriesProduct(benchmark::State& state) {
  MatrixSeries a = denseSeries((int)state.range(0), 0.1);
  MatrixSeries b = denseSeries((int)state.range(0), 0.1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(product(a, b));
  }
}
BENCHMARK(BM_SeriesProduct)->Arg(8)->Arg(32)->Arg(128);

static void BM_SeriesExp(benchmark::State& state) {
  MatrixSeries a = denseSeries((int)state.range(0), 0.01);
  GevreyParams g{0.5, 0.5};
  for (auto _ : state) {
    benchmark::DoNotOptimize(seriesExp(a, g, 1e-12, 4 * state.range(0)));
  }
}
BENCHMARK(BM_SeriesExp)->Arg(8)->Arg(32);

static void BM_RotationNumber(benchmark::State& state) {
  MatrixSeries a = denseSeries(4, 0.05) + constMatSeries(1, true, rotation(0.31));
  CocycleMap map({0.61803398874989484820}, a);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rotationNumber(map, {0.0}, state.range(0)));
  }
}
BENCHMARK(BM_RotationNumber)->Arg(10000)->Arg(100000);

BENCHMARK_MAIN();
