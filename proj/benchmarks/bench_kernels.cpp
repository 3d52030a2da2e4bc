#include "factorfit/kernels.hpp"
#include "factorfit/random.hpp"

#include <benchmark/benchmark.h>

using namespace factorfit;

static void BM_PolarOrthogonal(benchmark::State& state) {
  const Index v = state.range(0), k = state.range(1);
  const Matrix a = Rng(1).normal_matrix(v, k);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::polar_orthogonal(a));
  state.SetItemsProcessed(state.iterations() * v * k);
}
BENCHMARK(BM_PolarOrthogonal)->Args({3000, 60})->Args({20000, 60})->Unit(benchmark::kMillisecond);

static void BM_SpdInverse(benchmark::State& state) {
  const Index k = state.range(0);
  const Matrix r = Rng(2).normal_matrix(k, k);
  const Matrix a = kernels::add_diag(r * r.transpose(), static_cast<double>(k));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::spd_inverse(a));
}
BENCHMARK(BM_SpdInverse)->Arg(10)->Arg(60)->Arg(200);

static void BM_TraceAtA(benchmark::State& state) {
  const Matrix a = Rng(3).normal_matrix(state.range(0), 500);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::trace_ata(a));
  state.SetBytesProcessed(state.iterations() * a.size() * 8);
}
BENCHMARK(BM_TraceAtA)->Arg(3000)->Arg(20000);
