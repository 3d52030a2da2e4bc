#include "factorfit/htfa.hpp"
#include "factorfit/kernels.hpp"
#include "factorfit/random.hpp"

#include <benchmark/benchmark.h>

using namespace factorfit;

namespace {

Matrix grid(Index nx, Index ny, Index nz) {
  Matrix pos(nx * ny * nz, 3);
  Index r = 0;
  for (Index z = 0; z < nz; ++z)
    for (Index y = 0; y < ny; ++y)
      for (Index x = 0; x < nx; ++x, ++r) pos.row(r) << double(x), double(y), double(z);
  return pos;
}

struct Factors {
  Matrix centers;
  Vector widths;
};

Factors random_factors(Index k) {
  Rng rng(7);
  Factors f{Matrix(k, 3), Vector(k)};
  for (Index i = 0; i < k; ++i) {
    f.centers.row(i) << 40 * rng.uniform(), 48 * rng.uniform(), 40 * rng.uniform();
    f.widths(i) = 4 + 20 * rng.uniform();
  }
  return f;
}

}  // namespace

static void BM_RbfCached(benchmark::State& state) {
  const kernels::VoxelGrid g(grid(40, 48, 40));
  const auto f = random_factors(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::rbf_factor_matrix(f.centers, f.widths, g));
}
BENCHMARK(BM_RbfCached)->Arg(10)->Arg(60)->Unit(benchmark::kMillisecond);

static void BM_RbfDirect(benchmark::State& state) {
  const Matrix pos = grid(40, 48, 40);
  const auto f = random_factors(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::rbf_factor_matrix_direct(f.centers, f.widths, pos));
}
BENCHMARK(BM_RbfDirect)->Arg(10)->Arg(60)->Unit(benchmark::kMillisecond);

static void BM_GlobalStep(benchmark::State& state) {
  const Index k = state.range(0);
  const int n = static_cast<int>(state.range(1));
  Rng rng(8);
  htfa::GlobalTemplate t;
  t.centers = rng.normal_matrix(k, 3);
  t.widths = Vector::Constant(k, 3.0);
  t.width_var = Vector::Constant(k, 0.5);
  t.center_cov.assign(static_cast<std::size_t>(k), Eigen::Matrix3d::Identity());
  std::vector<Matrix> centers(static_cast<std::size_t>(n), t.centers);
  std::vector<Vector> widths(static_cast<std::size_t>(n), t.widths);
  for (auto _ : state) benchmark::DoNotOptimize(htfa::global_step(centers, widths, t));
}
BENCHMARK(BM_GlobalStep)->Args({60, 10})->Args({60, 1000});
