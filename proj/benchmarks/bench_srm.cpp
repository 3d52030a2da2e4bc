#include "factorfit/random.hpp"
#include "factorfit/srm.hpp"

#include <benchmark/benchmark.h>

using namespace factorfit;

// One subject's local E-step term plus the shared K x K solve.
static void BM_EStep(benchmark::State& state) {
  const Index v = state.range(0), t = state.range(1), k = state.range(2);
  srm::SrmConfig cfg;
  cfg.k = static_cast<int>(k);
  const Matrix w = srm::init_subject(v, cfg, 0);
  const Matrix x = Rng(4).normal_matrix(v, t);
  const Matrix sigma = Matrix::Identity(k, k);
  for (auto _ : state) {
    const Matrix reduced = srm::e_step_local(w, 0.7, x);
    benchmark::DoNotOptimize(srm::e_step_global(reduced, sigma, 1.0 / 0.7));
  }
  state.counters["flops"] = benchmark::Counter(static_cast<double>(2 * v * t * k) * state.iterations(),
                                               benchmark::Counter::kIsRate);
}
BENCHMARK(BM_EStep)->Args({3000, 2201, 60})->Args({50000, 50, 10})->Unit(benchmark::kMillisecond);

static void BM_MStepSubject(benchmark::State& state) {
  const Index v = state.range(0), t = state.range(1), k = state.range(2);
  Rng rng(5);
  const Matrix x = rng.normal_matrix(v, t);
  const Matrix s = rng.normal_matrix(k, t);
  for (auto _ : state) benchmark::DoNotOptimize(srm::m_step_subject(x, s, 3.0));
}
BENCHMARK(BM_MStepSubject)->Args({3000, 2201, 60})->Unit(benchmark::kMillisecond);

static void BM_FitIteration(benchmark::State& state) {
  std::vector<SubjectData> subjects;
  for (int i = 0; i < 4; ++i)
    subjects.push_back({"s" + std::to_string(i), Rng::stream(6, {std::uint64_t(i)}).normal_matrix(2000, 300), {}});
  srm::SrmConfig cfg;
  cfg.k = 30;
  cfg.iterations = 1;
  auto comm = comm::make_serial();
  for (auto _ : state) benchmark::DoNotOptimize(srm::fit(subjects, cfg, *comm));
}
BENCHMARK(BM_FitIteration)->Unit(benchmark::kMillisecond);
