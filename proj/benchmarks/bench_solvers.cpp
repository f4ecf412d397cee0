#include <benchmark/benchmark.h>

#include <random>

#include "consim/attribute.hpp"
#include "consim/factorize.hpp"
#include "consim/regress.hpp"

using namespace consim;

namespace {

Matrix uniform(Index rows, Index cols, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  return Matrix::NullaryExpr(rows, cols, [&] { return u(rng); });
}

// n patches x 64 features, the shape of one class at one layer.
void BM_Nnmf(benchmark::State& state) {
  const auto n = static_cast<Index>(state.range(0));
  const Matrix A = uniform(n, 10, 1, 0, 1) * uniform(10, 64, 2, 0, 1);
  FactorOptions opt;
  opt.max_iter = 100;
  opt.tol = 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(nnmf(A, 10, opt).recon_error);
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Nnmf)->Arg(400)->Arg(1600)->Unit(benchmark::kMillisecond);

void BM_SemiNmf(benchmark::State& state) {
  const auto n = static_cast<Index>(state.range(0));
  const Matrix A = uniform(n, 10, 3, 0, 1) * uniform(10, 64, 4, -1, 1);
  FactorOptions opt;
  opt.max_iter = 100;
  opt.tol = 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(semi_nmf(A, 10, opt).recon_error);
}
BENCHMARK(BM_SemiNmf)->Arg(400)->Unit(benchmark::kMillisecond);

void BM_NnlsRefit(benchmark::State& state) {
  const auto n = static_cast<Index>(state.range(0));
  const Matrix W = uniform(10, 64, 5, 0, 1);
  const Matrix A = uniform(n, 10, 6, 0, 1) * W + uniform(n, 64, 7, 0, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(nnls_refit(A, W).sum());
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_NnlsRefit)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_Lasso(benchmark::State& state) {
  const auto p = static_cast<Index>(state.range(0));
  const Matrix X = standardize(uniform(1000, p, 8, -1, 1)).values;
  const Vector y = X.leftCols(5).rowwise().sum() + uniform(1000, 1, 9, -0.5, 0.5);
  for (auto _ : state) benchmark::DoNotOptimize(lasso_cd(X, y, 0.1).weights.sum());
}
BENCHMARK(BM_Lasso)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_ConceptRegressor(benchmark::State& state) {
  const Matrix A = uniform(1000, 64, 10, 0, 1);
  const Matrix U = A.leftCols(10) * 2.0 + uniform(1000, 10, 11, 0, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(fit_concept_regressor(A, U).W_star.sum());
}
BENCHMARK(BM_ConceptRegressor)->Unit(benchmark::kMillisecond);

void BM_Cig(benchmark::State& state) {
  const Matrix U = uniform(800, 10, 12, 0, 1);
  const Matrix W = uniform(10, 64, 13, 0, 0.2);
  LinearHead head;
  head.weights = uniform(64, 100, 14, -1, 1);
  head.bias = uniform(1, 100, 15, -0.1, 0.1);
  CigOptions opt;
  opt.steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(concept_integrated_gradients(U, W, head, 3, opt).sum());
}
BENCHMARK(BM_Cig)->Arg(30)->Arg(300)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
