#include <benchmark/benchmark.h>

#include <random>

#include "rgm/kernels.hpp"

using rgm::Matrix;
namespace k = rgm::kernels;

static Matrix filled(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (double& v : m.values()) v = n(rng);
  return m;
}

// Square-ish shapes at the sizes the trainer sees (batch x width) and larger.
template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&)>
static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = filled(n, n, 1), b = filled(n, n, 2);
  Matrix out(n, n);
  for (auto _ : state) {
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <void (*Kernel)(const Matrix&, const Matrix&, Matrix&)>
static void BM_MatmulTn(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = filled(n, n, 3), b = filled(n, n, 4);
  Matrix out(n, n);
  for (auto _ : state) {
    Kernel(a, b, out);
    benchmark::DoNotOptimize(out.values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

template <void (*Kernel)(const Matrix&, Matrix&)>
static void BM_ColumnSums(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = filled(n * 16, n, 5);
  Matrix out(1, n);
  for (auto _ : state) {
    Kernel(a, out);
    benchmark::DoNotOptimize(out.values().data());
  }
}

BENCHMARK(BM_Matmul<k::serial::matmul>)->Name("matmul/serial")->RangeMultiplier(4)->Range(16, 512);
BENCHMARK(BM_Matmul<k::parallel::matmul>)->Name("matmul/parallel")->RangeMultiplier(4)->Range(16, 512)->UseRealTime();
BENCHMARK(BM_MatmulTn<k::serial::matmul_tn>)->Name("matmul_tn/serial")->RangeMultiplier(4)->Range(16, 512);
BENCHMARK(BM_MatmulTn<k::parallel::matmul_tn>)->Name("matmul_tn/parallel")->RangeMultiplier(4)->Range(16, 512)->UseRealTime();
BENCHMARK(BM_ColumnSums<k::serial::column_sums>)->Name("column_sums/serial")->Range(64, 1024);
BENCHMARK(BM_ColumnSums<k::parallel::column_sums>)->Name("column_sums/parallel")->Range(64, 1024)->UseRealTime();

BENCHMARK_MAIN();
