#include <benchmark/benchmark.h>

#include <vector>

#include "layerpool/kernels.hpp"
#include "layerpool/rng.hpp"

using namespace layerpool;

namespace {

struct Operands {
  std::vector<Real> a, b, out;
};

Operands make(std::size_t m, std::size_t k, std::size_t n) {
  Rng rng(42);
  Operands o{std::vector<Real>(m * k), std::vector<Real>(k * n), std::vector<Real>(m * n)};
  for (Real& v : o.a) v = rng.normal(0.0, 1.0);
  for (Real& v : o.b) v = rng.normal(0.0, 1.0);
  return o;
}

template <auto Kernel>
void bench_gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  Operands o = make(m, k, n);
  for (auto _ : state) {
    Kernel(o.a, o.b, o.out, m, k, n);
    benchmark::DoNotOptimize(o.out.data());
    benchmark::ClobberMemory();
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * k * n));
}

// Shapes seen in the desk-scale encoder (S x H x 4H, S x F x H) and a larger square case.
void shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 32, 128})->Args({64, 64, 32})->Args({32, 32, 32})->Args({256, 256, 256});
}

}  // namespace

BENCHMARK(bench_gemm<kernels::gemm_nn>)->Name("gemm_nn/omp")->Apply(shapes);
BENCHMARK(bench_gemm<kernels::reference::gemm_nn>)->Name("gemm_nn/reference")->Apply(shapes);
BENCHMARK(bench_gemm<kernels::gemm_tn>)->Name("gemm_tn/omp")->Apply(shapes);
BENCHMARK(bench_gemm<kernels::reference::gemm_tn>)->Name("gemm_tn/reference")->Apply(shapes);
BENCHMARK(bench_gemm<kernels::gemm_nt>)->Name("gemm_nt/omp")->Apply(shapes);
BENCHMARK(bench_gemm<kernels::reference::gemm_nt>)->Name("gemm_nt/reference")->Apply(shapes);

BENCHMARK_MAIN();
