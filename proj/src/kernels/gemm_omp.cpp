#include <algorithm>

#include "layerpool/kernels.hpp"

namespace layerpool::kernels {

namespace {

void check_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + to_string(a.shape()) + " and " +
                     to_string(b.shape()));
  }
}

}  // namespace

void gemm_nn(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long i = 0; i < rows; ++i) {
    Real* c = out.data() + i * n;
    std::fill(c, c + n, 0.0);
    const Real* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real s = ai[p];
      const Real* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += s * bp[j];
    }
  }
}

void gemm_tn(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long i = 0; i < rows; ++i) {
    Real* c = out.data() + i * n;
    std::fill(c, c + n, 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const Real s = a[p * m + i];
      const Real* bp = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += s * bp[j];
    }
  }
}

void gemm_nt(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n) {
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k * n >= kParallelThreshold)
  for (long i = 0; i < rows; ++i) {
    const Real* ai = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* bj = b.data() + j * k;
      Real acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      out[i * n + j] = acc;
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matmul(a, b);
  Tensor out({a.rows(), b.cols()});
  gemm_nn(a.values(), b.values(), out.values(), a.rows(), a.cols(), b.cols());
  return out;
}

namespace reference {

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matmul(a, b);
  Tensor out({a.rows(), b.cols()});
  gemm_nn(a.values(), b.values(), out.values(), a.rows(), a.cols(), b.cols());
  return out;
}

}  // namespace reference

}  // namespace layerpool::kernels
