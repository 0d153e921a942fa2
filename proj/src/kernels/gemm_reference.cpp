#include "layerpool/kernels.hpp"

namespace layerpool::kernels::reference {

void gemm_nn(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
}

void gemm_tn(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      out[i * n + j] = acc;
    }
}

void gemm_nt(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      Real acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      out[i * n + j] = acc;
    }
}

}  // namespace layerpool::kernels::reference
