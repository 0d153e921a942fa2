#pragma once

#include <cstddef>
#include <span>

#include "layerpool/tensor.hpp"

// Dense GEMM kernels. All operands are row-major; `out` is overwritten.
//
// Every entry out[i][j] is accumulated over the inner index in ascending
// order starting from zero, in both the parallel and the reference version,
// so the two agree bit for bit.
namespace layerpool::kernels {

// C[m x n] = A[m x k] * B[k x n]
void gemm_nn(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n);
// C[m x n] = A[k x m]^T * B[k x n]
void gemm_tn(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n);
// C[m x n] = A[m x k] * B[n x k]^T
void gemm_nt(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n);

/// Shape-checked convenience wrapper over gemm_nn.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Work below this many multiply-adds stays on the calling thread.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

namespace reference {

// Plain triple loops, serial. Kept as the oracle for the kernels above.
void gemm_nn(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const Real> a, std::span<const Real> b, std::span<Real> out,
             std::size_t m, std::size_t k, std::size_t n);
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace reference

}  // namespace layerpool::kernels
