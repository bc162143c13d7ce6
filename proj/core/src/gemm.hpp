#pragma once

// Private GEMM kernel shared by matmul and the convolution ops.

#include <cstddef>

namespace dgcn::detail {

/// C[m x n] = alpha * op(A) * op(B) + beta * C, all row-major and contiguous.
/// op(A) is m x k (A stored k x m when trans_a), op(B) is k x n (B stored n x k when trans_b).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c);

}  // namespace dgcn::detail
