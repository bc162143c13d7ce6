#include "gemm.hpp"

#include <Eigen/Core>

namespace dgcn::detail {

namespace {
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T, typename L, typename R>
void assign(MutMap<T>& out, const L& lhs, const R& rhs, T alpha, T beta) {
  if (beta == T(0)) {
    out.noalias() = alpha * (lhs * rhs);
  } else {
    if (beta != T(1)) out *= beta;
    out.noalias() += alpha * (lhs * rhs);
  }
}
}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha, const T* a,
          const T* b, T beta, T* c) {
  using Index = Eigen::Index;
  MutMap<T> out(c, static_cast<Index>(m), static_cast<Index>(n));
  if (k == 0) {
    out *= beta;
    return;
  }
  const Index mi = static_cast<Index>(m), ni = static_cast<Index>(n), ki = static_cast<Index>(k);
  if (!trans_a && !trans_b) {
    assign(out, ConstMap<T>(a, mi, ki), ConstMap<T>(b, ki, ni), alpha, beta);
  } else if (trans_a && !trans_b) {
    assign(out, ConstMap<T>(a, ki, mi).transpose(), ConstMap<T>(b, ki, ni), alpha, beta);
  } else if (!trans_a && trans_b) {
    assign(out, ConstMap<T>(a, mi, ki), ConstMap<T>(b, ni, ki).transpose(), alpha, beta);
  } else {
    assign(out, ConstMap<T>(a, ki, mi).transpose(), ConstMap<T>(b, ni, ki).transpose(), alpha, beta);
  }
}

template void gemm<float>(bool, bool, std::size_t, std::size_t, std::size_t, float, const float*, const float*,
                          float, float*);
template void gemm<double>(bool, bool, std::size_t, std::size_t, std::size_t, double, const double*,
                           const double*, double, double*);

}  // namespace dgcn::detail
