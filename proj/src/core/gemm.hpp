#pragma once

#include <cstddef>

#include <Eigen/Core>

namespace xscene::detail {

/// c[m,n] (+)= op(a) * op(b) on row-major buffers. `a` is [m,k] (or [k,m]
/// when trans_a), `b` is [k,n] (or [n,k] when trans_b).
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  const auto mi = static_cast<Eigen::Index>(m);
  const auto ni = static_cast<Eigen::Index>(n);
  const auto ki = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> cm(c, mi, ni);
  if (!accumulate) cm.setZero();
  if (m == 0 || n == 0 || k == 0) return;
  if (!trans_a && !trans_b) {
    cm.noalias() += CMap(a, mi, ki) * CMap(b, ki, ni);
  } else if (trans_a && !trans_b) {
    cm.noalias() += CMap(a, ki, mi).transpose() * CMap(b, ki, ni);
  } else if (!trans_a && trans_b) {
    cm.noalias() += CMap(a, mi, ki) * CMap(b, ni, ki).transpose();
  } else {
    cm.noalias() += CMap(a, ki, mi).transpose() * CMap(b, ni, ki).transpose();
  }
}

}  // namespace xscene::detail
