#pragma once

#include "prolab/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace prolab {

/// softmax(z / temperature) with the maximum subtracted before exponentiating.
template <typename Derived>
VectorX<typename Derived::Scalar> softmax(const Eigen::MatrixBase<Derived>& logits,
                                          typename Derived::Scalar temperature = 1) {
  using Scalar = typename Derived::Scalar;
  const VectorX<Scalar> scaled = logits / temperature;
  VectorX<Scalar> out = (scaled.array() - scaled.maxCoeff()).exp().matrix();
  out /= out.sum();
  return out;
}

template <typename Derived>
VectorX<typename Derived::Scalar> log_softmax(const Eigen::MatrixBase<Derived>& logits) {
  using Scalar = typename Derived::Scalar;
  const Scalar m = logits.maxCoeff();
  const Scalar lse = m + std::log((logits.array() - m).exp().sum());
  return (logits.array() - lse).matrix();
}

/// KL(p || q) = sum p log(p / q). Terms with p = 0 contribute nothing; q is
/// clamped below at `q_floor` inside the logarithm.
template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar kl_divergence(const Eigen::MatrixBase<DerivedP>& p,
                                        const Eigen::MatrixBase<DerivedQ>& q,
                                        typename DerivedP::Scalar q_floor = 0) {
  using Scalar = typename DerivedP::Scalar;
  Scalar total = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    const Scalar qi = std::max(q[i], q_floor);
    if (qi <= 0) return std::numeric_limits<Scalar>::infinity();
    total += p[i] * (std::log(p[i]) - std::log(qi));
  }
  return total;
}

template <typename DerivedP, typename DerivedQ>
typename DerivedP::Scalar total_variation(const Eigen::MatrixBase<DerivedP>& p,
                                          const Eigen::MatrixBase<DerivedQ>& q) {
  return (p - q).cwiseAbs().sum() / 2;
}

}  // namespace prolab
