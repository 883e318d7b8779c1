#pragma once

#include <cmath>
#include <functional>

#include "raincast/tensor.hpp"

namespace raincast::ad {

/// Central-difference gradient oracle. Evaluates d f / d t[i] by perturbing
/// the tensor in place and calling the forward function twice. The forward
/// path must not capture stale copies of `t`. Independent of the tape: it
/// only needs a re-runnable forward evaluation.
inline double finite_diff(Tensor& t, std::int64_t i, const std::function<double()>& forward,
                          double h = 1e-4) {
  const double saved = t[i];
  t[i] = saved + h;
  const double fp = forward();
  t[i] = saved - h;
  const double fm = forward();
  t[i] = saved;
  return (fp - fm) / (2.0 * h);
}

/// Relative error between an autodiff gradient and the oracle value, floored
/// so that near-zero gradient pairs compare by absolute difference.
inline double grad_rel_err(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace raincast::ad
