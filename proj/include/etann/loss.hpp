#pragma once

#include <cmath>
#include <span>
#include <stdexcept>

namespace etann {

/// Pseudo l1-l2 norm of a single residual component: quadratic x^2/(2 delta)
/// inside |x| <= delta, linear |x| - delta/2 outside. Value and slope match
/// at the junction, so training gradients stay continuous.
inline double huber_component(double x, double delta) {
  const double a = std::fabs(x);
  return a > delta ? a - 0.5 * delta : x * x / (2.0 * delta);
}

inline double huber_component_deriv(double x, double delta) {
  if (x > delta) return 1.0;
  if (x < -delta) return -1.0;
  return x / delta;
}

/// Sum of the pseudo-norm over all components.
inline double huber_norm(std::span<const double> x, double delta) {
  if (delta <= 0.0) throw std::invalid_argument("huber_norm: delta must be positive");
  double s = 0.0;
  for (double v : x) s += huber_component(v, delta);
  return s;
}

/// Macaulay bracket <x> = max(x, 0).
inline double macaulay(double x) { return x > 0.0 ? x : 0.0; }

}  // namespace etann
