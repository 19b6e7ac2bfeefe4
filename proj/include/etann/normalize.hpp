#pragma once

#include <iostream>
#include <span>
#include <stdexcept>
#include <vector>

namespace etann {

/// Per-component affine normalization x# = (x - beta)/alpha with
/// alpha = (max-min)/2 and beta = (max+min)/2, so the fitted span maps onto
/// [-1, 1]. Values outside the fitted range map outside [-1, 1]; no clipping.
struct ComponentStats {
  std::vector<double> alpha;  // half-range, > 0
  std::vector<double> beta;   // midpoint

  std::size_t size() const { return alpha.size(); }

  /// Fit from a column-block of a row-major table: rows x width values
  /// starting at column `col` of stride `stride`. Constant components get
  /// alpha = 1 with a warning, keeping normalize/denormalize invertible.
  static ComponentStats fit(std::span<const double> table, std::size_t stride, std::size_t col,
                            std::size_t width, std::span<const std::size_t> rows) {
    if (rows.empty()) throw std::invalid_argument("ComponentStats::fit: empty row set");
    ComponentStats s;
    s.alpha.assign(width, 1.0);
    s.beta.assign(width, 0.0);
    for (std::size_t j = 0; j < width; ++j) {
      double lo = table[rows[0] * stride + col + j];
      double hi = lo;
      for (std::size_t r : rows) {
        const double v = table[r * stride + col + j];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const double a = 0.5 * (hi - lo);
      if (a == 0.0) {
        std::cerr << "[etann] warning: constant feature (col " << col + j
                  << "), using alpha = 1\n";
        s.alpha[j] = 1.0;
      } else {
        s.alpha[j] = a;
      }
      s.beta[j] = 0.5 * (hi + lo);
    }
    return s;
  }

  void normalize(std::span<const double> x, std::span<double> out) const {
    for (std::size_t i = 0; i < alpha.size(); ++i) out[i] = (x[i] - beta[i]) / alpha[i];
  }
  void denormalize(std::span<const double> xs, std::span<double> out) const {
    for (std::size_t i = 0; i < alpha.size(); ++i) out[i] = xs[i] * alpha[i] + beta[i];
  }
  std::vector<double> normalize(std::span<const double> x) const {
    std::vector<double> out(x.size());
    normalize(x, out);
    return out;
  }
  std::vector<double> denormalize(std::span<const double> xs) const {
    std::vector<double> out(xs.size());
    denormalize(xs, out);
    return out;
  }
};

/// Normalization constants for every dataset quantity plus the anchoring
/// scales used when network outputs are redefined to vanish at the zero
/// state. Fitted on the training and validation splits only.
struct NormalizationStats {
  ComponentStats eps;       // strain
  ComponentStats eps_rate;  // strain rate
  ComponentStats z;         // internal variables (identity for latent runs)
  ComponentStats z_rate;
  ComponentStats sig;  // stress
  ComponentStats psi;  // width 1
  ComponentStats diss; // width 1
  ComponentStats xi;       // internal coordinates (may be empty)
  ComponentStats xi_rate;  // (may be empty)
};

}  // namespace etann
