#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace etann {

/// Adam with Nesterov momentum (Nadam). beta2 is the second-moment decay
/// parameter, 0.9999 by default.
struct NadamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.9999;
  double eps = 1e-8;
};

class Nadam {
 public:
  Nadam() = default;
  Nadam(std::size_t n, NadamConfig cfg) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  const NadamConfig& config() const { return cfg_; }
  std::size_t step_count() const { return t_; }

  /// One update, deterministic given inputs. Throws on non-finite gradients
  /// so a NaN loss aborts with a diagnostic instead of poisoning the state.
  void step(std::span<double> params, std::span<const double> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw std::invalid_argument("Nadam::step: size mismatch");
    ++t_;
    const double b1 = cfg_.beta1;
    const double b2 = cfg_.beta2;
    const double bias1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double bias1_next = 1.0 - std::pow(b1, static_cast<double>(t_ + 1));
    const double bias2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const double g = grads[i];
      if (!std::isfinite(g)) throw std::runtime_error("Nadam::step: non-finite gradient");
      m_[i] = b1 * m_[i] + (1.0 - b1) * g;
      v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
      const double m_hat = m_[i] / bias1_next;
      const double v_hat = v_[i] / bias2;
      const double m_bar = b1 * m_hat + (1.0 - b1) * g / bias1;
      params[i] -= cfg_.lr * m_bar / (std::sqrt(v_hat) + cfg_.eps);
    }
  }

 private:
  NadamConfig cfg_{};
  std::vector<double> m_;
  std::vector<double> v_;
  std::size_t t_ = 0;
};

}  // namespace etann
