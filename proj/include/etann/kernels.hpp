#pragma once

#include <Eigen/Dense>
#include <span>
#include <stdexcept>
#include <vector>

#include "etann/mlp.hpp"

namespace etann {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Map<const RowMat> weight_map(const Mlp& m, std::size_t k) {
  return Eigen::Map<const RowMat>(m.W[k].data(), m.widths[k + 1], m.widths[k]);
}

/// Offset of layer k's weight block inside the flattened parameter vector.
inline std::size_t flat_offset(const Mlp& m, std::size_t layer) {
  std::size_t off = 0;
  for (std::size_t k = 0; k < layer; ++k)
    off += m.W[k].size() + m.b[k].size();
  return off;
}

/// Batched forward/backward sweeps for one network. Caches the per-layer
/// pre-activations and activations of the last forward call, plus the
/// reverse-sweep state needed to differentiate losses that involve the
/// network's input gradient (double backpropagation).
///
/// Gradient outputs accumulate into a flat vector laid out like
/// Mlp::flatten(): per layer, the row-major weight matrix then the bias.
class BatchKernels {
 public:
  explicit BatchKernels(const Mlp& m) : net_(&m) {}

  const Mlp& net() const { return *net_; }

  /// X0: batch-size x n_in. Returns the output activations (B x n_out).
  const RowMat& forward(const Eigen::Ref<const RowMat>& X0) {
    const Mlp& m = *net_;
    const std::size_t L = m.n_layers();
    if (X0.cols() != m.n_in()) throw std::invalid_argument("BatchKernels::forward: width mismatch");
    X_.resize(L + 1);
    Z_.resize(L);
    X_[0] = X0;
    for (std::size_t k = 0; k < L; ++k) {
      Z_[k].resize(X0.rows(), m.widths[k + 1]);
      Z_[k].noalias() = X_[k] * weight_map(m, k).transpose();
      Z_[k].rowwise() += Eigen::Map<const Eigen::RowVectorXd>(m.b[k].data(), m.widths[k + 1]);
      X_[k + 1] = apply_act(m.activations[k], Z_[k]);
    }
    return X_[L];
  }

  /// Dual-number forward: also propagates tangents X0dot through the net.
  /// Output tangents land in xdot_out().
  const RowMat& forward_dual(const Eigen::Ref<const RowMat>& X0,
                             const Eigen::Ref<const RowMat>& X0dot) {
    forward(X0);
    const Mlp& m = *net_;
    const std::size_t L = m.n_layers();
    Xd_.resize(L + 1);
    Zd_.resize(L);
    Xd_[0] = X0dot;
    for (std::size_t k = 0; k < L; ++k) {
      Zd_[k].resize(X0.rows(), m.widths[k + 1]);
      Zd_[k].noalias() = Xd_[k] * weight_map(m, k).transpose();
      Xd_[k + 1] = apply_act_deriv(m.activations[k], Z_[k]).cwiseProduct(Zd_[k]);
    }
    return X_[L];
  }

  const RowMat& output() const { return X_.back(); }
  const RowMat& output_dot() const { return Xd_.back(); }

  /// Per-sample gradient of the scalar output with respect to the input
  /// (B x n_in). Requires n_out == 1 and a preceding forward().
  const RowMat& input_gradient() {
    const Mlp& m = *net_;
    if (m.n_out() != 1)
      throw std::invalid_argument("BatchKernels::input_gradient: scalar output required");
    const std::size_t L = m.n_layers();
    const Eigen::Index B = X_[0].rows();
    R_.resize(L + 1);
    S_.resize(L);
    R_[L] = RowMat::Ones(B, 1);
    for (std::size_t k = L; k-- > 0;) {
      S_[k] = R_[k + 1].cwiseProduct(apply_act_deriv(m.activations[k], Z_[k]));
      R_[k].resize(B, m.widths[k]);
      R_[k].noalias() = S_[k] * weight_map(m, k);
    }
    return R_[0];
  }

  /// Standard reverse pass: seeds dY on the outputs, accumulates parameter
  /// gradients, optionally reports the input adjoint.
  void backprop(const Eigen::Ref<const RowMat>& dY, std::span<double> grad_flat,
                RowMat* dX0 = nullptr) {
    const Mlp& m = *net_;
    const std::size_t L = m.n_layers();
    RowMat xbar = dY;
    for (std::size_t k = L; k-- > 0;) {
      RowMat zbar = xbar.cwiseProduct(apply_act_deriv(m.activations[k], Z_[k]));
      accumulate_layer(k, zbar, X_[k], grad_flat);
      xbar.resize(zbar.rows(), m.widths[k]);
      xbar.noalias() = zbar * weight_map(m, k);
    }
    if (dX0) *dX0 = xbar;
  }

  /// Reverse pass through the dual forward: seeds on outputs (dY) and on
  /// output tangents (dYdot). Requires a preceding forward_dual().
  void backprop_dual(const Eigen::Ref<const RowMat>& dY, const Eigen::Ref<const RowMat>& dYdot,
                     std::span<double> grad_flat, RowMat* dX0 = nullptr, RowMat* dX0dot = nullptr) {
    const Mlp& m = *net_;
    const std::size_t L = m.n_layers();
    RowMat xbar = dY;
    RowMat xdbar = dYdot;
    for (std::size_t k = L; k-- > 0;) {
      const RowMat a1 = apply_act_deriv(m.activations[k], Z_[k]);
      RowMat zbar = xbar.cwiseProduct(a1);
      if (m.activations[k] != Activation::Identity)
        zbar += xdbar.cwiseProduct(apply_act_deriv2(m.activations[k], Z_[k]))
                    .cwiseProduct(Zd_[k]);
      const RowMat zdbar = xdbar.cwiseProduct(a1);
      accumulate_layer(k, zbar, X_[k], grad_flat);
      accumulate_layer_weights_only(k, zdbar, Xd_[k], grad_flat);
      xbar.resize(zbar.rows(), m.widths[k]);
      xbar.noalias() = zbar * weight_map(m, k);
      RowMat xdnew(zdbar.rows(), m.widths[k]);
      xdnew.noalias() = zdbar * weight_map(m, k);
      xdbar.swap(xdnew);
    }
    if (dX0) *dX0 = xbar;
    if (dX0dot) *dX0dot = xdbar;
  }

  /// Gradient, with respect to the parameters, of a loss that depends on the
  /// scalar output (seed dPsi, B x 1) and on the input gradient of that
  /// output (seed dG, B x n_in). Requires forward() + input_gradient().
  /// The input adjoint (dX0) collects both paths, which matters when the
  /// inputs themselves are produced by another trainable block.
  void double_backprop(const Eigen::Ref<const RowMat>& dPsi, const Eigen::Ref<const RowMat>& dG,
                       std::span<double> grad_flat, RowMat* dX0 = nullptr) {
    const Mlp& m = *net_;
    const std::size_t L = m.n_layers();
    const Eigen::Index B = X_[0].rows();

    std::vector<RowMat> zbar(L);
    for (std::size_t k = 0; k < L; ++k) zbar[k] = RowMat::Zero(B, m.widths[k + 1]);

    // Reverse of the input-gradient sweep, processed in forward layer order.
    RowMat rbar = dG;  // adjoint of R_[k]
    for (std::size_t k = 0; k < L; ++k) {
      RowMat sbar(B, m.widths[k + 1]);
      sbar.noalias() = rbar * weight_map(m, k).transpose();
      // W gradient from R_[k] = S_[k] * W[k]
      Eigen::Map<RowMat> wg(grad_flat.data() + flat_offset(m, k), m.widths[k + 1], m.widths[k]);
      wg.noalias() += S_[k].transpose() * rbar;
      if (m.activations[k] != Activation::Identity)
        zbar[k] += sbar.cwiseProduct(R_[k + 1])
                       .cwiseProduct(apply_act_deriv2(m.activations[k], Z_[k]));
      if (k + 1 < L) {
        rbar.resize(B, m.widths[k + 1]);
        rbar = sbar.cwiseProduct(apply_act_deriv(m.activations[k], Z_[k]));
      }
    }

    // Standard backward over the forward pass with the accumulated seeds.
    RowMat xbar = dPsi;  // adjoint of X_[L]
    for (std::size_t k = L; k-- > 0;) {
      zbar[k] += xbar.cwiseProduct(apply_act_deriv(m.activations[k], Z_[k]));
      accumulate_layer(k, zbar[k], X_[k], grad_flat);
      xbar.resize(B, m.widths[k]);
      xbar.noalias() = zbar[k] * weight_map(m, k);
    }
    if (dX0) *dX0 = xbar;
  }

 private:
  static RowMat apply_act(Activation a, const RowMat& z) {
    if (a == Activation::Identity) return z;
    return z.unaryExpr([a](double x) { return act_value(a, x); });
  }
  static RowMat apply_act_deriv(Activation a, const RowMat& z) {
    if (a == Activation::Identity) return RowMat::Ones(z.rows(), z.cols());
    return z.unaryExpr([a](double x) { return act_deriv(a, x); });
  }
  static RowMat apply_act_deriv2(Activation a, const RowMat& z) {
    return z.unaryExpr([a](double x) { return act_deriv2(a, x); });
  }

  void accumulate_layer(std::size_t k, const RowMat& zbar, const RowMat& xin,
                        std::span<double> grad_flat) {
    const Mlp& m = *net_;
    const std::size_t off = flat_offset(m, k);
    Eigen::Map<RowMat> wg(grad_flat.data() + off, m.widths[k + 1], m.widths[k]);
    wg.noalias() += zbar.transpose() * xin;
    Eigen::Map<Eigen::RowVectorXd> bg(grad_flat.data() + off + m.W[k].size(), m.widths[k + 1]);
    bg.noalias() += zbar.colwise().sum();
  }

  void accumulate_layer_weights_only(std::size_t k, const RowMat& zdbar, const RowMat& xdin,
                                     std::span<double> grad_flat) {
    const Mlp& m = *net_;
    Eigen::Map<RowMat> wg(grad_flat.data() + flat_offset(m, k), m.widths[k + 1], m.widths[k]);
    wg.noalias() += zdbar.transpose() * xdin;
  }

  const Mlp* net_;
  std::vector<RowMat> X_, Z_;    // forward cache
  std::vector<RowMat> Xd_, Zd_;  // dual (tangent) cache
  std::vector<RowMat> R_, S_;    // input-gradient sweep cache
};

}  // namespace etann
