#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "etann/autodiff.hpp"

namespace etann {

enum class Activation : std::uint8_t { Identity, Tanh, Gelu };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity:
      return "identity";
    case Activation::Tanh:
      return "tanh";
    case Activation::Gelu:
      return "gelu";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "tanh") return Activation::Tanh;
  if (s == "gelu") return Activation::Gelu;
  throw std::invalid_argument("unknown activation: " + s);
}

namespace detail {
inline double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}
inline double std_normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x * 0.7071067811865475244)); }
}  // namespace detail

inline double act_value(Activation a, double x) {
  switch (a) {
    case Activation::Identity:
      return x;
    case Activation::Tanh:
      return std::tanh(x);
    case Activation::Gelu:
      return x * detail::std_normal_cdf(x);
  }
  return x;
}

inline double act_deriv(Activation a, double x) {
  switch (a) {
    case Activation::Identity:
      return 1.0;
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Activation::Gelu:
      return detail::std_normal_cdf(x) + x * detail::std_normal_pdf(x);
  }
  return 1.0;
}

inline double act_deriv2(Activation a, double x) {
  switch (a) {
    case Activation::Identity:
      return 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(x);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::Gelu:
      return (2.0 - x * x) * detail::std_normal_pdf(x);
  }
  return 0.0;
}

template <class T>
T act_apply(Activation a, const T& x) {
  switch (a) {
    case Activation::Identity:
      return x;
    case Activation::Tanh:
      return tanh(x);
    case Activation::Gelu:
      return ad::gelu(x);
  }
  return x;
}

/// Plain feed-forward network. Layer k maps width[k] -> width[k+1] through
/// an affine map (row-major weight matrix, bias) followed by the layer's
/// activation; the output layer uses the identity.
struct Mlp {
  std::vector<int> widths;               // [n_in, hidden..., n_out]
  std::vector<Activation> activations;   // one per layer, size widths.size()-1
  std::vector<std::vector<double>> W;    // W[k]: widths[k+1] x widths[k], row-major
  std::vector<std::vector<double>> b;    // b[k]: widths[k+1]

  Mlp() = default;

  Mlp(std::vector<int> w, Activation hidden_act) : widths(std::move(w)) {
    if (widths.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
    const std::size_t L = widths.size() - 1;
    activations.assign(L, hidden_act);
    activations[L - 1] = Activation::Identity;
    W.resize(L);
    b.resize(L);
    for (std::size_t k = 0; k < L; ++k) {
      W[k].assign(static_cast<std::size_t>(widths[k + 1]) * widths[k], 0.0);
      b[k].assign(static_cast<std::size_t>(widths[k + 1]), 0.0);
    }
  }

  int n_in() const { return widths.front(); }
  int n_out() const { return widths.back(); }
  std::size_t n_layers() const { return W.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < W.size(); ++k) n += W[k].size() + b[k].size();
    return n;
  }

  /// Variance-scaled uniform init, limit sqrt(3/fan_in) per layer.
  void init_random(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (std::size_t k = 0; k < W.size(); ++k) {
      const double limit = std::sqrt(3.0 / widths[k]);
      std::uniform_real_distribution<double> dist(-limit, limit);
      for (double& w : W[k]) w = dist(rng);
      for (double& v : b[k]) v = 0.0;
    }
  }

  template <class T>
  std::vector<T> forward(std::span<const T> x) const {
    if (static_cast<int>(x.size()) != n_in())
      throw std::invalid_argument("Mlp::forward: input width mismatch");
    std::vector<T> cur(x.begin(), x.end());
    std::vector<T> next;
    for (std::size_t k = 0; k < W.size(); ++k) {
      const int nin = widths[k];
      const int nout = widths[k + 1];
      next.assign(static_cast<std::size_t>(nout), T(0.0));
      for (int i = 0; i < nout; ++i) {
        T acc(b[k][static_cast<std::size_t>(i)]);
        const double* wrow = &W[k][static_cast<std::size_t>(i) * nin];
        for (int j = 0; j < nin; ++j) acc += T(wrow[j]) * cur[static_cast<std::size_t>(j)];
        next[static_cast<std::size_t>(i)] = act_apply(activations[k], acc);
      }
      cur.swap(next);
    }
    return cur;
  }

  std::vector<double> forward(std::span<const double> x) const { return forward<double>(x); }

  /// Records the forward pass on a tape. If `weight_vars` is non-null, the
  /// weights are registered as tape inputs (appended layer by layer, rows
  /// then biases) so the graph can be differentiated with respect to them.
  std::vector<ad::Var> forward_on_tape(ad::Tape& tape, std::span<const ad::Var> x,
                                       std::vector<ad::Var>* weight_vars = nullptr) const {
    if (static_cast<int>(x.size()) != n_in())
      throw std::invalid_argument("Mlp::forward_on_tape: input width mismatch");
    std::vector<ad::Var> cur(x.begin(), x.end());
    for (std::size_t k = 0; k < W.size(); ++k) {
      const int nin = widths[k];
      const int nout = widths[k + 1];
      std::vector<ad::Var> wv;
      std::vector<ad::Var> bv;
      if (weight_vars) {
        wv.reserve(W[k].size());
        for (double w : W[k]) {
          wv.push_back(tape.input(w));
          weight_vars->push_back(wv.back());
        }
        bv.reserve(b[k].size());
        for (double v : b[k]) {
          bv.push_back(tape.input(v));
          weight_vars->push_back(bv.back());
        }
      }
      std::vector<ad::Var> next;
      next.reserve(static_cast<std::size_t>(nout));
      for (int i = 0; i < nout; ++i) {
        ad::Var acc = weight_vars ? bv[static_cast<std::size_t>(i)]
                                  : tape.constant(b[k][static_cast<std::size_t>(i)]);
        for (int j = 0; j < nin; ++j) {
          const std::size_t idx = static_cast<std::size_t>(i) * nin + j;
          const ad::Var w = weight_vars ? wv[idx] : tape.constant(W[k][idx]);
          acc = acc + w * cur[static_cast<std::size_t>(j)];
        }
        next.push_back(act_apply(activations[k], acc));
      }
      cur.swap(next);
    }
    return cur;
  }

  /// Flattened parameter view in the same order forward_on_tape registers
  /// them: per layer, full weight matrix row-major then the bias vector.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for (std::size_t k = 0; k < W.size(); ++k) {
      out.insert(out.end(), W[k].begin(), W[k].end());
      out.insert(out.end(), b[k].begin(), b[k].end());
    }
    return out;
  }

  void unflatten(std::span<const double> p) {
    if (p.size() != parameter_count()) throw std::invalid_argument("Mlp::unflatten: size mismatch");
    std::size_t off = 0;
    for (std::size_t k = 0; k < W.size(); ++k) {
      std::copy(p.begin() + off, p.begin() + off + W[k].size(), W[k].begin());
      off += W[k].size();
      std::copy(p.begin() + off, p.begin() + off + b[k].size(), b[k].begin());
      off += b[k].size();
    }
  }
};

}  // namespace etann
