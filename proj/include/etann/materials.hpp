#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "etann/symtensor.hpp"

namespace etann {

struct ElasticParams {
  double K = 0.0;  // bulk modulus, Pa
  double G = 0.0;  // shear modulus, Pa
};

/// Shear-fracture damage block. Initiation follows an accumulation rule
/// omega = int d(z_eq) / z_eq_init(theta_s) with theta_s the shear stress
/// ratio (tau_max + k_s p)/tau_max; the threshold table is a config input
/// (piecewise linear in theta_s, flat extrapolation). After initiation the
/// damage variable grows exponentially with the equivalent plastic strain,
/// z_d = (1 - exp(-a u))/(1 - exp(-a)) with u = (z_eq - z_eq@init)/z_eq_f,
/// capped at z_d_f.
struct DamageParams {
  double k_s = 0.12;
  double tau_s = 0.94;
  double a = 3.0;
  double z_eq_f = 0.004;   // ultimate equivalent plastic strain
  double z_d_f = 0.99;     // damage cap
  std::vector<std::pair<double, double>> init_table{{0.94, 2.0e-4}};  // theta_s -> z_eq threshold

  double init_threshold(double theta_s) const {
    if (init_table.empty()) throw std::invalid_argument("DamageParams: empty initiation table");
    if (theta_s <= init_table.front().first) return init_table.front().second;
    if (theta_s >= init_table.back().first) return init_table.back().second;
    for (std::size_t i = 1; i < init_table.size(); ++i) {
      if (theta_s <= init_table[i].first) {
        const auto [t0, v0] = init_table[i - 1];
        const auto [t1, v1] = init_table[i];
        const double w = (theta_s - t0) / (t1 - t0);
        return v0 + w * (v1 - v0);
      }
    }
    return init_table.back().second;
  }
};

struct PlasticParams {
  double c = 0.0;   // strength in simple shear, Pa
  double H = 0.0;   // hardening modulus, Pa
  double mu = 0.0;  // viscosity, s (0 = rate independent)
  std::optional<DamageParams> damage;
};

/// State of one material point. z_q is the accumulated plastic multiplier of
/// the sqrt(J2) yield form (it equals accumulated engineering plastic shear
/// in simple shear, i.e. sqrt(2)*||z_pl|| per unit of flow); the
/// von Mises-equivalent plastic strain is z_q/sqrt(3).
struct MaterialPointState {
  SymTensor6 eps{};
  SymTensor6 z_pl{};
  double z_q = 0.0;
  double z_d = 0.0;
  SymTensor6 sig{};
  double psi = 0.0;
  double d = 0.0;  // dissipation rate bookkept over the last step, W/m^3

  // damage-model internals
  double omega = 0.0;        // initiation accumulator
  double z_eq_at_init = -1.0;  // <0 until initiated

  // last-step energy bookkeeping (per step, J/m^3)
  double work_inc = 0.0;  // trapezoid stress work  sigma_bar : d(eps)
  double psi_inc = 0.0;

  double z_eq() const { return z_q / std::sqrt(3.0); }
};

/// sigma = K tr(eps) I + 2G dev(eps), psi = K tr^2/2 + G dev:dev.
inline std::pair<SymTensor6, double> elastic_response(const SymTensor6& eps,
                                                      const ElasticParams& p) {
  const double tr = trace(eps);
  const SymTensor6 dev = deviator(eps);
  SymTensor6 sig = 2.0 * p.G * dev;
  sig.c[0] += p.K * tr;
  sig.c[1] += p.K * tr;
  sig.c[2] += p.K * tr;
  const double psi = 0.5 * p.K * tr * tr + p.G * double_contract(dev, dev);
  return {sig, psi};
}

namespace detail {

inline double elastic_psi(const SymTensor6& eps, const SymTensor6& z_pl, const ElasticParams& e) {
  const double tr = trace(eps);
  const SymTensor6 ee = deviator(eps) - z_pl;
  return 0.5 * e.K * tr * tr + e.G * double_contract(ee, ee);
}

inline SymTensor6 elastic_sigma(const SymTensor6& eps, const SymTensor6& z_pl,
                                const ElasticParams& e) {
  const double tr = trace(eps);
  SymTensor6 sig = 2.0 * e.G * (deviator(eps) - z_pl);
  sig.c[0] += e.K * tr;
  sig.c[1] += e.K * tr;
  sig.c[2] += e.K * tr;
  return sig;
}

/// Principal values of a symmetric tensor (Cardano), descending order.
inline std::array<double, 3> principal_values(const SymTensor6& t) {
  const double q = trace(t) / 3.0;
  const SymTensor6 d = deviator(t);
  const double j2 = 0.5 * double_contract(d, d);
  const double p = std::sqrt(std::max(j2 / 3.0, 0.0));
  if (p < 1e-300) return {q, q, q};
  // det of the deviator
  const double det = d.c[0] * (d.c[1] * d.c[2] - d.c[5] * d.c[5]) -
                     d.c[3] * (d.c[3] * d.c[2] - d.c[5] * d.c[4]) +
                     d.c[4] * (d.c[3] * d.c[5] - d.c[1] * d.c[4]);
  double r = det / (2.0 * p * p * p);
  r = std::clamp(r, -1.0, 1.0);
  const double phi = std::acos(r) / 3.0;
  const double s1 = q + 2.0 * p * std::cos(phi);
  const double s3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
  const double s2 = 3.0 * q - s1 - s3;
  std::array<double, 3> v{s1, s2, s3};
  std::sort(v.begin(), v.end(), std::greater<>());
  return v;
}

struct SubstepFlags {
  bool allow_bisect = true;
  int depth = 0;
};

}  // namespace detail

/// Elastic predictor / radial-return corrector for the von Mises criterion
/// f = sqrt(J2) - (c + H z_q) with associated deviatoric flow
/// dz_pl = dlambda * s/(2 sqrt(J2)) and dz_q = dlambda. For linear hardening
/// the return is closed-form; the post condition f <= tol is asserted.
/// Dissipation is bookkept from the exact step energy balance
/// d = (sigma_bar : d(eps) - d(psi)) / dt, which reduces to
/// sigma_bar : dz_pl / dt and is nonnegative for monotone hardening.
inline MaterialPointState vm_return_map(const MaterialPointState& state, const SymTensor6& deps,
                                        double dt, const ElasticParams& ep,
                                        const PlasticParams& pp) {
  if (dt <= 0.0) throw std::invalid_argument("vm_return_map: dt must be positive");
  MaterialPointState s = state;
  s.eps += deps;
  s.omega = state.omega;

  const SymTensor6 e = deviator(s.eps);
  const SymTensor6 s_tr = 2.0 * ep.G * (e - s.z_pl);
  const double q_tr = std::sqrt(0.5 * double_contract(s_tr, s_tr));
  const double f_tr = q_tr - (pp.c + pp.H * s.z_q);
  if (f_tr > 0.0) {
    const double dlam = f_tr / (ep.G + pp.H);
    const SymTensor6 dir = (1.0 / (2.0 * q_tr)) * s_tr;
    s.z_pl += dlam * dir;
    s.z_q += dlam;
    const double q_new = q_tr - ep.G * dlam;
    const double f_new = q_new - (pp.c + pp.H * s.z_q);
    if (std::fabs(f_new) > 1e-8 * (pp.c + ep.G))
      throw std::runtime_error("vm_return_map: return did not close the yield surface");
  }
  const SymTensor6 sig_new = detail::elastic_sigma(s.eps, s.z_pl, ep);
  s.psi = detail::elastic_psi(s.eps, s.z_pl, ep);
  const SymTensor6 sig_bar = 0.5 * (state.sig + sig_new);
  s.sig = sig_new;
  s.work_inc = double_contract(sig_bar, deps);
  s.psi_inc = s.psi - state.psi;
  s.d = (s.work_inc - s.psi_inc) / dt;
  return s;
}

namespace detail {

inline MaterialPointState perzyna_substep(const MaterialPointState& state, const SymTensor6& deps,
                                          double dt, const ElasticParams& ep,
                                          const PlasticParams& pp, SubstepFlags flags) {
  MaterialPointState s = state;
  s.eps += deps;

  const SymTensor6 e = deviator(s.eps);
  const SymTensor6 s_tr = 2.0 * ep.G * (e - s.z_pl);
  const double q_tr = std::sqrt(0.5 * double_contract(s_tr, s_tr));
  const double f_tr = q_tr - (pp.c + pp.H * s.z_q);
  bool flowed = false;
  if (f_tr > 0.0) {
    // Backward-Euler overstress flow  dlam = dt <(q - c - H z_q)/c> / mu
    // with q = q_tr - G dlam; linear, solved by Newton on the residual for
    // diagnostics symmetry with more general laws.
    double dlam = dt * f_tr / (pp.c * pp.mu + (ep.G + pp.H) * dt);
    for (int it = 0; it < 50; ++it) {
      const double q = q_tr - ep.G * dlam;
      const double over = (q - (pp.c + pp.H * (s.z_q + dlam))) / pp.c;
      const double resid = dlam - dt * std::max(over, 0.0) / pp.mu;
      if (std::fabs(resid) <= 1e-14 * (1.0 + std::fabs(dlam))) break;
      const double dresid = 1.0 + (over > 0.0 ? dt * (ep.G + pp.H) / (pp.c * pp.mu) : 0.0);
      dlam -= resid / dresid;
      if (it == 49)
        throw std::runtime_error("perzyna_step: Newton failed, residual " + std::to_string(resid));
    }
    if (dlam > 0.0) {
      const SymTensor6 dir = (1.0 / (2.0 * q_tr)) * s_tr;
      s.z_pl += dlam * dir;
      s.z_q += dlam;
      flowed = true;
    }
  }
  const SymTensor6 sig_new = elastic_sigma(s.eps, s.z_pl, ep);
  s.psi = elastic_psi(s.eps, s.z_pl, ep);
  const SymTensor6 sig_bar = 0.5 * (state.sig + sig_new);
  s.sig = sig_new;
  s.work_inc = double_contract(sig_bar, deps);
  s.psi_inc = s.psi - state.psi;
  const double diss = s.work_inc - s.psi_inc;

  // The trapezoid bookkeeping can report a slightly negative dissipation only
  // when a single step rotates the deviator past 90 degrees while flowing.
  // Bisect in that case; the continuous-time rate is strictly nonnegative.
  const double scale = std::max({std::fabs(s.work_inc), std::fabs(s.psi_inc), 1e-300});
  if (flowed && diss < -1e-13 * scale && flags.allow_bisect && flags.depth < 40) {
    SubstepFlags f2 = flags;
    f2.depth++;
    const SymTensor6 half = 0.5 * deps;
    MaterialPointState mid = perzyna_substep(state, half, 0.5 * dt, ep, pp, f2);
    MaterialPointState fin = perzyna_substep(mid, half, 0.5 * dt, ep, pp, f2);
    fin.work_inc += mid.work_inc;
    fin.psi_inc += mid.psi_inc;
    fin.d = (fin.work_inc - fin.psi_inc) / dt;
    return fin;
  }
  s.d = diss / dt;
  return s;
}

}  // namespace detail

/// Perzyna viscoplastic step: von Mises surface with overstress flow
/// lambda_dot = <(sqrt(J2) - c - H z_q)/c> / mu, integrated implicitly.
/// Stress may exceed the rate-independent yield surface.
inline MaterialPointState perzyna_step(const MaterialPointState& state, const SymTensor6& deps,
                                       double dt, const ElasticParams& ep,
                                       const PlasticParams& pp) {
  if (dt <= 0.0) throw std::invalid_argument("perzyna_step: dt must be positive");
  if (pp.mu <= 0.0) throw std::invalid_argument("perzyna_step: mu must be positive");
  return detail::perzyna_substep(state, deps, dt, ep, pp, {});
}

namespace detail {

inline double damage_law(double z_eq_from_init, const DamageParams& dp) {
  const double u = std::max(z_eq_from_init, 0.0) / dp.z_eq_f;
  const double raw = (1.0 - std::exp(-dp.a * u)) / (1.0 - std::exp(-dp.a));
  return std::min(raw, dp.z_d_f);
}

inline MaterialPointState damage_substep(const MaterialPointState& state, const SymTensor6& deps,
                                         double dt, const ElasticParams& ep,
                                         const PlasticParams& pp, SubstepFlags flags) {
  const DamageParams& dp = *pp.damage;
  MaterialPointState s = state;
  s.eps += deps;

  // Plasticity in the effective (undamaged) stress space.
  const SymTensor6 e = deviator(s.eps);
  const SymTensor6 s_tr = 2.0 * ep.G * (e - s.z_pl);
  const double q_tr = std::sqrt(0.5 * double_contract(s_tr, s_tr));
  const double f_tr = q_tr - (pp.c + pp.H * s.z_q);
  if (f_tr > 0.0) {
    const double dlam = f_tr / (ep.G + pp.H);
    s.z_pl += dlam * (1.0 / (2.0 * q_tr)) * s_tr;
    s.z_q += dlam;
  }
  const SymTensor6 sig_eff = elastic_sigma(s.eps, s.z_pl, ep);
  const double psi_eff = elastic_psi(s.eps, s.z_pl, ep);

  // Initiation accumulator driven by the shear stress ratio.
  const double dz_eq = s.z_eq() - state.z_eq();
  if (s.z_eq_at_init < 0.0 && dz_eq > 0.0) {
    const auto pv = principal_values(sig_eff);
    const double tau_max = 0.5 * (pv[0] - pv[2]);
    const double p_mean = trace(sig_eff) / 3.0;
    const double theta_s = tau_max > 0.0 ? (tau_max + dp.k_s * p_mean) / tau_max : 0.0;
    const double threshold = dp.init_threshold(theta_s);
    s.omega += dz_eq / threshold;
    if (s.omega >= 1.0) s.z_eq_at_init = s.z_eq();
  }
  if (s.z_eq_at_init >= 0.0)
    s.z_d = std::max(state.z_d, damage_law(s.z_eq() - s.z_eq_at_init, dp));

  SymTensor6 sig_new = (1.0 - s.z_d) * sig_eff;
  s.psi = (1.0 - s.z_d) * psi_eff;
  const SymTensor6 sig_bar = 0.5 * (state.sig + sig_new);
  s.sig = sig_new;
  s.work_inc = double_contract(sig_bar, deps);
  s.psi_inc = s.psi - state.psi;
  const double diss = s.work_inc - s.psi_inc;
  const double scale = std::max({std::fabs(s.work_inc), std::fabs(s.psi_inc), 1e-300});
  if (diss < -1e-13 * scale && flags.allow_bisect && flags.depth < 40) {
    SubstepFlags f2 = flags;
    f2.depth++;
    const SymTensor6 half = 0.5 * deps;
    MaterialPointState mid = damage_substep(state, half, 0.5 * dt, ep, pp, f2);
    MaterialPointState fin = damage_substep(mid, half, 0.5 * dt, ep, pp, f2);
    fin.work_inc += mid.work_inc;
    fin.psi_inc += mid.psi_inc;
    fin.d = (fin.work_inc - fin.psi_inc) / dt;
    return fin;
  }
  s.d = diss / dt;
  return s;
}

}  // namespace detail

/// Rate-independent von Mises plasticity with shear-fracture damage:
/// effective-space radial return, accumulation-rule initiation, exponential
/// damage growth saturating at z_d_f; stress and stiffness scale by (1-z_d).
inline MaterialPointState damage_step(const MaterialPointState& state, const SymTensor6& deps,
                                      double dt, const ElasticParams& ep,
                                      const PlasticParams& pp) {
  if (dt <= 0.0) throw std::invalid_argument("damage_step: dt must be positive");
  if (!pp.damage) throw std::invalid_argument("damage_step: damage parameters missing");
  return detail::damage_substep(state, deps, dt, ep, pp, {});
}

}  // namespace etann
