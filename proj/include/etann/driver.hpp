#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "etann/datagen.hpp"
#include "etann/models.hpp"
#include "etann/ode.hpp"
#include "etann/symtensor.hpp"

namespace etann {

/// Strain-controlled loading program. The loading parameter lambda ramps at
/// the given rate and is discretized in `increment` chunks; for shear paths
/// lambda is the engineering shear gamma = 2 eps12, otherwise eps11.
/// cycles = 0 is a monotone ramp to the amplitude; cycles = k alternates
/// 0 -> +A -> -A (k times) and reloads to +A at the end.
struct PathSpec {
  enum class Family { Uniaxial, Biaxial, Triaxial, SimpleShear };
  Family family = Family::Uniaxial;
  double ratio = 0.0;       // lateral coupling, e.g. eps22 = eps33 = -0.5 eps11
  double rate = 1e-4;       // loading-parameter rate, 1/s
  double increment = 1e-4;  // loading-parameter increment per window
  double amplitude = 1e-2;  // target amplitude, > 0
  int cycles = 0;

  SymTensor6 strain_at(double lambda) const {
    SymTensor6 e{};
    switch (family) {
      case Family::Uniaxial:
        e.c[0] = lambda;
        break;
      case Family::Biaxial:
        e.c[0] = lambda;
        e.c[1] = ratio * lambda;
        break;
      case Family::Triaxial:
        e.c[0] = lambda;
        e.c[1] = ratio * lambda;
        e.c[2] = ratio * lambda;
        break;
      case Family::SimpleShear:
        e.c[3] = 0.5 * lambda;  // tensor component from engineering gamma
        break;
    }
    return e;
  }

  static Family family_from_string(const std::string& s) {
    if (s == "uniaxial") return Family::Uniaxial;
    if (s == "biaxial") return Family::Biaxial;
    if (s == "triaxial") return Family::Triaxial;
    if (s == "simple-shear" || s == "shear") return Family::SimpleShear;
    throw std::invalid_argument("unknown path family: " + s);
  }

  std::string family_name() const {
    switch (family) {
      case Family::Uniaxial:
        return "uniaxial";
      case Family::Biaxial:
        return "biaxial";
      case Family::Triaxial:
        return "triaxial";
      case Family::SimpleShear:
        return "simple-shear";
    }
    return "?";
  }

  nlohmann::json to_json() const {
    return {{"family", family_name()}, {"ratio", ratio},         {"rate", rate},
            {"increment", increment},  {"amplitude", amplitude}, {"cycles", cycles}};
  }
};

struct PathKnot {
  double t = 0.0;
  double lambda = 0.0;
  SymTensor6 eps{};
};

/// Increment-boundary knots of the loading program.
inline std::vector<PathKnot> build_path_knots(const PathSpec& p) {
  if (p.rate <= 0.0) throw std::invalid_argument("PathSpec: rate must be positive");
  if (p.amplitude < 0.0) throw std::invalid_argument("PathSpec: amplitude must be nonnegative");
  if (p.increment <= 0.0) throw std::invalid_argument("PathSpec: increment must be positive");
  if (p.amplitude == 0.0) return {{0.0, 0.0, p.strain_at(0.0)}};  // degenerate zero path
  std::vector<double> targets{p.amplitude};
  for (int c = 0; c < p.cycles; ++c) {
    targets.push_back(-p.amplitude);
    targets.push_back(p.amplitude);
  }
  std::vector<PathKnot> knots;
  knots.push_back({0.0, 0.0, p.strain_at(0.0)});
  double lam = 0.0, t = 0.0;
  for (double target : targets) {
    const double dir = target > lam ? 1.0 : -1.0;
    while (std::fabs(target - lam) > 1e-15 * std::max(1.0, p.amplitude)) {
      const double step = std::min(p.increment, std::fabs(target - lam));
      lam += dir * step;
      t += step / p.rate;
      knots.push_back({t, lam, p.strain_at(lam)});
    }
  }
  return knots;
}

struct TraceRow {
  double t = 0.0;
  double lambda = 0.0;
  SymTensor6 eps{};
  SymTensor6 sig{};
  std::vector<double> z;
  double psi = 0.0;
  double d = 0.0;
};

struct ResponseTrace {
  std::vector<TraceRow> rows;
  int nz = 0;

  void to_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("ResponseTrace::to_csv: cannot open " + path);
    os.precision(17);
    const char* names[6] = {"11", "22", "33", "12", "13", "23"};
    os << "t,lambda";
    for (const char* n : names) os << ",eps_" << n;
    for (const char* n : names) os << ",sig_" << n;
    for (int j = 0; j < nz; ++j) os << ",z_" << j;
    os << ",psi,d\n";
    for (const TraceRow& r : rows) {
      os << r.t << "," << r.lambda;
      for (double v : r.eps.c) os << "," << v;
      for (double v : r.sig.c) os << "," << v;
      for (double v : r.z) os << "," << v;
      os << "," << r.psi << "," << r.d << "\n";
    }
  }

  void save_metadata(const std::string& path, const nlohmann::json& extra) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("ResponseTrace::save_metadata: cannot open " + path);
    nlohmann::json j = extra;
    j["columns"] = "t,lambda,eps(6),sig(6),z(nz),psi,d";
    j["nz"] = nz;
    j["n_rows"] = rows.size();
    os << j.dump(2) << "\n";
  }
};

/// Inference-mode constitutive drive: per loading window, integrate the
/// evolution equations across the window's time span with the strain
/// interpolated linearly in time, then evaluate the energy block at the
/// window boundary.
inline ResponseTrace drive_path(const EnergyModel& energy, const EvolutionModel& evolution,
                                const PathSpec& path, const IvpConfig& ivp_cfg) {
  const int nz = evolution.nz;
  const std::vector<PathKnot> knots = build_path_knots(path);
  ResponseTrace trace;
  trace.nz = nz;
  std::vector<double> z(static_cast<std::size_t>(nz), 0.0);

  const auto emit = [&](const PathKnot& k) {
    TraceRow row;
    row.t = k.t;
    row.lambda = k.lambda;
    row.eps = k.eps;
    row.z = z;
    const std::vector<double> zr = evolution.rate(k.eps, z);
    const EnergyOutputs out = energy_outputs(energy, k.eps, z, zr);
    row.sig = out.sig;
    row.psi = out.psi;
    row.d = out.d;
    trace.rows.push_back(std::move(row));
  };
  emit(knots.front());

  for (std::size_t ki = 0; ki + 1 < knots.size(); ++ki) {
    const PathKnot& a = knots[ki];
    const PathKnot& b = knots[ki + 1];
    const double dt = b.t - a.t;
    const auto eps_at = [&](double t) {
      const double w = dt > 0.0 ? (t - a.t) / dt : 1.0;
      return a.eps + w * (b.eps - a.eps);
    };
    const OdeFun f = [&](double t, std::span<const double> zz, std::span<double> dz) {
      const std::vector<double> r = evolution.rate(eps_at(t), zz);
      std::copy(r.begin(), r.end(), dz.begin());
    };
    const OdeJac jac = [&](double t, std::span<const double> zz, Eigen::MatrixXd& J) {
      const auto rows = evolution.rate_jacobian_z(eps_at(t), zz);
      J.resize(nz, nz);
      for (int i = 0; i < nz; ++i)
        for (int j = 0; j < nz; ++j) J(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    };
    const double t_end[1] = {b.t};
    const IvpResult r = ivp_solve(f, jac, z, a.t, t_end, ivp_cfg);
    z = r.y.back();
    emit(b);
  }
  return trace;
}

/// Reference response along the same loading program from a material oracle,
/// sub-stepped so the implicit updates resolve the path accurately.
inline ResponseTrace oracle_trace(OracleDriver& oracle, const PathSpec& path,
                                  double max_substep_dlambda = 2e-5) {
  const std::vector<PathKnot> knots = build_path_knots(path);
  ResponseTrace trace;
  trace.nz = oracle.nz();
  oracle.reset();
  std::vector<double> z(static_cast<std::size_t>(oracle.nz()), 0.0);

  const auto emit = [&](const PathKnot& k, double d) {
    TraceRow row;
    row.t = k.t;
    row.lambda = k.lambda;
    row.eps = oracle.eps();
    row.sig = oracle.sig();
    oracle.z(z);
    row.z = z;
    row.psi = oracle.psi();
    row.d = d;
    trace.rows.push_back(row);
  };
  emit(knots.front(), 0.0);
  for (std::size_t ki = 0; ki + 1 < knots.size(); ++ki) {
    const PathKnot& a = knots[ki];
    const PathKnot& b = knots[ki + 1];
    const int nsub = std::max(1, static_cast<int>(std::ceil(
                                  std::fabs(b.lambda - a.lambda) / max_substep_dlambda)));
    double diss = 0.0;
    for (int s = 0; s < nsub; ++s) {
      const SymTensor6 target =
          a.eps + (static_cast<double>(s + 1) / nsub) * (b.eps - a.eps);
      const SymTensor6 deps = target - oracle.eps();
      const double dts = (b.t - a.t) / nsub;
      if (!oracle.step(deps, dts))
        throw std::runtime_error("oracle_trace: oracle step failed");
      diss += oracle.last_d() * dts;
    }
    emit(b, diss / (b.t - a.t));
  }
  return trace;
}

struct ErrorReport {
  double mean_rel = 0.0;
  double max_rel = 0.0;
  std::vector<double> per_sample;  // relative error series over the trace
  double stress_scale = 0.0;
};

/// Relative stress error of a trace against a reference on identical knots;
/// errors are scaled by the largest reference stress norm along the path.
inline ErrorReport stress_error_report(const ResponseTrace& model, const ResponseTrace& ref) {
  if (model.rows.size() != ref.rows.size())
    throw std::invalid_argument("stress_error_report: traces have different lengths");
  ErrorReport rep;
  for (const TraceRow& r : ref.rows) rep.stress_scale = std::max(rep.stress_scale, norm(r.sig));
  if (rep.stress_scale == 0.0) rep.stress_scale = 1.0;
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < model.rows.size(); ++i) {
    const double e = norm(model.rows[i].sig - ref.rows[i].sig) / rep.stress_scale;
    rep.per_sample.push_back(e);
    rep.max_rel = std::max(rep.max_rel, e);
    if (i > 0) {  // skip the anchored zero sample
      acc += e;
      ++n;
    }
  }
  rep.mean_rel = n ? acc / static_cast<double>(n) : 0.0;
  return rep;
}

struct IncrementSweepResult {
  std::vector<double> increments;
  std::vector<ResponseTrace> traces;
  double max_cross_deviation = 0.0;  // relative to the finest trace's stress scale
};

/// Runs the same loading program at several increment sizes and reports the
/// largest cross-increment stress deviation on a shared loading-parameter
/// grid (monotone piecewise-linear resampling).
inline IncrementSweepResult increment_sweep(const EnergyModel& energy,
                                            const EvolutionModel& evolution, PathSpec base,
                                            std::span<const double> increments,
                                            const IvpConfig& ivp_cfg) {
  if (base.cycles != 0)
    throw std::invalid_argument("increment_sweep: monotone loading required");
  IncrementSweepResult out;
  for (double inc : increments) {
    PathSpec p = base;
    p.increment = inc;
    out.increments.push_back(inc);
    out.traces.push_back(drive_path(energy, evolution, p, ivp_cfg));
  }
  // shared grid: loading parameter of the finest trace
  std::size_t finest = 0;
  for (std::size_t i = 1; i < out.traces.size(); ++i)
    if (out.traces[i].rows.size() > out.traces[finest].rows.size()) finest = i;
  const ResponseTrace& reft = out.traces[finest];
  double scale = 0.0;
  for (const TraceRow& r : reft.rows) scale = std::max(scale, norm(r.sig));
  if (scale == 0.0) scale = 1.0;

  const auto resample = [](const ResponseTrace& tr, double lam) {
    // monotone lambda: binary search then linear interpolation
    const auto& rows = tr.rows;
    if (lam <= rows.front().lambda) return rows.front().sig;
    if (lam >= rows.back().lambda) return rows.back().sig;
    std::size_t lo = 0, hi = rows.size() - 1;
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      (rows[mid].lambda <= lam ? lo : hi) = mid;
    }
    const double w = (lam - rows[lo].lambda) / (rows[hi].lambda - rows[lo].lambda);
    return rows[lo].sig + w * (rows[hi].sig - rows[lo].sig);
  };

  for (const TraceRow& r : reft.rows) {
    for (std::size_t i = 0; i < out.traces.size(); ++i) {
      for (std::size_t j = i + 1; j < out.traces.size(); ++j) {
        const SymTensor6 si = resample(out.traces[i], r.lambda);
        const SymTensor6 sj = resample(out.traces[j], r.lambda);
        out.max_cross_deviation = std::max(out.max_cross_deviation, norm(si - sj) / scale);
      }
    }
  }
  return out;
}

struct MicroTraceRow {
  double t = 0.0;
  std::vector<double> xi_tilde;
  std::vector<double> xi_tilde_rate;
};

/// Decodes the internal-variable trajectory of a trace back to the
/// microscopic internal coordinates and their rates (Eq. of the decoder JVP
/// with the learned evolution field).
inline std::vector<MicroTraceRow> localize(const CoderPair& coder, const EvolutionModel& evolution,
                                           const ResponseTrace& trace) {
  std::vector<MicroTraceRow> out;
  out.reserve(trace.rows.size());
  for (const TraceRow& r : trace.rows) {
    MicroTraceRow m;
    m.t = r.t;
    const std::vector<double> zdot = evolution.rate(r.eps, r.z);
    coder.decoder.value_and_jvp(r.z, zdot, m.xi_tilde, m.xi_tilde_rate);
    out.push_back(std::move(m));
  }
  return out;
}

inline void micro_trace_to_csv(const std::vector<MicroTraceRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("micro_trace_to_csv: cannot open " + path);
  os.precision(17);
  if (rows.empty()) return;
  os << "t";
  for (std::size_t j = 0; j < rows[0].xi_tilde.size(); ++j) os << ",xi_" << j;
  for (std::size_t j = 0; j < rows[0].xi_tilde.size(); ++j) os << ",xi_rate_" << j;
  os << "\n";
  for (const auto& r : rows) {
    os << r.t;
    for (double v : r.xi_tilde) os << "," << v;
    for (double v : r.xi_tilde_rate) os << "," << v;
    os << "\n";
  }
}

}  // namespace etann
