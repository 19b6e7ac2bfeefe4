#pragma once

#include <algorithm>
#include <array>
#include <iostream>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "etann/lattice.hpp"
#include "etann/materials.hpp"
#include "etann/normalize.hpp"
#include "etann/record.hpp"

namespace etann {

enum class PathFamily : int { Uniaxial = 0, Biaxial = 1, Triaxial = 2, Full = 3 };

/// Random strain-path generation: zero-mean Gaussian increments applied
/// component-wise over constant time steps, state re-initialized every
/// steps_per_path increments so the response domain fills densely without
/// excessive strains.
struct GenConfig {
  double stddev = 5e-4;      // increment std per active component
  double dt = 1.0;           // s
  int steps_per_path = 50;   // t_f = steps_per_path * dt
  std::array<double, 4> family_mix{0.25, 0.25, 0.25, 0.25};
  std::size_t n_records = 0;
  std::uint64_t seed = 0;
};

/// Stateful material oracle driven by strain increments; the adapter that
/// datagen and model evaluation share.
class OracleDriver {
 public:
  virtual ~OracleDriver() = default;
  virtual int nz() const = 0;
  virtual int nxi() const { return 0; }
  virtual void reset() = 0;
  virtual bool step(const SymTensor6& deps, double dt) = 0;
  virtual SymTensor6 eps() const = 0;
  virtual SymTensor6 sig() const = 0;
  virtual double psi() const = 0;
  virtual double last_d() const = 0;
  virtual void z(std::span<double> out) const = 0;
  virtual void xi(std::span<double> /*out*/) const {}
  virtual std::string name() const = 0;
};

enum class HomogeneousKind { Elastic, VmHardening, Perzyna, Damage };

class HomogeneousOracle final : public OracleDriver {
 public:
  HomogeneousOracle(HomogeneousKind kind, ElasticParams ep, PlasticParams pp)
      : kind_(kind), ep_(ep), pp_(pp) {
    if (kind == HomogeneousKind::Damage && !pp_.damage)
      throw std::invalid_argument("HomogeneousOracle: damage parameters required");
  }

  int nz() const override { return kind_ == HomogeneousKind::Elastic ? 0 : 7; }

  void reset() override { state_ = MaterialPointState{}; }

  bool step(const SymTensor6& deps, double dt) override {
    switch (kind_) {
      case HomogeneousKind::Elastic: {
        MaterialPointState s;
        s.eps = state_.eps + deps;
        auto [sig, psi] = elastic_response(s.eps, ep_);
        const SymTensor6 sig_bar = 0.5 * (state_.sig + sig);
        s.sig = sig;
        s.psi = psi;
        s.work_inc = double_contract(sig_bar, deps);
        s.psi_inc = psi - state_.psi;
        s.d = (s.work_inc - s.psi_inc) / dt;
        state_ = s;
        return true;
      }
      case HomogeneousKind::VmHardening:
        state_ = vm_return_map(state_, deps, dt, ep_, pp_);
        return true;
      case HomogeneousKind::Perzyna:
        state_ = perzyna_step(state_, deps, dt, ep_, pp_);
        return true;
      case HomogeneousKind::Damage:
        state_ = damage_step(state_, deps, dt, ep_, pp_);
        return true;
    }
    return false;
  }

  SymTensor6 eps() const override { return state_.eps; }
  SymTensor6 sig() const override { return state_.sig; }
  double psi() const override { return state_.psi; }
  double last_d() const override { return state_.d; }

  void z(std::span<double> out) const override {
    if (kind_ == HomogeneousKind::Elastic) return;
    for (int i = 0; i < 6; ++i) out[static_cast<std::size_t>(i)] = state_.z_pl.c[static_cast<std::size_t>(i)];
    out[6] = kind_ == HomogeneousKind::Damage ? state_.z_d : state_.z_q;
  }

  std::string name() const override {
    switch (kind_) {
      case HomogeneousKind::Elastic:
        return "elastic";
      case HomogeneousKind::VmHardening:
        return "vm-hardening";
      case HomogeneousKind::Perzyna:
        return "perzyna";
      case HomogeneousKind::Damage:
        return "damage";
    }
    return "?";
  }

  const MaterialPointState& state() const { return state_; }
  HomogeneousKind kind() const { return kind_; }
  const ElasticParams& elastic_params() const { return ep_; }
  const PlasticParams& plastic_params() const { return pp_; }

 private:
  HomogeneousKind kind_;
  ElasticParams ep_;
  PlasticParams pp_;
  MaterialPointState state_{};
};

class LatticeOracle final : public OracleDriver {
 public:
  explicit LatticeOracle(LatticeCell cell) : cell_(std::move(cell)) {
    state_ = lattice_initial_state(cell_);
  }

  int nz() const override { return 0; }  // internal variables are identified, not a priori
  int nxi() const override { return static_cast<int>(3 * cell_.n_bars()); }

  void reset() override { state_ = lattice_initial_state(cell_); }

  bool step(const SymTensor6& deps, double dt) override {
    try {
      state_ = lattice_solve(cell_, state_, deps, dt).state;
      return true;
    } catch (const std::runtime_error&) {
      return false;
    }
  }

  SymTensor6 eps() const override { return state_.eps; }
  SymTensor6 sig() const override { return state_.sig; }
  double psi() const override { return state_.psi; }
  double last_d() const override { return state_.d; }
  void z(std::span<double>) const override {}
  void xi(std::span<double> out) const override {
    const auto v = lattice_internal_coordinates(state_);
    std::copy(v.begin(), v.end(), out.begin());
  }
  std::string name() const override { return "lattice"; }

  const LatticeCell& cell() const { return cell_; }
  const LatticeState& state() const { return state_; }

 private:
  LatticeCell cell_;
  LatticeState state_;
};

inline std::array<bool, 6> family_mask(PathFamily f) {
  switch (f) {
    case PathFamily::Uniaxial:
      return {true, false, false, false, false, false};
    case PathFamily::Biaxial:
      return {true, true, false, false, false, false};
    case PathFamily::Triaxial:
      return {true, true, true, false, false, false};
    case PathFamily::Full:
      return {true, true, true, true, true, true};
  }
  return {};
}

/// First-order backward-difference rates for a time-ordered sequence of
/// vectors within one path: rate assigned to sample k is
/// (v[k+1]-v[k])/dt, so the final sample has no rate and is dropped.
inline std::vector<std::vector<double>> finite_difference_rates(
    const std::vector<std::vector<double>>& series, double dt) {
  if (dt <= 0.0) throw std::invalid_argument("finite_difference_rates: dt must be positive");
  std::vector<std::vector<double>> rates;
  if (series.size() < 2) return rates;  // single-sample path: no rate, dropped
  rates.reserve(series.size() - 1);
  for (std::size_t k = 0; k + 1 < series.size(); ++k) {
    std::vector<double> r(series[k].size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = (series[k + 1][i] - series[k][i]) / dt;
    rates.push_back(std::move(r));
  }
  return rates;
}

/// Applies the random-increment procedure: sequential paths from the zero
/// state, re-initialized after steps_per_path increments; the record at the
/// start of each interval carries the state there plus the interval rates.
/// Oracle step failures truncate the path (logged) and generation continues.
inline Dataset generate_paths(OracleDriver& oracle, const GenConfig& cfg) {
  Dataset ds;
  ds.schema.nz = oracle.nz();
  ds.schema.nxi = oracle.nxi();
  ds.meta["oracle"] = oracle.name();
  ds.meta["seed"] = cfg.seed;
  ds.meta["stddev"] = cfg.stddev;
  ds.meta["dt"] = cfg.dt;
  ds.meta["t_f"] = cfg.dt * cfg.steps_per_path;
  ds.meta["steps_per_path"] = cfg.steps_per_path;
  ds.meta["family_mix"] = cfg.family_mix;
  ds.meta["conventions"] = {
      {"shear_storage", "tensor components"},
      {"z_q", "accumulated plastic multiplier of the sqrt(J2) yield form"},
      {"rates", "first-order backward differences within a path"}};
  ds.meta["units"] = {{"stress", "Pa"}, {"energy", "J/m^3"}, {"time", "s"}};

  if (cfg.n_records == 0) return ds;
  if (cfg.steps_per_path < 1) throw std::invalid_argument("generate_paths: steps_per_path < 1");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> incr(0.0, cfg.stddev);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const int nz = oracle.nz();
  const int nxi = oracle.nxi();
  const std::size_t w = static_cast<std::size_t>(ds.schema.row_width());
  ds.rows.reserve(cfg.n_records * w);

  std::vector<double> z_prev(static_cast<std::size_t>(nz)), z_now(static_cast<std::size_t>(nz));
  std::vector<double> xi_prev(static_cast<std::size_t>(nxi)), xi_now(static_cast<std::size_t>(nxi));

  std::size_t emitted = 0;
  std::size_t truncated_paths = 0;
  while (emitted < cfg.n_records) {
    // pick a family by the configured mix
    const double u = unif(rng);
    double acc = 0.0;
    PathFamily family = PathFamily::Full;
    for (int f = 0; f < 4; ++f) {
      acc += cfg.family_mix[static_cast<std::size_t>(f)];
      if (u < acc) {
        family = static_cast<PathFamily>(f);
        break;
      }
    }
    const auto mask = family_mask(family);

    oracle.reset();
    double t = 0.0;
    for (int k = 0; k < cfg.steps_per_path && emitted < cfg.n_records; ++k) {
      SymTensor6 deps{};
      for (int i = 0; i < 6; ++i) {
        const double v = incr(rng);  // draw unconditionally: mix-independent stream use
        if (mask[static_cast<std::size_t>(i)]) deps.c[static_cast<std::size_t>(i)] = v;
      }
      const SymTensor6 eps0 = oracle.eps();
      const SymTensor6 sig0 = oracle.sig();
      const double psi0 = oracle.psi();
      oracle.z(z_prev);
      oracle.xi(xi_prev);
      if (!oracle.step(deps, cfg.dt)) {
        ++truncated_paths;
        break;
      }
      oracle.z(z_now);
      oracle.xi(xi_now);

      const std::size_t base = ds.rows.size();
      ds.rows.resize(base + w, 0.0);
      std::span<double> row(ds.rows.data() + base, w);
      row[0] = t;
      for (int i = 0; i < 6; ++i) {
        row[static_cast<std::size_t>(ds.schema.col_eps() + i)] = eps0.c[static_cast<std::size_t>(i)];
        row[static_cast<std::size_t>(ds.schema.col_eps_rate() + i)] =
            deps.c[static_cast<std::size_t>(i)] / cfg.dt;
        row[static_cast<std::size_t>(ds.schema.col_sig() + i)] = sig0.c[static_cast<std::size_t>(i)];
      }
      for (int i = 0; i < nz; ++i) {
        row[static_cast<std::size_t>(ds.schema.col_z() + i)] = z_prev[static_cast<std::size_t>(i)];
        row[static_cast<std::size_t>(ds.schema.col_z_rate() + i)] =
            (z_now[static_cast<std::size_t>(i)] - z_prev[static_cast<std::size_t>(i)]) / cfg.dt;
      }
      row[static_cast<std::size_t>(ds.schema.col_psi())] = psi0;
      row[static_cast<std::size_t>(ds.schema.col_d())] = oracle.last_d();
      for (int i = 0; i < nxi; ++i) {
        row[static_cast<std::size_t>(ds.schema.col_xi() + i)] = xi_prev[static_cast<std::size_t>(i)];
        row[static_cast<std::size_t>(ds.schema.col_xi_rate() + i)] =
            (xi_now[static_cast<std::size_t>(i)] - xi_prev[static_cast<std::size_t>(i)]) / cfg.dt;
      }
      t += cfg.dt;
      ++emitted;
    }
  }
  if (truncated_paths > 0)
    std::cerr << "[etann] warning: " << truncated_paths << " paths truncated by oracle failures\n";
  ds.meta["n_records"] = emitted;
  return ds;
}

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Shuffle (seeded) and split 60/20/20.
inline SplitIndices split_records(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("split_records: empty dataset");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_train = n * 6 / 10;
  const std::size_t n_val = n * 2 / 10;
  SplitIndices s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

/// Normalization constants fitted on the training and validation rows only.
inline NormalizationStats fit_stats(const Dataset& ds, const SplitIndices& split) {
  std::vector<std::size_t> fit_rows = split.train;
  fit_rows.insert(fit_rows.end(), split.val.begin(), split.val.end());
  const std::size_t stride = static_cast<std::size_t>(ds.schema.row_width());
  NormalizationStats st;
  const auto fit = [&](int col, int width) {
    return ComponentStats::fit(ds.rows, stride, static_cast<std::size_t>(col),
                               static_cast<std::size_t>(width), fit_rows);
  };
  st.eps = fit(ds.schema.col_eps(), 6);
  st.eps_rate = fit(ds.schema.col_eps_rate(), 6);
  if (ds.schema.nz > 0) {
    st.z = fit(ds.schema.col_z(), ds.schema.nz);
    st.z_rate = fit(ds.schema.col_z_rate(), ds.schema.nz);
  }
  st.sig = fit(ds.schema.col_sig(), 6);
  st.psi = fit(ds.schema.col_psi(), 1);
  st.diss = fit(ds.schema.col_d(), 1);
  if (ds.schema.nxi > 0) {
    st.xi = fit(ds.schema.col_xi(), ds.schema.nxi);
    st.xi_rate = fit(ds.schema.col_xi_rate(), ds.schema.nxi);
  }
  return st;
}

struct SplitDataset {
  Dataset data;
  SplitIndices split;
  NormalizationStats stats;
};

inline SplitDataset split_and_normalize(Dataset ds, std::uint64_t seed) {
  SplitDataset out{std::move(ds), {}, {}};
  out.split = split_records(out.data.n_records(), seed);
  out.stats = fit_stats(out.data, out.split);
  return out;
}

}  // namespace etann
