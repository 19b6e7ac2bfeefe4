#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "etann/datagen.hpp"
#include "etann/kernels.hpp"
#include "etann/loss.hpp"
#include "etann/models.hpp"
#include "etann/optimizer.hpp"
#include "etann/record.hpp"

namespace etann {

struct TrainConfig {
  double lr = 1e-3;
  double decay = 0.9999;  // optimizer second-moment decay
  int batch_size = 1000;
  double huber_delta = 0.01;
  double lambda_reg = 1.0;
  double lambda_psi = 1.0;
  double lambda_grad = 1.0;
  double lambda_rate = 1.0;
  double lambda_recon = 1.0;
  double lambda_xidot = 1.0;
  bool include_value_loss = true;  // L_psi is not a necessary condition; on by default
  int max_epochs = 1000;
  int patience = 100;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct LossTerms {
  double total = 0.0;
  double psi = 0.0;
  double grad = 0.0;
  double rate = 0.0;
  double recon = 0.0;
  double xidot = 0.0;
  double reg = 0.0;

  LossTerms& operator+=(const LossTerms& o) {
    total += o.total;
    psi += o.psi;
    grad += o.grad;
    rate += o.rate;
    recon += o.recon;
    xidot += o.xidot;
    reg += o.reg;
    return *this;
  }
  LossTerms& operator*=(double s) {
    total *= s;
    psi *= s;
    grad *= s;
    rate *= s;
    recon *= s;
    xidot *= s;
    reg *= s;
    return *this;
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainingHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
  bool aborted_non_finite = false;
};

namespace traindetail {

inline void parallel_slices(std::size_t n, int threads,
                            const std::function<void(std::size_t, std::size_t, int)>& fn) {
  const int t = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (t == 1 || n == 0) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + static_cast<std::size_t>(t) - 1) / static_cast<std::size_t>(t);
  for (int i = 0; i < t; ++i) {
    const std::size_t lo = static_cast<std::size_t>(i) * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([=, &fn] { fn(lo, hi, i); });
  }
  for (auto& th : pool) th.join();
}

/// Gathers/scatters the parameters of several networks as one flat vector.
class ParamPack {
 public:
  void add(Mlp* net) {
    offsets_.push_back(total_);
    nets_.push_back(net);
    total_ += net->parameter_count();
  }
  std::size_t size() const { return total_; }
  std::size_t offset(std::size_t i) const { return offsets_[i]; }

  std::vector<double> gather() const {
    std::vector<double> p(total_);
    for (std::size_t i = 0; i < nets_.size(); ++i) {
      const std::vector<double> f = nets_[i]->flatten();
      std::copy(f.begin(), f.end(), p.begin() + static_cast<std::ptrdiff_t>(offsets_[i]));
    }
    return p;
  }
  void scatter(std::span<const double> p) {
    for (std::size_t i = 0; i < nets_.size(); ++i)
      nets_[i]->unflatten(p.subspan(offsets_[i], nets_[i]->parameter_count()));
  }

 private:
  std::vector<Mlp*> nets_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

/// One epoch-driven optimization problem: batch loss + gradient over a row
/// subset, plus an evaluation-only path.
struct Problem {
  virtual ~Problem() = default;
  virtual ParamPack& params() = 0;
  virtual LossTerms batch(std::span<const std::size_t> rows, std::vector<double>* grad) = 0;
};

inline LossTerms chunked_eval(Problem& p, std::span<const std::size_t> rows, int batch_size) {
  LossTerms total;
  if (rows.empty()) return total;
  std::size_t off = 0;
  while (off < rows.size()) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(batch_size),
                                                rows.size() - off);
    LossTerms t = p.batch(rows.subspan(off, n), nullptr);
    t *= static_cast<double>(n);
    total += t;
    off += n;
  }
  total *= 1.0 / static_cast<double>(rows.size());
  return total;
}

inline TrainingHistory run_training(Problem& problem, std::span<const std::size_t> train_rows,
                                    std::span<const std::size_t> val_rows, const TrainConfig& cfg,
                                    const std::string& tag) {
  TrainingHistory hist;
  ParamPack& pack = problem.params();
  std::vector<double> params = pack.gather();
  std::vector<double> best = params;
  Nadam opt(params.size(), NadamConfig{cfg.lr, 0.9, cfg.decay, 1e-8});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_rows.begin(), train_rows.end());
  std::vector<double> grad(params.size());

  int since_best = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double train_loss = 0.0;
    std::size_t seen = 0;
    bool bad = false;
    for (std::size_t off = 0; off < order.size() && !bad;
         off += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t n =
          std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), order.size() - off);
      std::fill(grad.begin(), grad.end(), 0.0);
      const LossTerms t = problem.batch({order.data() + off, n}, &grad);
      if (!std::isfinite(t.total)) {
        bad = true;
        break;
      }
      train_loss += t.total * static_cast<double>(n);
      seen += n;
      try {
        opt.step(params, grad);
      } catch (const std::runtime_error&) {
        bad = true;
        break;
      }
      pack.scatter(params);
    }
    if (bad) {
      std::cerr << "[etann] " << tag << ": non-finite loss at epoch " << epoch
                << ", restoring best weights\n";
      hist.aborted_non_finite = true;
      break;
    }
    train_loss /= static_cast<double>(std::max<std::size_t>(seen, 1));
    const double val_loss =
        val_rows.empty() ? train_loss : chunked_eval(problem, val_rows, cfg.batch_size).total;
    hist.epochs.push_back({epoch, train_loss, val_loss});
    if (val_loss < hist.best_val) {
      hist.best_val = val_loss;
      hist.best_epoch = epoch;
      best = params;
      since_best = 0;
    } else if (++since_best > cfg.patience) {
      break;
    }
  }
  pack.scatter(best);
  return hist;
}

// --------------------------------------------------------------------------
// A-priori energy problem: fit psi and its gradients (stress, dissipation)
// plus the nonnegative-dissipation regularizer.
// --------------------------------------------------------------------------
struct EnergyTable {
  RowMat X;       // normalized (eps, z)
  RowMat zdot;    // physical internal-variable rates
  RowMat sig_t;   // physical stress targets
  Eigen::VectorXd psi_t;
  Eigen::VectorXd d_t;
};

inline EnergyTable build_energy_table(const Dataset& ds, const AnchoredNet& block) {
  const std::size_t n = ds.n_records();
  const int nz = ds.schema.nz;
  EnergyTable t;
  t.X.resize(static_cast<Eigen::Index>(n), 6 + nz);
  t.zdot.resize(static_cast<Eigen::Index>(n), std::max(nz, 1));
  t.sig_t.resize(static_cast<Eigen::Index>(n), 6);
  t.psi_t.resize(static_cast<Eigen::Index>(n));
  t.d_t.resize(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = ds.row(r);
    for (int i = 0; i < 6; ++i)
      t.X(static_cast<Eigen::Index>(r), i) =
          (row[static_cast<std::size_t>(ds.schema.col_eps() + i)] - block.in_beta[static_cast<std::size_t>(i)]) /
          block.in_alpha[static_cast<std::size_t>(i)];
    for (int j = 0; j < nz; ++j) {
      t.X(static_cast<Eigen::Index>(r), 6 + j) =
          (row[static_cast<std::size_t>(ds.schema.col_z() + j)] -
           block.in_beta[static_cast<std::size_t>(6 + j)]) /
          block.in_alpha[static_cast<std::size_t>(6 + j)];
      t.zdot(static_cast<Eigen::Index>(r), j) =
          row[static_cast<std::size_t>(ds.schema.col_z_rate() + j)];
    }
    for (int i = 0; i < 6; ++i)
      t.sig_t(static_cast<Eigen::Index>(r), i) =
          row[static_cast<std::size_t>(ds.schema.col_sig() + i)];
    t.psi_t(static_cast<Eigen::Index>(r)) = row[static_cast<std::size_t>(ds.schema.col_psi())];
    t.d_t(static_cast<Eigen::Index>(r)) = row[static_cast<std::size_t>(ds.schema.col_d())];
  }
  return t;
}

struct EnergyProblem final : Problem {
  EnergyModel* model;
  EnergyTable table;
  std::vector<double> sig_alpha;  // stress residual scales
  double psi_alpha = 1.0;
  double d_alpha = 1.0;
  TrainConfig cfg;
  ParamPack pack;

  EnergyProblem(EnergyModel& m, const Dataset& ds, const NormalizationStats& stats,
                const TrainConfig& c)
      : model(&m), cfg(c) {
    table = build_energy_table(ds, m.block);
    sig_alpha = stats.sig.alpha;
    psi_alpha = stats.psi.alpha[0];
    d_alpha = stats.diss.alpha[0];
    pack.add(&m.block.net);
  }

  ParamPack& params() override { return pack; }

  LossTerms batch(std::span<const std::size_t> rows, std::vector<double>* grad) override {
    const int nz = model->nz;
    const int nin = 6 + nz;
    const Eigen::Index B = static_cast<Eigen::Index>(rows.size());
    const double invB = 1.0 / static_cast<double>(B);
    const double delta = cfg.huber_delta;
    const double a_psi = model->block.out_scale[0];

    // anchor value (and optionally its gradient path)
    BatchKernels anchor_k(model->block.net);
    const std::vector<double> x0 = model->block.anchor_input();
    RowMat X0(1, nin);
    for (int i = 0; i < nin; ++i) X0(0, i) = x0[static_cast<std::size_t>(i)];
    const double y0 = anchor_k.forward(X0)(0, 0);

    const int nthreads = grad ? cfg.threads : 1;
    std::vector<LossTerms> terms(static_cast<std::size_t>(std::max(nthreads, 1)));
    std::vector<std::vector<double>> tgrads;
    if (grad) tgrads.assign(static_cast<std::size_t>(std::max(nthreads, 1)),
                            std::vector<double>(grad->size(), 0.0));
    std::vector<double> anchor_seed(static_cast<std::size_t>(std::max(nthreads, 1)), 0.0);

    parallel_slices(rows.size(), nthreads, [&](std::size_t lo, std::size_t hi, int tid) {
      const Eigen::Index nb = static_cast<Eigen::Index>(hi - lo);
      RowMat X(nb, nin);
      for (Eigen::Index b = 0; b < nb; ++b)
        X.row(b) = table.X.row(static_cast<Eigen::Index>(rows[lo + static_cast<std::size_t>(b)]));
      BatchKernels k(model->block.net);
      k.forward(X);
      const RowMat& G = k.input_gradient();
      const RowMat& Y = k.output();

      RowMat dPsi = RowMat::Zero(nb, 1);
      RowMat dG = RowMat::Zero(nb, nin);
      LossTerms& lt = terms[static_cast<std::size_t>(tid)];
      for (Eigen::Index b = 0; b < nb; ++b) {
        const Eigen::Index r = static_cast<Eigen::Index>(rows[lo + static_cast<std::size_t>(b)]);
        const double psi_pred = a_psi * (Y(b, 0) - y0);
        // value term
        if (cfg.include_value_loss) {
          const double rp = (table.psi_t(r) - psi_pred) / psi_alpha;
          lt.psi += cfg.lambda_psi * huber_component(rp, delta) * invB;
          dPsi(b, 0) += -cfg.lambda_psi * huber_component_deriv(rp, delta) / psi_alpha * invB * a_psi;
        }
        // stress terms
        for (int i = 0; i < 6; ++i) {
          const double sig_pred =
              a_psi / model->block.in_alpha[static_cast<std::size_t>(i)] * G(b, i);
          const double rs = (table.sig_t(r, i) - sig_pred) / sig_alpha[static_cast<std::size_t>(i)];
          lt.grad += cfg.lambda_grad * huber_component(rs, delta) * invB;
          dG(b, i) += -cfg.lambda_grad * huber_component_deriv(rs, delta) /
                      sig_alpha[static_cast<std::size_t>(i)] * invB * a_psi /
                      model->block.in_alpha[static_cast<std::size_t>(i)];
        }
        // dissipation term d = -(dpsi/dz) . zdot
        double d_pred = 0.0;
        for (int j = 0; j < nz; ++j)
          d_pred -= a_psi / model->block.in_alpha[static_cast<std::size_t>(6 + j)] * G(b, 6 + j) *
                    table.zdot(r, j);
        const double rd = (table.d_t(r) - d_pred) / d_alpha;
        lt.grad += cfg.lambda_grad * huber_component(rd, delta) * invB;
        double dd = -cfg.lambda_grad * huber_component_deriv(rd, delta) / d_alpha * invB;
        // regularizer on negative dissipation
        if (d_pred < 0.0) {
          const double rm = -d_pred / d_alpha;
          lt.reg += cfg.lambda_reg * huber_component(rm, delta) * invB;
          dd += -cfg.lambda_reg * huber_component_deriv(rm, delta) / d_alpha * invB;
        }
        for (int j = 0; j < nz; ++j)
          dG(b, 6 + j) += dd * (-a_psi / model->block.in_alpha[static_cast<std::size_t>(6 + j)]) *
                          table.zdot(r, j);
      }
      lt.total = lt.psi + lt.grad + lt.rate + lt.reg;
      if (grad) {
        k.double_backprop(dPsi, dG, tgrads[static_cast<std::size_t>(tid)]);
        anchor_seed[static_cast<std::size_t>(tid)] = -dPsi.col(0).sum();
      }
    });

    LossTerms total;
    for (const LossTerms& t : terms) total += t;
    if (grad) {
      for (const auto& tg : tgrads)
        for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += tg[i];
      double seed = 0.0;
      for (double s : anchor_seed) seed += s;
      RowMat dy0(1, 1);
      dy0(0, 0) = seed;
      anchor_k.backprop(dy0, *grad);
    }
    return total;
  }
};

// --------------------------------------------------------------------------
// Evolution problem: derivative fitting of z_rate = f(eps, z). The input
// strain of each sample is the arrival strain of its generation interval
// (eps + dt * eps_rate): backward-difference rates pair exactly with the
// state reached at the end of the interval.
// --------------------------------------------------------------------------
struct EvolutionTable {
  RowMat X;        // normalized (eps_arrival, z)
  RowMat target;   // z_rate / alpha_zdot (normalized targets)
};

struct EvolutionProblem final : Problem {
  EvolutionModel* model;
  EvolutionTable table;
  TrainConfig cfg;
  ParamPack pack;

  EvolutionProblem(EvolutionModel& m, EvolutionTable t, const TrainConfig& c)
      : model(&m), table(std::move(t)), cfg(c) {
    pack.add(&m.block.net);
  }

  ParamPack& params() override { return pack; }

  LossTerms batch(std::span<const std::size_t> rows, std::vector<double>* grad) override {
    const int nz = model->nz;
    const int nin = 6 + nz;
    const Eigen::Index B = static_cast<Eigen::Index>(rows.size());
    const double invB = 1.0 / static_cast<double>(B);
    const double delta = cfg.huber_delta;

    BatchKernels anchor_k(model->block.net);
    const std::vector<double> x0 = model->block.anchor_input();
    RowMat X0(1, nin);
    for (int i = 0; i < nin; ++i) X0(0, i) = x0[static_cast<std::size_t>(i)];
    const Eigen::RowVectorXd y0 = anchor_k.forward(X0).row(0);

    const int nthreads = grad ? cfg.threads : 1;
    std::vector<LossTerms> terms(static_cast<std::size_t>(std::max(nthreads, 1)));
    std::vector<std::vector<double>> tgrads;
    if (grad) tgrads.assign(static_cast<std::size_t>(std::max(nthreads, 1)),
                            std::vector<double>(grad->size(), 0.0));
    std::vector<Eigen::RowVectorXd> anchor_seeds(static_cast<std::size_t>(std::max(nthreads, 1)),
                                                 Eigen::RowVectorXd::Zero(nz));

    parallel_slices(rows.size(), nthreads, [&](std::size_t lo, std::size_t hi, int tid) {
      const Eigen::Index nb = static_cast<Eigen::Index>(hi - lo);
      RowMat X(nb, nin);
      for (Eigen::Index b = 0; b < nb; ++b)
        X.row(b) = table.X.row(static_cast<Eigen::Index>(rows[lo + static_cast<std::size_t>(b)]));
      BatchKernels k(model->block.net);
      const RowMat& Y = k.forward(X);
      RowMat dY = RowMat::Zero(nb, nz);
      LossTerms& lt = terms[static_cast<std::size_t>(tid)];
      for (Eigen::Index b = 0; b < nb; ++b) {
        const Eigen::Index r = static_cast<Eigen::Index>(rows[lo + static_cast<std::size_t>(b)]);
        for (int j = 0; j < nz; ++j) {
          // normalized residual: alpha_zdot cancels against the output scale
          const double rres = table.target(r, j) - (Y(b, j) - y0(j));
          lt.rate += cfg.lambda_rate * huber_component(rres, delta) * invB;
          dY(b, j) = -cfg.lambda_rate * huber_component_deriv(rres, delta) * invB;
        }
      }
      lt.total = lt.rate;
      if (grad) {
        k.backprop(dY, tgrads[static_cast<std::size_t>(tid)]);
        anchor_seeds[static_cast<std::size_t>(tid)] = -dY.colwise().sum();
      }
    });

    LossTerms total;
    for (const LossTerms& t : terms) total += t;
    if (grad) {
      for (const auto& tg : tgrads)
        for (std::size_t i = 0; i < grad->size(); ++i) (*grad)[i] += tg[i];
      Eigen::RowVectorXd seed = Eigen::RowVectorXd::Zero(nz);
      for (const auto& s : anchor_seeds) seed += s;
      RowMat dy0 = seed;
      anchor_k.backprop(dy0, *grad);
    }
    return total;
  }
};

// --------------------------------------------------------------------------
// Identification problem: autoencoder + energy network trained jointly on
// internal coordinates, their rates, and the thermodynamic targets.
// --------------------------------------------------------------------------
struct IdentificationTable {
  RowMat Xi;          // normalized xi
  RowMat Xidot;       // xi_rate / alpha_xi (chain-consistent tangents)
  RowMat recon_t;     // xi / alpha_xi (beta-free reconstruction target)
  RowMat xidot_t;     // xi_rate (physical)
  RowMat eps_n;       // normalized eps
  RowMat sig_t;       // physical
  Eigen::VectorXd psi_t, d_t;
};

struct IdentificationProblem final : Problem {
  CoderPair* coder;
  EnergyModel* energy;
  IdentificationTable table;
  std::vector<double> sig_alpha, xi_alpha, xidot_alpha;
  double psi_alpha = 1.0, d_alpha = 1.0;
  TrainConfig cfg;
  ParamPack pack;

  IdentificationProblem(CoderPair& c, EnergyModel& e, const Dataset& ds,
                        const NormalizationStats& stats, const TrainConfig& cf)
      : coder(&c), energy(&e), cfg(cf) {
    const std::size_t n = ds.n_records();
    const int nxi = ds.schema.nxi;
    table.Xi.resize(static_cast<Eigen::Index>(n), nxi);
    table.Xidot.resize(static_cast<Eigen::Index>(n), nxi);
    table.recon_t.resize(static_cast<Eigen::Index>(n), nxi);
    table.xidot_t.resize(static_cast<Eigen::Index>(n), nxi);
    table.eps_n.resize(static_cast<Eigen::Index>(n), 6);
    table.sig_t.resize(static_cast<Eigen::Index>(n), 6);
    table.psi_t.resize(static_cast<Eigen::Index>(n));
    table.d_t.resize(static_cast<Eigen::Index>(n));
    for (std::size_t r = 0; r < n; ++r) {
      const auto row = ds.row(r);
      for (int i = 0; i < nxi; ++i) {
        const double x = row[static_cast<std::size_t>(ds.schema.col_xi() + i)];
        const double xd = row[static_cast<std::size_t>(ds.schema.col_xi_rate() + i)];
        const double a = stats.xi.alpha[static_cast<std::size_t>(i)];
        table.Xi(static_cast<Eigen::Index>(r), i) =
            (x - stats.xi.beta[static_cast<std::size_t>(i)]) / a;
        table.Xidot(static_cast<Eigen::Index>(r), i) = xd / a;
        table.recon_t(static_cast<Eigen::Index>(r), i) = x / a;
        table.xidot_t(static_cast<Eigen::Index>(r), i) = xd;
      }
      for (int i = 0; i < 6; ++i) {
        table.eps_n(static_cast<Eigen::Index>(r), i) =
            (row[static_cast<std::size_t>(ds.schema.col_eps() + i)] -
             energy->block.in_beta[static_cast<std::size_t>(i)]) /
            energy->block.in_alpha[static_cast<std::size_t>(i)];
        table.sig_t(static_cast<Eigen::Index>(r), i) =
            row[static_cast<std::size_t>(ds.schema.col_sig() + i)];
      }
      table.psi_t(static_cast<Eigen::Index>(r)) = row[static_cast<std::size_t>(ds.schema.col_psi())];
      table.d_t(static_cast<Eigen::Index>(r)) = row[static_cast<std::size_t>(ds.schema.col_d())];
    }
    sig_alpha = stats.sig.alpha;
    xi_alpha = stats.xi.alpha;
    xidot_alpha = stats.xi_rate.alpha;
    psi_alpha = stats.psi.alpha[0];
    d_alpha = stats.diss.alpha[0];
    pack.add(&c.encoder.net);
    pack.add(&c.decoder.net);
    pack.add(&e.block.net);
  }

  ParamPack& params() override { return pack; }

  LossTerms batch(std::span<const std::size_t> rows, std::vector<double>* grad) override {
    const int nz = coder->nz;
    const int nxi = coder->nxi;
    const int nE = 6 + nz;
    const Eigen::Index B = static_cast<Eigen::Index>(rows.size());
    const double invB = 1.0 / static_cast<double>(B);
    const double delta = cfg.huber_delta;
    const double a_psi = energy->block.out_scale[0];

    const std::size_t enc_n = coder->encoder.net.parameter_count();
    const std::size_t dec_n = coder->decoder.net.parameter_count();

    // anchors
    BatchKernels enc_anchor(coder->encoder.net);
    BatchKernels dec_anchor(coder->decoder.net);
    BatchKernels ene_anchor(energy->block.net);
    const std::vector<double> xi0 = coder->encoder.anchor_input();
    RowMat Xi0(1, nxi);
    for (int i = 0; i < nxi; ++i) Xi0(0, i) = xi0[static_cast<std::size_t>(i)];
    const Eigen::RowVectorXd h0 = enc_anchor.forward(Xi0).row(0);
    RowMat Z0 = RowMat::Zero(1, nz);  // decoder anchor input: z = 0
    const Eigen::RowVectorXd g0 = dec_anchor.forward(Z0).row(0);
    const std::vector<double> xe0 = energy->block.anchor_input();
    RowMat XE0(1, nE);
    for (int i = 0; i < nE; ++i) XE0(0, i) = xe0[static_cast<std::size_t>(i)];
    const double psi0 = ene_anchor.forward(XE0)(0, 0);

    // gather batch
    RowMat Xi(B, nxi), Xidot(B, nxi);
    for (Eigen::Index b = 0; b < B; ++b) {
      const Eigen::Index r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(b)]);
      Xi.row(b) = table.Xi.row(r);
      Xidot.row(b) = table.Xidot.row(r);
    }

    // encoder (dual), anchored latent
    BatchKernels enc(coder->encoder.net);
    enc.forward_dual(Xi, Xidot);
    RowMat Zlat = enc.output();
    Zlat.rowwise() -= h0;
    const RowMat& Zdot = enc.output_dot();

    // energy on (eps, z)
    RowMat XE(B, nE);
    for (Eigen::Index b = 0; b < B; ++b) {
      const Eigen::Index r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(b)]);
      XE.row(b).head(6) = table.eps_n.row(r);
      XE.row(b).tail(nz) = Zlat.row(b);
    }
    BatchKernels ene(energy->block.net);
    ene.forward(XE);
    const RowMat& G = ene.input_gradient();
    const RowMat& Ypsi = ene.output();

    // decoder (dual)
    BatchKernels dec(coder->decoder.net);
    dec.forward_dual(Zlat, Zdot);
    RowMat Xrec = dec.output();
    Xrec.rowwise() -= g0;
    const RowMat& Xrecdot = dec.output_dot();

    LossTerms lt;
    RowMat dPsi = RowMat::Zero(B, 1);
    RowMat dG = RowMat::Zero(B, nE);
    RowMat dXrec = RowMat::Zero(B, nxi);
    RowMat dXrecdot = RowMat::Zero(B, nxi);
    RowMat dZ_direct = RowMat::Zero(B, nz);     // from the d-term through zdot? no: zdot seeds
    RowMat dZdot_direct = RowMat::Zero(B, nz);  // d-term dependence on zdot

    for (Eigen::Index b = 0; b < B; ++b) {
      const Eigen::Index r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(b)]);
      // reconstruction
      for (int i = 0; i < nxi; ++i) {
        const double rr = table.recon_t(r, i) - Xrec(b, i);
        lt.recon += cfg.lambda_recon * huber_component(rr, delta) * invB;
        dXrec(b, i) = -cfg.lambda_recon * huber_component_deriv(rr, delta) * invB;
        // coordinate-rate term
        const double pred = xi_alpha[static_cast<std::size_t>(i)] * Xrecdot(b, i);
        const double rxd = (table.xidot_t(r, i) - pred) / xidot_alpha[static_cast<std::size_t>(i)];
        lt.xidot += cfg.lambda_xidot * huber_component(rxd, delta) * invB;
        dXrecdot(b, i) = -cfg.lambda_xidot * huber_component_deriv(rxd, delta) *
                         xi_alpha[static_cast<std::size_t>(i)] /
                         xidot_alpha[static_cast<std::size_t>(i)] * invB;
      }
      // energy value
      const double psi_pred = a_psi * (Ypsi(b, 0) - psi0);
      if (cfg.include_value_loss) {
        const double rp = (table.psi_t(r) - psi_pred) / psi_alpha;
        lt.psi += cfg.lambda_psi * huber_component(rp, delta) * invB;
        dPsi(b, 0) += -cfg.lambda_psi * huber_component_deriv(rp, delta) / psi_alpha * invB * a_psi;
      }
      // stress
      for (int i = 0; i < 6; ++i) {
        const double sig_pred =
            a_psi / energy->block.in_alpha[static_cast<std::size_t>(i)] * G(b, i);
        const double rs = (table.sig_t(r, i) - sig_pred) / sig_alpha[static_cast<std::size_t>(i)];
        lt.grad += cfg.lambda_grad * huber_component(rs, delta) * invB;
        dG(b, i) += -cfg.lambda_grad * huber_component_deriv(rs, delta) /
                    sig_alpha[static_cast<std::size_t>(i)] * invB * a_psi /
                    energy->block.in_alpha[static_cast<std::size_t>(i)];
      }
      // dissipation with the chain-rule rates
      double d_pred = 0.0;
      for (int j = 0; j < nz; ++j)
        d_pred -= a_psi / energy->block.in_alpha[static_cast<std::size_t>(6 + j)] * G(b, 6 + j) *
                  Zdot(b, j);
      const double rd = (table.d_t(r) - d_pred) / d_alpha;
      lt.grad += cfg.lambda_grad * huber_component(rd, delta) * invB;
      double dd = -cfg.lambda_grad * huber_component_deriv(rd, delta) / d_alpha * invB;
      if (d_pred < 0.0) {
        const double rm = -d_pred / d_alpha;
        lt.reg += cfg.lambda_reg * huber_component(rm, delta) * invB;
        dd += -cfg.lambda_reg * huber_component_deriv(rm, delta) / d_alpha * invB;
      }
      for (int j = 0; j < nz; ++j) {
        const double fj = a_psi / energy->block.in_alpha[static_cast<std::size_t>(6 + j)];
        dG(b, 6 + j) += dd * (-fj) * Zdot(b, j);
        dZdot_direct(b, j) += dd * (-fj) * G(b, 6 + j);
      }
    }
    lt.total = lt.recon + lt.xidot + lt.psi + lt.grad + lt.reg;
    if (!grad) return lt;

    std::span<double> g_enc(grad->data() + pack.offset(0), enc_n);
    std::span<double> g_dec(grad->data() + pack.offset(1), dec_n);
    std::span<double> g_ene(grad->data() + pack.offset(2), energy->block.net.parameter_count());

    // decoder backward (value + tangent seeds), collecting latent adjoints
    RowMat dZ_fromdec, dZdot_fromdec;
    dec.backprop_dual(dXrec, dXrecdot, g_dec, &dZ_fromdec, &dZdot_fromdec);
    // decoder anchor path: g0 subtracted from every reconstruction
    RowMat dg0 = -dXrec.colwise().sum();
    dec_anchor.backprop(dg0, g_dec);

    // energy backward (value + input-gradient seeds)
    RowMat dXE;
    ene.double_backprop(dPsi, dG, g_ene, &dXE);
    RowMat dpsi0(1, 1);
    dpsi0(0, 0) = -dPsi.col(0).sum();
    ene_anchor.backprop(dpsi0, g_ene);

    // encoder backward: latent adjoints from the decoder, the energy z-block
    // and the d-term's direct zdot dependence
    RowMat dZ = dZ_fromdec + dZ_direct;
    dZ += dXE.rightCols(nz);
    RowMat dZdot = dZdot_fromdec + dZdot_direct;
    enc.backprop_dual(dZ, dZdot, g_enc);
    RowMat dh0 = -dZ.colwise().sum();
    enc_anchor.backprop(dh0, g_enc);
    return lt;
  }
};

}  // namespace traindetail

// ---------------------------------------------------------------------------
// Public training entry points
// ---------------------------------------------------------------------------

struct EtannBlocks {
  std::optional<EnergyModel> energy;
  std::optional<EvolutionModel> evolution;
  std::optional<CoderPair> coder;
};

enum class Schedule { TwoStage, EnergyOnly, EvolutionOnly };

inline Schedule schedule_from_string(const std::string& s) {
  if (s == "two-stage") return Schedule::TwoStage;
  if (s == "energy-only") return Schedule::EnergyOnly;
  if (s == "evolution-only") return Schedule::EvolutionOnly;
  throw std::invalid_argument("unknown schedule: " + s);
}

struct TrainResult {
  TrainingHistory energy;
  TrainingHistory evolution;
};

/// Spec op loss_energy: mean energy-block loss over the given rows.
inline LossTerms loss_energy(EnergyModel& m, const SplitDataset& sd,
                             std::span<const std::size_t> rows, const TrainConfig& cfg) {
  traindetail::EnergyProblem p(m, sd.data, sd.stats, cfg);
  return traindetail::chunked_eval(p, rows, cfg.batch_size);
}

namespace traindetail {

inline EvolutionTable build_evolution_table_apriori(const Dataset& ds,
                                                    const NormalizationStats& stats,
                                                    const AnchoredNet& block, double dt) {
  const std::size_t n = ds.n_records();
  const int nz = ds.schema.nz;
  EvolutionTable t;
  t.X.resize(static_cast<Eigen::Index>(n), 6 + nz);
  t.target.resize(static_cast<Eigen::Index>(n), nz);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = ds.row(r);
    for (int i = 0; i < 6; ++i) {
      const double eps_end = row[static_cast<std::size_t>(ds.schema.col_eps() + i)] +
                             dt * row[static_cast<std::size_t>(ds.schema.col_eps_rate() + i)];
      t.X(static_cast<Eigen::Index>(r), i) =
          (eps_end - block.in_beta[static_cast<std::size_t>(i)]) /
          block.in_alpha[static_cast<std::size_t>(i)];
    }
    for (int j = 0; j < nz; ++j) {
      t.X(static_cast<Eigen::Index>(r), 6 + j) =
          (row[static_cast<std::size_t>(ds.schema.col_z() + j)] -
           block.in_beta[static_cast<std::size_t>(6 + j)]) /
          block.in_alpha[static_cast<std::size_t>(6 + j)];
      t.target(static_cast<Eigen::Index>(r), j) =
          row[static_cast<std::size_t>(ds.schema.col_z_rate() + j)] /
          stats.z_rate.alpha[static_cast<std::size_t>(j)];
    }
  }
  return t;
}

}  // namespace traindetail

/// Spec op loss_evolution.
inline LossTerms loss_evolution(EvolutionModel& m, const SplitDataset& sd,
                                std::span<const std::size_t> rows, const TrainConfig& cfg) {
  const double dt = sd.data.meta.value("dt", 1.0);
  traindetail::EvolutionProblem p(
      m, traindetail::build_evolution_table_apriori(sd.data, sd.stats, m.block, dt), cfg);
  return traindetail::chunked_eval(p, rows, cfg.batch_size);
}

/// Spec op loss_identification.
inline LossTerms loss_identification(CoderPair& c, EnergyModel& e, const SplitDataset& sd,
                                     std::span<const std::size_t> rows, const TrainConfig& cfg) {
  traindetail::IdentificationProblem p(c, e, sd.data, sd.stats, cfg);
  return traindetail::chunked_eval(p, rows, cfg.batch_size);
}

/// Builders wiring dataset statistics into freshly initialized blocks.
inline EnergyModel make_energy_model(const SplitDataset& sd, const std::vector<int>& hidden,
                                     Activation act, std::uint64_t seed) {
  const int nz = sd.data.schema.nz;
  std::vector<int> widths{6 + nz};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(1);
  Mlp net(widths, act);
  net.init_random(seed);
  std::vector<double> alpha(sd.stats.eps.alpha.begin(), sd.stats.eps.alpha.end());
  std::vector<double> beta(sd.stats.eps.beta.begin(), sd.stats.eps.beta.end());
  if (nz > 0) {
    alpha.insert(alpha.end(), sd.stats.z.alpha.begin(), sd.stats.z.alpha.end());
    beta.insert(beta.end(), sd.stats.z.beta.begin(), sd.stats.z.beta.end());
  }
  return EnergyModel{AnchoredNet(std::move(net), std::move(alpha), std::move(beta),
                                 {sd.stats.psi.alpha[0]}),
                     nz};
}

inline EvolutionModel make_evolution_model(const SplitDataset& sd, const std::vector<int>& hidden,
                                           Activation act, std::uint64_t seed) {
  const int nz = sd.data.schema.nz;
  std::vector<int> widths{6 + nz};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(nz);
  Mlp net(widths, act);
  net.init_random(seed);
  std::vector<double> alpha(sd.stats.eps.alpha.begin(), sd.stats.eps.alpha.end());
  std::vector<double> beta(sd.stats.eps.beta.begin(), sd.stats.eps.beta.end());
  alpha.insert(alpha.end(), sd.stats.z.alpha.begin(), sd.stats.z.alpha.end());
  beta.insert(beta.end(), sd.stats.z.beta.begin(), sd.stats.z.beta.end());
  return EvolutionModel{AnchoredNet(std::move(net), std::move(alpha), std::move(beta),
                                    sd.stats.z_rate.alpha),
                        nz};
}

inline CoderPair make_coder_pair(const SplitDataset& sd, int nz, const std::vector<int>& enc_hidden,
                                 const std::vector<int>& dec_hidden, Activation act,
                                 std::uint64_t seed) {
  const int nxi = sd.data.schema.nxi;
  std::vector<int> ew{nxi};
  ew.insert(ew.end(), enc_hidden.begin(), enc_hidden.end());
  ew.push_back(nz);
  Mlp enc(ew, act);
  enc.init_random(seed);
  std::vector<int> dw{nz};
  dw.insert(dw.end(), dec_hidden.begin(), dec_hidden.end());
  dw.push_back(nxi);
  Mlp dec(dw, act);
  dec.init_random(seed + 1);
  AnchoredNet enc_a(std::move(enc), sd.stats.xi.alpha, sd.stats.xi.beta,
                    std::vector<double>(static_cast<std::size_t>(nz), 1.0));
  AnchoredNet dec_a(std::move(dec), std::vector<double>(static_cast<std::size_t>(nz), 1.0),
                    std::vector<double>(static_cast<std::size_t>(nz), 0.0), sd.stats.xi.alpha);
  return CoderPair{std::move(enc_a), std::move(dec_a), nz, nxi};
}

/// Latent table for the identification case: z and z_rate from a frozen
/// encoder over the whole dataset, targets recomputed once and cached.
struct LatentTable {
  RowMat z;      // physical (latent) internal variables
  RowMat zdot;   // chain-rule rates
};

inline LatentTable encode_dataset(const CoderPair& coder, const Dataset& ds) {
  const std::size_t n = ds.n_records();
  const int nz = coder.nz;
  LatentTable t;
  t.z.resize(static_cast<Eigen::Index>(n), nz);
  t.zdot.resize(static_cast<Eigen::Index>(n), nz);
  std::vector<double> z, zd;
  for (std::size_t r = 0; r < n; ++r) {
    coder.encoder.value_and_jvp(ds.xi(r), ds.xi_rate(r), z, zd);
    for (int j = 0; j < nz; ++j) {
      t.z(static_cast<Eigen::Index>(r), j) = z[static_cast<std::size_t>(j)];
      t.zdot(static_cast<Eigen::Index>(r), j) = zd[static_cast<std::size_t>(j)];
    }
  }
  return t;
}

/// Post-hoc internal-variable scale: half-range of each latent over the
/// training and validation rows (anchored at zero, so beta stays 0).
inline std::vector<double> latent_alpha(const LatentTable& t, const SplitIndices& split) {
  const int nz = static_cast<int>(t.z.cols());
  std::vector<double> alpha(static_cast<std::size_t>(nz), 1.0);
  for (int j = 0; j < nz; ++j) {
    double m = 0.0;
    for (std::size_t r : split.train) m = std::max(m, std::fabs(t.z(static_cast<Eigen::Index>(r), j)));
    for (std::size_t r : split.val) m = std::max(m, std::fabs(t.z(static_cast<Eigen::Index>(r), j)));
    if (m > 0.0) alpha[static_cast<std::size_t>(j)] = m;
  }
  return alpha;
}

/// Evolution model over identified internal variables; input stats take the
/// post-hoc latent scales, output scales the chain-rule rate statistics.
inline EvolutionModel make_evolution_model_latent(const SplitDataset& sd, const LatentTable& lat,
                                                  const std::vector<int>& hidden, Activation act,
                                                  std::uint64_t seed) {
  const int nz = static_cast<int>(lat.z.cols());
  std::vector<int> widths{6 + nz};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(nz);
  Mlp net(widths, act);
  net.init_random(seed);
  std::vector<double> alpha(sd.stats.eps.alpha.begin(), sd.stats.eps.alpha.end());
  std::vector<double> beta(sd.stats.eps.beta.begin(), sd.stats.eps.beta.end());
  const std::vector<double> z_alpha = latent_alpha(lat, sd.split);
  alpha.insert(alpha.end(), z_alpha.begin(), z_alpha.end());
  beta.insert(beta.end(), static_cast<std::size_t>(nz), 0.0);
  std::vector<double> rate_alpha(static_cast<std::size_t>(nz), 1.0);
  for (int j = 0; j < nz; ++j) {
    double m = 0.0;
    for (std::size_t r : sd.split.train)
      m = std::max(m, std::fabs(lat.zdot(static_cast<Eigen::Index>(r), j)));
    for (std::size_t r : sd.split.val)
      m = std::max(m, std::fabs(lat.zdot(static_cast<Eigen::Index>(r), j)));
    if (m > 0.0) rate_alpha[static_cast<std::size_t>(j)] = m;
  }
  return EvolutionModel{AnchoredNet(std::move(net), std::move(alpha), std::move(beta),
                                    std::move(rate_alpha)),
                        nz};
}

namespace traindetail {

inline EvolutionTable build_evolution_table_latent(const Dataset& ds, const LatentTable& lat,
                                                   const AnchoredNet& block, double dt) {
  const std::size_t n = ds.n_records();
  const int nz = static_cast<int>(lat.z.cols());
  EvolutionTable t;
  t.X.resize(static_cast<Eigen::Index>(n), 6 + nz);
  t.target.resize(static_cast<Eigen::Index>(n), nz);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = ds.row(r);
    for (int i = 0; i < 6; ++i) {
      const double eps_end = row[static_cast<std::size_t>(ds.schema.col_eps() + i)] +
                             dt * row[static_cast<std::size_t>(ds.schema.col_eps_rate() + i)];
      t.X(static_cast<Eigen::Index>(r), i) =
          (eps_end - block.in_beta[static_cast<std::size_t>(i)]) /
          block.in_alpha[static_cast<std::size_t>(i)];
    }
    for (int j = 0; j < nz; ++j) {
      t.X(static_cast<Eigen::Index>(r), 6 + j) =
          lat.z(static_cast<Eigen::Index>(r), j) / block.in_alpha[static_cast<std::size_t>(6 + j)];
      t.target(static_cast<Eigen::Index>(r), j) =
          lat.zdot(static_cast<Eigen::Index>(r), j) / block.out_scale[static_cast<std::size_t>(j)];
    }
  }
  return t;
}

}  // namespace traindetail

/// Two-stage schedule: energy (with the autoencoder when internal variables
/// are identified), then the evolution network on frozen rate targets.
inline TrainResult train(EtannBlocks& blocks, const SplitDataset& sd, const TrainConfig& cfg,
                         Schedule schedule = Schedule::TwoStage) {
  TrainResult res;
  const double dt = sd.data.meta.value("dt", 1.0);
  const bool identified = blocks.coder.has_value();

  if (schedule != Schedule::EvolutionOnly) {
    if (identified) {
      traindetail::IdentificationProblem p(*blocks.coder, *blocks.energy, sd.data, sd.stats, cfg);
      res.energy = traindetail::run_training(p, sd.split.train, sd.split.val, cfg, "identification");
      blocks.coder->encoder.refresh_anchor();
      blocks.coder->decoder.refresh_anchor();
    } else {
      traindetail::EnergyProblem p(*blocks.energy, sd.data, sd.stats, cfg);
      res.energy = traindetail::run_training(p, sd.split.train, sd.split.val, cfg, "energy");
    }
    blocks.energy->block.refresh_anchor();
  }

  if (schedule != Schedule::EnergyOnly && blocks.evolution) {
    traindetail::EvolutionTable table;
    if (identified) {
      const LatentTable lat = encode_dataset(*blocks.coder, sd.data);
      table = traindetail::build_evolution_table_latent(sd.data, lat, blocks.evolution->block, dt);
    } else {
      table = traindetail::build_evolution_table_apriori(sd.data, sd.stats,
                                                         blocks.evolution->block, dt);
    }
    traindetail::EvolutionProblem p(*blocks.evolution, std::move(table), cfg);
    res.evolution = traindetail::run_training(p, sd.split.train, sd.split.val, cfg, "evolution");
    blocks.evolution->block.refresh_anchor();
  }
  return res;
}

struct LatentSweepRow {
  int nz = 0;
  double loss_total = 0.0;
  double loss_psi = 0.0;
  double loss_gradpsi = 0.0;
};

struct LatentSweepResult {
  std::vector<LatentSweepRow> rows;
  int knee_nz = 0;  // smallest candidate within tolerance of the plateau
};

/// Trains the identification stack per latent width and reports the final
/// training losses; the knee is the first candidate within rel_tol of the
/// best loss across the sweep (smallest-within-tolerance convention).
inline LatentSweepResult latent_sweep(const SplitDataset& sd, std::span<const int> candidates,
                                      const std::vector<int>& enc_hidden,
                                      const std::vector<int>& dec_hidden,
                                      const std::vector<int>& energy_hidden,
                                      const TrainConfig& cfg, double rel_tol = 0.10) {
  LatentSweepResult out;
  for (int nz_c : candidates) {
    CoderPair coder = make_coder_pair(sd, nz_c, enc_hidden, dec_hidden, Activation::Tanh,
                                      cfg.seed + static_cast<std::uint64_t>(nz_c));
    // energy model over the latent width; z normalization is the identity
    std::vector<int> widths{6 + nz_c};
    widths.insert(widths.end(), energy_hidden.begin(), energy_hidden.end());
    widths.push_back(1);
    Mlp enet(widths, Activation::Gelu);
    enet.init_random(cfg.seed + 977 + static_cast<std::uint64_t>(nz_c));
    std::vector<double> alpha(sd.stats.eps.alpha.begin(), sd.stats.eps.alpha.end());
    std::vector<double> beta(sd.stats.eps.beta.begin(), sd.stats.eps.beta.end());
    alpha.insert(alpha.end(), static_cast<std::size_t>(nz_c), 1.0);
    beta.insert(beta.end(), static_cast<std::size_t>(nz_c), 0.0);
    EnergyModel energy{AnchoredNet(std::move(enet), std::move(alpha), std::move(beta),
                                   {sd.stats.psi.alpha[0]}),
                       nz_c};
    traindetail::IdentificationProblem p(coder, energy, sd.data, sd.stats, cfg);
    traindetail::run_training(p, sd.split.train, sd.split.val, cfg,
                              "sweep nz=" + std::to_string(nz_c));
    const LossTerms final_terms = traindetail::chunked_eval(p, sd.split.train, cfg.batch_size);
    out.rows.push_back({nz_c, final_terms.total, final_terms.psi, final_terms.grad});
  }
  double best = std::numeric_limits<double>::infinity();
  for (const auto& r : out.rows) best = std::min(best, r.loss_total);
  for (const auto& r : out.rows) {
    if (r.loss_total <= best * (1.0 + rel_tol)) {
      out.knee_nz = r.nz;
      break;
    }
  }
  return out;
}

}  // namespace etann
