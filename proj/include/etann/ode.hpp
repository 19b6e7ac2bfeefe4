#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace etann {

struct IvpConfig {
  enum class Method { Bdf, Rk45 };
  enum class JacMode { Autodiff, FiniteDifference };
  Method method = Method::Bdf;
  JacMode jac_mode = JacMode::Autodiff;  // any provided callback counts as autodiff
  double rtol = 1e-6;
  double atol = 1e-9;
  double max_step = std::numeric_limits<double>::infinity();
  std::size_t max_steps = 200000;
};

using OdeFun = std::function<void(double, std::span<const double>, std::span<double>)>;
using OdeJac = std::function<void(double, std::span<const double>, Eigen::MatrixXd&)>;

struct IvpResult {
  std::vector<std::vector<double>> y;  // one state vector per requested sample time
  std::size_t n_steps = 0;
  std::size_t n_fevals = 0;
  std::size_t n_jacs = 0;
};

class IvpError : public std::runtime_error {
 public:
  IvpError(const std::string& what, double t, const Eigen::VectorXd& y, double h)
      : std::runtime_error(format(what, t, y, h)) {}

 private:
  static std::string format(const std::string& what, double t, const Eigen::VectorXd& y,
                            double h) {
    std::ostringstream os;
    os << what << " [t=" << t << ", h=" << h << ", z=(";
    for (Eigen::Index i = 0; i < y.size(); ++i) os << (i ? ", " : "") << y[i];
    os << ")]";
    return os.str();
  }
};

namespace odedetail {

inline double rms_norm(const Eigen::VectorXd& v) {
  if (v.size() == 0) return 0.0;
  return std::sqrt(v.squaredNorm() / static_cast<double>(v.size()));
}

constexpr int kMaxOrder = 5;
constexpr int kNewtonMaxIter = 4;
constexpr double kMinFactor = 0.2;
constexpr double kMaxFactor = 10.0;

/// Step-size change matrix for the backward-difference array.
inline Eigen::MatrixXd compute_R(int order, double factor) {
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(order + 1, order + 1);
  for (int i = 1; i <= order; ++i)
    for (int j = 1; j <= order; ++j)
      M(i, j) = (static_cast<double>(i) - 1.0 - factor * static_cast<double>(j)) /
                static_cast<double>(i);
  M.row(0).setOnes();
  // cumulative product down the columns
  for (int i = 1; i <= order; ++i)
    for (int j = 0; j <= order; ++j) M(i, j) *= M(i - 1, j);
  return M;
}

inline void change_D(Eigen::MatrixXd& D, int order, double factor) {
  const Eigen::MatrixXd R = compute_R(order, factor);
  const Eigen::MatrixXd U = compute_R(order, 1.0);
  const Eigen::MatrixXd RU = R * U;
  D.topRows(order + 1) = RU.transpose() * D.topRows(order + 1);
}

class BdfStepper {
 public:
  BdfStepper(const OdeFun& f, const OdeJac& jac, Eigen::VectorXd y0, double t0, double t_bound,
             const IvpConfig& cfg, IvpResult& stats)
      : f_(f), jac_(jac), cfg_(cfg), stats_(&stats), n_(y0.size()), t_(t0), t_bound_(t_bound),
        y_(std::move(y0)) {
    gamma_.resize(kMaxOrder + 1);
    gamma_[0] = 0.0;
    for (int k = 1; k <= kMaxOrder; ++k) gamma_[k] = gamma_[k - 1] + 1.0 / k;
    const double kappa[kMaxOrder + 1] = {0.0, -0.1850, -1.0 / 9.0, -0.0823, -0.0415, 0.0};
    alpha_.resize(kMaxOrder + 1);
    error_const_.resize(kMaxOrder + 1);
    for (int k = 0; k <= kMaxOrder; ++k) {
      alpha_[k] = (1.0 - kappa[k]) * gamma_[k];
      error_const_[k] = kappa[k] * gamma_[k] + 1.0 / (k + 1.0);
    }

    Eigen::VectorXd f0(n_);
    eval(t_, y_, f0);
    h_abs_ = select_initial_step(f0);
    D_ = Eigen::MatrixXd::Zero(kMaxOrder + 3, n_);
    D_.row(0) = y_;
    D_.row(1) = f0.transpose() * h_abs_;
    order_ = 1;
    n_equal_steps_ = 0;
  }

  double t() const { return t_; }
  const Eigen::VectorXd& y() const { return y_; }

  /// One accepted step toward `bound` (never past it).
  void step_to(double bound) {
    t_bound_ = bound;
    step();
  }

  void step() {
    const double min_step = 10.0 * std::fabs(std::nextafter(t_, t_bound_) - t_);
    double h_abs = std::min(h_abs_, cfg_.max_step);
    if (h_abs < min_step) h_abs = min_step;
    if (h_abs != h_abs_) {
      change_D(D_, order_, h_abs / h_abs_);
      n_equal_steps_ = 0;
      h_abs_ = h_abs;
    }

    bool step_accepted = false;
    Eigen::VectorXd y_new(n_), d(n_), scale(n_), psi(n_);
    double safety = 0.9;
    while (!step_accepted) {
      if (++stats_->n_steps > cfg_.max_steps)
        throw IvpError("ivp_solve: step budget exceeded", t_, y_, h_abs_);
      if (h_abs_ < min_step) throw IvpError("ivp_solve: step size underflow", t_, y_, h_abs_);
      double t_new = t_ + h_abs_;
      if (t_new > t_bound_) {
        t_new = t_bound_;
        const double factor = (t_new - t_) / h_abs_;
        change_D(D_, order_, factor);
        n_equal_steps_ = 0;
        h_abs_ = t_new - t_;
        lu_valid_ = false;
      }
      const double h = t_new - t_;
      const Eigen::VectorXd y_predict = D_.topRows(order_ + 1).colwise().sum();
      scale = (cfg_.atol + cfg_.rtol * y_predict.array().abs()).matrix();
      psi.setZero();
      for (int i = 1; i <= order_; ++i) psi += D_.row(i).transpose() * gamma_[i];
      psi /= alpha_[order_];
      const double c = h / alpha_[order_];

      int n_iter = 0;
      const bool converged = solve_system(t_new, y_predict, c, psi, scale, y_new, d, n_iter);
      if (!converged) {
        if (!current_jac_) {
          refresh_jacobian(t_new, y_predict);
          continue;
        }
        h_abs_ *= 0.5;
        change_D(D_, order_, 0.5);
        n_equal_steps_ = 0;
        lu_valid_ = false;
        continue;
      }
      safety = 0.9 * (2.0 * kNewtonMaxIter + 1.0) / (2.0 * kNewtonMaxIter + n_iter);
      const Eigen::VectorXd error = error_const_[order_] * d;
      const double error_norm = rms_norm(error.cwiseQuotient(scale));
      if (error_norm > 1.0) {
        const double factor =
            std::max(kMinFactor, safety * std::pow(error_norm, -1.0 / (order_ + 1.0)));
        h_abs_ *= factor;
        change_D(D_, order_, factor);
        n_equal_steps_ = 0;
        lu_valid_ = false;
        continue;
      }
      step_accepted = true;
      t_ = t_new;
      y_ = y_new;
      current_jac_ = false;

      ++n_equal_steps_;
      D_.row(order_ + 2) = d.transpose() - D_.row(order_ + 1);
      D_.row(order_ + 1) = d.transpose();
      for (int i = order_; i >= 0; --i) D_.row(i) += D_.row(i + 1);

      if (n_equal_steps_ < order_ + 1) return;

      // order adaptation from the error at neighboring orders
      const double em = order_ > 1
                            ? rms_norm((error_const_[order_ - 1] * D_.row(order_).transpose())
                                           .cwiseQuotient(scale))
                            : std::numeric_limits<double>::infinity();
      const double e0 = error_norm;
      const double ep = order_ < kMaxOrder
                            ? rms_norm((error_const_[order_ + 1] * D_.row(order_ + 2).transpose())
                                           .cwiseQuotient(scale))
                            : std::numeric_limits<double>::infinity();
      const double fm = em > 0 ? std::pow(em, -1.0 / order_) : kMaxFactor / safety;
      const double f0 = e0 > 0 ? std::pow(e0, -1.0 / (order_ + 1.0)) : kMaxFactor / safety;
      const double fp = ep > 0 ? std::pow(ep, -1.0 / (order_ + 2.0)) : kMaxFactor / safety;
      int delta = 0;
      double fbest = f0;
      if (fm > fbest) {
        fbest = fm;
        delta = -1;
      }
      if (fp > fbest) {
        fbest = fp;
        delta = 1;
      }
      order_ += delta;
      const double factor = std::min(kMaxFactor, safety * fbest);
      h_abs_ *= factor;
      change_D(D_, order_, factor);
      n_equal_steps_ = 0;
      lu_valid_ = false;
    }
  }

 private:
  void eval(double t, const Eigen::VectorXd& y, Eigen::VectorXd& out) {
    ++stats_->n_fevals;
    f_(t, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())),
       std::span<double>(out.data(), static_cast<std::size_t>(out.size())));
  }

  void refresh_jacobian(double t, const Eigen::VectorXd& y) {
    ++stats_->n_jacs;
    J_.resize(n_, n_);
    if (jac_) {
      jac_(t, std::span<const double>(y.data(), static_cast<std::size_t>(y.size())), J_);
    } else {
      // forward differences
      Eigen::VectorXd fy(n_), fp(n_), yp = y;
      eval(t, y, fy);
      for (Eigen::Index j = 0; j < n_; ++j) {
        const double h = 1e-8 * std::max(1.0, std::fabs(y[j]));
        yp[j] = y[j] + h;
        eval(t, yp, fp);
        J_.col(j) = (fp - fy) / h;
        yp[j] = y[j];
      }
    }
    current_jac_ = true;
    lu_valid_ = false;
  }

  void factorize(double c) {
    lu_.compute(Eigen::MatrixXd::Identity(n_, n_) - c * J_);
    lu_c_ = c;
    lu_valid_ = true;
  }

  bool solve_system(double t_new, const Eigen::VectorXd& y_predict, double c,
                    const Eigen::VectorXd& psi, const Eigen::VectorXd& scale, Eigen::VectorXd& y,
                    Eigen::VectorXd& d, int& n_iter) {
    if (J_.size() == 0) refresh_jacobian(t_new, y_predict);
    if (!lu_valid_ || lu_c_ != c) factorize(c);
    const double tol = std::max(10.0 * std::numeric_limits<double>::epsilon() / cfg_.rtol,
                                std::min(0.03, std::sqrt(cfg_.rtol)));
    y = y_predict;
    d.setZero();
    double dy_norm_old = -1.0;
    Eigen::VectorXd fv(n_), dy(n_);
    for (int k = 0; k < kNewtonMaxIter; ++k) {
      n_iter = k + 1;
      eval(t_new, y, fv);
      if (!fv.allFinite()) return false;
      dy = lu_.solve(c * fv - psi - d);
      const double dy_norm = rms_norm(dy.cwiseQuotient(scale));
      double rate = -1.0;
      if (dy_norm_old >= 0.0 && dy_norm_old > 0.0) rate = dy_norm / dy_norm_old;
      if (rate >= 0.0 &&
          (rate >= 1.0 ||
           std::pow(rate, kNewtonMaxIter - k) / (1.0 - rate) * dy_norm > tol))
        return false;
      y += dy;
      d += dy;
      if (dy_norm == 0.0 || (rate >= 0.0 && rate / (1.0 - rate) * dy_norm < tol)) return true;
      dy_norm_old = dy_norm;
    }
    return false;
  }

  double select_initial_step(const Eigen::VectorXd& f0) {
    const Eigen::VectorXd scale = (cfg_.atol + cfg_.rtol * y_.array().abs()).matrix();
    const double d0 = rms_norm(y_.cwiseQuotient(scale));
    const double d1 = rms_norm(f0.cwiseQuotient(scale));
    double h0 = (d0 < 1e-5 || d1 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
    h0 = std::min(h0, std::fabs(t_bound_ - t_));
    if (h0 <= 0.0) h0 = 1e-6;
    Eigen::VectorXd y1 = y_ + h0 * f0;
    Eigen::VectorXd f1(n_);
    eval(t_ + h0, y1, f1);
    const double d2 = rms_norm((f1 - f0).cwiseQuotient(scale)) / h0;
    double h1;
    if (d1 <= 1e-15 && d2 <= 1e-15)
      h1 = std::max(1e-6, h0 * 1e-3);
    else
      h1 = std::pow(0.01 / std::max(d1, d2), 0.5);  // order 1 at start
    return std::min({100.0 * h0, h1, std::fabs(t_bound_ - t_), cfg_.max_step});
  }

  const OdeFun& f_;
  const OdeJac& jac_;
  IvpConfig cfg_;
  IvpResult* stats_;
  Eigen::Index n_;
  double t_;
  double t_bound_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd D_;
  Eigen::MatrixXd J_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  double lu_c_ = 0.0;
  bool lu_valid_ = false;
  bool current_jac_ = false;
  double h_abs_ = 0.0;
  int order_ = 1;
  int n_equal_steps_ = 0;
  std::vector<double> gamma_, alpha_, error_const_;
};

/// Dormand-Prince 5(4) with standard step control; the non-stiff fallback.
inline void rk45_integrate(const OdeFun& f, Eigen::VectorXd& y, double& t, double t_bound,
                           const IvpConfig& cfg, IvpResult& stats) {
  static const double C[7] = {0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static const double A[7][6] = {
      {},
      {1.0 / 5},
      {3.0 / 40, 9.0 / 40},
      {44.0 / 45, -56.0 / 15, 32.0 / 9},
      {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
      {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
      {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
  static const double E[7] = {71.0 / 57600, 0.0,           -71.0 / 16695, 71.0 / 1920,
                              -17253.0 / 339200, 22.0 / 525, -1.0 / 40};
  const Eigen::Index n = y.size();
  std::vector<Eigen::VectorXd> K(7, Eigen::VectorXd(n));
  const auto eval = [&](double tt, const Eigen::VectorXd& yy, Eigen::VectorXd& out) {
    ++stats.n_fevals;
    f(tt, std::span<const double>(yy.data(), static_cast<std::size_t>(n)),
      std::span<double>(out.data(), static_cast<std::size_t>(n)));
  };
  eval(t, y, K[0]);
  double h = std::min(cfg.max_step, (t_bound - t) * 0.1 + 1e-12);
  while (t < t_bound) {
    if (++stats.n_steps > cfg.max_steps) throw IvpError("rk45: step budget exceeded", t, y, h);
    h = std::min(h, t_bound - t);
    Eigen::VectorXd ytmp(n), y_new(n);
    for (int s = 1; s < 7; ++s) {
      ytmp = y;
      for (int j = 0; j < s; ++j)
        if (A[s][j] != 0.0) ytmp += (h * A[s][j]) * K[j];
      eval(t + C[s] * h, ytmp, K[s]);
      if (s == 6) y_new = ytmp;  // row 7 holds the 5th-order weights (FSAL)
    }
    Eigen::VectorXd err = Eigen::VectorXd::Zero(n);
    for (int j = 0; j < 7; ++j) err += h * E[j] * K[j];
    const Eigen::VectorXd scale = (cfg.atol + cfg.rtol * y_new.array().abs().max(y.array().abs()))
                                      .matrix();
    const double en = rms_norm(err.cwiseQuotient(scale));
    if (en <= 1.0) {
      t += h;
      y = y_new;
      K[0] = K[6];
      h *= std::min(5.0, std::max(0.2, 0.9 * std::pow(std::max(en, 1e-10), -0.2)));
    } else {
      h *= std::max(0.2, 0.9 * std::pow(en, -0.2));
      if (h < 1e-14 * std::max(1.0, std::fabs(t)))
        throw IvpError("rk45: step size underflow", t, y, h);
    }
  }
}

}  // namespace odedetail

/// Initial value problem solve for z_dot = f(t, z), z(t0) = z0, sampling the
/// solution at the requested times (ascending, all >= t0).
inline IvpResult ivp_solve(const OdeFun& f, const OdeJac& jac, std::span<const double> z0,
                           double t0, std::span<const double> t_samples, const IvpConfig& cfg) {
  IvpResult res;
  Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(z0.data(),
                                                        static_cast<Eigen::Index>(z0.size()));
  if (t_samples.empty()) return res;
  const double t_end = t_samples.back();
  if (cfg.method == IvpConfig::Method::Rk45) {
    double t = t0;
    for (double ts : t_samples) {
      if (ts > t) odedetail::rk45_integrate(f, y, t, ts, cfg, res);
      res.y.emplace_back(y.data(), y.data() + y.size());
    }
    return res;
  }
  OdeJac jac_used = cfg.jac_mode == IvpConfig::JacMode::FiniteDifference ? OdeJac{} : jac;
  odedetail::BdfStepper stepper(f, jac_used, y, t0, t_end, cfg, res);
  std::size_t si = 0;
  while (si < t_samples.size() && t_samples[si] <= t0 + 1e-300) {
    res.y.emplace_back(y.data(), y.data() + y.size());
    ++si;
  }
  // integrate in segments so each sample time is hit exactly
  for (; si < t_samples.size(); ++si) {
    while (stepper.t() < t_samples[si] - 1e-14 * std::max(1.0, std::fabs(t_samples[si]))) {
      stepper.step_to(t_samples[si]);
    }
    const Eigen::VectorXd& ys = stepper.y();
    res.y.emplace_back(ys.data(), ys.data() + ys.size());
  }
  return res;
}

}  // namespace etann
