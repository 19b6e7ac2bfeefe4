#include "etann/autodiff.hpp"

#include <gtest/gtest.h>

#include <random>

#include "etann/mlp.hpp"

using namespace etann;
using ad::Dual;
using ad::Tape;
using ad::Var;

TEST(Tape, SimpleGradients) {
  Tape t;
  Var x = t.input(3.0);
  Var f = ad::square(x);
  const std::vector<Var> wrt{x};
  const auto g = t.gradient(f, wrt);
  EXPECT_DOUBLE_EQ(g[0], 6.0);

  Tape t2;
  Var a = t2.input(2.0);
  Var b = t2.input(5.0);
  Var p = a * b;
  const std::vector<Var> wrt2{a, b};
  const auto g2 = t2.gradient(p, wrt2);
  EXPECT_DOUBLE_EQ(g2[0], 5.0);
  EXPECT_DOUBLE_EQ(g2[1], 2.0);
}

TEST(Tape, ReplayIsBitIdentical) {
  Tape t;
  Var x = t.input(0.7);
  Var y = t.input(-1.3);
  Var f = ad::tanh(x * y) + ad::erf(x) * ad::exp(y) - ad::sqrt(ad::square(x) + 1.0);
  const double v1 = f.val();
  t.forward();
  EXPECT_EQ(f.val(), v1);
  t.set_input(x, 0.7);
  t.forward();
  EXPECT_EQ(f.val(), v1);
}

TEST(Tape, NetworkGradientMatchesFiniteDifferences) {
  Mlp net({4, 8, 8, 1}, Activation::Gelu);
  net.init_random(123);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> x(4);
    for (auto& v : x) v = dist(rng);

    Tape t;
    std::vector<Var> xv;
    for (double v : x) xv.push_back(t.input(v));
    const auto y = net.forward_on_tape(t, xv);
    const auto grad = t.gradient(y[0], xv);

    const double h = 1e-5;
    for (int i = 0; i < 4; ++i) {
      std::vector<double> xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd =
          (net.forward(std::span<const double>(xp))[0] - net.forward(std::span<const double>(xm))[0]) /
          (2 * h);
      EXPECT_NEAR(grad[i], fd, 1e-6 * std::max(1.0, std::fabs(fd)));
    }
  }
}

TEST(Tape, InputJacobian) {
  // linear map A x -> jacobian A
  Tape t;
  Var x0 = t.input(0.3);
  Var x1 = t.input(-0.8);
  std::vector<Var> outs{2.0 * x0 + 3.0 * x1, -1.0 * x0 + 0.5 * x1};
  std::vector<Var> ins{x0, x1};
  const auto J = ad::input_jacobian(t, outs, ins);
  EXPECT_DOUBLE_EQ(J[0][0], 2.0);
  EXPECT_DOUBLE_EQ(J[0][1], 3.0);
  EXPECT_DOUBLE_EQ(J[1][0], -1.0);
  EXPECT_DOUBLE_EQ(J[1][1], 0.5);
}

TEST(Tape, EncoderJacobianAtZeroIsWeightMatrix) {
  // h(xi) = tanh(W xi): dh/dxi at 0 equals W
  Mlp net({3, 2}, Activation::Identity);
  net.activations[0] = Activation::Tanh;
  net.W[0] = {0.2, -0.4, 0.7, 1.1, 0.0, -0.3};
  net.b[0] = {0.0, 0.0};
  Tape t;
  std::vector<Var> x{t.input(0.0), t.input(0.0), t.input(0.0)};
  const auto y = net.forward_on_tape(t, x);
  const auto J = ad::input_jacobian(t, y, x);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(J[i][j], net.W[0][static_cast<std::size_t>(i * 3 + j)], 1e-14);
}

TEST(Tape, RandomNetworkJacobianMatchesFiniteDifferences) {
  Mlp net({3, 6, 2}, Activation::Tanh);
  net.init_random(77);
  std::vector<double> x{0.2, -0.5, 0.9};
  Tape t;
  std::vector<Var> xv;
  for (double v : x) xv.push_back(t.input(v));
  const auto y = net.forward_on_tape(t, xv);
  const auto J = ad::input_jacobian(t, y, xv);
  const double h = 1e-6;
  double scale = 0.0;
  for (const auto& row : J)
    for (double v : row) scale = std::max(scale, std::fabs(v));
  for (int j = 0; j < 3; ++j) {
    std::vector<double> xp = x, xm = x;
    xp[static_cast<std::size_t>(j)] += h;
    xm[static_cast<std::size_t>(j)] -= h;
    const auto yp = net.forward(std::span<const double>(xp));
    const auto ym = net.forward(std::span<const double>(xm));
    for (int i = 0; i < 2; ++i)
      EXPECT_NEAR(J[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)],
                  (yp[static_cast<std::size_t>(i)] - ym[static_cast<std::size_t>(i)]) / (2 * h),
                  1e-6 * scale);
  }
}

// d/dk of (d psi/d eps - sigma*)^2 for psi = k eps^2 / 2 matches the closed form
TEST(Tape, GradOfInputGradClosedForm) {
  const double k = 2.5, eps = 0.8, sig_target = 1.1;
  Tape t;
  Var kv = t.input(k);
  Var ev = t.input(eps);
  Var psi = 0.5 * kv * ad::square(ev);
  std::vector<Var> ins{ev};
  const auto adj = t.adjoints(psi, ins);  // d psi / d eps, as a tape node
  Var resid = adj[0] - sig_target;
  Var loss = ad::square(resid);
  std::vector<Var> wrt{kv};
  const auto g = t.gradient(loss, wrt);
  EXPECT_NEAR(g[0], 2.0 * (k * eps - sig_target) * eps, 1e-12);
}

TEST(Tape, GradOfInputGradZeroResidual) {
  const double k = 2.0, eps = 0.5;
  Tape t;
  Var kv = t.input(k);
  Var ev = t.input(eps);
  Var psi = 0.5 * kv * ad::square(ev);
  std::vector<Var> ins{ev};
  const auto adj = t.adjoints(psi, ins);
  Var resid = adj[0] - (k * eps);  // target equals the model gradient
  Var loss = ad::square(resid);
  std::vector<Var> wrt{kv};
  const auto g = t.gradient(loss, wrt);
  EXPECT_NEAR(g[0], 0.0, 1e-14);
}

TEST(Tape, GradOfInputGradVsFiniteDifferencesOnNetwork) {
  // loss(W) = sum_i (dpsi/dx_i - s_i)^2 for a random 2-layer net
  Mlp net({2, 6, 1}, Activation::Gelu);
  net.init_random(9);
  const std::vector<double> x{0.4, -0.7};
  const std::vector<double> starget{0.3, -0.2};

  const auto loss_of = [&](const Mlp& m) {
    Tape t;
    std::vector<Var> xv;
    for (double v : x) xv.push_back(t.input(v));
    const auto y = m.forward_on_tape(t, xv);
    const auto g = t.gradient(y[0], xv);
    double L = 0.0;
    for (int i = 0; i < 2; ++i)
      L += (g[static_cast<std::size_t>(i)] - starget[static_cast<std::size_t>(i)]) *
           (g[static_cast<std::size_t>(i)] - starget[static_cast<std::size_t>(i)]);
    return L;
  };

  // tape route
  Tape t;
  std::vector<Var> wv;
  std::vector<Var> xv;
  for (double v : x) xv.push_back(t.input(v));
  const auto y = net.forward_on_tape(t, xv, &wv);
  const auto adj = t.adjoints(y[0], xv);
  Var loss = t.constant(0.0);
  for (int i = 0; i < 2; ++i) loss = loss + ad::square(adj[static_cast<std::size_t>(i)] - starget[static_cast<std::size_t>(i)]);
  const auto gw = t.gradient(loss, wv);

  // finite differences over every weight
  const std::vector<double> p0 = net.flatten();
  const double h = 1e-4;
  for (std::size_t i = 0; i < p0.size(); ++i) {
    Mlp mp = net, mm = net;
    std::vector<double> pp = p0, pm = p0;
    pp[i] += h;
    pm[i] -= h;
    mp.unflatten(pp);
    mm.unflatten(pm);
    const double fd = (loss_of(mp) - loss_of(mm)) / (2 * h);
    EXPECT_NEAR(gw[i], fd, 1e-4 * std::max(1.0, std::fabs(fd)))
        << "weight index " << i;
  }
}

TEST(Dual, PrimitiveConsistencyWithTape) {
  // forward-mode tangent equals reverse-mode gradient contracted with the seed
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> dist(-1.5, 1.5);
  for (int rep = 0; rep < 200; ++rep) {
    const double a = dist(rng);
    const double b = dist(rng);
    const double da = dist(rng);
    const double db = dist(rng);

    Dual x(a, da), y(b, db);
    const Dual f = ad::gelu(x * y) + ad::tanh(x) - x / (ad::square(y) + 2.0);

    Tape t;
    Var xv = t.input(a);
    Var yv = t.input(b);
    Var fv = ad::gelu(xv * yv) + ad::tanh(xv) - xv / (ad::square(yv) + 2.0);
    std::vector<Var> wrt{xv, yv};
    const auto g = t.gradient(fv, wrt);
    EXPECT_NEAR(f.v, fv.val(), 1e-14 * std::max(1.0, std::fabs(f.v)));
    EXPECT_NEAR(f.d, g[0] * da + g[1] * db, 1e-11 * std::max(1.0, std::fabs(f.d)));
  }
}

TEST(Tape, GradientLinearity) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int rep = 0; rep < 50; ++rep) {
    const double a = dist(rng), b = dist(rng);
    Tape t;
    Var x = t.input(a);
    Var y = t.input(b);
    Var f1 = ad::tanh(x) * y;
    Var f2 = ad::exp(x * y);
    Var fsum = f1 + f2;
    std::vector<Var> wrt{x, y};
    const auto g1 = t.gradient(f1, wrt);
    const auto g2 = t.gradient(f2, wrt);
    const auto gs = t.gradient(fsum, wrt);
    for (int i = 0; i < 2; ++i)
      EXPECT_NEAR(gs[static_cast<std::size_t>(i)],
                  g1[static_cast<std::size_t>(i)] + g2[static_cast<std::size_t>(i)],
                  1e-12 * std::max(1.0, std::fabs(gs[static_cast<std::size_t>(i)])));
  }
}

TEST(Tape, MixedPartialsSymmetric) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (int rep = 0; rep < 20; ++rep) {
    const double a = dist(rng), b = dist(rng);
    Tape t;
    Var x = t.input(a);
    Var y = t.input(b);
    Var f = ad::gelu(x * y) + ad::tanh(x + 0.5 * y) * ad::exp(0.3 * x);
    std::vector<Var> wrt{x, y};
    const auto adj = t.adjoints(f, wrt);
    std::vector<Var> wx{x};
    std::vector<Var> wy{y};
    const double dxy = t.gradient(adj[0], wy)[0];
    const double dyx = t.gradient(adj[1], wx)[0];
    EXPECT_NEAR(dxy, dyx, 1e-8 * std::max(1.0, std::fabs(dxy)));
  }
}
