#include "etann/models.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

using namespace etann;

namespace {

EnergyModel random_energy(int nz, std::uint64_t seed) {
  Mlp net({6 + nz, 16, 1}, Activation::Gelu);
  net.init_random(seed);
  std::vector<double> alpha(static_cast<std::size_t>(6 + nz), 1.0);
  std::vector<double> beta(static_cast<std::size_t>(6 + nz), 0.0);
  alpha[0] = 2e-2;  // uneven scales to exercise the chain rule
  alpha[7] = 0.5;
  beta[1] = 1e-3;
  return EnergyModel{AnchoredNet(std::move(net), alpha, beta, {5e5}), nz};
}

}  // namespace

TEST(EnergyOutputs, AnchoredAtVirginState) {
  const EnergyModel m = random_energy(3, 11);
  const std::vector<double> z(3, 0.0);
  const std::vector<double> zr(3, 0.0);
  const EnergyOutputs out = energy_outputs(m, SymTensor6{}, z, zr);
  EXPECT_DOUBLE_EQ(out.psi, 0.0);
  EXPECT_DOUBLE_EQ(out.d, 0.0);
  // sigma and the thermodynamic forces need not vanish: the anchor acts on
  // the value only
}

TEST(EnergyOutputs, LinearPlantHasClosedFormGradient) {
  // psi_raw = w . x: sigma_i = alpha_psi * w_i / alpha_i exactly
  Mlp net({8, 1}, Activation::Identity);
  for (int i = 0; i < 8; ++i) net.W[0][static_cast<std::size_t>(i)] = 0.1 * (i + 1);
  net.b[0] = {0.3};
  std::vector<double> alpha{1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0};
  std::vector<double> beta(8, 0.0);
  const EnergyModel m{AnchoredNet(std::move(net), alpha, beta, {2.5}), 2};
  SymTensor6 eps;
  eps.c[2] = 0.7;
  const std::vector<double> z{0.2, -0.4};
  const std::vector<double> zr{1.0, 2.0};
  const EnergyOutputs out = energy_outputs(m, eps, z, zr);
  for (int i = 0; i < 6; ++i)
    EXPECT_NEAR(out.sig.c[static_cast<std::size_t>(i)],
                2.5 * 0.1 * (i + 1) / alpha[static_cast<std::size_t>(i)], 1e-14);
  const double f0 = 2.5 * 0.7 / 7.0;
  const double f1 = 2.5 * 0.8 / 8.0;
  EXPECT_NEAR(out.d, -(f0 * 1.0 + f1 * 2.0), 1e-12);
}

TEST(EnergyOutputs, SingleNeuronTanhPlantMatchesHandGradient) {
  // psi_raw = a * tanh(w . x); d psi / d x_i = a (1 - tanh^2) w_i
  Mlp net({7, 1, 1}, Activation::Tanh);
  const std::vector<double> w{0.3, -0.2, 0.5, 0.1, -0.4, 0.25, 0.6};
  for (int i = 0; i < 7; ++i) net.W[0][static_cast<std::size_t>(i)] = w[static_cast<std::size_t>(i)];
  net.b[0] = {0.05};
  net.W[1] = {1.7};
  net.b[1] = {0.0};
  const EnergyModel m{AnchoredNet(std::move(net),
                                  std::vector<double>(7, 1.0), std::vector<double>(7, 0.0), {3.0}),
                      1};
  SymTensor6 eps;
  eps.c[0] = 0.4;
  eps.c[4] = -0.3;
  const std::vector<double> z{0.9};
  const std::vector<double> zr{0.0};
  const EnergyOutputs out = energy_outputs(m, eps, z, zr);
  double s = 0.05 + w[0] * 0.4 + w[4] * (-0.3) + w[6] * 0.9;
  const double gfac = 3.0 * 1.7 * (1.0 - std::tanh(s) * std::tanh(s));
  EXPECT_NEAR(out.sig.c[0], gfac * w[0], 1e-12 * std::fabs(gfac));
  EXPECT_NEAR(out.sig.c[4], gfac * w[4], 1e-12 * std::fabs(gfac));
  EXPECT_NEAR(out.dpsi_dz[0], gfac * w[6], 1e-12 * std::fabs(gfac));
}

TEST(EnergyOutputs, GradientMatchesFiniteDifferences) {
  const EnergyModel m = random_energy(4, 5);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> dist(-0.8, 0.8);
  for (int rep = 0; rep < 10; ++rep) {
    SymTensor6 eps;
    for (auto& c : eps.c) c = dist(rng) * 1e-2;
    std::vector<double> z(4), zr(4);
    for (auto& v : z) v = dist(rng);
    for (auto& v : zr) v = dist(rng);
    const EnergyOutputs out = energy_outputs(m, eps, z, zr);
    const double h = 1e-6;
    for (int i = 0; i < 6; ++i) {
      SymTensor6 ep = eps, em = eps;
      ep.c[static_cast<std::size_t>(i)] += h * 1e-2;
      em.c[static_cast<std::size_t>(i)] -= h * 1e-2;
      const double fd = (energy_outputs(m, ep, z, zr).psi - energy_outputs(m, em, z, zr).psi) /
                        (2 * h * 1e-2);
      EXPECT_NEAR(out.sig.c[static_cast<std::size_t>(i)], fd,
                  1e-6 * std::max(1.0, std::fabs(fd)));
    }
    // d equals the negated z-gradient contracted with z_rate (JVP check)
    double d2 = 0.0;
    for (int j = 0; j < 4; ++j) {
      std::vector<double> zp = z, zm = z;
      zp[static_cast<std::size_t>(j)] += h;
      zm[static_cast<std::size_t>(j)] -= h;
      const double fd =
          (energy_outputs(m, eps, zp, zr).psi - energy_outputs(m, eps, zm, zr).psi) / (2 * h);
      d2 -= fd * zr[static_cast<std::size_t>(j)];
    }
    EXPECT_NEAR(out.d, d2, 1e-5 * std::max(1.0, std::fabs(d2)));
  }
}

namespace {
CoderPair linear_coder(int nxi, int nz) {
  Mlp enc({nxi, nz}, Activation::Identity);
  Mlp dec({nz, nxi}, Activation::Identity);
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> dist(-0.7, 0.7);
  for (auto& w : enc.W[0]) w = dist(rng);
  for (auto& w : dec.W[0]) w = dist(rng);
  AnchoredNet e(std::move(enc), std::vector<double>(static_cast<std::size_t>(nxi), 1.0),
                std::vector<double>(static_cast<std::size_t>(nxi), 0.0),
                std::vector<double>(static_cast<std::size_t>(nz), 1.0));
  AnchoredNet d(std::move(dec), std::vector<double>(static_cast<std::size_t>(nz), 1.0),
                std::vector<double>(static_cast<std::size_t>(nz), 0.0),
                std::vector<double>(static_cast<std::size_t>(nxi), 1.0));
  return CoderPair{std::move(e), std::move(d), nz, nxi};
}
}  // namespace

TEST(EncodeRates, AnchorsAndZeros) {
  const CoderPair c = linear_coder(5, 2);
  const std::vector<double> xi(5, 0.0), xid(5, 0.0);
  const EncodedRates r = encode_rates(c, xi, xid);
  for (double v : r.z) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : r.z_rate) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : r.xi_tilde) EXPECT_DOUBLE_EQ(v, 0.0);
  for (double v : r.xi_tilde_rate) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(EncodeRates, LinearCoderChainRule) {
  const CoderPair c = linear_coder(5, 2);
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> xi(5), xid(5);
  for (auto& v : xi) v = dist(rng);
  for (auto& v : xid) v = dist(rng);
  const EncodedRates r = encode_rates(c, xi, xid);
  // z_rate = A xid, xi_tilde_rate = B A xid for the planted linear maps
  for (int i = 0; i < 2; ++i) {
    double expect = 0.0;
    for (int j = 0; j < 5; ++j)
      expect += c.encoder.net.W[0][static_cast<std::size_t>(i * 5 + j)] * xid[static_cast<std::size_t>(j)];
    EXPECT_NEAR(r.z_rate[static_cast<std::size_t>(i)], expect, 1e-13);
  }
  for (int i = 0; i < 5; ++i) {
    double expect = 0.0;
    for (int j = 0; j < 2; ++j)
      expect += c.decoder.net.W[0][static_cast<std::size_t>(i * 2 + j)] * r.z_rate[static_cast<std::size_t>(j)];
    EXPECT_NEAR(r.xi_tilde_rate[static_cast<std::size_t>(i)], expect, 1e-13);
  }
}

TEST(EncodeRates, RateMatchesPathDerivative) {
  // z_rate from the JVP equals d/dt h(xi(t)) along a smooth path
  Mlp enc({3, 10, 2}, Activation::Tanh);
  enc.init_random(91);
  Mlp dec({2, 10, 3}, Activation::Tanh);
  dec.init_random(92);
  CoderPair c{AnchoredNet(std::move(enc), {1, 1, 1}, {0, 0, 0}, {1, 1}),
              AnchoredNet(std::move(dec), {1, 1}, {0, 0}, {1, 1, 1}), 2, 3};
  const auto xi_at = [](double t) {
    return std::vector<double>{std::sin(t), 0.5 * t, std::cos(2 * t) - 1.0};
  };
  const auto xid_at = [](double t) {
    return std::vector<double>{std::cos(t), 0.5, -2.0 * std::sin(2 * t)};
  };
  const double t0 = 0.8, h = 1e-6;
  const EncodedRates r = encode_rates(c, xi_at(t0), xid_at(t0));
  std::vector<double> zp, zm, dummy;
  c.encoder.value_and_jvp(xi_at(t0 + h), std::vector<double>(3, 0.0), zp, dummy);
  c.encoder.value_and_jvp(xi_at(t0 - h), std::vector<double>(3, 0.0), zm, dummy);
  for (int j = 0; j < 2; ++j) {
    const double fd = (zp[static_cast<std::size_t>(j)] - zm[static_cast<std::size_t>(j)]) / (2 * h);
    EXPECT_NEAR(r.z_rate[static_cast<std::size_t>(j)], fd, 1e-6 * std::max(1.0, std::fabs(fd)));
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  ModelCheckpoint ck;
  Mlp e({9, 12, 1}, Activation::Gelu);
  e.init_random(1);
  ck.energy = EnergyModel{AnchoredNet(std::move(e), std::vector<double>(9, 1.5),
                                      std::vector<double>(9, -0.25), {3.25}),
                          3};
  Mlp f({9, 14, 3}, Activation::Gelu);
  f.init_random(2);
  ck.evolution = EvolutionModel{AnchoredNet(std::move(f), std::vector<double>(9, 0.5),
                                            std::vector<double>(9, 0.0), {1.0, 2.0, 3.0}),
                                3};
  Mlp h({6, 8, 3}, Activation::Tanh);
  h.init_random(3);
  Mlp g({3, 8, 6}, Activation::Tanh);
  g.init_random(4);
  ck.coder = CoderPair{AnchoredNet(std::move(h), std::vector<double>(6, 1.0),
                                   std::vector<double>(6, 0.0), std::vector<double>(3, 1.0)),
                       AnchoredNet(std::move(g), std::vector<double>(3, 1.0),
                                   std::vector<double>(3, 0.0), std::vector<double>(6, 1.0)),
                       3, 6};
  ck.meta["material"] = "vm-hardening";

  const std::string p1 = std::string(::testing::TempDir()) + "m1.etc";
  const std::string p2 = std::string(::testing::TempDir()) + "m2.etc";
  ck.save(p1);
  const ModelCheckpoint back = ModelCheckpoint::load(p1);
  back.save(p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::ostringstream b1, b2;
  b1 << f1.rdbuf();
  b2 << f2.rdbuf();
  EXPECT_EQ(b1.str(), b2.str());

  // behavioral identity
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  SymTensor6 eps;
  for (auto& c : eps.c) c = dist(rng) * 1e-2;
  std::vector<double> z(3), zr(3);
  for (auto& v : z) v = dist(rng);
  for (auto& v : zr) v = dist(rng);
  const EnergyOutputs a = energy_outputs(*ck.energy, eps, z, zr);
  const EnergyOutputs b = energy_outputs(*back.energy, eps, z, zr);
  EXPECT_EQ(a.psi, b.psi);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(a.sig.c[static_cast<std::size_t>(i)], b.sig.c[static_cast<std::size_t>(i)]);
  const auto ra = ck.evolution->rate(eps, z);
  const auto rb = back.evolution->rate(eps, z);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(ra[static_cast<std::size_t>(i)], rb[static_cast<std::size_t>(i)]);
  EXPECT_EQ(back.meta.at("material"), "vm-hardening");
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST(Checkpoint, RejectsBadMagic) {
  const std::string p = std::string(::testing::TempDir()) + "bad.etc";
  std::ofstream(p) << "not a checkpoint\n";
  EXPECT_THROW(ModelCheckpoint::load(p), std::runtime_error);
  std::remove(p.c_str());
}
