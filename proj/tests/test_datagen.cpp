#include "etann/datagen.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

using namespace etann;

namespace {
HomogeneousOracle make_vm() {
  return HomogeneousOracle(HomogeneousKind::VmHardening, {167e9, 77e9}, {100e6, 10e6, 0.0, {}});
}
}  // namespace

TEST(Datagen, ZeroRecordsGivesValidEmptyDataset) {
  auto oracle = make_vm();
  GenConfig cfg;
  cfg.n_records = 0;
  const Dataset ds = generate_paths(oracle, cfg);
  EXPECT_EQ(ds.n_records(), 0u);
  const std::string path = std::string(::testing::TempDir()) + "empty.etd";
  ds.save(path);
  const Dataset back = Dataset::load(path);
  EXPECT_EQ(back.n_records(), 0u);
  EXPECT_EQ(back.schema.nz, 7);
  std::remove(path.c_str());
}

TEST(Datagen, ElasticRecordsHaveZeroDissipationAndElasticStress) {
  HomogeneousOracle oracle(HomogeneousKind::Elastic, {167e9, 77e9}, {});
  GenConfig cfg;
  cfg.n_records = 500;
  cfg.stddev = 1e-4;
  cfg.dt = 0.5;
  cfg.seed = 3;
  const Dataset ds = generate_paths(oracle, cfg);
  ASSERT_EQ(ds.n_records(), 500u);
  for (std::size_t i = 0; i < ds.n_records(); ++i) {
    const auto [sig, psi] = elastic_response(ds.eps(i), {167e9, 77e9});
    EXPECT_NEAR(norm(ds.sig(i) - sig), 0.0, 1e-9 * std::max(1.0, norm(sig)));
    EXPECT_NEAR(ds.psi(i), psi, 1e-9 * std::max(1.0, psi));
    EXPECT_LE(std::fabs(ds.d(i)), 1e-10 * std::max(1.0, norm(sig) * 1e-4 / cfg.dt));
  }
}

TEST(Datagen, StrainRateExactlyConstantWithinIntervals) {
  auto oracle = make_vm();
  GenConfig cfg;
  cfg.n_records = 300;
  cfg.steps_per_path = 50;
  cfg.seed = 9;
  const Dataset ds = generate_paths(oracle, cfg);
  for (std::size_t i = 0; i + 1 < ds.n_records(); ++i) {
    if ((i + 1) % 50 == 0) continue;  // path boundary: no rate crosses the reset
    const SymTensor6 eps_next_pred = ds.eps(i) + cfg.dt * ds.eps_rate(i);
    EXPECT_NEAR(norm(ds.eps(i + 1) - eps_next_pred), 0.0,
                1e-13 * std::max(1e-12, norm(ds.eps(i + 1))));
  }
  // every path starts from the re-initialized zero state
  for (std::size_t i = 0; i < ds.n_records(); i += 50) {
    EXPECT_EQ(norm(ds.eps(i)), 0.0);
    EXPECT_EQ(ds.t(i), 0.0);
    for (double v : ds.z(i)) EXPECT_EQ(v, 0.0);
  }
}

TEST(Datagen, RatesAreBackwardDifferencesOfState) {
  auto oracle = make_vm();
  GenConfig cfg;
  cfg.n_records = 200;
  cfg.steps_per_path = 50;
  cfg.stddev = 5e-4;
  cfg.seed = 21;
  const Dataset ds = generate_paths(oracle, cfg);
  for (std::size_t i = 0; i + 1 < ds.n_records(); ++i) {
    if ((i + 1) % 50 == 0) continue;
    for (int j = 0; j < ds.schema.nz; ++j) {
      const double pred = ds.z(i)[static_cast<std::size_t>(j)] +
                          cfg.dt * ds.z_rate(i)[static_cast<std::size_t>(j)];
      EXPECT_NEAR(ds.z(i + 1)[static_cast<std::size_t>(j)], pred,
                  1e-12 * std::max(1e-12, std::fabs(pred)));
    }
  }
}

TEST(Datagen, FiniteDifferenceRatesOp) {
  // 0 -> 0.1 over dt = 0.1 gives rate 1.0
  const std::vector<std::vector<double>> series{{0.0}, {0.1}};
  const auto r = finite_difference_rates(series, 0.1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_NEAR(r[0][0], 1.0, 1e-14);
  // constant series: zero rate
  const auto rc = finite_difference_rates({{2.0}, {2.0}, {2.0}}, 0.5);
  for (const auto& row : rc) EXPECT_EQ(row[0], 0.0);
  // z(t) = t^2 sampled at dt: backward-difference bias gives rate(0) = dt
  const double dt = 1e-3;
  const auto rq = finite_difference_rates({{0.0}, {dt * dt}}, dt);
  EXPECT_NEAR(rq[0][0], dt, 1e-15);
  // single-sample path: no rate, dropped
  EXPECT_TRUE(finite_difference_rates({{1.0}}, dt).empty());
  EXPECT_THROW(finite_difference_rates(series, 0.0), std::invalid_argument);
}

TEST(Datagen, SplitIsDeterministicAndSizedCorrectly) {
  const auto s1 = split_records(10, 123);
  EXPECT_EQ(s1.train.size(), 6u);
  EXPECT_EQ(s1.val.size(), 2u);
  EXPECT_EQ(s1.test.size(), 2u);
  const auto s2 = split_records(10, 123);
  EXPECT_EQ(s1.train, s2.train);
  EXPECT_EQ(s1.test, s2.test);
  const auto s3 = split_records(10, 124);
  EXPECT_NE(s1.train, s3.train);
  EXPECT_THROW(split_records(0, 1), std::invalid_argument);
}

TEST(Datagen, StatsComeFromTrainAndValOnly) {
  auto oracle = make_vm();
  GenConfig cfg;
  cfg.n_records = 400;
  cfg.seed = 31;
  SplitDataset sd = split_and_normalize(generate_paths(oracle, cfg), 7);
  // recompute extrema over train+val rows and compare with alpha/beta
  std::vector<std::size_t> rows = sd.split.train;
  rows.insert(rows.end(), sd.split.val.begin(), sd.split.val.end());
  for (int j = 0; j < 6; ++j) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t r : rows) {
      lo = std::min(lo, sd.data.eps(r).c[static_cast<std::size_t>(j)]);
      hi = std::max(hi, sd.data.eps(r).c[static_cast<std::size_t>(j)]);
    }
    EXPECT_NEAR(sd.stats.eps.alpha[static_cast<std::size_t>(j)], 0.5 * (hi - lo), 1e-15);
    EXPECT_NEAR(sd.stats.eps.beta[static_cast<std::size_t>(j)], 0.5 * (hi + lo), 1e-15);
  }
}

TEST(Datagen, DatasetFileRoundTripBitExact) {
  auto oracle = make_vm();
  GenConfig cfg;
  cfg.n_records = 123;
  cfg.seed = 5;
  const Dataset ds = generate_paths(oracle, cfg);
  const std::string p1 = std::string(::testing::TempDir()) + "a.etd";
  const std::string p2 = std::string(::testing::TempDir()) + "b.etd";
  ds.save(p1);
  Dataset::load(p1).save(p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::ostringstream b1, b2;
  b1 << f1.rdbuf();
  b2 << f2.rdbuf();
  EXPECT_EQ(b1.str(), b2.str());
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST(Datagen, SeededGenerationIsReproducible) {
  auto o1 = make_vm();
  auto o2 = make_vm();
  GenConfig cfg;
  cfg.n_records = 200;
  cfg.seed = 77;
  const Dataset d1 = generate_paths(o1, cfg);
  const Dataset d2 = generate_paths(o2, cfg);
  ASSERT_EQ(d1.rows.size(), d2.rows.size());
  for (std::size_t i = 0; i < d1.rows.size(); ++i) EXPECT_EQ(d1.rows[i], d2.rows[i]);
}

TEST(Datagen, FamilyMasksRespectInactiveComponents) {
  auto oracle = make_vm();
  GenConfig cfg;
  cfg.n_records = 150;
  cfg.steps_per_path = 50;
  cfg.family_mix = {1.0, 0.0, 0.0, 0.0};  // uniaxial only
  cfg.seed = 8;
  const Dataset ds = generate_paths(oracle, cfg);
  for (std::size_t i = 0; i < ds.n_records(); ++i)
    for (int j = 1; j < 6; ++j)
      EXPECT_EQ(ds.eps(i).c[static_cast<std::size_t>(j)], 0.0);
}

TEST(Datagen, LatticeRecordsCarryInternalCoordinates) {
  LatticeOracle oracle(LatticeCell::cube_cell_24());
  GenConfig cfg;
  cfg.n_records = 60;
  cfg.steps_per_path = 30;
  cfg.stddev = 3e-4;
  cfg.dt = 1e-4;
  cfg.seed = 2;
  const Dataset ds = generate_paths(oracle, cfg);
  ASSERT_EQ(ds.schema.nxi, 72);
  ASSERT_EQ(ds.n_records(), 60u);
  bool any_nonzero = false;
  for (std::size_t i = 0; i < ds.n_records(); ++i)
    for (double v : ds.xi_rate(i)) any_nonzero |= (v != 0.0);
  EXPECT_TRUE(any_nonzero);
}
