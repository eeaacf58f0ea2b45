#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "wmflow/cascade.hpp"

using namespace wmflow;

TEST(Schedule, RejectsNonDecreasing) {
  for (const auto& s : std::vector<std::vector<double>>{{}, {0.1, 0.1}, {0.05, 0.1}, {0.1, -0.05}}) {
    try {
      check_schedule(s);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ScheduleNotDecreasing);
    }
  }
  EXPECT_NO_THROW(check_schedule({0.1, 0.05, 0.01}));
}

TEST(Schedule, DefaultKeepsFirstLevelWellConditioned) {
  for (const auto& m : {Mobility::power(0.8), Mobility::double_power(1.0, 1.0, 1.0)}) {
    const double mean = m.bounded() ? 0.5 : 1.0;
    const auto s = default_schedule(m, mean);
    ASSERT_EQ(s.size(), 5u);
    EXPECT_GE(regularize(m, s[0])(mean), 1e-3 * m(mean));
    for (std::size_t k = 1; k < s.size(); ++k) EXPECT_DOUBLE_EQ(s[k], 0.5 * s[k - 1]);
  }
}

TEST(Cascade, LinearMobilityIsFixedPoint) {
  const Grid1D g(1.0, 32);
  const DensityField u0(g, cosine_profile(g, 1.0, 0.5, 1));
  const auto rep = run_cascade(u0, Mobility::linear(), {0.1, 0.05, 0.025}, 1e-3, 3e-3);
  ASSERT_EQ(rep.gaps.size(), 2u);
  for (double gap : rep.gaps) EXPECT_NEAR(gap, 0.0, 1e-9);
  for (const auto& lv : rep.levels) {
    for (std::size_t n = 0; n < lv.trajectory.steps.size(); ++n) {
      for (std::size_t i = 0; i < 32; ++i) {
        EXPECT_NEAR(lv.trajectory.steps[n].u[i], rep.levels[0].trajectory.steps[n].u[i], 1e-10);
      }
    }
  }
}

TEST(Cascade, PowerMobilityDiagnostics) {
  const Grid1D g(1.0, 64);
  const DensityField u0(g, cosine_profile(g, 1.0, 0.5, 1));
  const Mobility m = Mobility::power(0.8);
  const std::vector<double> schedule{0.1, 0.05, 0.025};
  const auto serial = run_cascade(u0, m, schedule, 1e-3, 3e-3, {}, 1);
  const auto parallel = run_cascade(u0, m, schedule, 1e-3, 3e-3, {}, 3);
  EXPECT_TRUE(serial.f0_monotone_in_delta);
  EXPECT_FALSE(serial.near_inadmissible);
  for (const auto& lv : serial.levels) {
    EXPECT_TRUE(lv.estimates.passed()) << lv.delta;
    EXPECT_TRUE(lv.uniform_energy_bound) << lv.delta;
    for (double z : {0.01, 0.5, 1.0, 2.0}) EXPECT_LE(lv.mobility(z), m(z));
  }
  ASSERT_EQ(serial.gaps.size(), parallel.gaps.size());
  for (std::size_t k = 0; k < serial.gaps.size(); ++k) {
    EXPECT_EQ(serial.gaps[k], parallel.gaps[k]);
    EXPECT_EQ(serial.levels[k].delta, parallel.levels[k].delta);
  }
}

TEST(L2H1Gap, ZeroOnSelfAndSymmetric) {
  const Grid1D g(1.0, 32);
  const Mobility a = Mobility::linear(), b = regularize(Mobility::power(0.8), 0.05);
  const DensityField u0(g, cosine_profile(g, 1.0, 0.5, 1));
  const auto ta = run(u0, 1e-3, 2e-3, a);
  const auto tb = run(u0, 1e-3, 2e-3, b);
  EXPECT_EQ(l2h1_gap(ta, a, ta, a), 0.0);
  EXPECT_DOUBLE_EQ(l2h1_gap(ta, a, tb, b), l2h1_gap(tb, b, ta, a));
  const auto tc = run(u0, 1e-3, 3e-3, a);
  EXPECT_THROW(l2h1_gap(ta, a, tc, a), Error);
}

TEST(GLimit, EndpointValues) {
  const Mobility p = Mobility::power(0.8);
  EXPECT_EQ(g_function(p, 0.0), 0.0);
  const Mobility dp = Mobility::double_power(1.0, 1.0, 1.0);
  EXPECT_EQ(g_function(dp, dp.f_at_ceiling()), 0.0);
  EXPECT_EQ(g_function(dp, 0.0), 0.0);
  // Linear: G(w) = sqrt(w).
  EXPECT_NEAR(g_function(Mobility::linear(), 2.0), std::sqrt(2.0), 1e-12);
}

TEST(GLimit, LinearHasZeroGapAndPowerDecreases) {
  const std::vector<double> schedule{0.1, 0.05, 0.025, 0.0125};
  const Mobility lin = Mobility::linear();
  const auto rl = g_limit_check(lin, schedule, default_g_mesh(lin));
  for (double gap : rl.sup_gaps) EXPECT_NEAR(gap, 0.0, 1e-9);
  const Mobility p = Mobility::power(0.8);
  const auto rp = g_limit_check(p, schedule, default_g_mesh(p));
  EXPECT_TRUE(rp.monotone_decreasing);
  const Mobility dp = Mobility::double_power(1.0, 1.0, 1.0);
  const auto rd = g_limit_check(dp, {0.05, 0.025, 0.0125}, default_g_mesh(dp));
  EXPECT_TRUE(rd.monotone_decreasing);
}
