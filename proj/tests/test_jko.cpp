#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "wmflow/jko.hpp"
#include "wmflow/oracle.hpp"

using namespace wmflow;

namespace {

// Cell averages of a field on a grid coarsened by `factor`.
std::vector<double> coarsen(const std::vector<double>& v, std::size_t factor) {
  std::vector<double> out(v.size() / factor, 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) out[i / factor] += v[i] / static_cast<double>(factor);
  return out;
}

}  // namespace

TEST(JkoStep, ConstantIsStationary) {
  const Grid1D g(1.0, 32);
  const DensityField u(g, constant_profile(g, 0.8));
  const auto r = jko_step(u, 1e-3, Mobility::linear());
  EXPECT_EQ(r.u.values, u.values);
  EXPECT_EQ(r.diagnostics.w2, 0.0);
  EXPECT_TRUE(r.diagnostics.converged);
}

TEST(JkoStep, DecreasesPenalizedObjectiveAndKeepsConstraints) {
  const Grid1D g(1.0, 64);
  const DensityField u(g, cosine_profile(g, 1.0, 0.5, 1));
  for (const auto& m : {Mobility::linear(), regularize(Mobility::power(0.8), 0.05)}) {
    const auto r = jko_step(u, 1e-3, m);
    EXPECT_LT(r.diagnostics.objective, fisher_energy(u, m));
    EXPECT_NEAR(r.diagnostics.objective, r.diagnostics.w2 / 2e-3 + fisher_energy(r.u, m), 1e-12);
    EXPECT_NEAR(r.u.mass(), u.mass(), 1e-12);
    EXPECT_GE(r.u.min(), 0.0);
    EXPECT_FALSE(r.diagnostics.rejected);
  }
}

TEST(JkoStep, AgreesWithImplicitEulerStep) {
  const Grid1D g(1.0, 128);
  const DensityField u(g, cosine_profile(g, 1.0, 0.5, 1));
  const Mobility m = Mobility::linear();
  const auto r = jko_step(u, 1e-3, m);
  const auto v = oracle_step(u, 1e-3, m);
  const double zero_norm = l2_distance(g, v.values, std::vector<double>(128, 0.0));
  EXPECT_LE(l2_distance(g, r.u.values, v.values) / zero_norm, 0.02);
}

TEST(JkoStep, RejectsNonpositiveStep) {
  const Grid1D g(1.0, 16);
  EXPECT_THROW(jko_step(DensityField(g, constant_profile(g, 1.0)), 0.0, Mobility::linear()), Error);
}

TEST(JkoRun, StepCountAndInterpolant) {
  EXPECT_EQ(step_count(1e-3, 5e-4), 1u);
  EXPECT_EQ(step_count(1e-3, 1e-2), 10u);
  EXPECT_EQ(step_count(0.1, 0.25), 3u);
  const Grid1D g(1.0, 32);
  const DensityField u0(g, cosine_profile(g, 1.0, 0.5, 1));
  const auto traj = run(u0, 1e-3, 3e-3, Mobility::linear());
  ASSERT_EQ(traj.steps.size(), 3u);
  EXPECT_EQ(&traj.at(0.0), &traj.u0);
  EXPECT_EQ(&traj.at(1e-3), &traj.steps[0].u);
  EXPECT_EQ(&traj.at(1.0001e-3), &traj.steps[1].u);
  EXPECT_EQ(&traj.at(3e-3), &traj.steps[2].u);
  EXPECT_DOUBLE_EQ(traj.final_time(), 3e-3);
}

TEST(JkoRun, EstimatesHoldForLinearMobility) {
  const Grid1D g(1.0, 64);
  const DensityField u0(g, cosine_profile(g, 1.0, 0.5, 1));
  const Mobility m = Mobility::linear();
  const JkoOptions opts;
  const auto traj = run(u0, 1e-3, 2e-2, m, opts);
  const auto rep = check_estimates(traj, m, epsilon_mono(opts, traj.f0));
  EXPECT_TRUE(rep.passed());
  EXPECT_LE(rep.mass_drift, 1e-10);
  EXPECT_LE(rep.w2_sum, rep.w2_bound);
  EXPECT_EQ(rep.dissipation_ratios.size(), traj.steps.size());
}

TEST(JkoRun, SaturatingMobilityRespectsCeiling) {
  const Grid1D g(1.0, 48);
  const Mobility m = Mobility::double_power(1.0, 1.0, 1.0);
  const DensityField u0(g, cosine_profile(g, 0.5, 0.4, 1));
  const JkoOptions opts;
  const auto traj = run(u0, 1e-3, 1e-2, m, opts);
  const auto rep = check_estimates(traj, m, epsilon_mono(opts, traj.f0));
  EXPECT_TRUE(rep.passed());
  for (const auto& s : traj.steps) EXPECT_LE(s.u.max(), 1.0);
}

TEST(CheckEstimates, ConstantTrajectoryPasses) {
  const Grid1D g(1.0, 16);
  JkoTrajectory traj{1e-3, DensityField(g, constant_profile(g, 1.0))};
  for (int k = 1; k <= 5; ++k) traj.steps.push_back({traj.u0, 1e-3 * k, 0.0, 0.0, 0.0, 0.0, {}});
  const auto rep = check_estimates(traj, Mobility::linear(), 1e-8);
  EXPECT_TRUE(rep.passed());
  EXPECT_EQ(rep.w2_sum, 0.0);
}

TEST(CheckEstimates, FlagsViolations) {
  const Grid1D g(1.0, 16);
  JkoTrajectory traj{1e-3, DensityField(g, cosine_profile(g, 1.0, 0.5, 1))};
  traj.f0 = 1.0;
  traj.h0 = 1.0;
  traj.steps.push_back({traj.u0, 1e-3, 1e-4, 0.9, 0.9, 0.0, {}});
  traj.steps.push_back({traj.u0, 2e-3, 1e-4, 0.95, 0.8, 0.0, {}});
  auto rep = check_estimates(traj, Mobility::linear(), 1e-8);
  EXPECT_FALSE(rep.energy_monotone);
  EXPECT_TRUE(rep.entropy_monotone);
  EXPECT_TRUE(rep.w2_sum_ok);
  traj.steps[1].fisher = 0.85;
  traj.steps[1].w2 = 5e-3;
  rep = check_estimates(traj, Mobility::linear(), 1e-8);
  EXPECT_TRUE(rep.energy_monotone);
  EXPECT_FALSE(rep.w2_sum_ok);
  traj.steps[1].w2 = 1e-4;
  traj.steps[1].u[0] = -1e-3;
  rep = check_estimates(traj, Mobility::linear(), 1e-8);
  EXPECT_FALSE(rep.bounds_ok);
}

TEST(EpsilonMono, Formula) {
  JkoOptions o;
  EXPECT_DOUBLE_EQ(epsilon_mono(o, 1.0), 2e-8);
  o.tol_outer = 1e-6;
  EXPECT_DOUBLE_EQ(epsilon_mono(o, 0.0), 1e-5);
}

TEST(HolderCheck, RandomPairsWithinBound) {
  const Grid1D g(1.0, 64);
  const DensityField u0(g, cosine_profile(g, 1.0, 0.5, 1));
  const Mobility m = Mobility::linear();
  const auto traj = run(u0, 1e-3, 1e-2, m);
  const auto samples = holder_check(traj, m, 6, 42);
  ASSERT_EQ(samples.size(), 6u);
  for (const auto& s : samples) EXPECT_TRUE(s.ok) << s.s << " " << s.t << " " << s.distance << " " << s.bound;
  // Same seed, same pairs.
  const auto again = holder_check(traj, m, 6, 42);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_EQ(samples[k].s, again[k].s);
}

TEST(JkoRun, RefinementReducesDifferences) {
  const Mobility m = Mobility::linear();
  const double T = 8e-3;
  std::vector<std::vector<double>> finals;
  for (std::size_t level = 0; level < 3; ++level) {
    const std::size_t n = 32u << level;
    const double tau = 4e-3 / static_cast<double>(1u << level);
    const Grid1D g(1.0, n);
    const auto traj = run(DensityField(g, cosine_profile(g, 1.0, 0.5, 1)), tau, T, m);
    finals.push_back(coarsen(traj.at(T).values, 1u << level));
  }
  const Grid1D coarse(1.0, 32);
  const double d_coarse = l2_distance(coarse, finals[0], finals[1]);
  const double d_fine = l2_distance(coarse, finals[1], finals[2]);
  EXPECT_LE(d_fine, d_coarse);
}
