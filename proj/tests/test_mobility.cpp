#include <cmath>
#include <vector>

#include <boost/math/quadrature/tanh_sinh.hpp>
#include <gtest/gtest.h>

#include "wmflow/mobility.hpp"

using namespace wmflow;

namespace {

std::vector<double> log_points(double lo, double hi, int n) {
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (n - 1)));
  return out;
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// Independent reference for f: tanh-sinh quadrature of sqrt(2/m) on (0, z), which tolerates the
// integrable singularity at 0 without a change of variables.
double f_reference(const Mobility& m, double z) {
  boost::math::quadrature::tanh_sinh<double> ts;
  return ts.integrate([&](double r) { return std::sqrt(2.0 / m(r)); }, 0.0, z);
}

}  // namespace

TEST(MobilityFamilies, LinearClosedForm) {
  const Mobility m = Mobility::linear();
  for (double z : log_points(1e-8, 1e3, 100)) {
    EXPECT_LE(rel(m.f(z), 2.0 * std::sqrt(2.0 * z)), 1e-8) << z;
    EXPECT_LE(rel(m.f_quadrature(z), 2.0 * std::sqrt(2.0 * z)), 1e-8) << z;
  }
  EXPECT_TRUE(std::isinf(m.ceiling()));
  EXPECT_EQ(m(0.0), 0.0);
}

TEST(MobilityFamilies, DoublePowerArcsine) {
  const Mobility m = Mobility::double_power(1.0, 1.0, 1.0);
  const double c = 2.0 * std::sqrt(2.0);
  for (double z : log_points(1e-8, 1.0 - 1e-8, 100)) {
    EXPECT_LE(rel(m.f(z), c * std::asin(std::sqrt(z))), 1e-8) << z;
  }
  EXPECT_LE(rel(m.f_at_ceiling(), c * std::acos(-1.0) / 2.0), 1e-12);
  EXPECT_DOUBLE_EQ(m(0.25), 0.1875);
}

TEST(MobilityFamilies, PowerMatchesIndependentQuadrature) {
  for (double beta : {0.5, 0.8, 1.0}) {
    const Mobility m = Mobility::power(beta);
    const double a = 1.0 - 0.5 * beta;
    for (double z : log_points(1e-6, 1e2, 25)) {
      const double closed = std::sqrt(2.0) * std::pow(z, a) / a;
      EXPECT_LE(rel(m.f(z), closed), 1e-8) << beta << " " << z;
      EXPECT_LE(rel(f_reference(m, z), closed), 1e-8);
    }
  }
}

TEST(MobilityFamilies, InverseRoundTrip) {
  const std::vector<Mobility> ms{Mobility::linear(), Mobility::power(0.8), Mobility::double_power(1.0, 1.0, 1.0),
                                 regularize(Mobility::power(0.8), 0.05)};
  for (const auto& m : ms) {
    const double top = m.bounded() ? 0.999 * m.ceiling() : 50.0;
    for (double z : log_points(1e-6, top, 60)) {
      EXPECT_LE(rel(m.f_inverse(m.f(z)), z), 1e-10) << m.describe() << " " << z;
    }
    EXPECT_EQ(m.f_inverse(0.0), 0.0);
  }
}

TEST(MobilityFamilies, InverseRejectsOutOfRange) {
  const Mobility m = Mobility::double_power(1.0, 1.0, 1.0);
  EXPECT_THROW(m.f_inverse(-1.0), Error);
  EXPECT_THROW(m.f_inverse(m.f_at_ceiling()), Error);
}

TEST(MobilityFamilies, TableMatchesSampledMobility) {
  std::vector<double> z, v;
  for (int i = 0; i <= 400; ++i) {
    z.push_back(i / 400.0);
    v.push_back(z.back() * (1.0 - z.back()));
  }
  const Mobility t = Mobility::table(z, v);
  const Mobility ref = Mobility::double_power(1.0, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(t.ceiling(), 1.0);
  for (double x : {0.1, 0.3, 0.5, 0.77}) {
    EXPECT_NEAR(t(x), ref(x), 1e-8);
    EXPECT_NEAR(t.f(x), ref.f(x), 1e-3 * ref.f(x));
  }
  EXPECT_THROW(Mobility::table({0.0, 1.0}, {0.0, 1.0}), Error);
  EXPECT_THROW(Mobility::table({0.0, 0.5, 0.4}, {0.0, 1.0, 1.0}), Error);
}

TEST(Regularization, LinearIsFixedPoint) {
  const Mobility m = Mobility::linear();
  for (double delta : {0.1, 0.01}) {
    const Mobility md = regularize(m, delta);
    for (int i = 1; i <= 10000; ++i) {
      const double z = 10.0 * i / 10000.0;
      ASSERT_NEAR(md(z), m(z), 1e-12) << delta << " " << z;
    }
  }
}

TEST(Regularization, SaturatingQuadraticRescales) {
  // z(1-z) - 0.09 has roots 0.1 and 0.9, so m_delta(z) = m(0.1 + 0.8 z) - 0.09 = 0.64 z (1 - z).
  const Mobility md = regularize(Mobility::double_power(1.0, 1.0, 1.0), 0.09);
  EXPECT_NEAR(md.root_low(), 0.1, 1e-13);
  EXPECT_NEAR(md.root_high(), 0.9, 1e-13);
  for (int i = 0; i <= 10000; ++i) {
    const double z = i / 10000.0;
    ASSERT_NEAR(md(z), 0.64 * z * (1.0 - z), 1e-12) << z;
  }
}

TEST(Regularization, BelowBaseAndVanishingAtZero) {
  const Mobility m = Mobility::power(0.8);
  for (double delta : {0.1, 0.05, 0.0125}) {
    const Mobility md = regularize(m, delta);
    EXPECT_EQ(md(0.0), 0.0);
    for (double z : log_points(1e-6, 1e2, 200)) EXPECT_LE(md(z), m(z) + 1e-14);
    EXPECT_TRUE(validate(md).lsc);
  }
}

TEST(Regularization, RejectsLargeDelta) {
  EXPECT_THROW(regularize(Mobility::double_power(1.0, 1.0, 1.0), 0.3), Error);
  EXPECT_THROW(regularize(Mobility::linear(), 0.0), Error);
}

TEST(Validation, ConvexityRatioGate) {
  const std::vector<Mobility> ms{Mobility::linear(), Mobility::power(0.8), Mobility::double_power(1.0, 1.0, 1.0)};
  for (const auto& m : ms) EXPECT_GE(validate(m).convexity_ratio_min, 3.0 - 1e-9) << m.describe();
  EXPECT_EQ(validate(Mobility::linear()).convexity_ratio_min, 3.0);
  // 3 - 2 m m'' / m'^2 for z^beta is 3 + 2 (1 - beta) / beta.
  EXPECT_NEAR(convexity_ratio(Mobility::power(0.8), 0.3), 3.5, 1e-12);
}

TEST(Validation, ConditionFlags) {
  const auto lin = validate(Mobility::linear());
  EXPECT_TRUE(lin.lsc);
  EXPECT_TRUE(lin.admissible());
  const auto p08 = validate(Mobility::power(0.8));
  EXPECT_FALSE(p08.lsc);
  EXPECT_TRUE(p08.ms_ok);
  const auto p05 = validate(Mobility::power(0.5));
  EXPECT_FALSE(p05.ms_ok);
  EXPECT_FALSE(p05.admissible());
  const auto dp = validate(Mobility::double_power(1.0, 1.0, 1.0));
  EXPECT_TRUE(dp.lsc);
}

TEST(Validation, RejectsConvexTable) {
  std::vector<double> z, v;
  for (int i = 0; i <= 20; ++i) {
    z.push_back(i / 10.0);
    v.push_back(z.back() * z.back());
  }
  try {
    validate(Mobility::table(z, v));
    FAIL() << "expected NonConcaveMobility";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonConcaveMobility);
  }
}

TEST(Validation, DerivativeVanishesAtPeak) {
  const Mobility m = Mobility::double_power(1.0, 1.0, 1.0);
  try {
    convexity_ratio(m, 0.5);
    FAIL() << "expected DerivativeVanishes";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DerivativeVanishes);
  }
}

TEST(EntropyKernel, SecondDerivativeTimesMobilityIsOne) {
  const std::vector<Mobility> ms{Mobility::linear(), Mobility::power(0.8), Mobility::double_power(1.0, 1.0, 1.0),
                                 regularize(Mobility::power(0.8), 0.05)};
  const double s0 = 0.5;
  for (const auto& m : ms) {
    EXPECT_EQ(m.h(s0, s0), 0.0);
    for (double z : {0.2, 0.4, 0.7}) {
      const double e = 1e-4;
      const double d2 = (m.h(s0, z + e) - 2.0 * m.h(s0, z) + m.h(s0, z - e)) / (e * e);
      EXPECT_NEAR(d2 * m(z), 1.0, 1e-5) << m.describe() << " " << z;
      const double d1 = (m.h(s0, s0 + e) - m.h(s0, s0 - e)) / (2.0 * e);
      EXPECT_NEAR(d1, 0.0, 1e-7);
    }
  }
}

TEST(EntropyKernel, FiniteAtDegeneracyPoints) {
  const Mobility dp = Mobility::double_power(1.0, 1.0, 1.0);
  EXPECT_TRUE(std::isfinite(dp.h(0.5, 0.0)));
  EXPECT_TRUE(std::isfinite(dp.h(0.5, 1.0)));
  EXPECT_NEAR(Mobility::linear().h(1.0, 0.0), 1.0, 1e-15);
}
