#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/tools/roots.hpp>

#include "wmflow/error.hpp"

namespace wmflow {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Value and first two derivatives of a mobility at one point.
struct Jet {
  double value;
  double slope;
  double curvature;
};

enum class MobilityFamily { Linear, Power, DoublePower, Regularized, Table };

inline const char* to_string(MobilityFamily f) {
  switch (f) {
    case MobilityFamily::Linear: return "linear";
    case MobilityFamily::Power: return "power";
    case MobilityFamily::DoublePower: return "double_power";
    case MobilityFamily::Regularized: return "regularized";
    case MobilityFamily::Table: return "table";
  }
  return "unknown";
}

namespace detail {

// Natural cubic spline through (z_k, m_k); used for user-supplied mobility tables.
struct CubicSpline {
  std::vector<double> x, y, y2;

  CubicSpline() = default;
  CubicSpline(std::vector<double> xs, std::vector<double> ys) : x(std::move(xs)), y(std::move(ys)) {
    const std::size_t n = x.size();
    y2.assign(n, 0.0);
    if (n < 3) return;
    std::vector<double> c(n, 0.0), d(n, 0.0);
    // Tridiagonal system for interior second derivatives, natural ends.
    for (std::size_t i = 1; i + 1 < n; ++i) {
      const double h0 = x[i] - x[i - 1];
      const double h1 = x[i + 1] - x[i];
      const double a = h0 / 6.0;
      const double b = (h0 + h1) / 3.0;
      const double cc = h1 / 6.0;
      const double r = (y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0;
      const double denom = b - a * c[i - 1];
      c[i] = cc / denom;
      d[i] = (r - a * d[i - 1]) / denom;
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
      y2[i] = d[i] - c[i] * y2[i + 1];
      if (i == 1) break;
    }
  }

  Jet eval(double z) const {
    const std::size_t n = x.size();
    if (z >= x.back()) {
      const double hl = x[n - 1] - x[n - 2];
      const double slope = (y[n - 1] - y[n - 2]) / hl + hl * (2.0 * y2[n - 1] + y2[n - 2]) / 6.0;
      return {y[n - 1] + slope * (z - x[n - 1]), slope, 0.0};
    }
    std::size_t k = static_cast<std::size_t>(std::upper_bound(x.begin(), x.end(), z) - x.begin());
    k = std::clamp<std::size_t>(k, 1, n - 1);
    const double h = x[k] - x[k - 1];
    const double a = (x[k] - z) / h;
    const double b = (z - x[k - 1]) / h;
    const double v = a * y[k - 1] + b * y[k] + ((a * a * a - a) * y2[k - 1] + (b * b * b - b) * y2[k]) * h * h / 6.0;
    const double s = (y[k] - y[k - 1]) / h - (3.0 * a * a - 1.0) * h * y2[k - 1] / 6.0 +
                     (3.0 * b * b - 1.0) * h * y2[k] / 6.0;
    const double c = a * y2[k - 1] + b * y2[k];
    return {v, s, c};
  }
};

struct MobilityImpl;

// Tabulated f for mobilities without a closed form. Knots live in a variable in which f is
// smooth for Lipschitz mobilities: t = sqrt(z) when the ceiling is infinite, and
// theta with z = S sin^2(pi theta / 2) when it is finite.
struct FTable {
  bool bounded = false;
  double ceiling = kInf;
  double t_min = 0.0, log_t_min = 0.0, dlog = 0.0, z_max = 0.0;
  std::vector<double> knots, values, slopes;

  double eval(const MobilityImpl& m, double z) const;
};

struct MobilityImpl {
  MobilityFamily family = MobilityFamily::Linear;
  double ceiling = kInf;
  double beta1 = 1.0;
  double beta2 = 1.0;
  // Regularized: m(z) = base(shift + scale * z) - delta.
  std::shared_ptr<const MobilityImpl> base;
  double delta = 0.0;
  double shift = 0.0;
  double scale = 1.0;
  double root_low = 0.0;
  double root_high = 0.0;
  // Second-order expansions of m_delta about both roots, used within a relative 1e-6 band
  // where the subtraction base(.) - delta loses all digits.
  Jet lower_jet{}, upper_jet{};
  double lower_band = 0.0, upper_band = 0.0;
  CubicSpline spline;
  std::shared_ptr<const FTable> table;
  double f_ceiling = kInf;

  Jet jet(double z) const {
    switch (family) {
      case MobilityFamily::Linear:
        return {z, 1.0, 0.0};
      case MobilityFamily::Power: {
        if (beta1 == 1.0) return {z, 1.0, 0.0};
        if (z <= 0.0) return {0.0, kInf, -kInf};
        const double p = std::exp(beta1 * std::log(z));
        return {p, beta1 * p / z, beta1 * (beta1 - 1.0) * p / (z * z)};
      }
      case MobilityFamily::DoublePower: {
        const double S = ceiling;
        if (beta1 == 1.0 && beta2 == 1.0) return {z * (S - z), S - 2.0 * z, -2.0};
        if (z <= 0.0) return {0.0, beta1 == 1.0 ? std::pow(S, beta2) : kInf, -kInf};
        if (z >= S) return {0.0, beta2 == 1.0 ? -std::pow(S, beta1) : -kInf, -kInf};
        const double r = S - z;
        const double v = std::exp(beta1 * std::log(z) + beta2 * std::log(r));
        const double q = beta1 / z - beta2 / r;
        return {v, v * q, v * (q * q - beta1 / (z * z) - beta2 / (r * r))};
      }
      case MobilityFamily::Regularized: {
        if (z < lower_band) {
          const Jet& l = lower_jet;
          return {l.slope * z + 0.5 * l.curvature * z * z, l.slope + l.curvature * z, l.curvature};
        }
        if (ceiling - z < upper_band) {
          const Jet& u = upper_jet;
          const double e = ceiling - z;
          return {-u.slope * e + 0.5 * u.curvature * e * e, u.slope - u.curvature * e, u.curvature};
        }
        const Jet b = base->jet(shift + scale * z);
        return {b.value - delta, scale * b.slope, scale * scale * b.curvature};
      }
      case MobilityFamily::Table:
        return spline.eval(z);
    }
    return {0.0, 0.0, 0.0};
  }

  double value(double z) const {
    switch (family) {
      case MobilityFamily::Linear: return z;
      case MobilityFamily::Regularized:
        if (z < lower_band || ceiling - z < upper_band) return jet(z).value;
        return base->value(shift + scale * z) - delta;
      default: return jet(z).value;
    }
  }

  // sqrt(2/m(z)); infinite where m vanishes.
  double f_prime(double z) const {
    const double v = value(z);
    return v > 0.0 ? std::sqrt(2.0 / v) : kInf;
  }

  double f_direct(double z) const;
  double f(double z) const;
};

inline double integrate_gk(const auto& fn, double a, double b, double tol = 1e-13) {
  if (b <= a) return 0.0;
  double err = 0.0;
  const double v = boost::math::quadrature::gauss_kronrod<double, 21>::integrate(fn, a, b, 18, tol, &err);
  if (!std::isfinite(v) || !(err <= 1e-6 * (1.0 + std::abs(v)))) {
    throw Error(ErrorCode::DivergentIntegral, "quadrature did not converge");
  }
  return v;
}

// Direct quadrature of f(z) = int_0^z sqrt(2/m) after r = t^2, which removes the
// inverse-square-root singularity at the origin. With a finite ceiling, the part above S/2
// uses r = S - t^2 for the same reason at S.
inline double MobilityImpl::f_direct(double z) const {
  if (z <= 0.0) return 0.0;
  const bool bounded = std::isfinite(ceiling);
  const double upper = bounded ? std::min(z, 0.5 * ceiling) : z;
  const auto lower_sub = [&](double t) {
    if (t <= 0.0) {
      const double s = jet(0.0).slope;
      return std::isfinite(s) && s > 0.0 ? 2.0 * std::sqrt(2.0 / s) : 0.0;
    }
    const double v = value(t * t);
    return 2.0 * t * std::sqrt(2.0 / v);
  };
  double total = integrate_gk(lower_sub, 0.0, std::sqrt(upper));
  if (bounded && z > 0.5 * ceiling) {
    const double S = ceiling;
    const auto upper_sub = [&](double t) {
      if (t <= 0.0) {
        const double s = jet(S).slope;
        return std::isfinite(s) && s < 0.0 ? 2.0 * std::sqrt(-2.0 / s) : 0.0;
      }
      const double v = value(S - t * t);
      return 2.0 * t * std::sqrt(2.0 / v);
    };
    total += integrate_gk(upper_sub, std::sqrt(std::max(S - z, 0.0)), std::sqrt(0.5 * S));
  }
  return total;
}

inline std::shared_ptr<const FTable> build_f_table(const MobilityImpl& m) {
  constexpr std::size_t kIntervals = 2048;
  auto table = std::make_shared<FTable>();
  table->bounded = std::isfinite(m.ceiling);
  table->ceiling = m.ceiling;
  auto& knots = table->knots;
  auto& values = table->values;
  auto& slopes = table->slopes;
  knots.resize(kIntervals + 1);
  values.resize(kIntervals + 1);
  slopes.resize(kIntervals + 1);
  using Gauss = boost::math::quadrature::gauss<double, 10>;

  if (table->bounded) {
    const double S = m.ceiling;
    const double pi = std::acos(-1.0);
    const auto dfdtheta = [&](double theta) {
      if (theta <= 0.0) {
        const double s = m.jet(0.0).slope;
        return pi * std::sqrt(2.0 * S / s);
      }
      if (theta >= 1.0) {
        const double s = m.jet(S).slope;
        return pi * std::sqrt(-2.0 * S / s);
      }
      const double sn = std::sin(0.5 * pi * theta);
      const double z = S * sn * sn;
      return m.f_prime(z) * 0.5 * pi * S * std::sin(pi * theta);
    };
    for (std::size_t k = 0; k <= kIntervals; ++k) {
      knots[k] = static_cast<double>(k) / kIntervals;
      slopes[k] = dfdtheta(knots[k]);
    }
    values[0] = 0.0;
    for (std::size_t k = 0; k < kIntervals; ++k) {
      values[k + 1] = values[k] + Gauss::integrate(dfdtheta, knots[k], knots[k + 1]);
    }
  } else {
    table->t_min = 1e-7;
    const double t_max = 100.0;
    table->z_max = t_max * t_max;
    table->log_t_min = std::log(table->t_min);
    table->dlog = (std::log(t_max) - table->log_t_min) / kIntervals;
    const auto dfdt = [&](double t) {
      if (t <= 0.0) return 2.0 * std::sqrt(2.0 / m.jet(0.0).slope);
      return 2.0 * t * m.f_prime(t * t);
    };
    for (std::size_t k = 0; k <= kIntervals; ++k) {
      knots[k] = std::exp(table->log_t_min + table->dlog * static_cast<double>(k));
      slopes[k] = dfdt(knots[k]);
    }
    knots[kIntervals] = t_max;
    values[0] = Gauss::integrate(dfdt, 0.0, knots[0]);
    for (std::size_t k = 0; k < kIntervals; ++k) {
      values[k + 1] = values[k] + Gauss::integrate(dfdt, knots[k], knots[k + 1]);
    }
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw Error(ErrorCode::DivergentIntegral, "f table is not finite");
  }
  return table;
}

inline double hermite(double x0, double x1, double f0, double f1, double d0, double d1, double x) {
  const double h = x1 - x0;
  const double s = (x - x0) / h;
  const double s2 = s * s;
  const double s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * f0 + (s3 - 2 * s2 + s) * h * d0 + (-2 * s3 + 3 * s2) * f1 + (s3 - s2) * h * d1;
}

inline double FTable::eval(const MobilityImpl& m, double z) const {
  if (z <= 0.0) return 0.0;
  const std::size_t n = knots.size() - 1;
  if (bounded) {
    const double pi = std::acos(-1.0);
    const double theta = (2.0 / pi) * std::asin(std::sqrt(std::min(z / ceiling, 1.0)));
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(theta * n), n - 1);
    return hermite(knots[k], knots[k + 1], values[k], values[k + 1], slopes[k], slopes[k + 1], theta);
  }
  const double t = std::sqrt(z);
  if (t < t_min) return values[0] * (t / t_min);
  if (z >= z_max) {
    return values[n] + integrate_gk([&](double r) { return m.f_prime(r); }, z_max, z);
  }
  const double pos = (std::log(t) - log_t_min) / dlog;
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(pos, 0.0)), n - 1);
  return hermite(knots[k], knots[k + 1], values[k], values[k + 1], slopes[k], slopes[k + 1], t);
}

inline double MobilityImpl::f(double z) const {
  if (z <= 0.0) return 0.0;
  switch (family) {
    case MobilityFamily::Linear:
      return 2.0 * std::sqrt(2.0 * z);
    case MobilityFamily::Power: {
      const double e = 1.0 - 0.5 * beta1;
      return std::sqrt(2.0) * std::pow(z, e) / e;
    }
    case MobilityFamily::DoublePower: {
      const double S = ceiling;
      const double x = std::min(z / S, 1.0);
      if (beta1 == 1.0 && beta2 == 1.0) return 2.0 * std::sqrt(2.0) * std::asin(std::sqrt(x));
      const double a = 1.0 - 0.5 * beta1;
      const double b = 1.0 - 0.5 * beta2;
      return std::sqrt(2.0) * std::pow(S, a + b - 1.0) * boost::math::beta(a, b, x);
    }
    case MobilityFamily::Regularized:
    case MobilityFamily::Table:
      return table->eval(*this, z);
  }
  return 0.0;
}

inline double find_root(const auto& fn, double lo, double hi) {
  std::uintmax_t iters = 200;
  const auto r = boost::math::tools::toms748_solve(fn, lo, hi, boost::math::tools::eps_tolerance<double>(53), iters);
  return 0.5 * (r.first + r.second);
}

}  // namespace detail

/// Immutable mobility function with its induced maps f, g = f^{-1} and h.
class Mobility {
 public:
  static Mobility linear() {
    auto impl = std::make_shared<detail::MobilityImpl>();
    impl->family = MobilityFamily::Linear;
    return Mobility(std::move(impl));
  }

  static Mobility power(double beta) {
    if (!(beta > 0.0)) throw Error(ErrorCode::InvalidArgument, "power exponent must be positive");
    auto impl = std::make_shared<detail::MobilityImpl>();
    impl->family = MobilityFamily::Power;
    impl->beta1 = beta;
    return Mobility(std::move(impl));
  }

  static Mobility double_power(double beta1, double beta2, double ceiling) {
    if (!(beta1 > 0.0 && beta2 > 0.0 && ceiling > 0.0 && std::isfinite(ceiling))) {
      throw Error(ErrorCode::InvalidArgument, "double power needs positive exponents and a finite ceiling");
    }
    auto impl = std::make_shared<detail::MobilityImpl>();
    impl->family = MobilityFamily::DoublePower;
    impl->beta1 = beta1;
    impl->beta2 = beta2;
    impl->ceiling = ceiling;
    const double a = 1.0 - 0.5 * beta1;
    const double b = 1.0 - 0.5 * beta2;
    impl->f_ceiling = std::sqrt(2.0) * std::pow(ceiling, a + b - 1.0) * boost::math::beta(a, b);
    return Mobility(std::move(impl));
  }

  /// Mobility sampled at strictly increasing z starting at z = 0 with m(0) = 0. The ceiling is
  /// the last abscissa when the last value is zero, otherwise infinite (linear extrapolation).
  static Mobility table(std::vector<double> z, std::vector<double> m) {
    if (z.size() != m.size() || z.size() < 3) {
      throw Error(ErrorCode::InvalidArgument, "mobility table needs at least three (z, m) rows");
    }
    for (std::size_t i = 1; i < z.size(); ++i) {
      if (!(z[i] > z[i - 1])) throw Error(ErrorCode::InvalidArgument, "mobility table z must increase strictly");
    }
    if (z.front() != 0.0 || m.front() != 0.0) {
      throw Error(ErrorCode::InvalidArgument, "mobility table must start at (0, 0)");
    }
    auto impl = std::make_shared<detail::MobilityImpl>();
    impl->family = MobilityFamily::Table;
    impl->ceiling = m.back() == 0.0 ? z.back() : kInf;
    impl->spline = detail::CubicSpline(std::move(z), std::move(m));
    impl->table = detail::build_f_table(*impl);
    if (std::isfinite(impl->ceiling)) impl->f_ceiling = impl->table->values.back();
    return Mobility(std::move(impl));
  }

  MobilityFamily family() const { return impl_->family; }
  double ceiling() const { return impl_->ceiling; }
  bool bounded() const { return std::isfinite(impl_->ceiling); }
  double beta1() const { return impl_->beta1; }
  double beta2() const { return impl_->beta2; }

  double operator()(double z) const { return impl_->value(z); }
  Jet jet(double z) const { return impl_->jet(z); }

  /// f(z) = int_0^z sqrt(2 / m(r)) dr.
  double f(double z) const {
    if (bounded() && z >= ceiling()) return impl_->f_ceiling;
    return impl_->f(z);
  }
  /// Same integral by adaptive quadrature, bypassing closed forms and tables.
  double f_quadrature(double z) const { return impl_->f_direct(z); }
  double f_prime(double z) const { return impl_->f_prime(z); }
  double f_at_ceiling() const { return impl_->f_ceiling; }

  /// g = f^{-1}: bracketed bisection refined by Newton steps with g' = sqrt(m(g)/2).
  double f_inverse(double w) const {
    if (!(w >= 0.0)) throw Error(ErrorCode::OutOfRange, "f_inverse needs w >= 0");
    if (bounded() && w >= impl_->f_ceiling) throw Error(ErrorCode::OutOfRange, "w is not below f(S)");
    if (w == 0.0) return 0.0;
    double lo = 0.0;
    double hi = bounded() ? ceiling() : 1.0;
    if (!bounded()) {
      while (f(hi) <= w) {
        lo = hi;
        hi *= 2.0;
        if (hi > 1e300) throw Error(ErrorCode::OutOfRange, "f_inverse bracket failed");
      }
    }
    double z = 0.5 * (lo + hi);
    for (int it = 0; it < 300; ++it) {
      const double r = f(z) - w;
      if (r == 0.0) return z;
      if (r > 0.0) hi = z; else lo = z;
      const double v = (*this)(z);
      double next = v > 0.0 ? z - r * std::sqrt(0.5 * v) : 0.5 * (lo + hi);
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - z) <= 4.0 * std::numeric_limits<double>::epsilon() * z || hi - lo <= 1e-300) {
        return next;
      }
      z = next;
    }
    return z;
  }

  /// h(z) = int_{s0}^z (z - r)/m(r) dr, continuously extended to z in {0, S}.
  double h(double s0, double z) const {
    if (z == s0) return 0.0;
    const auto& m = *impl_;
    if (m.family == MobilityFamily::Linear || (m.family == MobilityFamily::Power && m.beta1 == 1.0)) {
      const double zl = z > 0.0 ? z * std::log(z / s0) : 0.0;
      return zl - (z - s0);
    }
    if (m.family == MobilityFamily::Power) {
      const double b = m.beta1;
      const double zp = z > 0.0 ? std::pow(z, 1.0 - b) : 0.0;
      return z * (zp - std::pow(s0, 1.0 - b)) / (1.0 - b) - (z * zp - std::pow(s0, 2.0 - b)) / (2.0 - b);
    }
    if (m.family == MobilityFamily::DoublePower && m.beta1 == 1.0 && m.beta2 == 1.0) {
      const double S = m.ceiling;
      const double a = z > 0.0 ? z * std::log(z / s0) : 0.0;
      const double b = z < S ? (S - z) * std::log((S - z) / (S - s0)) : 0.0;
      return (a + b) / S;
    }
    const double lo = std::min(z, s0);
    const double hi = std::max(z, s0);
    // On r = lo + (hi - lo) t the kernel |z - r| is (hi - lo) times t or 1 - t, so no digits are lost
    // for z close to s0. The integrand stays bounded: m > 0 inside (0, S), and at a root endpoint
    // the numerator vanishes at least as fast as m.
    const double len = hi - lo;
    const bool z_high = z > s0;
    const auto integrand = [&](double t) {
      const double v = m.value(lo + len * t);
      return v > 0.0 ? (z_high ? 1.0 - t : t) / v : 0.0;
    };
    const double v = len * len * detail::integrate_gk(integrand, 0.0, 1.0, 1e-12);
    if (!std::isfinite(v)) throw Error(ErrorCode::DivergentIntegral, "h quadrature failed");
    return v;
  }

  // Regularization parameters; meaningful only for the Regularized family.
  double delta() const { return impl_->delta; }
  double root_low() const { return impl_->root_low; }
  double root_high() const { return impl_->root_high; }
  std::optional<Mobility> base() const {
    if (!impl_->base) return std::nullopt;
    return Mobility(impl_->base);
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    const auto& m = *impl_;
    switch (m.family) {
      case MobilityFamily::Linear: os << "linear"; break;
      case MobilityFamily::Power: os << "power(beta=" << m.beta1 << ")"; break;
      case MobilityFamily::DoublePower:
        os << "double_power(beta1=" << m.beta1 << ",beta2=" << m.beta2 << ",S=" << m.ceiling << ")";
        break;
      case MobilityFamily::Regularized: os << "regularized(" << Mobility(m.base).describe() << ",delta=" << m.delta << ")"; break;
      case MobilityFamily::Table: os << "table(rows=" << m.spline.x.size() << ")"; break;
    }
    return os.str();
  }

  friend Mobility regularize(const Mobility& m, double delta);

 private:
  explicit Mobility(std::shared_ptr<const detail::MobilityImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<const detail::MobilityImpl> impl_;
};

/// Shifted family m_delta with bounded derivative. For S = inf, m_delta(z) = m(z + z_delta) - delta;
/// for S < inf the increasing affine map z -> z_1 + (z_2 - z_1) z / S onto the root interval is used.
inline Mobility regularize(const Mobility& m, double delta) {
  if (!(delta > 0.0)) throw Error(ErrorCode::InvalidArgument, "delta must be positive");
  auto impl = std::make_shared<detail::MobilityImpl>();
  impl->family = MobilityFamily::Regularized;
  impl->base = m.impl_;
  impl->delta = delta;
  impl->ceiling = m.ceiling();
  const auto gap = [&](double z) { return m(z) - delta; };
  if (!m.bounded()) {
    double hi = 1.0;
    while (m(hi) <= delta) {
      hi *= 2.0;
      if (hi > 1e12) throw Error(ErrorCode::DeltaTooLarge, "no root of m(z) = delta");
    }
    const double root = detail::find_root(gap, 0.0, hi);
    impl->root_low = root;
    impl->root_high = kInf;
    impl->shift = root;
    impl->scale = 1.0;
  } else {
    const double S = m.ceiling();
    // m' is nonincreasing, its zero locates the maximum.
    const double eps = 1e-12 * S;
    double zmax = 0.5 * S;
    const auto slope = [&](double z) { return m.jet(z).slope; };
    if (slope(eps) > 0.0 && slope(S - eps) < 0.0) zmax = detail::find_root(slope, eps, S - eps);
    else if (slope(eps) <= 0.0) zmax = eps;
    else zmax = S - eps;
    if (!(m(zmax) > delta)) throw Error(ErrorCode::DeltaTooLarge, "delta is not below max m");
    const double z1 = detail::find_root(gap, 0.0, zmax);
    const double z2 = detail::find_root(gap, zmax, S);
    if (!(z1 < z2)) throw Error(ErrorCode::DeltaTooLarge, "root interval is empty");
    impl->root_low = z1;
    impl->root_high = z2;
    impl->shift = z1;
    impl->scale = (z2 - z1) / S;
  }
  {
    const Jet lo = m.jet(impl->shift);
    impl->lower_jet = {0.0, impl->scale * lo.slope, impl->scale * impl->scale * lo.curvature};
    impl->lower_band = 1e-6 * impl->shift / impl->scale;
    if (m.bounded()) {
      const Jet hi = m.jet(impl->root_high);
      impl->upper_jet = {0.0, impl->scale * hi.slope, impl->scale * impl->scale * hi.curvature};
      impl->upper_band = 1e-6 * (m.ceiling() - impl->root_high) / impl->scale;
    }
  }
  impl->table = detail::build_f_table(*impl);
  if (std::isfinite(impl->ceiling)) impl->f_ceiling = impl->table->values.back();
  return Mobility(std::move(impl));
}

/// Structural conditions of a mobility, sampled on a mesh where no symbolic rule applies.
struct MobilityReport {
  bool concavity_ok = false;
  bool positivity_ok = false;
  bool lsc = false;
  double sup_abs_slope = 0.0;
  double sup_neg_curv_times_value = 0.0;
  std::optional<std::pair<double, double>> pg_exponents;
  bool ms_ok = false;
  double convexity_ratio_min = kInf;
  /// Condition (M) holds and, when the derivative is unbounded, so does the singularity-strength rule.
  bool admissible() const { return concavity_ok && positivity_ok && (lsc || ms_ok); }
};

/// f'''(z) f'(z) / f''(z)^2 = 3 - 2 m m'' / m'^2.
inline double convexity_ratio(const Mobility& m, double z) {
  const Jet j = m.jet(z);
  if (j.slope == 0.0) {
    throw Error(ErrorCode::DerivativeVanishes,
                j.curvature < 0.0 ? "m'(z) = 0 with m'' < 0: ratio is +inf" : "m'(z) = 0 with m'' = 0: ratio indeterminate");
  }
  return 3.0 - 2.0 * j.value * j.curvature / (j.slope * j.slope);
}

/// Log-spaced sample points in (0, S), clustered at both ends when S is finite.
inline std::vector<double> default_sample_mesh(const Mobility& m, std::size_t n = 10000) {
  std::vector<double> mesh;
  mesh.reserve(n);
  if (!m.bounded()) {
    const double lo = std::log(1e-8), hi = std::log(1e3);
    for (std::size_t i = 0; i < n; ++i) mesh.push_back(std::exp(lo + (hi - lo) * i / (n - 1)));
    return mesh;
  }
  const double S = m.ceiling();
  const std::size_t half = n / 2;
  const double lo = std::log(1e-8 * S), hi = std::log(0.5 * S);
  for (std::size_t i = 0; i < half; ++i) mesh.push_back(std::exp(lo + (hi - lo) * i / (half - 1)));
  for (std::size_t i = 0; i < n - half; ++i) {
    mesh.push_back(S - std::exp(lo + (hi - lo) * (n - half - 1 - i) / (n - half - 1)));
  }
  std::sort(mesh.begin(), mesh.end());
  mesh.erase(std::unique(mesh.begin(), mesh.end()), mesh.end());
  return mesh;
}

/// m'(z)^2 f(z) at the given points; tends to zero under the singularity-strength rule.
inline std::vector<double> ms_probe(const Mobility& m, const std::vector<double>& zs) {
  std::vector<double> out;
  for (double z : zs) {
    const double s = m.jet(z).slope;
    out.push_back(s * s * m.f(z));
  }
  return out;
}

inline std::vector<double> ms_probe_upper(const Mobility& m, const std::vector<double>& gaps) {
  std::vector<double> out;
  const double S = m.ceiling();
  for (double g : gaps) {
    const double s = m.jet(S - g).slope;
    out.push_back(s * s * (m.f_at_ceiling() - m.f(S - g)));
  }
  return out;
}

inline bool exponent_in_ms_range(double beta) { return beta > 2.0 / 3.0 && beta <= 1.0; }

inline MobilityReport validate(const Mobility& m, const std::vector<double>& mesh) {
  MobilityReport rep;
  rep.concavity_ok = true;
  rep.positivity_ok = true;
  for (double z : mesh) {
    if (!(z > 0.0) || z >= m.ceiling()) throw Error(ErrorCode::InvalidArgument, "sample mesh must lie in (0, S)");
    const Jet j = m.jet(z);
    if (!(j.value > 0.0)) {
      throw Error(ErrorCode::NonPositiveMobility, "m(z) <= 0 at interior z = " + std::to_string(z));
    }
    if (j.curvature > 1e-10 * (1.0 + std::abs(j.value))) {
      throw Error(ErrorCode::NonConcaveMobility, "m''(z) > 0 at z = " + std::to_string(z));
    }
    rep.sup_abs_slope = std::max(rep.sup_abs_slope, std::abs(j.slope));
    rep.sup_neg_curv_times_value = std::max(rep.sup_neg_curv_times_value, -j.curvature * j.value);
    double ratio = kInf;
    if (j.slope != 0.0) ratio = 3.0 - 2.0 * j.value * j.curvature / (j.slope * j.slope);
    else if (j.curvature == 0.0) ratio = 3.0;
    rep.convexity_ratio_min = std::min(rep.convexity_ratio_min, ratio);
  }
  if (std::abs(m(0.0)) > 1e-12 || (m.bounded() && std::abs(m(m.ceiling())) > 1e-12)) {
    throw Error(ErrorCode::NonPositiveMobility, "mobility must vanish at 0 (and at S when finite)");
  }

  switch (m.family()) {
    case MobilityFamily::Linear:
      rep.lsc = true;
      rep.ms_ok = true;
      rep.pg_exponents = std::pair{1.0, 1.0};
      break;
    case MobilityFamily::Power:
      rep.lsc = m.beta1() == 1.0;
      rep.ms_ok = exponent_in_ms_range(m.beta1());
      rep.pg_exponents = std::pair{m.beta1(), m.beta1()};
      break;
    case MobilityFamily::DoublePower:
      rep.lsc = m.beta1() == 1.0 && m.beta2() == 1.0;
      rep.ms_ok = exponent_in_ms_range(m.beta1()) && exponent_in_ms_range(m.beta2());
      break;
    case MobilityFamily::Regularized:
    case MobilityFamily::Table: {
      rep.lsc = std::isfinite(rep.sup_abs_slope) && std::isfinite(rep.sup_neg_curv_times_value);
      const std::vector<double> probe_points{1e-4, 1e-6, 1e-8};
      const auto lower = ms_probe(m, probe_points);
      const auto decays = [](const std::vector<double>& p) {
        return p[0] >= p[1] && p[1] >= p[2] && (p[2] < p[0] || p[0] == 0.0);
      };
      bool ok = decays(lower);
      if (m.bounded()) {
        const auto upper = ms_probe_upper(m, probe_points);
        ok = ok && decays(upper);
      }
      rep.ms_ok = ok;
      if (!m.bounded()) {
        if (m.family() == MobilityFamily::Regularized && m.base()) {
          const auto b = *m.base();
          if (b.family() == MobilityFamily::Power) rep.pg_exponents = std::pair{b.beta1(), b.beta1()};
          else rep.pg_exponents = std::pair{1.0, 1.0};
        } else {
          const double slope_far = m.jet(1e6).slope;
          rep.pg_exponents = slope_far > 0.0 ? std::pair{1.0, 1.0} : std::pair{0.0, 0.0};
        }
      }
      break;
    }
  }
  return rep;
}

inline MobilityReport validate(const Mobility& m) { return validate(m, default_sample_mesh(m)); }

}  // namespace wmflow
