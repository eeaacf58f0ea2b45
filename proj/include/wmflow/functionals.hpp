#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "wmflow/grid.hpp"
#include "wmflow/mobility.hpp"

namespace wmflow {

/// Reference point of the entropy kernel: clamp(U/|Omega|, 0.1 S', 0.9 S'), S' = min(S, 2U/|Omega|).
inline double default_s0(double mass, double length, double ceiling) {
  const double mean = mass / length;
  const double s_ref = std::min(ceiling, 2.0 * mean);
  return std::clamp(mean, 0.1 * s_ref, 0.9 * s_ref);
}

/// f' with the argument kept a relative 1e-12 away from the degeneracy points 0 and S.
inline double f_prime_floored(const Mobility& m, double z) {
  const double s_ref = std::min(m.ceiling(), 1.0);
  const double eps = 1e-12 * s_ref;
  const double hi = m.bounded() ? m.ceiling() - eps : kInf;
  return m.f_prime(std::clamp(z, eps, hi));
}

inline std::vector<double> f_values(const Mobility& m, std::span<const double> u) {
  std::vector<double> out(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = m.f(u[i]);
  return out;
}

struct EnergyBreakdown {
  double fisher = 0.0;
  double entropy = 0.0;
  double grad_f_norm2 = 0.0;
  double hess_f_norm2 = 0.0;
};

inline double fisher_energy(const DensityField& u, const Mobility& m) {
  const auto fu = f_values(m, u.values);
  const auto grad = d_face(u.grid, fu);
  double s = 0.0;
  for (double q : grad) s += q * q;
  return 0.5 * s * u.grid.dx();
}

inline double heat_entropy(const DensityField& u, const Mobility& m, double s0) {
  double s = 0.0;
  for (double z : u.values) s += m.h(s0, z);
  return s * u.grid.dx();
}

inline EnergyBreakdown energy_breakdown(const DensityField& u, const Mobility& m, double s0) {
  EnergyBreakdown e;
  const auto fu = f_values(m, u.values);
  const auto grad = d_face(u.grid, fu);
  const auto lap = d2_cell(u.grid, fu);
  for (double q : grad) e.grad_f_norm2 += q * q;
  for (double q : lap) e.hess_f_norm2 += q * q;
  e.grad_f_norm2 *= u.grid.dx();
  e.hess_f_norm2 *= u.grid.dx();
  e.fisher = 0.5 * e.grad_f_norm2;
  e.entropy = heat_entropy(u, m, s0);
  return e;
}

/// H / (F^q + 1); the constant in the entropy bound is not known, so only the ratio is reported.
inline double entropy_bound_ratio(double entropy, double fisher, double q = 1.0) {
  return entropy / (std::pow(fisher, q) + 1.0);
}

/// Discrete first variation -f'(u) d2(f(u)), the L2(dx) gradient of fisher_energy.
inline std::vector<double> first_variation(const DensityField& u, const Mobility& m) {
  const auto fu = f_values(m, u.values);
  auto lap = d2_cell(u.grid, fu);
  for (std::size_t i = 0; i < lap.size(); ++i) lap[i] *= -f_prime_floored(m, u.values[i]);
  return lap;
}

/// Matrix of the second difference operator d2_cell.
inline Eigen::MatrixXd laplacian_matrix(const Grid1D& g) {
  const auto n = static_cast<Eigen::Index>(g.cells());
  const double c = 1.0 / (g.dx() * g.dx());
  Eigen::MatrixXd lap = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    lap(i, i) -= c;
    lap(i + 1, i + 1) -= c;
    lap(i, i + 1) += c;
    lap(i + 1, i) += c;
  }
  return lap;
}

/// Hessian of fisher_energy as an operator on L2(dx): diag(-f'' d2 f) - diag(f') d2 diag(f').
inline Eigen::MatrixXd fisher_hessian(const DensityField& u, const Mobility& m) {
  const auto n = static_cast<Eigen::Index>(u.size());
  const auto fu = f_values(m, u.values);
  const auto lapf = d2_cell(u.grid, fu);
  Eigen::MatrixXd hess = -laplacian_matrix(u.grid);
  Eigen::VectorXd fp(n);
  for (Eigen::Index i = 0; i < n; ++i) fp(i) = f_prime_floored(m, u.values[i]);
  hess = fp.asDiagonal() * hess * fp.asDiagonal();
  for (Eigen::Index i = 0; i < n; ++i) {
    const Jet j = m.jet(std::max(u.values[i], 1e-300));
    const double fpp = j.value > 0.0 ? -j.slope * fp(i) / (2.0 * j.value) : 0.0;
    hess(i, i) -= fpp * lapf[i];
  }
  return hess;
}

/// Weighted Laplacian -div(m_face grad .), with m_face the mobility of the arithmetic face average.
inline Eigen::MatrixXd mobility_operator(const Grid1D& g, const Mobility& m, std::span<const double> u) {
  const auto n = static_cast<Eigen::Index>(g.cells());
  const double c = 1.0 / (g.dx() * g.dx());
  Eigen::MatrixXd op = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index k = 1; k < n; ++k) {
    const double mf = std::max(m(0.5 * (u[k - 1] + u[k])), 0.0) * c;
    op(k - 1, k - 1) += mf;
    op(k, k) += mf;
    op(k - 1, k) -= mf;
    op(k, k - 1) -= mf;
  }
  return op;
}

/// div(m_face grad p) applied to a cell field; the flux vanishes at both boundary faces.
inline std::vector<double> mobility_divergence(const Grid1D& g, const Mobility& m, std::span<const double> u,
                                               std::span<const double> p) {
  auto flux = d_face(g, p);
  for (std::size_t k = 1; k < g.cells(); ++k) flux[k] *= std::max(m(0.5 * (u[k - 1] + u[k])), 0.0);
  return divergence(g, flux);
}

}  // namespace wmflow
