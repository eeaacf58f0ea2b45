#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "wmflow/error.hpp"
#include "wmflow/functionals.hpp"
#include "wmflow/grid.hpp"
#include "wmflow/jko.hpp"
#include "wmflow/mobility.hpp"

namespace wmflow {

struct OracleOptions {
  double floor_fraction = 1e-3;  // positivity floor as a fraction of U / L
  double tol = 1e-9;  // max-norm residual relative to max(1, max u); rounding floors near 1e-10
  int max_iter = 50;
};

/// Right-hand side div(m_face grad dF(u)) of the fourth-order flow, zero flux at both walls.
inline std::vector<double> flow_rhs(const DensityField& u, const Mobility& m) {
  return mobility_divergence(u.grid, m, u.values, first_variation(u, m));
}

/// One implicit Euler step v - u = tau div(m_face grad dF(v)), solved by damped Newton with a
/// Jacobian assembled from central-difference columns. Refuses data near degeneracy.
inline DensityField oracle_step(const DensityField& u, double tau, const Mobility& m, const OracleOptions& opts = {}) {
  const Grid1D& g = u.grid;
  const auto n = static_cast<Eigen::Index>(g.cells());
  const double floor = opts.floor_fraction * u.mass() / g.length();
  const double S = m.ceiling();
  const auto admissible = [&](const std::vector<double>& v) {
    for (double x : v) {
      if (!(x >= floor) || (m.bounded() && x > S - floor)) return false;
    }
    return true;
  };
  if (!admissible(u.values)) throw Error(ErrorCode::NewtonFailure, "oracle input violates the positivity floor");

  const auto residual = [&](const std::vector<double>& v) {
    const auto rhs = flow_rhs(DensityField(g, v), m);
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) r(i) = v[i] - u[i] - tau * rhs[i];
    return r;
  };

  std::vector<double> v = u.values;
  Eigen::VectorXd r = residual(v);
  const double scale = std::max(1.0, u.max());
  Eigen::MatrixXd jac(n, n);
  for (int it = 0; it < opts.max_iter; ++it) {
    if (r.lpNorm<Eigen::Infinity>() <= opts.tol * scale) return DensityField(g, v);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double h = 1e-6 * std::max(1e-3, std::abs(v[i]));
      std::vector<double> vp = v, vm = v;
      vp[i] += h;
      vm[i] -= h;
      jac.col(i) = (residual(vp) - residual(vm)) / (2.0 * h);
    }
    const Eigen::VectorXd d = jac.partialPivLu().solve(-r);
    if (!d.allFinite()) break;
    // The residual carries rounding of order tau / dx^4 times machine precision; a negligible
    // correction means that floor has been reached.
    if (d.lpNorm<Eigen::Infinity>() <= 1e-12 * scale) {
      for (Eigen::Index i = 0; i < n; ++i) v[i] += d(i);
      return DensityField(g, v);
    }
    double alpha = 1.0;
    bool accepted = false;
    const double rn = r.norm();
    for (int h = 0; h < 30; ++h, alpha *= 0.5) {
      std::vector<double> trial(v);
      for (Eigen::Index i = 0; i < n; ++i) trial[i] += alpha * d(i);
      if (!admissible(trial)) continue;
      const Eigen::VectorXd rt = residual(trial);
      if (rt.norm() <= (1.0 - 1e-4 * alpha) * rn) {
        v = std::move(trial);
        r = rt;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  if (r.lpNorm<Eigen::Infinity>() <= opts.tol * scale) return DensityField(g, v);
  throw Error(ErrorCode::NewtonFailure, "oracle Newton iteration did not converge");
}

/// Oracle trajectory in the layout of a minimizing-movement run; the distance column is not computed (NaN).
inline JkoTrajectory oracle_run(const DensityField& u0, double tau, double T, const Mobility& m, const OracleOptions& opts = {},
                                const StepCallback& on_step = {}) {
  JkoTrajectory traj{tau, u0};
  traj.s0 = default_s0(u0.mass(), u0.grid.length(), m.ceiling());
  traj.f0 = fisher_energy(u0, m);
  traj.h0 = heat_entropy(u0, m, traj.s0);
  const std::size_t steps = step_count(tau, T);
  DensityField current = u0;
  for (std::size_t k = 1; k <= steps; ++k) {
    current = oracle_step(current, tau, m, opts);
    const EnergyBreakdown e = energy_breakdown(current, m, traj.s0);
    traj.steps.push_back({current, tau * static_cast<double>(k), std::numeric_limits<double>::quiet_NaN(), e.fisher,
                          e.entropy, e.hess_f_norm2, {}});
    if (on_step) on_step(k, traj.steps.back());
  }
  return traj;
}

/// Relative L2 difference of two trajectories at time T.
inline double compare(const JkoTrajectory& traj, const JkoTrajectory& reference, double T) {
  if (!(traj.u0.grid == reference.u0.grid)) throw Error(ErrorCode::GridMismatch, "trajectories live on different grids");
  const auto& a = traj.at(T);
  const auto& b = reference.at(T);
  const double nb = l2_distance(b.grid, b.values, std::vector<double>(b.size(), 0.0));
  return l2_distance(a.grid, a.values, b.values) / nb;
}

}  // namespace wmflow
