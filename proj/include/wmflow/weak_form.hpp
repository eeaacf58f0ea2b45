#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "wmflow/functionals.hpp"
#include "wmflow/grid.hpp"
#include "wmflow/jko.hpp"
#include "wmflow/mobility.hpp"

namespace wmflow {

enum class WeakForm { Mobility, SqrtMobility };

struct WeakResidual {
  double value = 0.0;       // time term + transport term
  double time_term = 0.0;   // -int int eta' phi u
  double transport_term = 0.0;
};

/// exp(1 - 1 / (1 - s^2)) with s the position in (a, b) rescaled to (-1, 1); zero outside.
inline std::function<double(double)> smooth_bump(double a, double b) {
  return [a, b](double t) {
    const double s = (2.0 * t - a - b) / (b - a);
    if (std::abs(s) >= 1.0) return 0.0;
    return std::exp(1.0 - 1.0 / (1.0 - s * s));
  };
}

/// Spatial part int f'(u) lap f(u) [grad m(u) . grad phi + m(u) lap phi] dx. Cell products carry the
/// Laplacian term and face products the gradient term; the face value of f' is sqrt(2) / mean(sqrt m),
/// for which the mobility form and the sqrt-mobility form 2 sqrt(2) grad sqrt(m) . grad phi coincide.
inline double weak_transport_term(const DensityField& u, const Mobility& m, std::span<const double> phi, WeakForm form) {
  const Grid1D& g = u.grid;
  const std::size_t n = g.cells();
  const auto fu = f_values(m, u.values);
  const auto lap_f = d2_cell(g, fu);
  const auto lap_phi = d2_cell(g, phi);
  const auto grad_phi = d_face(g, phi);
  std::vector<double> mv(n), root(n);
  for (std::size_t i = 0; i < n; ++i) {
    mv[i] = std::max(m(u[i]), 0.0);
    root[i] = std::sqrt(mv[i]);
  }
  double cells = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double weight = form == WeakForm::Mobility ? f_prime_floored(m, u[i]) * mv[i] : std::sqrt(2.0) * root[i];
    cells += weight * lap_f[i] * lap_phi[i];
  }
  double faces = 0.0;
  const double idx = 1.0 / g.dx();
  for (std::size_t k = 1; k < n; ++k) {
    const double lap_mean = 0.5 * (lap_f[k - 1] + lap_f[k]);
    if (form == WeakForm::Mobility) {
      const double root_mean = 0.5 * (root[k - 1] + root[k]);
      if (root_mean <= 0.0) continue;
      faces += std::sqrt(2.0) / root_mean * lap_mean * (mv[k] - mv[k - 1]) * idx * grad_phi[k];
    } else {
      faces += 2.0 * std::sqrt(2.0) * lap_mean * (root[k] - root[k - 1]) * idx * grad_phi[k];
    }
  }
  return (cells + faces) * g.dx();
}

/// Residual of the continuous weak formulation on the piecewise-constant trajectory. With step n
/// occupying ((n-1) tau, n tau], the time term is sum_n (eta((n-1) tau) - eta(n tau)) <phi, u^n> and the
/// transport term is sum_n (int of eta over step n) times the spatial part at u^n.
inline WeakResidual weak_form_residual(const JkoTrajectory& traj, const Mobility& m, std::span<const double> phi,
                                       const std::function<double(double)>& eta, WeakForm form = WeakForm::Mobility) {
  using Gauss = boost::math::quadrature::gauss<double, 10>;
  WeakResidual r;
  const Grid1D& g = traj.u0.grid;
  for (std::size_t k = 0; k < traj.steps.size(); ++k) {
    const double t0 = traj.tau * static_cast<double>(k);
    const double t1 = t0 + traj.tau;
    const double eta_int = Gauss::integrate(eta, t0, t1);
    const DensityField& u = traj.steps[k].u;
    r.time_term += (eta(t0) - eta(t1)) * l2_inner(g, phi, u.values);
    if (eta_int != 0.0) r.transport_term += eta_int * weak_transport_term(u, m, phi, form);
  }
  r.value = r.time_term + r.transport_term;
  return r;
}

}  // namespace wmflow
