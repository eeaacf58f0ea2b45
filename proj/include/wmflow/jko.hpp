#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "wmflow/error.hpp"
#include "wmflow/functionals.hpp"
#include "wmflow/grid.hpp"
#include "wmflow/mobility.hpp"
#include "wmflow/transport.hpp"

namespace wmflow {

struct JkoOptions {
  double tol_outer = 1e-10;  // relative decrease of the penalized objective that ends a step
  int max_outer = 50;
  double sigma0 = 1.0;
  int max_halvings = 30;
  TransportOptions transport{};
};

/// Allowance for monotonicity checks: max(1e-8, 10 tol_outer) (1 + F(u0)).
inline double epsilon_mono(const JkoOptions& opts, double f0) {
  return std::max(1e-8, 10.0 * opts.tol_outer) * (1.0 + f0);
}

struct StepDiagnostics {
  int outer_iterations = 0;
  int transport_iterations = 0;
  int halvings = 0;
  double w2 = 0.0;
  double objective = 0.0;
  bool rejected = false;  // no trial point improved on the predecessor
  bool converged = false;
};

struct JkoStepResult {
  DensityField u;
  StepDiagnostics diagnostics;
  PrimalDualState transport_state;
};

/// One minimizing-movement step: an approximate minimizer of W_m(., u_prev)^2 / (2 tau) + F over X.
/// Alternates transport solves with the endpoint fixed and a metric-preconditioned endpoint update:
/// with r = G / (2 tau) + dF the gradient of the objective (G the terminal potential of W^2) and
/// L_m the mobility-weighted Laplacian, the direction solves (I + tau L_m H_F) d = -tau L_m r, which
/// is Newton's direction when W^2 is replaced by its local quadratic form. Trials are backtracked
/// and only strict decreases are accepted, so the objective never exceeds F(u_prev).
inline JkoStepResult jko_step(const DensityField& u_prev, double tau, const TransportSolver& solver, const JkoOptions& opts,
                              const PrimalDualState* warm = nullptr) {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "time step must be positive");
  const Mobility& m = solver.mobility();
  const Grid1D& g = u_prev.grid;
  const auto n = static_cast<Eigen::Index>(g.cells());
  const double dx = g.dx();
  const double mass = u_prev.mass();

  JkoStepResult out{u_prev, {}, warm ? *warm : PrimalDualState{}};
  StepDiagnostics& diag = out.diagnostics;
  double objective = fisher_energy(u_prev, m);
  diag.objective = objective;
  std::vector<double> grad_w2(g.cells(), 0.0);
  DensityField u = u_prev;

  for (int outer = 0; outer < opts.max_outer; ++outer) {
    const auto dfu = first_variation(u, m);
    Eigen::VectorXd r(n);
    for (Eigen::Index i = 0; i < n; ++i) r(i) = grad_w2[i] / (2.0 * tau) + dfu[i];
    std::vector<double> mid(g.cells());
    for (std::size_t i = 0; i < g.cells(); ++i) mid[i] = 0.5 * (u_prev[i] + u[i]);
    const Eigen::MatrixXd lm = mobility_operator(g, m, mid);
    const Eigen::VectorXd lr = -tau * (lm * r);
    Eigen::VectorXd d = (Eigen::MatrixXd::Identity(n, n) + tau * lm * fisher_hessian(u, m)).partialPivLu().solve(lr);
    double predicted = -r.dot(d) * dx;
    if (!d.allFinite() || !(predicted > 0.0)) {
      d = lr;
      predicted = -r.dot(d) * dx;
    }
    diag.outer_iterations = outer + 1;
    if (!(predicted > opts.tol_outer * (1.0 + std::abs(objective)))) {
      diag.converged = true;
      break;
    }

    double sigma = opts.sigma0;
    bool accepted = false;
    for (int h = 0; h <= opts.max_halvings; ++h, sigma *= 0.5) {
      std::vector<double> trial(g.cells());
      for (Eigen::Index i = 0; i < n; ++i) trial[i] = u[i] + sigma * d(i);
      DensityField candidate = project_constraints(g, trial, mass, m.ceiling());
      TransportResult tr{0.0, TransportPath(g, solver.time_slices())};
      try {
        tr = solver.solve(u_prev, candidate, out.transport_state.xu.empty() ? nullptr : &out.transport_state);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::NoConvergence) throw Error(ErrorCode::InnerDivergence, e.what());
        throw;
      }
      diag.transport_iterations += tr.iterations;
      const double value = tr.w2 / (2.0 * tau) + fisher_energy(candidate, m);
      if (value < objective) {
        const double decrease = objective - value;
        u = std::move(candidate);
        objective = value;
        diag.w2 = tr.w2;
        const auto term = tr.path.terminal_potential();
        for (std::size_t i = 0; i < g.cells(); ++i) grad_w2[i] = 2.0 * term[i];
        out.transport_state = std::move(tr.state);
        accepted = true;
        if (decrease <= opts.tol_outer * (1.0 + std::abs(objective))) diag.converged = true;
        break;
      }
      ++diag.halvings;
    }
    if (!accepted) {
      if (outer == 0) diag.rejected = true;
      break;
    }
    if (diag.converged) break;
  }
  diag.objective = objective;
  out.u = std::move(u);
  return out;
}

inline JkoStepResult jko_step(const DensityField& u_prev, double tau, const Mobility& m, const JkoOptions& opts = {}) {
  return jko_step(u_prev, tau, TransportSolver(u_prev.grid, m, opts.transport), opts);
}

struct TrajectoryStep {
  DensityField u;
  double t = 0.0;
  double w2 = 0.0;
  double fisher = 0.0;
  double entropy = 0.0;
  double hess_f_norm2 = 0.0;
  StepDiagnostics diagnostics;
};

/// Piecewise-constant minimizing-movement trajectory: u_tau(t) = u^n on ((n-1) tau, n tau], u_tau(0) = u0.
struct JkoTrajectory {
  double tau = 0.0;
  DensityField u0;
  double f0 = 0.0;
  double h0 = 0.0;
  double s0 = 0.0;
  std::vector<TrajectoryStep> steps;

  const DensityField& at(double t) const {
    if (t <= 0.0 || steps.empty()) return u0;
    const auto n = static_cast<std::size_t>(std::ceil(t / tau - 1e-9));
    return steps[std::clamp<std::size_t>(n, 1, steps.size()) - 1].u;
  }
  double final_time() const { return tau * static_cast<double>(steps.size()); }
};

/// Number of steps covering [0, T]: ceil(T / tau), at least one.
inline std::size_t step_count(double tau, double T) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(T / tau - 1e-9)));
}

using StepCallback = std::function<void(std::size_t, const TrajectoryStep&)>;

inline JkoTrajectory run(const DensityField& u0, double tau, double T, const Mobility& m, const JkoOptions& opts = {},
                         const StepCallback& on_step = {}) {
  if (!(tau > 0.0) || !(T > 0.0)) throw Error(ErrorCode::InvalidArgument, "tau and T must be positive");
  const TransportSolver solver(u0.grid, m, opts.transport);
  JkoTrajectory traj{tau, u0};
  traj.s0 = default_s0(u0.mass(), u0.grid.length(), m.ceiling());
  traj.f0 = fisher_energy(u0, m);
  traj.h0 = heat_entropy(u0, m, traj.s0);
  const std::size_t steps = step_count(tau, T);
  traj.steps.reserve(steps);
  DensityField current = u0;
  PrimalDualState warm;
  for (std::size_t k = 1; k <= steps; ++k) {
    JkoStepResult r = jko_step(current, tau, solver, opts, warm.xu.empty() ? nullptr : &warm);
    warm = std::move(r.transport_state);
    const EnergyBreakdown e = energy_breakdown(r.u, m, traj.s0);
    traj.steps.push_back({r.u, tau * static_cast<double>(k), r.diagnostics.w2, e.fisher, e.entropy, e.hess_f_norm2, r.diagnostics});
    current = r.u;
    if (on_step) on_step(k, traj.steps.back());
  }
  return traj;
}

struct EstimateReport {
  double eps_mono = 0.0;
  bool energy_monotone = true;
  bool entropy_monotone = true;
  double w2_sum = 0.0;
  double w2_bound = 0.0;  // 2 tau F(u0)
  bool w2_sum_ok = true;
  double mass_drift = 0.0;
  bool bounds_ok = true;
  double max_energy_increase = 0.0;
  double max_entropy_increase = 0.0;
  /// tau |d2 f(u^n)|^2 / (H^{n-1} - H^n) per step; the constant of the bound is unknown, so only logged.
  std::vector<double> dissipation_ratios;

  bool passed() const { return energy_monotone && entropy_monotone && w2_sum_ok && bounds_ok; }
};

/// Energy and entropy monotonicity, the summed-distance bound, mass and bounds of a trajectory.
/// The summed-distance check allows the relative slack w2_slack.
inline EstimateReport check_estimates(const JkoTrajectory& traj, const Mobility& m, double eps_mono, double w2_slack = 1e-3) {
  EstimateReport rep;
  rep.eps_mono = eps_mono;
  const double mass0 = traj.u0.mass();
  double f_prev = traj.f0, h_prev = traj.h0;
  for (const auto& s : traj.steps) {
    rep.max_energy_increase = std::max(rep.max_energy_increase, s.fisher - f_prev);
    rep.max_entropy_increase = std::max(rep.max_entropy_increase, s.entropy - h_prev);
    if (s.fisher > f_prev + eps_mono) rep.energy_monotone = false;
    if (s.entropy > h_prev + eps_mono) rep.entropy_monotone = false;
    const double dh = h_prev - s.entropy;
    rep.dissipation_ratios.push_back(dh > 0.0 ? traj.tau * s.hess_f_norm2 / dh : kInf);
    rep.w2_sum += s.w2;
    rep.mass_drift = std::max(rep.mass_drift, std::abs(s.u.mass() - mass0));
    for (double v : s.u.values) {
      if (!(v >= 0.0) || v > m.ceiling()) rep.bounds_ok = false;
    }
    f_prev = s.fisher;
    h_prev = s.entropy;
  }
  rep.w2_bound = 2.0 * traj.tau * traj.f0;
  rep.w2_sum_ok = rep.w2_sum <= rep.w2_bound * (1.0 + w2_slack);
  return rep;
}

struct HolderSample {
  double s = 0.0;
  double t = 0.0;
  double distance = 0.0;
  double bound = 0.0;
  bool ok = false;
};

/// W_m(u_tau(s), u_tau(t)) against sqrt(2 F(u0) max(|s - t|, tau)) (1 + slack) at random time pairs.
inline std::vector<HolderSample> holder_check(const JkoTrajectory& traj, const Mobility& m, std::size_t pairs,
                                              std::uint64_t seed, const TransportOptions& topts = {}, double slack = 0.05) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, traj.final_time());
  const TransportSolver solver(traj.u0.grid, m, topts);
  std::vector<HolderSample> out;
  for (std::size_t p = 0; p < pairs; ++p) {
    HolderSample h;
    h.s = unif(rng);
    h.t = unif(rng);
    const auto& a = traj.at(h.s);
    const auto& b = traj.at(h.t);
    h.distance = &a == &b ? 0.0 : std::sqrt(solver.solve(a, b).w2);
    h.bound = std::sqrt(2.0 * traj.f0 * std::max(std::abs(h.s - h.t), traj.tau)) * (1.0 + slack);
    h.ok = h.distance <= h.bound;
    out.push_back(h);
  }
  return out;
}

}  // namespace wmflow
