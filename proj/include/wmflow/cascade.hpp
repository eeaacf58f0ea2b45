#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "wmflow/error.hpp"
#include "wmflow/functionals.hpp"
#include "wmflow/grid.hpp"
#include "wmflow/jko.hpp"
#include "wmflow/mobility.hpp"

namespace wmflow {

struct CascadeLevel {
  double delta = 0.0;
  Mobility mobility;
  double f_delta_u0 = 0.0;  // F_delta(u0)
  JkoTrajectory trajectory;
  EstimateReport estimates;
  /// F_delta(u^n) <= F_delta_max(u0) + eps at every step, with delta_max the first level.
  bool uniform_energy_bound = true;
};

struct CascadeReport {
  std::vector<CascadeLevel> levels;
  /// Discrete L2(0,T;H1) distance of f_delta(u_delta) between consecutive levels.
  std::vector<double> gaps;
  bool f0_monotone_in_delta = true;  // F_delta(u0) nondecreasing in delta along the schedule
  bool gaps_settle = true;           // nonincreasing over the last three comparisons
  bool near_inadmissible = false;    // F at the largest delta exceeds 1e6
};

inline void check_schedule(const std::vector<double>& schedule) {
  if (schedule.empty()) throw Error(ErrorCode::ScheduleNotDecreasing, "empty delta schedule");
  for (std::size_t k = 0; k < schedule.size(); ++k) {
    if (!(schedule[k] > 0.0)) throw Error(ErrorCode::ScheduleNotDecreasing, "delta values must be positive");
    if (k > 0 && !(schedule[k] < schedule[k - 1])) {
      throw Error(ErrorCode::ScheduleNotDecreasing, "delta schedule must be strictly decreasing");
    }
  }
}

/// delta_k = delta_bar 2^-k. delta_bar is the largest 0.1 * 2^-j with m_delta(U/L) >= 1e-3 m(U/L).
inline std::vector<double> default_schedule(const Mobility& m, double mean_density, std::size_t levels = 5) {
  double delta = 0.1;
  const double target = 1e-3 * m(mean_density);
  for (int j = 0; j < 60; ++j, delta *= 0.5) {
    try {
      if (regularize(m, delta)(mean_density) >= target) break;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DeltaTooLarge) throw;
    }
  }
  std::vector<double> out(levels);
  for (std::size_t k = 0; k < levels; ++k) out[k] = delta * std::ldexp(1.0, -static_cast<int>(k));
  return out;
}

/// sum_n tau (|d|^2 + |grad d|^2) dx with d = f_a(u_a^n) - f_b(u_b^n), square-rooted.
inline double l2h1_gap(const JkoTrajectory& a, const Mobility& ma, const JkoTrajectory& b, const Mobility& mb) {
  if (!(a.u0.grid == b.u0.grid) || a.steps.size() != b.steps.size()) {
    throw Error(ErrorCode::GridMismatch, "cascade levels differ in grid or step count");
  }
  const Grid1D& g = a.u0.grid;
  double total = 0.0;
  for (std::size_t n = 0; n < a.steps.size(); ++n) {
    const auto fa = f_values(ma, a.steps[n].u.values);
    const auto fb = f_values(mb, b.steps[n].u.values);
    std::vector<double> d(fa.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = fa[i] - fb[i];
    const auto gd = d_face(g, d);
    double s = 0.0;
    for (double v : d) s += v * v;
    for (double v : gd) s += v * v;
    total += a.tau * s * g.dx();
  }
  return std::sqrt(total);
}

/// One trajectory per delta from the same u0; levels run on up to `threads` workers, the report
/// order follows the schedule.
inline CascadeReport run_cascade(const DensityField& u0, const Mobility& m, const std::vector<double>& schedule, double tau,
                                 double T, const JkoOptions& opts = {}, unsigned threads = 1) {
  check_schedule(schedule);
  CascadeReport rep;
  rep.levels.reserve(schedule.size());
  for (double delta : schedule) {
    Mobility md = regularize(m, delta);
    if (!validate(md).lsc) throw Error(ErrorCode::InvalidArgument, "regularized mobility fails the Lipschitz condition");
    const double f0 = fisher_energy(u0, md);
    rep.levels.push_back(CascadeLevel{delta, std::move(md), f0, JkoTrajectory{tau, u0}, {}, true});
  }

  std::vector<std::exception_ptr> errors(schedule.size());
  std::mutex next_mutex;
  std::size_t next = 0;
  const auto worker = [&]() {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard<std::mutex> lock(next_mutex);
        if (next >= schedule.size()) return;
        k = next++;
      }
      try {
        rep.levels[k].trajectory = run(u0, tau, T, rep.levels[k].mobility, opts);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(schedule.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  const double f_top = rep.levels.front().f_delta_u0;
  rep.near_inadmissible = !(f_top <= 1e6);
  for (std::size_t k = 0; k < rep.levels.size(); ++k) {
    CascadeLevel& lv = rep.levels[k];
    const double eps = epsilon_mono(opts, lv.trajectory.f0);
    lv.estimates = check_estimates(lv.trajectory, lv.mobility, eps);
    for (const auto& s : lv.trajectory.steps) {
      if (s.fisher > f_top + epsilon_mono(opts, f_top)) lv.uniform_energy_bound = false;
    }
    if (k > 0 && lv.f_delta_u0 > rep.levels[k - 1].f_delta_u0) rep.f0_monotone_in_delta = false;
  }
  for (std::size_t k = 0; k + 1 < rep.levels.size(); ++k) {
    rep.gaps.push_back(l2h1_gap(rep.levels[k].trajectory, rep.levels[k].mobility, rep.levels[k + 1].trajectory,
                                rep.levels[k + 1].mobility));
  }
  const std::size_t ng = rep.gaps.size();
  for (std::size_t k = ng >= 4 ? ng - 4 : 0; k + 1 < ng; ++k) {
    if (rep.gaps[k + 1] > rep.gaps[k]) rep.gaps_settle = false;
  }
  return rep;
}

/// G(w) = m'(g(w)) sqrt(w) for S = inf, G~(w) = m'(g(w)) sqrt(w (f(S) - w)) for S < inf, with g = f^-1.
/// Both vanish at w = 0, and G~ at w = f(S).
inline double g_function(const Mobility& m, double w) {
  if (w <= 0.0) return 0.0;
  if (m.bounded()) {
    const double fs = m.f_at_ceiling();
    if (w >= fs) return 0.0;
    return m.jet(m.f_inverse(w)).slope * std::sqrt(w * (fs - w));
  }
  return m.jet(m.f_inverse(w)).slope * std::sqrt(w);
}

struct GLimitReport {
  std::vector<double> sup_gaps;  // per delta, max over the mesh of |G_delta - G|
  bool monotone_decreasing = true;
};

inline GLimitReport g_limit_check(const Mobility& m, const std::vector<double>& schedule, std::span<const double> mesh) {
  check_schedule(schedule);
  GLimitReport rep;
  std::vector<double> ref(mesh.size());
  for (std::size_t i = 0; i < mesh.size(); ++i) ref[i] = g_function(m, mesh[i]);
  for (double delta : schedule) {
    const Mobility md = regularize(m, delta);
    double gap = 0.0;
    for (std::size_t i = 0; i < mesh.size(); ++i) gap = std::max(gap, std::abs(g_function(md, mesh[i]) - ref[i]));
    if (!rep.sup_gaps.empty() && !(gap < rep.sup_gaps.back() || (gap == 0.0 && rep.sup_gaps.back() == 0.0))) {
      rep.monotone_decreasing = false;
    }
    rep.sup_gaps.push_back(gap);
  }
  return rep;
}

/// Uniform mesh of `points` values on [0, w_max]; w_max defaults to f(S) or f(10) when S = inf.
inline std::vector<double> default_g_mesh(const Mobility& m, std::size_t points = 201) {
  const double w_max = m.bounded() ? m.f_at_ceiling() : m.f(10.0);
  std::vector<double> out(points);
  for (std::size_t i = 0; i < points; ++i) out[i] = w_max * static_cast<double>(i) / static_cast<double>(points - 1);
  return out;
}

}  // namespace wmflow
