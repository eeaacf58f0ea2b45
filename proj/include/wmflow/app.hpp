#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <thread>

#include "wmflow/cascade.hpp"
#include "wmflow/config.hpp"
#include "wmflow/error.hpp"
#include "wmflow/io.hpp"
#include "wmflow/jko.hpp"
#include "wmflow/mobility.hpp"
#include "wmflow/oracle.hpp"
#include "wmflow/transport.hpp"

namespace wmflow::app {

enum ExitCode : int { kOk = 0, kFailed = 1, kParseError = 2, kNoConvergence = 3 };

struct Context {
  std::ostream* out = &std::cout;
  std::ostream* err = &std::cerr;
  std::filesystem::path output_dir;  // empty: take it from the environment or the config
  unsigned threads = 0;              // 0: take it from the environment or the config
};

/// Output directory: explicit context value, then WMJKO_OUTPUT_DIR, then the config.
inline std::filesystem::path resolve_output_dir(const RunConfig& c, const Context& ctx) {
  if (!ctx.output_dir.empty()) return ctx.output_dir;
  if (const char* env = std::getenv("WMJKO_OUTPUT_DIR"); env && *env) return env;
  return c.output_dir;
}

/// Worker count: explicit context value, then WMJKO_THREADS, then the config, then the hardware.
inline unsigned resolve_threads(const RunConfig& c, const Context& ctx) {
  if (ctx.threads > 0) return ctx.threads;
  if (const char* env = std::getenv("WMJKO_THREADS"); env && *env) {
    const long long v = parse_integer("WMJKO_THREADS", env);
    if (v > 0) return static_cast<unsigned>(v);
  }
  if (c.threads > 0) return static_cast<unsigned>(c.threads);
  return std::max(1u, std::thread::hardware_concurrency());
}

inline Manifest base_manifest(const RunConfig& c, const std::string& command) {
  Manifest mf;
  mf.set("version", kVersion);
  mf.set("command", command);
  mf.set("config_hash", config_hash(c));
  mf.set("deterministic", c.deterministic);
  mf.set("seed", c.seed);
  return mf;
}

/// Names the first failed invariant, or returns an empty string.
inline std::string first_failure(const EstimateReport& e, double mass_tol) {
  if (!e.energy_monotone) return "energy_monotone";
  if (!e.entropy_monotone) return "entropy_monotone";
  if (!e.w2_sum_ok) return "w2_sum_bound";
  if (!(e.mass_drift <= mass_tol)) return "mass_conservation";
  if (!e.bounds_ok) return "bounds";
  return {};
}

inline int finish(Manifest& mf, const std::filesystem::path& dir, std::ostream& out, const std::string& failure) {
  mf.set("status", failure.empty() ? "ok" : "failed");
  if (!failure.empty()) mf.set("failed_invariant", failure);
  mf.write(dir / "manifest.txt");
  if (!failure.empty()) {
    out << "FAILED invariant: " << failure << '\n';
    return kFailed;
  }
  out << "ok\n";
  return kOk;
}

inline int validate_mobility(const RunConfig& c, const Context& ctx) {
  std::ostream& out = *ctx.out;
  const Mobility m = make_mobility(c.mobility);
  out << "mobility: " << m.describe() << '\n';
  MobilityReport rep;
  try {
    rep = validate(m);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::NonConcaveMobility || e.code() == ErrorCode::NonPositiveMobility) {
      out << "condition (M) fails: " << e.what() << '\n';
      return kFailed;
    }
    throw;
  }
  out << "(M): holds\n";
  out << "(M-LSC): " << (rep.lsc ? "holds" : "fails") << "  sup|m'| = " << format_double(rep.sup_abs_slope)
      << "  sup(-m'' m) = " << format_double(rep.sup_neg_curv_times_value) << '\n';
  if (rep.pg_exponents) {
    out << "(M-PG): exponents " << format_double(rep.pg_exponents->first) << ", " << format_double(rep.pg_exponents->second)
        << '\n';
  } else {
    out << "(M-PG): not applicable\n";
  }
  out << "(M-S): " << (rep.ms_ok ? "holds" : "fails") << '\n';
  out << "convexity ratio min: " << format_double(rep.convexity_ratio_min) << '\n';
  if (rep.lsc) {
    out << "lsc = true\n";
    return kOk;
  }
  if (rep.ms_ok) {
    out << "cascade required: run evolve with a [cascade] deltas schedule\n";
    return kOk;
  }
  out << "condition (M-S) fails: mobility not admissible for the cascade\n";
  return kFailed;
}

inline int distance(const RunConfig& c, const Context& ctx) {
  std::ostream& out = *ctx.out;
  if (!c.has_target) throw Error(ErrorCode::ParseError, "distance needs a [target] section with enabled = true");
  const Mobility m = make_mobility(c.mobility);
  const Grid1D g = make_grid(c);
  const DensityField u0 = make_profile(g, c.initial, m.ceiling());
  const DensityField u1 = make_profile(g, c.target, m.ceiling());
  const auto dir = resolve_output_dir(c, ctx);
  const auto t0 = std::chrono::steady_clock::now();
  const TransportResult r = solve_distance(u0, u1, m, make_transport_options(c));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Manifest mf = base_manifest(c, "distance");
  mf.set("mobility", m.describe());
  mf.set("transport.method", r.method == TransportMethod::Newton ? "newton" : "primal_dual");
  mf.set("transport.w2", r.w2);
  mf.set("transport.distance", std::sqrt(r.w2));
  mf.set("transport.iterations", r.iterations);
  mf.set("transport.gap", r.gap);
  mf.set("transport.continuity", r.continuity);
  mf.set("transport.converged", r.converged);
  if (!c.deterministic) mf.set("wall_seconds", secs);
  if (c.write_path) write_path_csv(dir / "path.csv", r.path);
  out << "W2 = " << format_double(r.w2) << "\nW = " << format_double(std::sqrt(r.w2)) << "\niterations = " << r.iterations
      << "\ncontinuity = " << format_double(r.continuity) << '\n';
  std::string failure;
  if (!(r.continuity <= 1e-8)) failure = "continuity_residual";
  return finish(mf, dir, out, failure);
}

inline std::vector<double> schedule_for(const RunConfig& c, const Mobility& m, const DensityField& u0) {
  if (!c.deltas.empty()) return c.deltas;
  return default_schedule(m, u0.mass() / u0.grid.length(), static_cast<std::size_t>(c.cascade_levels));
}

inline int cascade_run(const RunConfig& c, const Context& ctx, const std::string& command) {
  std::ostream& out = *ctx.out;
  const Mobility m = make_mobility(c.mobility);
  const Grid1D g = make_grid(c);
  const DensityField u0 = make_profile(g, c.initial, m.ceiling());
  const auto schedule = schedule_for(c, m, u0);
  const auto dir = resolve_output_dir(c, ctx);
  const JkoOptions opts = make_jko_options(c);
  const auto t0 = std::chrono::steady_clock::now();
  const CascadeReport rep = run_cascade(u0, m, schedule, c.tau, c.T, opts, resolve_threads(c, ctx));
  const auto mesh = default_g_mesh(m);
  const GLimitReport glim = g_limit_check(m, schedule, mesh);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Manifest mf = base_manifest(c, command);
  mf.set("theorem_path", "Thm-2/cascade");
  mf.set("mobility", m.describe());
  mf.set("jko.step_kind", "descent step");
  mf.set("cascade.levels", rep.levels.size());
  std::string failure;
  const double mass_tol = 1e-10 * (1.0 + u0.mass());
  for (std::size_t k = 0; k < rep.levels.size(); ++k) {
    const auto& lv = rep.levels[k];
    const std::string p = "level." + std::to_string(k) + ".";
    mf.set(p + "delta", lv.delta);
    mf.set(p + "f_delta_u0", lv.f_delta_u0);
    mf.set(p + "uniform_energy_bound", lv.uniform_energy_bound);
    record_estimates(mf, lv.estimates, p);
    record_steps(mf, lv.trajectory, p);
    write_run_csv(dir / ("run_level_" + std::to_string(k) + ".csv"), lv.trajectory, "jko");
    if (failure.empty()) {
      const std::string f = first_failure(lv.estimates, mass_tol);
      if (!f.empty()) failure = p + f;
      else if (!lv.uniform_energy_bound) failure = p + "uniform_energy_bound";
    }
  }
  for (std::size_t k = 0; k < rep.gaps.size(); ++k) mf.set("cascade.gap." + std::to_string(k), rep.gaps[k]);
  for (std::size_t k = 0; k < glim.sup_gaps.size(); ++k) mf.set("g_limit.sup_gap." + std::to_string(k), glim.sup_gaps[k]);
  mf.set("cascade.f0_monotone_in_delta", rep.f0_monotone_in_delta);
  mf.set("cascade.gaps_settle", rep.gaps_settle);
  mf.set("cascade.near_inadmissible", rep.near_inadmissible);
  mf.set("g_limit.monotone_decreasing", glim.monotone_decreasing);
  if (!c.deterministic) mf.set("wall_seconds", secs);
  write_cascade_csv(dir / "cascade.csv", rep);

  out << "levels = " << rep.levels.size() << '\n';
  for (std::size_t k = 0; k < rep.gaps.size(); ++k) out << "gap[" << k << "] = " << format_double(rep.gaps[k]) << '\n';
  if (rep.near_inadmissible) out << "warning: F at the largest delta exceeds 1e6 (near-inadmissible data)\n";
  if (failure.empty() && !rep.f0_monotone_in_delta) failure = "cascade.f0_monotone_in_delta";
  if (failure.empty() && !rep.gaps_settle) failure = "cascade.gaps_settle";
  if (failure.empty() && !glim.monotone_decreasing) failure = "g_limit.monotone_decreasing";
  return finish(mf, dir, out, failure);
}

inline int evolve(const RunConfig& c, const Context& ctx) {
  std::ostream& out = *ctx.out;
  const Mobility m = make_mobility(c.mobility);
  const MobilityReport mr = validate(m);
  if (!mr.lsc) {
    if (!mr.ms_ok) {
      out << "evolve refused: " << m.describe() << " fails (M-LSC) and (M-S)\n";
      return kFailed;
    }
    if (c.deltas.empty()) {
      out << "evolve refused: " << m.describe()
          << " fails (M-LSC); add a decreasing schedule '[cascade] deltas = ...' to run the regularized cascade\n";
      return kFailed;
    }
    return cascade_run(c, ctx, "evolve");
  }

  const Grid1D g = make_grid(c);
  const DensityField u0 = make_profile(g, c.initial, m.ceiling());
  const auto dir = resolve_output_dir(c, ctx);
  const JkoOptions opts = make_jko_options(c);
  const auto t0 = std::chrono::steady_clock::now();
  const JkoTrajectory traj = run(u0, c.tau, c.T, m, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const EstimateReport est = check_estimates(traj, m, epsilon_mono(opts, traj.f0));

  write_run_csv(dir / "run.csv", traj, "jko");
  Manifest mf = base_manifest(c, "evolve");
  mf.set("theorem_path", "Thm-1/LSC");
  mf.set("mobility", m.describe());
  mf.set("jko.step_kind", "descent step");
  mf.set("jko.steps", traj.steps.size());
  mf.set("jko.f0", traj.f0);
  mf.set("jko.h0", traj.h0);
  record_estimates(mf, est);
  record_steps(mf, traj);
  if (!c.deterministic) mf.set("wall_seconds", secs);
  out << "steps = " << traj.steps.size() << "\nF(u0) = " << format_double(traj.f0)
      << "\nF(T) = " << format_double(traj.steps.back().fisher) << '\n';
  return finish(mf, dir, out, first_failure(est, 1e-10 * (1.0 + u0.mass())));
}

inline int compare_oracle(const RunConfig& c, const Context& ctx) {
  std::ostream& out = *ctx.out;
  const Mobility m = make_mobility(c.mobility);
  const Grid1D g = make_grid(c);
  const DensityField u0 = make_profile(g, c.initial, m.ceiling());
  const auto dir = resolve_output_dir(c, ctx);
  const JkoOptions opts = make_jko_options(c);
  const JkoTrajectory traj = run(u0, c.tau, c.T, m, opts);
  const JkoTrajectory ref = oracle_run(u0, c.oracle_tau, c.T, m);
  const double error = compare(traj, ref, c.T);
  const EstimateReport est = check_estimates(traj, m, epsilon_mono(opts, traj.f0));

  write_run_csv(dir / "run.csv", traj, "jko");
  write_run_csv(dir / "oracle.csv", ref, "oracle");
  Manifest mf = base_manifest(c, "compare-oracle");
  mf.set("theorem_path", validate(m).lsc ? "Thm-1/LSC" : "Thm-2/cascade");
  mf.set("mobility", m.describe());
  mf.set("oracle.tau", c.oracle_tau);
  mf.set("oracle.relative_l2_error", error);
  mf.set("oracle.max_error", c.max_error);
  record_estimates(mf, est);
  out << "relative L2 error at T = " << format_double(error) << '\n';
  std::string failure = first_failure(est, 1e-10 * (1.0 + u0.mass()));
  if (failure.empty() && !(error <= c.max_error)) failure = "oracle_agreement";
  return finish(mf, dir, out, failure);
}

/// Runs a subcommand on a config file and maps errors onto exit codes.
inline int dispatch(const std::string& command, const std::string& config_path, const Context& ctx) {
  try {
    RunConfig c = load_config(config_path);
    if (!c.deterministic) c.seed = std::random_device{}();
    if (command == "validate-mobility") return validate_mobility(c, ctx);
    if (command == "distance") return distance(c, ctx);
    if (command == "evolve") return evolve(c, ctx);
    if (command == "cascade") return cascade_run(c, ctx, "cascade");
    if (command == "compare-oracle") return compare_oracle(c, ctx);
    *ctx.err << "unknown subcommand " << command << '\n';
    return kParseError;
  } catch (const Error& e) {
    *ctx.err << e.what() << '\n';
    switch (e.code()) {
      case ErrorCode::ParseError: return kParseError;
      case ErrorCode::NoConvergence:
      case ErrorCode::InnerDivergence:
      case ErrorCode::NewtonFailure:
      case ErrorCode::StepRejected: return kNoConvergence;
      default: *ctx.out << "FAILED condition: " << to_string(e.code()) << '\n'; return kFailed;
    }
  } catch (const std::exception& e) {
    *ctx.err << "error: " << e.what() << '\n';
    return kFailed;
  }
}

}  // namespace wmflow::app
