// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "wmflow/wmflow.hpp"

using namespace wmflow;
namespace fs = std::filesystem;

namespace {

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

std::vector<double> log_points(double lo, double hi, int n) {
  std::vector<double> out;
  for (int i = 0; i < n; ++i) out.push_back(std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * i / (n - 1)));
  return out;
}

DensityField normalized_bump(const Grid1D& g, double center, double half_width) {
  DensityField u(g, cos2_bump(g, center, half_width, 1.0));
  const double s = 1.0 / u.mass();
  for (double& x : u.values) x *= s;
  return u;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

Outcome closed_forms() {
  double worst = 0.0, worst_inv = 0.0;
  const Mobility lin = Mobility::linear();
  const Mobility dp = Mobility::double_power(1.0, 1.0, 1.0);
  for (double z : log_points(1e-8, 1e3, 100)) {
    worst = std::max(worst, rel(lin.f(z), 2.0 * std::sqrt(2.0 * z)));
    worst_inv = std::max(worst_inv, rel(lin.f_inverse(lin.f(z)), z));
  }
  for (double z : log_points(1e-8, 1.0 - 1e-8, 100)) {
    worst = std::max(worst, rel(dp.f(z), 2.0 * std::sqrt(2.0) * std::asin(std::sqrt(z))));
    if (z < 0.999) worst_inv = std::max(worst_inv, rel(dp.f_inverse(dp.f(z)), z));
  }
  const Mobility p = Mobility::power(0.8);
  for (double z : log_points(1e-8, 1e3, 100)) {
    worst = std::max(worst, rel(p.f(z), std::sqrt(2.0) * std::pow(z, 0.6) / 0.6));
    worst_inv = std::max(worst_inv, rel(p.f_inverse(p.f(z)), z));
  }
  return {worst <= 1e-8 && worst_inv <= 1e-10, "max rel f error " + fmt(worst) + ", inverse " + fmt(worst_inv)};
}

Outcome regularization() {
  double worst_lin = 0.0, worst_dp = 0.0;
  const Mobility lin = Mobility::linear();
  for (double delta : {0.1, 0.01}) {
    const Mobility md = regularize(lin, delta);
    for (int i = 0; i <= 10000; ++i) {
      const double z = 10.0 * i / 10000.0;
      worst_lin = std::max(worst_lin, std::abs(md(z) - lin(z)));
    }
  }
  const Mobility md = regularize(Mobility::double_power(1.0, 1.0, 1.0), 0.09);
  for (int i = 0; i <= 10000; ++i) {
    const double z = i / 10000.0;
    worst_dp = std::max(worst_dp, std::abs(md(z) - 0.64 * z * (1.0 - z)));
  }
  return {worst_lin <= 1e-12 && worst_dp <= 1e-12, "linear " + fmt(worst_lin) + ", saturating " + fmt(worst_dp)};
}

Outcome convexity() {
  bool ok = validate(Mobility::linear()).convexity_ratio_min == 3.0;
  double lowest = 3.0;
  for (const auto& m : {Mobility::power(0.8), Mobility::double_power(1.0, 1.0, 1.0),
                        regularize(Mobility::power(0.8), 0.05)}) {
    lowest = std::min(lowest, validate(m).convexity_ratio_min);
  }
  ok = ok && lowest >= 3.0 - 1e-9;
  return {ok, "min ratio " + fmt(lowest)};
}

Outcome translation() {
  const Grid1D g(1.0, 128);
  TransportOptions o;
  o.time_slices = 32;
  o.method = TransportMethod::PrimalDual;
  o.tol = 1e-5;
  const auto r = solve_distance(normalized_bump(g, 0.4, 0.2), normalized_bump(g, 0.5, 0.2), Mobility::linear(), o);
  const double w = std::sqrt(r.w2);
  const bool ok = r.converged && std::abs(w - 0.1) <= 1e-3 && r.iterations <= 5000 && r.continuity <= 1e-8;
  return {ok, "W " + fmt(w) + ", iterations " + std::to_string(r.iterations) + ", continuity " + fmt(r.continuity)};
}

Outcome regularized_distance() {
  const Grid1D g(1.0, 64);
  const DensityField u0(g, cosine_profile(g, 1.0, 0.5, 1));
  const DensityField u1(g, cosine_profile(g, 1.0, -0.5, 1));
  const Mobility m = Mobility::power(0.8);
  const double w = std::sqrt(solve_distance(u0, u1, m).w2);
  const double wd = std::sqrt(solve_distance(u0, u1, regularize(m, 0.05)).w2);
  return {w <= wd + 1e-6, "W_m " + fmt(w) + ", W_m_delta " + fmt(wd)};
}

// Shared by the estimate and Hoelder criteria.
JkoTrajectory& linear_trajectory() {
  static JkoTrajectory traj = [] {
    const Grid1D g(1.0, 128);
    return run(DensityField(g, cosine_profile(g, 1.0, 0.5, 1)), 1e-3, 5e-2, Mobility::linear());
  }();
  return traj;
}

Outcome estimates() {
  const JkoOptions opts;
  const auto& traj = linear_trajectory();
  const auto rl = check_estimates(traj, Mobility::linear(), epsilon_mono(opts, traj.f0));
  bool ok = traj.steps.size() == 50 && rl.passed() && rl.mass_drift <= 1e-10;
  double drift = rl.mass_drift;

  const Grid1D g(1.0, 128);
  const auto rep = run_cascade(DensityField(g, cosine_profile(g, 1.0, 0.5, 1)), Mobility::power(0.8), {0.1, 0.05, 0.025},
                               1e-3, 5e-2, opts, 1);
  std::size_t passed = 0;
  for (const auto& lv : rep.levels) {
    drift = std::max(drift, lv.estimates.mass_drift);
    if (lv.trajectory.steps.size() == 50 && lv.estimates.passed() && lv.estimates.mass_drift <= 1e-10) ++passed;
  }
  ok = ok && passed == rep.levels.size();
  return {ok, "linear " + std::string(rl.passed() ? "ok" : "violated") + ", cascade levels ok " + std::to_string(passed) +
                  "/" + std::to_string(rep.levels.size()) + ", mass drift " + fmt(drift)};
}

Outcome holder() {
  const auto samples = holder_check(linear_trajectory(), Mobility::linear(), 10, 1);
  std::size_t ok = 0;
  double worst = 0.0;
  for (const auto& s : samples) {
    ok += s.ok ? 1 : 0;
    worst = std::max(worst, s.distance / s.bound);
  }
  return {ok == 10, std::to_string(ok) + "/10 pairs, max distance/bound " + fmt(worst)};
}

Outcome oracle_agreement() {
  const Grid1D g(1.0, 128);
  const Mobility m = Mobility::linear();
  const DensityField u0(g, cosine_profile(g, 1.0, 0.5, 1));
  const double T = 1e-2;
  const auto ref = oracle_run(u0, 1e-4, T, m);
  const double coarse = compare(run(u0, 1e-3, T, m), ref, T);
  const double fine = compare(run(u0, 2.5e-4, T, m), ref, T);
  return {coarse <= 0.05 && fine < coarse, "error tau=1e-3 " + fmt(coarse) + ", tau=2.5e-4 " + fmt(fine)};
}

Outcome weak_form() {
  const double T = 0.02;
  const double pi = std::acos(-1.0);
  const Mobility m = Mobility::linear();
  std::vector<double> res;
  for (auto [n, tau] : {std::pair<std::size_t, double>{32, 2e-3}, {64, 1e-3}, {128, 5e-4}}) {
    const Grid1D g(1.0, n);
    std::vector<double> phi(n);
    for (std::size_t i = 0; i < n; ++i) phi[i] = std::cos(pi * g.center(i));
    const auto traj = run(DensityField(g, cosine_profile(g, 1.0, 0.5, 1)), tau, T, m);
    res.push_back(std::abs(weak_form_residual(traj, m, phi, smooth_bump(0.0, T)).value));
  }
  const double r1 = res[0] / res[1], r2 = res[1] / res[2];
  return {r1 >= 1.5 && r2 >= 1.5, "ratios " + fmt(r1) + ", " + fmt(r2)};
}

Outcome cascade_settle() {
  const RunConfig c = load_config(std::string(WMFLOW_SOURCE_DIR) + "/configs/power08_cascade.ini");
  const Grid1D g = make_grid(c);
  const Mobility m = make_mobility(c.mobility);
  const auto rep = run_cascade(make_profile(g, c.initial, m.ceiling()), m, c.deltas, c.tau, c.T, make_jko_options(c), 1);
  const auto gl = g_limit_check(m, c.deltas, default_g_mesh(m));
  std::string gaps;
  for (double v : rep.gaps) gaps += (gaps.empty() ? "" : " ") + fmt(v);
  return {rep.gaps_settle && gl.monotone_decreasing,
          "gaps " + gaps + ", g-limit " + (gl.monotone_decreasing ? "monotone" : "not monotone")};
}

Outcome gradient() {
  const Grid1D g(1.0, 128);
  const DensityField u(g, cosine_profile(g, 1.0, 0.5, 1));
  const double pi = std::acos(-1.0);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd;
  double worst = 0.0;
  for (const auto& m : {Mobility::linear(), regularize(Mobility::power(0.8), 0.05)}) {
    const auto grad = first_variation(u, m);
    for (int k = 0; k < 20; ++k) {
      std::vector<double> d(128, 0.0);
      for (int j = 1; j <= 6; ++j) {
        const double c = nd(rng) / j;
        for (std::size_t i = 0; i < 128; ++i) d[i] += c * std::cos(j * pi * g.center(i));
      }
      const double e = 1e-5;
      std::vector<double> up(u.values), dn(u.values);
      for (std::size_t i = 0; i < 128; ++i) {
        up[i] += e * d[i];
        dn[i] -= e * d[i];
      }
      const double fd = (fisher_energy(DensityField(g, up), m) - fisher_energy(DensityField(g, dn), m)) / (2.0 * e);
      worst = std::max(worst, std::abs(l2_inner(g, grad, d) - fd) / std::abs(fd));
    }
  }
  return {worst <= 1e-6, "max rel error " + fmt(worst)};
}

std::string read_body(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / ("wmflow_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::string cfg = std::string(WMFLOW_SOURCE_DIR) + "/configs/linear_cosine.ini";
  int codes[2];
  for (int k = 0; k < 2; ++k) {
    const std::string cmd = std::string(WMJKO_EXE) + " evolve " + cfg + " -o " + (root / std::to_string(k)).string() + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    codes[k] = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }
  const std::string a = read_body(root / "0" / "run.csv"), b = read_body(root / "1" / "run.csv");
  fs::remove_all(root);
  const bool ok = codes[0] == 0 && codes[1] == 0 && !a.empty() && a == b;
  return {ok, "exit codes " + std::to_string(codes[0]) + "," + std::to_string(codes[1]) + ", run.csv " +
                  (a == b ? "identical" : "differs") + " (" + std::to_string(a.size()) + " bytes)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"closed-form transforms", closed_forms},
      {"regularization fixed points", regularization},
      {"convexity ratio", convexity},
      {"translation distance", translation},
      {"regularized distance ordering", regularized_distance},
      {"discrete estimates", estimates},
      {"Hoelder bound", holder},
      {"oracle agreement", oracle_agreement},
      {"weak-form residual", weak_form},
      {"cascade gaps", cascade_settle},
      {"energy gradient", gradient},
      {"determinism", determinism},
  };
  int failed = 0;
  int index = 0;
  for (const auto& [name, check] : criteria) {
    ++index;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s [%2d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", index, name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
