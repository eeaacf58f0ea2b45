#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "wmflow/cascade.hpp"
#include "wmflow/config.hpp"
#include "wmflow/error.hpp"
#include "wmflow/jko.hpp"
#include "wmflow/transport.hpp"

namespace wmflow {

inline constexpr const char* kRunCsvSchema = "wmflow-run/1";
inline constexpr const char* kCascadeCsvSchema = "wmflow-cascade/1";
inline constexpr const char* kPathCsvSchema = "wmflow-path/1";
inline constexpr const char* kManifestSchema = "wmflow-manifest/1";
inline constexpr const char* kVersion = "1.0.0";

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::InvalidArgument, "cannot write " + path.string());
  return out;
}

/// One row per step:
///   step,t,F,H,W2_step,mass,min_u,max_u
/// preceded by a '#' line carrying the schema tag and the source (jko or oracle).
inline void write_run_csv(const std::filesystem::path& path, const JkoTrajectory& traj, const std::string& source) {
  auto out = open_output(path);
  out << "# schema=" << kRunCsvSchema << " source=" << source << '\n';
  out << "step,t,F,H,W2_step,mass,min_u,max_u\n";
  for (std::size_t k = 0; k < traj.steps.size(); ++k) {
    const auto& s = traj.steps[k];
    out << (k + 1) << ',' << format_double(s.t) << ',' << format_double(s.fisher) << ',' << format_double(s.entropy) << ','
        << format_double(s.w2) << ',' << format_double(s.u.mass()) << ',' << format_double(s.u.min()) << ','
        << format_double(s.u.max()) << '\n';
  }
}

/// delta,F_delta_u0,final_F,final_H,gap_to_next; the last level has gap nan.
inline void write_cascade_csv(const std::filesystem::path& path, const CascadeReport& rep) {
  auto out = open_output(path);
  out << "# schema=" << kCascadeCsvSchema << '\n';
  out << "delta,F_delta_u0,final_F,final_H,gap_to_next\n";
  for (std::size_t k = 0; k < rep.levels.size(); ++k) {
    const auto& lv = rep.levels[k];
    const auto& last = lv.trajectory.steps.back();
    const double gap = k < rep.gaps.size() ? rep.gaps[k] : std::numeric_limits<double>::quiet_NaN();
    out << format_double(lv.delta) << ',' << format_double(lv.f_delta_u0) << ',' << format_double(last.fisher) << ','
        << format_double(last.entropy) << ',' << format_double(gap) << '\n';
  }
}

/// Long format field,j,i,value with field rho (slices j = 0..Ns, cells i) or w (slabs j, faces i).
inline void write_path_csv(const std::filesystem::path& path, const TransportPath& p) {
  auto out = open_output(path);
  const std::size_t n = p.grid.cells();
  out << "# schema=" << kPathCsvSchema << " slices=" << p.slices << " cells=" << n << '\n';
  out << "field,j,i,value\n";
  for (std::size_t j = 0; j <= p.slices; ++j) {
    for (std::size_t i = 0; i < n; ++i) out << "rho," << j << ',' << i << ',' << format_double(p.density(j, i)) << '\n';
  }
  for (std::size_t j = 0; j < p.slices; ++j) {
    for (std::size_t k = 0; k <= n; ++k) out << "w," << j << ',' << k << ',' << format_double(p.flux(j, k)) << '\n';
  }
}

/// Ordered key = value text.
class Manifest {
 public:
  Manifest() { set("schema", kManifestSchema); }

  void set(const std::string& key, const std::string& value) {
    for (auto& e : entries_) {
      if (e.first == key) {
        e.second = value;
        return;
      }
    }
    entries_.emplace_back(key, value);
  }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value) { set(key, format_double(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  template <class I>
    requires std::is_integral_v<I>
  void set(const std::string& key, I value) {
    set(key, std::to_string(value));
  }

  const std::string* get(const std::string& key) const {
    for (const auto& e : entries_) {
      if (e.first == key) return &e.second;
    }
    return nullptr;
  }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + " = " + v + '\n';
    return out;
  }

  void write(const std::filesystem::path& path) const {
    auto out = open_output(path);
    out << str();
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// Per-step solver statistics under the prefix "<prefix>step.<n>.".
inline void record_steps(Manifest& mf, const JkoTrajectory& traj, const std::string& prefix = "") {
  for (std::size_t k = 0; k < traj.steps.size(); ++k) {
    const auto& d = traj.steps[k].diagnostics;
    const std::string p = prefix + "step." + std::to_string(k + 1) + ".";
    mf.set(p + "outer", d.outer_iterations);
    mf.set(p + "transport_iterations", d.transport_iterations);
    mf.set(p + "halvings", d.halvings);
    mf.set(p + "converged", d.converged);
    mf.set(p + "rejected", d.rejected);
  }
}

inline void record_estimates(Manifest& mf, const EstimateReport& e, const std::string& prefix = "") {
  const std::string p = prefix + "estimates.";
  mf.set(p + "eps_mono", e.eps_mono);
  mf.set(p + "energy_monotone", e.energy_monotone);
  mf.set(p + "entropy_monotone", e.entropy_monotone);
  mf.set(p + "w2_sum", e.w2_sum);
  mf.set(p + "w2_bound", e.w2_bound);
  mf.set(p + "w2_sum_ok", e.w2_sum_ok);
  mf.set(p + "mass_drift", e.mass_drift);
  mf.set(p + "bounds_ok", e.bounds_ok);
  mf.set(p + "max_energy_increase", e.max_energy_increase);
  mf.set(p + "max_entropy_increase", e.max_entropy_increase);
  mf.set(p + "passed", e.passed());
}

}  // namespace wmflow
