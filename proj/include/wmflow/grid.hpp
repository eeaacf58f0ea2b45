#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wmflow/error.hpp"

namespace wmflow {

/// Uniform cell-centered grid on [0, L]. Faces are numbered 0..N, face k sits at x = k dx.
class Grid1D {
 public:
  Grid1D(double length, std::size_t cells) : length_(length), cells_(cells) {
    if (!(length > 0.0)) throw Error(ErrorCode::InvalidArgument, "domain length must be positive");
    if (cells < 8) throw Error(ErrorCode::InvalidArgument, "grid needs at least 8 cells");
  }

  double length() const { return length_; }
  std::size_t cells() const { return cells_; }
  std::size_t faces() const { return cells_ + 1; }
  double dx() const { return length_ / static_cast<double>(cells_); }
  double center(std::size_t i) const { return (static_cast<double>(i) + 0.5) * dx(); }

  friend bool operator==(const Grid1D& a, const Grid1D& b) {
    return a.length_ == b.length_ && a.cells_ == b.cells_;
  }

 private:
  double length_;
  std::size_t cells_;
};

/// Nonnegative cell densities with the ceiling they must respect.
struct DensityField {
  Grid1D grid;
  std::vector<double> values;

  DensityField(Grid1D g, std::vector<double> v) : grid(g), values(std::move(v)) {
    if (values.size() != grid.cells()) throw Error(ErrorCode::InvalidArgument, "field size does not match grid");
  }

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }

  double mass() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * grid.dx();
  }
  double min() const { return *std::min_element(values.begin(), values.end()); }
  double max() const { return *std::max_element(values.begin(), values.end()); }
};

/// Face gradient (u_i - u_{i-1}) / dx at face i; zero at the two boundary faces.
inline std::vector<double> d_face(const Grid1D& g, std::span<const double> u) {
  const std::size_t n = g.cells();
  std::vector<double> out(n + 1, 0.0);
  const double inv = 1.0 / g.dx();
  for (std::size_t k = 1; k < n; ++k) out[k] = (u[k] - u[k - 1]) * inv;
  return out;
}

/// Cell divergence of face values: (q_{i+1} - q_i) / dx.
inline std::vector<double> divergence(const Grid1D& g, std::span<const double> q) {
  const std::size_t n = g.cells();
  std::vector<double> out(n);
  const double inv = 1.0 / g.dx();
  for (std::size_t i = 0; i < n; ++i) out[i] = (q[i + 1] - q[i]) * inv;
  return out;
}

/// Second difference with mirrored ghosts; equals divergence(d_face(u)).
inline std::vector<double> d2_cell(const Grid1D& g, std::span<const double> u) {
  return divergence(g, d_face(g, u));
}

inline double l2_inner(const Grid1D& g, std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s * g.dx();
}

inline bool in_constraint_set(const Grid1D& g, std::span<const double> v, double mass, double ceiling) {
  double s = 0.0;
  for (double x : v) {
    if (!(x >= 0.0) || x > ceiling) return false;
    s += x;
  }
  return std::abs(s * g.dx() - mass) <= 1e-13 * std::max(1.0, mass);
}

/// Euclidean projection onto {0 <= u <= S, sum u dx = U}. The minimizer is clip(v - lambda, 0, S)
/// for a scalar shift lambda found by bisection; a last correction on the free cells makes the
/// mass exact to rounding.
inline DensityField project_constraints(const Grid1D& g, std::span<const double> v, double mass, double ceiling) {
  const std::size_t n = g.cells();
  const double dx = g.dx();
  if (v.size() != n) throw Error(ErrorCode::InvalidArgument, "field size does not match grid");
  if (!(mass >= 0.0) || mass > ceiling * g.length()) {
    throw Error(ErrorCode::Infeasible, "mass exceeds ceiling times domain length");
  }
  if (in_constraint_set(g, v, mass, ceiling)) return DensityField(g, std::vector<double>(v.begin(), v.end()));

  const auto clipped_mass = [&](double lambda) {
    double s = 0.0;
    for (double x : v) s += std::clamp(x - lambda, 0.0, ceiling);
    return s * dx;
  };
  double lo = *std::min_element(v.begin(), v.end()) - mass / g.length() - 1.0;
  double hi = *std::max_element(v.begin(), v.end());
  for (int it = 0; it < 400 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (clipped_mass(mid) > mass) lo = mid; else hi = mid;
  }
  const double lambda = 0.5 * (lo + hi);
  std::vector<double> u(n);
  for (std::size_t i = 0; i < n; ++i) u[i] = std::clamp(v[i] - lambda, 0.0, ceiling);

  double s = 0.0;
  std::size_t free_cells = 0;
  for (double x : u) {
    s += x;
    if (x > 0.0 && x < ceiling) ++free_cells;
  }
  const double defect = mass - s * dx;
  if (free_cells > 0 && defect != 0.0) {
    const double shift = defect / (static_cast<double>(free_cells) * dx);
    for (double& x : u) {
      if (x > 0.0 && x < ceiling) x = std::clamp(x + shift, 0.0, ceiling);
    }
  }
  return DensityField(g, std::move(u));
}

inline DensityField project_constraints(const DensityField& f, double mass, double ceiling) {
  return project_constraints(f.grid, f.values, mass, ceiling);
}

/// L2 distance between two fields on the same grid.
inline double l2_distance(const Grid1D& g, std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s * g.dx());
}

// Initial profiles, sampled at cell centers.

inline std::vector<double> constant_profile(const Grid1D& g, double level) {
  return std::vector<double>(g.cells(), level);
}

/// a + b cos(k pi x / L).
inline std::vector<double> cosine_profile(const Grid1D& g, double a, double b, int k) {
  const double pi = std::acos(-1.0);
  std::vector<double> out(g.cells());
  for (std::size_t i = 0; i < g.cells(); ++i) out[i] = a + b * std::cos(k * pi * g.center(i) / g.length());
  return out;
}

/// floor + amplitude exp(-(x - c)^2 / (2 width^2)), clamped to [0, ceiling].
inline std::vector<double> gaussian_profile(const Grid1D& g, double center, double width, double amplitude,
                                            double floor, double ceiling) {
  std::vector<double> out(g.cells());
  for (std::size_t i = 0; i < g.cells(); ++i) {
    const double d = (g.center(i) - center) / width;
    out[i] = std::clamp(floor + amplitude * std::exp(-0.5 * d * d), 0.0, ceiling);
  }
  return out;
}

/// Smooth compactly supported bump cos^2 on |x - center| < half_width, scaled to the given mass
/// in the continuum (cell values are point samples).
inline std::vector<double> cos2_bump(const Grid1D& g, double center, double half_width, double mass) {
  const double pi = std::acos(-1.0);
  std::vector<double> out(g.cells(), 0.0);
  const double height = mass / half_width;  // int cos^2(pi s / (2 hw)) over |s|<hw equals hw
  for (std::size_t i = 0; i < g.cells(); ++i) {
    const double s = g.center(i) - center;
    if (std::abs(s) < half_width) {
      const double c = std::cos(0.5 * pi * s / half_width);
      out[i] = height * c * c;
    }
  }
  return out;
}

/// One value per line (the first comma-separated column is used); blank lines and '#' lines skipped.
inline std::vector<double> read_profile_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open profile file " + path);
  std::vector<double> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream is(line.substr(first, line.find(',', first) - first));
    double v = 0.0;
    if (!(is >> v)) throw Error(ErrorCode::ParseError, "bad profile value: " + line);
    out.push_back(v);
  }
  return out;
}

}  // namespace wmflow
