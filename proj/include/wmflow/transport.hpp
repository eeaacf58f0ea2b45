#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "wmflow/error.hpp"
#include "wmflow/grid.hpp"
#include "wmflow/mobility.hpp"

namespace wmflow {

/// A(rho, omega) = omega^2 / m(rho); zero for a still flux at a degenerate density; +inf outside [0, S].
inline double action_density(const Mobility& m, double rho, double omega) {
  if (!(rho >= 0.0) || rho > m.ceiling()) return kInf;
  const double v = m(rho);
  if (v > 0.0) return omega * omega / v;
  return omega == 0.0 ? 0.0 : kInf;
}

/// Staggered discretization of a curve (u_s, w_s): densities on slices j = 0..Ns (cells),
/// fluxes on slabs j = 0..Ns-1 (faces, zero at the two boundary faces).
struct TransportPath {
  Grid1D grid;
  std::size_t slices;
  std::vector<double> u;     // (Ns + 1) x N
  std::vector<double> w;     // Ns x (N + 1)
  std::vector<double> dual;  // (Ns + 1) x N; rows 0..Ns-1 slab potentials, row Ns the terminal potential
  double action = 0.0;

  TransportPath(Grid1D g, std::size_t ns)
      : grid(g), slices(ns), u((ns + 1) * g.cells(), 0.0), w(ns * (g.cells() + 1), 0.0), dual((ns + 1) * g.cells(), 0.0) {}

  double ds() const { return 1.0 / static_cast<double>(slices); }
  double& density(std::size_t j, std::size_t i) { return u[j * grid.cells() + i]; }
  double density(std::size_t j, std::size_t i) const { return u[j * grid.cells() + i]; }
  double& flux(std::size_t j, std::size_t k) { return w[j * (grid.cells() + 1) + k]; }
  double flux(std::size_t j, std::size_t k) const { return w[j * (grid.cells() + 1) + k]; }
  std::span<const double> slice(std::size_t j) const {
    return std::span<const double>(u).subspan(j * grid.cells(), grid.cells());
  }
  std::span<const double> terminal_potential() const {
    return std::span<const double>(dual).subspan(slices * grid.cells(), grid.cells());
  }
  /// Density at face k of slab j: mean of the two adjacent cells on both bounding slices.
  double face_density(std::size_t j, std::size_t k) const {
    const std::size_t n = grid.cells();
    const std::size_t l = k == 0 ? 0 : k - 1;
    const std::size_t r = k == n ? n - 1 : k;
    return 0.25 * (density(j, l) + density(j, r) + density(j + 1, l) + density(j + 1, r));
  }
};

/// Discrete int int |w|^2 / m(u) ds dx; +inf if any cell leaves [0, S] or a flux crosses a degenerate face.
inline double action(const TransportPath& path, const Mobility& m) {
  for (double v : path.u) {
    if (!(v >= 0.0) || v > m.ceiling()) return kInf;
  }
  const std::size_t n = path.grid.cells();
  double s = 0.0;
  for (std::size_t j = 0; j < path.slices; ++j) {
    for (std::size_t k = 1; k < n; ++k) s += action_density(m, path.face_density(j, k), path.flux(j, k));
  }
  return s * path.grid.dx() * path.ds();
}

/// Largest defect of (u^{j+1} - u^j)/ds + (w_{i+1} - w_i)/dx over all cells and slabs.
inline double continuity_residual(const TransportPath& path) {
  const std::size_t n = path.grid.cells();
  const double ids = 1.0 / path.ds();
  const double idx = 1.0 / path.grid.dx();
  double r = 0.0;
  for (std::size_t j = 0; j < path.slices; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const double c = (path.density(j + 1, i) - path.density(j, i)) * ids + (path.flux(j, i + 1) - path.flux(j, i)) * idx;
      r = std::max(r, std::abs(c));
    }
  }
  return r;
}

enum class TransportMethod { Auto, PrimalDual, Newton };

struct TransportOptions {
  std::size_t time_slices = 0;  // 0 selects max(16, N/8)
  // Auto runs interior Newton when both endpoints stay strictly inside (0, S) and falls back
  // to the primal-dual iteration otherwise or on Newton failure.
  TransportMethod method = TransportMethod::Auto;
  int newton_max_iter = 60;
  double tol = 1e-6;
  int max_iter = 5000;
  bool record_history = false;
  bool adaptive_steps = false;
  double step_ratio = 3.0;  // tau / sigma
  double flux_weight = 1.0;  // primal step on fluxes relative to the step on densities
  std::uint64_t seed = 7;
};

inline std::size_t default_time_slices(const Grid1D& g) { return std::max<std::size_t>(16, g.cells() / 8); }

/// Iterates of the primal-dual method, reusable as a warm start for a nearby problem.
struct PrimalDualState {
  std::vector<double> xu, xw, yr, yo, yb;
  double tau = 0.0;
  double sigma = 0.0;
};

struct TransportResult {
  double w2 = 0.0;
  TransportPath path;
  int iterations = 0;
  double gap = 0.0;
  double continuity = 0.0;
  bool converged = false;
  TransportMethod method = TransportMethod::PrimalDual;
  std::vector<double> action_history;
  PrimalDualState state;
};

/// Dynamic W_m^2 solver: Chambolle-Pock iteration on min sum A(K x) over the affine continuity set,
/// with a box constraint on every interior cell density.
class TransportSolver {
 public:
  TransportSolver(Grid1D grid, Mobility m, TransportOptions opts = {})
      : grid_(grid), m_(std::move(m)), opts_(opts), n_(grid.cells()), ns_(opts.time_slices ? opts.time_slices : default_time_slices(grid)) {
    if (ns_ < 2) throw Error(ErrorCode::InvalidArgument, "need at least two time slices");
    nf_ = n_ - 1;
    ds_ = 1.0 / static_cast<double>(ns_);
    dx_ = grid.dx();
    cw_ = opts.flux_weight;
    setup_projection();
    knorm_ = estimate_operator_norm();
  }

  std::size_t time_slices() const { return ns_; }
  double operator_norm() const { return knorm_; }
  const Mobility& mobility() const { return m_; }

  TransportResult solve(const DensityField& u0, const DensityField& u1, const PrimalDualState* warm = nullptr) const {
    if (!(u0.grid == grid_) || !(u1.grid == grid_)) throw Error(ErrorCode::GridMismatch, "endpoint grid differs from solver grid");
    const double mass0 = u0.mass();
    const double mass1 = u1.mass();
    if (std::abs(mass0 - mass1) > 1e-10 * std::max(1.0, mass0)) {
      throw Error(ErrorCode::MassMismatch, "endpoints carry different mass");
    }
    const std::span<const double> a = u0.values, b = u1.values;
    const std::size_t nu = (ns_ - 1) * n_, nw = ns_ * nf_;

    PrimalDualState st;
    const bool warm_primal = warm && warm->xu.size() == nu && warm->xw.size() == nw;
    if (warm_primal) {
      st.xu = warm->xu;
      st.xw = warm->xw;
      project(st.xu, st.xw, a, b);
    } else {
      st.xu.assign(nu, 0.0);
      st.xw.assign(nw, 0.0);
      linear_interpolant(st.xu, st.xw, a, b);
    }

    // Equal endpoints: the constant path with zero flux and zero multipliers is optimal, and the
    // relative residuals below have no scale to measure against.
    if (std::equal(a.begin(), a.end(), b.begin())) {
      linear_interpolant(st.xu, st.xw, a, b);
      st.yr.assign(nw, 0.0);
      st.yo.assign(nw, 0.0);
      st.yb.assign(nu, 0.0);
      TransportResult res{0.0, TransportPath(grid_, ns_)};
      res.converged = true;
      res.method = opts_.method == TransportMethod::PrimalDual ? TransportMethod::PrimalDual : TransportMethod::Newton;
      res.state = st;
      finish(res, st, a, b);
      return res;
    }

    if (opts_.method != TransportMethod::PrimalDual && strictly_interior(a) && strictly_interior(b)) {
      PrimalDualState nst = st;
      if (!warm_primal || !newton_admissible(nst.xu)) linear_interpolant(nst.xu, nst.xw, a, b);
      TransportResult res{0.0, TransportPath(grid_, ns_)};
      if (newton(nst, a, b, res)) {
        res.method = TransportMethod::Newton;
        res.state = nst;
        finish(res, nst, a, b);
        return res;
      }
      if (opts_.method == TransportMethod::Newton) throw Error(ErrorCode::NoConvergence, "interior Newton transport solve failed");
    }

    if (warm && warm->yr.size() == nw && warm->yb.size() == nu && warm->tau > 0.0) {
      st.yr = warm->yr;
      st.yo = warm->yo;
      st.yb = warm->yb;
      st.tau = warm->tau;
      st.sigma = warm->sigma;
    } else {
      st.yr.assign(nw, 0.0);
      st.yo.assign(nw, 0.0);
      st.yb.assign(nu, 0.0);
      st.tau = std::sqrt(0.95 * opts_.step_ratio) / knorm_;
      st.sigma = std::sqrt(0.95 / opts_.step_ratio) / knorm_;
    }

    std::vector<double> xu_bar = st.xu, xw_bar = st.xw;
    std::vector<double> xu_old(nu), xw_old(nw), yr_old(nw), yo_old(nw), yb_old(nu);
    std::vector<double> kr(nw), kb(nu), ktu(nu), ktw(nw);
    std::vector<double> dkr(nw), dku(nu);
    TransportResult res{0.0, TransportPath(grid_, ns_)};
    double alpha = 0.5;
    const double eta = 0.95, spread = 1.5;

    int it = 0;
    for (; it < opts_.max_iter; ++it) {
      xu_old = st.xu;
      xw_old = st.xw;
      yr_old = st.yr;
      yo_old = st.yo;
      yb_old = st.yb;

      // Dual ascent and prox of the conjugate of the action density and the box indicator.
      apply_k(xu_bar, a, b, true, kr, kb);
      const double gamma = 1.0 / st.sigma;
      for (std::size_t q = 0; q < nw; ++q) {
        const double zr = st.yr[q] + st.sigma * kr[q];
        const double zo = st.yo[q] + st.sigma * xw_bar[q];
        const auto [pr, po] = prox_action(zr / st.sigma, zo / st.sigma, gamma);
        st.yr[q] = zr - st.sigma * pr;
        st.yo[q] = zo - st.sigma * po;
      }
      for (std::size_t q = 0; q < nu; ++q) {
        const double z = st.yb[q] + st.sigma * kb[q];
        st.yb[q] = z - st.sigma * std::clamp(z / st.sigma, 0.0, m_.ceiling());
      }

      // Primal descent and projection onto the continuity set.
      apply_kt(st.yr, st.yb, ktu);
      for (std::size_t q = 0; q < nu; ++q) st.xu[q] -= st.tau * ktu[q];
      for (std::size_t q = 0; q < nw; ++q) st.xw[q] -= st.tau * cw_ * st.yo[q];
      project(st.xu, st.xw, a, b);
      for (std::size_t q = 0; q < nu; ++q) xu_bar[q] = 2.0 * st.xu[q] - xu_old[q];
      for (std::size_t q = 0; q < nw; ++q) xw_bar[q] = 2.0 * st.xw[q] - xw_old[q];

      // Primal and dual residuals of the PDHG fixed-point map.
      std::vector<double>& du = xu_old;
      std::vector<double>& dw = xw_old;
      for (std::size_t q = 0; q < nu; ++q) du[q] -= st.xu[q];
      for (std::size_t q = 0; q < nw; ++q) dw[q] -= st.xw[q];
      for (std::size_t q = 0; q < nw; ++q) {
        yr_old[q] -= st.yr[q];
        yo_old[q] -= st.yo[q];
      }
      for (std::size_t q = 0; q < nu; ++q) yb_old[q] -= st.yb[q];
      apply_kt(yr_old, yb_old, dku);
      double p2 = 0.0, pscale = 0.0;
      for (std::size_t q = 0; q < nu; ++q) {
        const double p = du[q] / st.tau - dku[q];
        p2 += p * p;
        pscale += ktu[q] * ktu[q];
      }
      for (std::size_t q = 0; q < nw; ++q) {
        const double p = dw[q] / (st.tau * cw_) - yo_old[q];
        p2 += cw_ * p * p;
        pscale += cw_ * st.yo[q] * st.yo[q];
      }
      apply_k(du, a, b, false, dkr, kb);
      double d2 = 0.0, dscale = 0.0;
      for (std::size_t q = 0; q < nw; ++q) {
        const double dr = yr_old[q] / st.sigma - dkr[q];
        const double dw_ = yo_old[q] / st.sigma - dw[q];
        d2 += dr * dr + dw_ * dw_;
        dscale += kr[q] * kr[q] + st.xw[q] * st.xw[q];
      }
      for (std::size_t q = 0; q < nu; ++q) {
        const double db = yb_old[q] / st.sigma - kb[q];
        d2 += db * db;
      }
      const double rel_p = std::sqrt(p2 / (pscale + 1e-30));
      const double rel_d = std::sqrt(d2 / (dscale + 1e-30));
      res.gap = std::max(rel_p, rel_d);

      if (opts_.record_history) res.action_history.push_back(soft_action(st.xu, st.xw, a, b));
      if (res.gap <= opts_.tol && it > 0) {
        res.converged = true;
        ++it;
        break;
      }
      // Balance the two residuals by trading primal against dual step length.
      if (!opts_.adaptive_steps) continue;
      if (rel_p > spread * rel_d) {
        st.tau /= (1.0 - alpha);
        st.sigma *= (1.0 - alpha);
        alpha *= eta;
      } else if (rel_d > spread * rel_p) {
        st.tau *= (1.0 - alpha);
        st.sigma /= (1.0 - alpha);
        alpha *= eta;
      }
    }
    res.iterations = it;
    if (!res.converged) {
      throw Error(ErrorCode::NoConvergence, "primal-dual transport solve stopped after " + std::to_string(it) +
                                                " iterations with residual " + std::to_string(res.gap));
    }
    res.state = st;
    finish(res, st, a, b);
    return res;
  }

 private:
  void finish(TransportResult& res, const PrimalDualState& st, std::span<const double> a, std::span<const double> b) const {
    assemble_path(res.path, st, a, b);
    res.w2 = action(res.path, m_);
    res.path.action = res.w2;
    res.continuity = continuity_residual(res.path);
    if (!std::isfinite(res.w2)) throw Error(ErrorCode::NoConvergence, "transport iterate has infinite action");
  }

  bool strictly_interior(std::span<const double> v) const {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    const double margin = 1e-6 * std::min(mean, m_.bounded() ? m_.ceiling() - mean : mean);
    if (!(margin > 0.0)) return false;
    for (double x : v) {
      if (x < margin || x > m_.ceiling() - margin) return false;
    }
    return true;
  }

  bool newton_admissible(std::span<const double> xu) const {
    for (double x : xu) {
      if (!(x > 0.0) || !(x < m_.ceiling())) return false;
    }
    return true;
  }

  // Objective sum A over all interior faces of all slabs, with its gradient and the 2x2 Hessian blocks.
  struct FaceTerms {
    double value = 0.0;
    std::vector<double> a_r, a_w, a_rr, a_rw, a_ww;
  };

  bool face_terms(std::span<const double> xu, std::span<const double> xw, std::span<const double> a,
                  std::span<const double> b, FaceTerms* t, double& value) const {
    value = 0.0;
    for (std::size_t j = 0; j < ns_; ++j) {
      for (std::size_t k = 1; k < n_; ++k) {
        const std::size_t q = j * nf_ + k - 1;
        const double rho = 0.25 * (slice_value(xu, a, b, j, k - 1) + slice_value(xu, a, b, j, k) +
                                   slice_value(xu, a, b, j + 1, k - 1) + slice_value(xu, a, b, j + 1, k));
        const double om = xw[q];
        const Jet jt = m_.jet(rho);
        if (!(jt.value > 0.0)) return false;
        const double iv = 1.0 / jt.value;
        value += om * om * iv;
        if (t) {
          t->a_r[q] = -om * om * jt.slope * iv * iv;
          t->a_w[q] = 2.0 * om * iv;
          t->a_rr[q] = om * om * (2.0 * jt.slope * jt.slope - jt.value * jt.curvature) * iv * iv * iv;
          t->a_rw[q] = -2.0 * om * jt.slope * iv * iv;
          t->a_ww[q] = 2.0 * iv;
        }
      }
    }
    return std::isfinite(value);
  }

  // Damped Newton in cumulative-mass variables M^j_k = dx sum_{i<k} u^j_i on interior slices and faces.
  // Fluxes follow as w^j_k = -(M^{j+1}_k - M^j_k) / ds, so continuity holds by construction and the
  // problem is unconstrained and convex; its Hessian is a sparse SPD stencil factored by Cholesky.
  bool newton(PrimalDualState& st, std::span<const double> a, std::span<const double> b, TransportResult& res) const {
    using Triplet = Eigen::Triplet<double>;
    const std::size_t nu = (ns_ - 1) * n_, nw = ns_ * nf_;
    const std::size_t nm = (ns_ - 1) * nf_;
    const double S = m_.ceiling();
    // Cumulative masses of all slices, faces 0..N.
    std::vector<double> cm((ns_ + 1) * (n_ + 1), 0.0);
    const auto cm_at = [&](std::size_t j, std::size_t k) -> double& { return cm[j * (n_ + 1) + k]; };
    for (std::size_t j = 0; j <= ns_; ++j) {
      for (std::size_t k = 1; k <= n_; ++k) cm_at(j, k) = cm_at(j, k - 1) + slice_value(st.xu, a, b, j, k - 1) * dx_;
    }
    const auto var = [&](std::size_t j, std::size_t k) -> long {
      if (j == 0 || j == ns_ || k == 0 || k == n_) return -1;
      return static_cast<long>((j - 1) * nf_ + k - 1);
    };
    const auto to_primal = [&](const std::vector<double>& c, std::vector<double>& xu, std::vector<double>& xw) {
      for (std::size_t j = 1; j < ns_; ++j) {
        for (std::size_t i = 0; i < n_; ++i) xu[(j - 1) * n_ + i] = (c[j * (n_ + 1) + i + 1] - c[j * (n_ + 1) + i]) / dx_;
      }
      for (std::size_t j = 0; j < ns_; ++j) {
        for (std::size_t k = 1; k < n_; ++k) xw[j * nf_ + k - 1] = -(c[(j + 1) * (n_ + 1) + k] - c[j * (n_ + 1) + k]) / ds_;
      }
    };
    to_primal(cm, st.xu, st.xw);

    FaceTerms t;
    for (auto* v : {&t.a_r, &t.a_w, &t.a_rr, &t.a_rw, &t.a_ww}) v->assign(nw, 0.0);
    double phi = 0.0;
    if (!newton_admissible(st.xu) || !face_terms(st.xu, st.xw, a, b, &t, phi)) return false;

    std::vector<double> cm_try(cm.size()), xu_try(nu), xw_try(nw);
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> chol;
    std::vector<Triplet> trip;
    trip.reserve(nw * 36 + nm);
    const double cr = 0.25 / dx_, cw = 1.0 / ds_;
    for (int it = 0; it < opts_.newton_max_iter; ++it) {
      trip.clear();
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nm));
      for (std::size_t j = 0; j < ns_; ++j) {
        for (std::size_t k = 1; k < n_; ++k) {
          const std::size_t q = j * nf_ + k - 1;
          // d rho / dM and d omega / dM restricted to the free variables.
          long iv[6];
          double dr[6], dw[6];
          int nv = 0;
          const auto add = [&](long v, double r, double w_) {
            if (v < 0) return;
            iv[nv] = v;
            dr[nv] = r;
            dw[nv] = w_;
            ++nv;
          };
          add(var(j, k + 1), cr, 0.0);
          add(var(j + 1, k + 1), cr, 0.0);
          add(var(j, k - 1), -cr, 0.0);
          add(var(j + 1, k - 1), -cr, 0.0);
          add(var(j, k), 0.0, cw);
          add(var(j + 1, k), 0.0, -cw);
          for (int p = 0; p < nv; ++p) {
            grad(iv[p]) += t.a_r[q] * dr[p] + t.a_w[q] * dw[p];
            for (int r = 0; r < nv; ++r) {
              if (iv[r] > iv[p]) continue;
              const double h = t.a_rr[q] * dr[p] * dr[r] + t.a_rw[q] * (dr[p] * dw[r] + dw[p] * dr[r]) + t.a_ww[q] * dw[p] * dw[r];
              if (h != 0.0) trip.emplace_back(iv[p], iv[r], h);
            }
          }
        }
      }
      double diag_scale = 0.0;
      for (const auto& e : trip) {
        if (e.row() == e.col()) diag_scale = std::max(diag_scale, std::abs(e.value()));
      }
      for (std::size_t q = 0; q < nm; ++q) trip.emplace_back(q, q, 1e-14 * diag_scale);
      Eigen::SparseMatrix<double> hess(static_cast<Eigen::Index>(nm), static_cast<Eigen::Index>(nm));
      hess.setFromTriplets(trip.begin(), trip.end());
      if (it == 0) chol.analyzePattern(hess);
      chol.factorize(hess);
      if (chol.info() != Eigen::Success) return false;
      const Eigen::VectorXd step = chol.solve(-grad);
      if (!step.allFinite()) return false;

      const double slope = grad.dot(step);
      res.gap = std::abs(slope) / (std::abs(phi) + 1e-300);
      res.iterations = it;
      if (-slope <= 1e-13 * phi + 1e-300) {
        res.converged = true;
        return true;
      }
      if (!(slope < 0.0)) return false;

      // Fraction-to-boundary rule on the cell densities, then Armijo backtracking.
      double alpha = 1.0;
      for (std::size_t j = 1; j < ns_; ++j) {
        for (std::size_t i = 0; i < n_; ++i) {
          const long l = var(j, i), r = var(j, i + 1);
          const double du = ((r >= 0 ? step(r) : 0.0) - (l >= 0 ? step(l) : 0.0)) / dx_;
          const double u = st.xu[(j - 1) * n_ + i];
          if (du < 0.0) alpha = std::min(alpha, -0.99 * u / du);
          if (du > 0.0 && m_.bounded()) alpha = std::min(alpha, 0.99 * (S - u) / du);
        }
      }
      bool accepted = false;
      double phi_try = 0.0;
      for (int h = 0; h < 40; ++h, alpha *= 0.5) {
        cm_try = cm;
        for (std::size_t j = 1; j < ns_; ++j) {
          for (std::size_t k = 1; k < n_; ++k) cm_try[j * (n_ + 1) + k] += alpha * step(var(j, k));
        }
        to_primal(cm_try, xu_try, xw_try);
        if (newton_admissible(xu_try) && face_terms(xu_try, xw_try, a, b, nullptr, phi_try) &&
            phi_try <= phi + 1e-4 * alpha * slope) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        // At the rounding floor of the objective no decrease is measurable; keep the point.
        if (-slope <= 1e-10 * phi) {
          res.converged = true;
          return true;
        }
        return false;
      }
      cm.swap(cm_try);
      st.xu.swap(xu_try);
      st.xw.swap(xw_try);
      face_terms(st.xu, st.xw, a, b, &t, phi);
    }
    return false;
  }

  // Scalar prox of gamma * A at (a, b): minimize over rho in [0, S] the reduced function
  // gamma b^2 / (m(rho) + 2 gamma) + (rho - a)^2 / 2, then omega = b m / (m + 2 gamma).
  std::pair<double, double> prox_action(double a, double b, double gamma) const {
    const double S = m_.ceiling();
    if (b == 0.0) return {std::clamp(a, 0.0, S), 0.0};
    const double gb2 = gamma * b * b;
    const auto dphi = [&](double r, double& d2phi) {
      const Jet j = m_.jet(r);
      const double den = j.value + 2.0 * gamma;
      d2phi = 1.0 + gb2 * (2.0 * j.slope * j.slope / (den * den * den) - j.curvature / (den * den));
      return -gb2 * j.slope / (den * den) + r - a;
    };
    double lo = 0.0;
    double hi;
    {
      double tmp;
      const Jet j0 = m_.jet(0.0);
      if (std::isfinite(j0.slope) && -gb2 * j0.slope / (4.0 * gamma * gamma) - a >= 0.0) return {0.0, 0.0};
      if (m_.bounded()) {
        hi = S;
        const Jet js = m_.jet(S);
        if (std::isfinite(js.slope) && -gb2 * js.slope / (4.0 * gamma * gamma) + S - a <= 0.0) return {S, 0.0};
      } else {
        hi = std::max(a, 0.0) + 1.0;
        while (dphi(hi, tmp) <= 0.0) {
          lo = hi;
          hi = 2.0 * hi + 1.0;
        }
      }
    }
    double r = (a > lo && a < hi) ? a : 0.5 * (lo + hi);
    for (int it = 0; it < 100; ++it) {
      double d2;
      const double g = dphi(r, d2);
      if (g > 0.0) hi = r; else lo = r;
      double next = r - g / d2;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      const double step = std::abs(next - r);
      r = next;
      if (step <= 1e-12 * (1.0 + r) || hi - lo <= 1e-15 * (1.0 + hi)) break;
    }
    const double v = m_(r);
    return {r, b * v / (v + 2.0 * gamma)};
  }

  double slice_value(std::span<const double> xu, std::span<const double> a, std::span<const double> b, std::size_t j,
                     std::size_t i) const {
    if (j == 0) return a[i];
    if (j == ns_) return b[i];
    return xu[(j - 1) * n_ + i];
  }

  // K x (+ endpoint offsets when with_offset): face densities of every slab and the cell densities.
  void apply_k(std::span<const double> xu, std::span<const double> a, std::span<const double> b, bool with_offset,
               std::vector<double>& kr, std::vector<double>& kb) const {
    const std::vector<double> zero(n_, 0.0);
    const std::span<const double> a_eff = with_offset ? a : std::span<const double>(zero);
    const std::span<const double> b_eff = with_offset ? b : std::span<const double>(zero);
    for (std::size_t j = 0; j < ns_; ++j) {
      for (std::size_t k = 1; k < n_; ++k) {
        kr[j * nf_ + k - 1] = 0.25 * (slice_value(xu, a_eff, b_eff, j, k - 1) + slice_value(xu, a_eff, b_eff, j, k) +
                                      slice_value(xu, a_eff, b_eff, j + 1, k - 1) + slice_value(xu, a_eff, b_eff, j + 1, k));
      }
    }
    std::copy(xu.begin(), xu.end(), kb.begin());
  }

  void apply_kt(std::span<const double> yr, std::span<const double> yb, std::vector<double>& out) const {
    std::copy(yb.begin(), yb.end(), out.begin());
    for (std::size_t j = 0; j < ns_; ++j) {
      for (std::size_t k = 1; k < n_; ++k) {
        const double v = 0.25 * yr[j * nf_ + k - 1];
        if (j >= 1) {
          out[(j - 1) * n_ + k - 1] += v;
          out[(j - 1) * n_ + k] += v;
        }
        if (j + 1 < ns_) {
          out[j * n_ + k - 1] += v;
          out[j * n_ + k] += v;
        }
      }
    }
  }

  double estimate_operator_norm() const {
    const std::size_t nu = (ns_ - 1) * n_, nw = ns_ * nf_;
    std::mt19937_64 rng(opts_.seed);
    std::normal_distribution<double> dist;
    std::vector<double> vu(nu), vw(nw), kr(nw), kb(nu), tu(nu);
    for (auto& v : vu) v = dist(rng);
    for (auto& v : vw) v = dist(rng);
    const std::vector<double> zero(n_, 0.0);
    double lambda = 0.0;
    for (int it = 0; it < 30; ++it) {
      double nrm = 0.0;
      for (double v : vu) nrm += v * v;
      for (double v : vw) nrm += v * v;
      nrm = std::sqrt(nrm);
      for (auto& v : vu) v /= nrm;
      for (auto& v : vw) v /= nrm;
      apply_k(vu, zero, zero, false, kr, kb);
      apply_kt(kr, kb, tu);
      lambda = 0.0;
      for (std::size_t q = 0; q < nu; ++q) lambda += vu[q] * tu[q];
      for (std::size_t q = 0; q < nw; ++q) lambda += cw_ * vw[q] * vw[q];
      vu = tu;
      for (auto& v : vw) v *= cw_;
    }
    // With the step weights folded in, the flux block contributes cw to the spectrum.
    return std::sqrt(std::max(lambda, cw_)) * 1.01;
  }

  // Feasible cold start: linear interpolation in s, fluxes from the one-dimensional continuity equation.
  void linear_interpolant(std::vector<double>& xu, std::vector<double>& xw, std::span<const double> a,
                          std::span<const double> b) const {
    for (std::size_t j = 1; j < ns_; ++j) {
      const double s = static_cast<double>(j) * ds_;
      for (std::size_t i = 0; i < n_; ++i) xu[(j - 1) * n_ + i] = (1.0 - s) * a[i] + s * b[i];
    }
    for (std::size_t j = 0; j < ns_; ++j) {
      double cum = 0.0;
      for (std::size_t k = 1; k < n_; ++k) {
        cum += (b[k - 1] - a[k - 1]) * dx_;
        xw[j * nf_ + k - 1] = -cum;
      }
    }
  }

  void setup_projection() {
    const double pi = std::acos(-1.0);
    basis_.assign(ns_ * ns_, 0.0);
    for (std::size_t j = 0; j < ns_; ++j) {
      for (std::size_t k = 0; k < ns_; ++k) {
        const double c = k == 0 ? std::sqrt(1.0 / ns_) : std::sqrt(2.0 / ns_);
        basis_[j * ns_ + k] = c * std::cos(pi * k * (j + 0.5) / ns_);
      }
    }
    // Thomas factorizations of (mu_k / ds^2) I + T_x / dx^2 per time mode k >= 1.
    cprime_.assign(ns_ * n_, 0.0);
    denom_.assign(ns_ * n_, 0.0);
    const double ox = -cw_ / (dx_ * dx_);
    for (std::size_t k = 1; k < ns_; ++k) {
      const double mu = (2.0 - 2.0 * std::cos(pi * k / ns_)) / (ds_ * ds_);
      for (std::size_t i = 0; i < n_; ++i) {
        const double diag = mu + cw_ * ((i == 0 || i + 1 == n_) ? 1.0 : 2.0) / (dx_ * dx_);
        const double prev_c = i == 0 ? 0.0 : cprime_[k * n_ + i - 1];
        const double den = diag - (i == 0 ? 0.0 : ox * prev_c);
        denom_[k * n_ + i] = den;
        cprime_[k * n_ + i] = ox / den;
      }
    }
  }

  // Orthogonal projection of (xu, xw) onto the affine set of the discrete continuity equation.
  void project(std::vector<double>& xu, std::vector<double>& xw, std::span<const double> a, std::span<const double> b) const {
    std::vector<double> res(ns_ * n_), hat(ns_ * n_, 0.0);
    const double ids = 1.0 / ds_, idx = 1.0 / dx_;
    for (std::size_t j = 0; j < ns_; ++j) {
      for (std::size_t i = 0; i < n_; ++i) {
        const double wr = i + 1 < n_ ? xw[j * nf_ + i] : 0.0;
        const double wl = i > 0 ? xw[j * nf_ + i - 1] : 0.0;
        res[j * n_ + i] = (slice_value(xu, a, b, j + 1, i) - slice_value(xu, a, b, j, i)) * ids + (wr - wl) * idx;
      }
    }
    for (std::size_t j = 0; j < ns_; ++j) {
      for (std::size_t k = 0; k < ns_; ++k) {
        const double q = basis_[j * ns_ + k];
        for (std::size_t i = 0; i < n_; ++i) hat[k * n_ + i] += q * res[j * n_ + i];
      }
    }
    // Mode 0: the spatial path Laplacian alone, solved through its factorization T_x = D D^T.
    {
      double* y = &hat[0];
      const double d2 = dx_ * dx_ / cw_;
      std::vector<double> q(n_ + 1, 0.0);
      for (std::size_t i = 0; i + 1 < n_; ++i) q[i + 1] = q[i] + d2 * y[i];
      double mean = 0.0;
      y[0] = 0.0;
      for (std::size_t i = 1; i < n_; ++i) {
        y[i] = y[i - 1] - q[i];
        mean += y[i];
      }
      mean /= static_cast<double>(n_);
      for (std::size_t i = 0; i < n_; ++i) y[i] -= mean;
    }
    const double ox = -cw_ / (dx_ * dx_);
    for (std::size_t k = 1; k < ns_; ++k) {
      double* y = &hat[k * n_];
      const double* cp = &cprime_[k * n_];
      const double* dn = &denom_[k * n_];
      y[0] /= dn[0];
      for (std::size_t i = 1; i < n_; ++i) y[i] = (y[i] - ox * y[i - 1]) / dn[i];
      for (std::size_t i = n_ - 1; i-- > 0;) y[i] -= cp[i] * y[i + 1];
    }
    std::fill(res.begin(), res.end(), 0.0);
    for (std::size_t j = 0; j < ns_; ++j) {
      for (std::size_t k = 0; k < ns_; ++k) {
        const double q = basis_[j * ns_ + k];
        for (std::size_t i = 0; i < n_; ++i) res[j * n_ + i] += q * hat[k * n_ + i];
      }
    }
    const std::vector<double>& lambda = res;
    for (std::size_t j = 1; j < ns_; ++j) {
      for (std::size_t i = 0; i < n_; ++i) xu[(j - 1) * n_ + i] -= (lambda[(j - 1) * n_ + i] - lambda[j * n_ + i]) * ids;
    }
    for (std::size_t j = 0; j < ns_; ++j) {
      for (std::size_t k = 1; k < n_; ++k) xw[j * nf_ + k - 1] -= cw_ * (lambda[j * n_ + k - 1] - lambda[j * n_ + k]) * idx;
    }
  }

  double soft_action(std::span<const double> xu, std::span<const double> xw, std::span<const double> a,
                     std::span<const double> b) const {
    double s = 0.0;
    for (std::size_t j = 0; j < ns_; ++j) {
      for (std::size_t k = 1; k < n_; ++k) {
        const double rho = 0.25 * (slice_value(xu, a, b, j, k - 1) + slice_value(xu, a, b, j, k) +
                                   slice_value(xu, a, b, j + 1, k - 1) + slice_value(xu, a, b, j + 1, k));
        const double v = m_(std::clamp(rho, 0.0, m_.ceiling()));
        const double om = xw[j * nf_ + k - 1];
        if (v > 0.0) s += om * om / v;
      }
    }
    return s * dx_ * ds_;
  }

  // Final path. The iterate satisfies continuity but may leave [0, S] by the solver tolerance; it is
  // mixed with the feasible path (1 - q) u_lin + q U/L, q = 4 s (1 - s), using the smallest weight
  // that restores the bounds. Continuity is linear, so the mixture stays exactly feasible.
  void assemble_path(TransportPath& path, const PrimalDualState& st, std::span<const double> a, std::span<const double> b) const {
    const double S = m_.ceiling();
    double mass = 0.0;
    for (double v : a) mass += v;
    mass *= dx_;
    const double level = mass / grid_.length();
    std::vector<double> pu((ns_ + 1) * n_), pw(ns_ * (n_ + 1), 0.0);
    for (std::size_t j = 0; j <= ns_; ++j) {
      const double s = static_cast<double>(j) * ds_;
      const double q = 4.0 * s * (1.0 - s);
      for (std::size_t i = 0; i < n_; ++i) pu[j * n_ + i] = (1.0 - q) * ((1.0 - s) * a[i] + s * b[i]) + q * level;
    }
    for (std::size_t j = 0; j < ns_; ++j) {
      double cum = 0.0;
      for (std::size_t k = 1; k < n_; ++k) {
        cum -= (pu[(j + 1) * n_ + k - 1] - pu[j * n_ + k - 1]) * dx_ / ds_;
        pw[j * (n_ + 1) + k] = cum;
      }
    }
    double theta = 0.0;
    for (std::size_t j = 1; j < ns_; ++j) {
      for (std::size_t i = 0; i < n_; ++i) {
        const double raw = st.xu[(j - 1) * n_ + i];
        const double pos = pu[j * n_ + i];
        if (raw < 0.0) theta = std::max(theta, -raw / (pos - raw));
        if (raw > S) theta = std::max(theta, (raw - S) / (raw - pos));
      }
    }
    theta = std::min(1.0, theta * (1.0 + 1e-3));
    for (std::size_t j = 0; j <= ns_; ++j) {
      for (std::size_t i = 0; i < n_; ++i) {
        const double raw = slice_value(st.xu, a, b, j, i);
        const double v = (j == 0 || j == ns_) ? raw : (1.0 - theta) * raw + theta * pu[j * n_ + i];
        path.density(j, i) = std::clamp(v, 0.0, S);
      }
    }
    for (std::size_t j = 0; j < ns_; ++j) {
      for (std::size_t k = 1; k < n_; ++k) {
        const double v = (1.0 - theta) * st.xw[j * nf_ + k - 1] + theta * pw[j * (n_ + 1) + k];
        path.flux(j, k) = m_(path.face_density(j, k)) > 0.0 ? v : 0.0;
      }
    }
    std::vector<double> psi(n_);
    for (std::size_t j = 0; j < ns_; ++j) {
      slab_potential(path, j, psi);
      for (std::size_t i = 0; i < n_; ++i) path.dual[j * n_ + i] = 0.5 * psi[i];
    }
    // Terminal gradient of W^2 by the envelope relation on the last slab.
    slab_potential(path, ns_ - 1, psi);
    const std::size_t j = ns_ - 1;
    for (std::size_t k = 1; k < n_; ++k) {
      const double rho = path.face_density(j, k);
      const double om = path.flux(j, k);
      const Jet jt = m_.jet(rho);
      if (om == 0.0 || !(jt.value > 0.0)) continue;
      const double da = -om * om * jt.slope / (jt.value * jt.value);
      psi[k - 1] += 0.25 * ds_ * da;
      psi[k] += 0.25 * ds_ * da;
    }
    double mean = 0.0;
    for (double v : psi) mean += v;
    mean /= static_cast<double>(n_);
    for (std::size_t i = 0; i < n_; ++i) path.dual[ns_ * n_ + i] = 0.5 * (psi[i] - mean);
  }

  void slab_potential(const TransportPath& path, std::size_t j, std::vector<double>& psi) const {
    psi[0] = 0.0;
    for (std::size_t k = 1; k < n_; ++k) {
      const double v = m_(path.face_density(j, k));
      psi[k] = psi[k - 1] + (v > 0.0 ? 2.0 * path.flux(j, k) / v * dx_ : 0.0);
    }
    double mean = 0.0;
    for (double v : psi) mean += v;
    mean /= static_cast<double>(n_);
    for (double& v : psi) v -= mean;
  }

  Grid1D grid_;
  Mobility m_;
  TransportOptions opts_;
  std::size_t n_, ns_, nf_ = 0;
  double ds_ = 0.0, dx_ = 0.0, cw_ = 1.0, knorm_ = 1.0;
  std::vector<double> basis_, cprime_, denom_;
};

/// W_m(u0, u1)^2 with its path; see TransportSolver.
inline TransportResult solve_distance(const DensityField& u0, const DensityField& u1, const Mobility& m,
                                      const TransportOptions& opts = {}, const PrimalDualState* warm = nullptr) {
  return TransportSolver(u0.grid, m, opts).solve(u0, u1, warm);
}

}  // namespace wmflow
