#pragma once

// Brute-force references for the tests. Everything here is deliberately
// naive: exhaustive enumeration and dense Eigen solves, independent of the
// library's own solvers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/chi_squared.hpp>

#include "disagg/master.hpp"
#include "disagg/model.hpp"
#include "disagg/projections.hpp"
#include "disagg/smc.hpp"
#include "disagg/spectral.hpp"

namespace oracle {

using disagg::Halfspace;
using disagg::HalfspaceKind;
using disagg::Matrix;
using disagg::Vector;

/// Euclidean projection of v onto {h}: every subset of inequality rows is
/// tried as the active set, with all equalities active; the closest point
/// that is primal feasible with nonnegative multipliers wins.
inline std::optional<Vector> project_by_kkt_enumeration(const Vector& v, const std::vector<Halfspace>& hs,
                                                        double tol = 1e-9) {
  const std::size_t d = v.size();
  std::vector<std::size_t> eq, ineq;
  for (std::size_t i = 0; i < hs.size(); ++i) (hs[i].kind == HalfspaceKind::eq ? eq : ineq).push_back(i);
  std::optional<Vector> best;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << ineq.size()); ++mask) {
    std::vector<std::size_t> act = eq;
    for (std::size_t k = 0; k < ineq.size(); ++k)
      if (mask >> k & 1U) act.push_back(ineq[k]);
    if (act.size() > d) continue;
    const auto m = static_cast<Eigen::Index>(act.size());
    Eigen::MatrixXd A(m, static_cast<Eigen::Index>(d));
    Eigen::VectorXd b(m);
    for (Eigen::Index r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < d; ++j) A(r, static_cast<Eigen::Index>(j)) = hs[act[r]].normal[j];
      b(r) = hs[act[r]].offset;
    }
    Eigen::Map<const Eigen::VectorXd> vv(v.data(), static_cast<Eigen::Index>(d));
    Eigen::VectorXd z = vv;
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(m);
    if (m > 0) {
      const Eigen::MatrixXd G = A * A.transpose();
      Eigen::FullPivLU<Eigen::MatrixXd> lu(G);
      if (lu.rank() < m) continue;
      mu = lu.solve(A * vv - b);
      z = vv - A.transpose() * mu;
    }
    bool ok = true;
    for (Eigen::Index r = 0; r < m && ok; ++r)
      if (hs[act[r]].kind == HalfspaceKind::le && mu(r) < -tol) ok = false;
    Vector zv(z.data(), z.data() + d);
    for (const auto& h : hs)
      if (h.violation(zv) > tol) ok = false;
    if (!ok) continue;
    const double dist = (z - vv).norm();
    if (dist < best_dist) {
      best_dist = dist;
      best = zv;
    }
  }
  return best;
}

inline std::vector<Halfspace> block_halfspaces(const disagg::AgentBlock& b) {
  const std::size_t T = b.lower.size();
  std::vector<Halfspace> hs;
  hs.push_back({Vector(T, 1.0), b.demand, HalfspaceKind::eq});
  for (std::size_t t = 0; t < T; ++t) {
    Vector e(T, 0.0);
    e[t] = 1.0;
    hs.push_back({e, b.upper[t], HalfspaceKind::le});
    e[t] = -1.0;
    hs.push_back({e, -b.lower[t], HalfspaceKind::le});
  }
  return hs;
}

/// min c^T x s.t. A x <= b by enumerating every d-subset of rows as a basis.
/// Returns nothing when no vertex is feasible. Callers keep the feasible set bounded.
inline std::optional<double> lp_by_vertex_enumeration(const Vector& c, const Matrix& a, const Vector& b,
                                                      double tol = 1e-9) {
  const std::size_t d = c.size(), m = a.rows();
  std::optional<double> best;
  std::vector<std::size_t> pick(d);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << m); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcountll(mask)) != d) continue;
    std::size_t k = 0;
    for (std::size_t i = 0; i < m; ++i)
      if (mask >> i & 1U) pick[k++] = i;
    Eigen::MatrixXd B(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(d));
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t j = 0; j < d; ++j) B(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = a(pick[r], j);
      rhs(static_cast<Eigen::Index>(r)) = b[pick[r]];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
    if (lu.rank() < static_cast<Eigen::Index>(d)) continue;
    const Eigen::VectorXd x = lu.solve(rhs);
    bool feasible = true;
    for (std::size_t i = 0; i < m && feasible; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += a(i, j) * x(static_cast<Eigen::Index>(j));
      if (s > b[i] + tol) feasible = false;
    }
    if (!feasible) continue;
    double obj = 0.0;
    for (std::size_t j = 0; j < d; ++j) obj += c[j] * x(static_cast<Eigen::Index>(j));
    if (!best || obj < *best) best = obj;
  }
  return best;
}

/// Coefficients of det(lambda I - M), highest degree first (Faddeev-LeVerrier).
inline Vector characteristic_polynomial(const Matrix& m) {
  const std::size_t n = m.rows();
  Eigen::MatrixXd M(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(i, j);
  Vector c(n + 1);
  c[0] = 1.0;
  Eigen::MatrixXd Mk = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 1; k <= n; ++k) {
    Mk = M * Mk + c[k - 1] * I;
    c[k] = -(M * Mk).trace() / static_cast<double>(k);
  }
  return c;
}

/// Real roots of a polynomial with only simple real roots, by sign changes on
/// a fine grid over [lo, hi] followed by bisection.
inline Vector real_roots(const Vector& coeff, double lo, double hi, std::size_t grid = 200000) {
  auto eval = [&](double x) {
    double r = 0.0;
    for (double c : coeff) r = r * x + c;
    return r;
  };
  Vector roots;
  double x0 = lo, f0 = eval(lo);
  for (std::size_t i = 1; i <= grid; ++i) {
    const double x1 = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid);
    const double f1 = eval(x1);
    if (f0 == 0.0) {
      roots.push_back(x0);
    } else if (f0 * f1 < 0.0) {
      double a = x0, b = x1, fa = f0;
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (a + b), fm = eval(mid);
        if (fa * fm <= 0.0) {
          b = mid;
        } else {
          a = mid;
          fa = fm;
        }
      }
      roots.push_back(0.5 * (a + b));
    }
    x0 = x1;
    f0 = f1;
  }
  return roots;
}

/// I - (A B^T)(B A^T) with A = N^{-1/2} (1_N^T kron I_T) and B stacked from the
/// normalised per-agent free-period rows and the unit rows of saturated periods.
inline Matrix laplacian_from_projections(const disagg::FaceConfig& c) {
  const auto N = static_cast<Eigen::Index>(c.n_agents), T = static_cast<Eigen::Index>(c.horizon);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(T, N * T);
  for (Eigen::Index n = 0; n < N; ++n)
    for (Eigen::Index t = 0; t < T; ++t) A(t, n * T + t) = 1.0 / std::sqrt(static_cast<double>(N));
  std::vector<Eigen::VectorXd> rows;
  for (Eigen::Index n = 0; n < N; ++n) {
    const auto& sat = c.saturated[static_cast<std::size_t>(n)];
    Eigen::VectorXd r = Eigen::VectorXd::Zero(N * T);
    const double w = 1.0 / std::sqrt(static_cast<double>(c.horizon - sat.size()));
    for (Eigen::Index t = 0; t < T; ++t)
      if (std::find(sat.begin(), sat.end(), static_cast<std::size_t>(t)) == sat.end()) r(n * T + t) = w;
    rows.push_back(r);
    for (std::size_t t : sat) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(N * T);
      e(n * T + static_cast<Eigen::Index>(t)) = 1.0;
      rows.push_back(e);
    }
  }
  Eigen::MatrixXd B(static_cast<Eigen::Index>(rows.size()), N * T);
  for (std::size_t i = 0; i < rows.size(); ++i) B.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  const Eigen::MatrixXd AB = A * B.transpose();
  const Eigen::MatrixXd P = Eigen::MatrixXd::Identity(T, T) - AB * AB.transpose();
  Matrix out(c.horizon, c.horizon);
  for (Eigen::Index i = 0; i < T; ++i)
    for (Eigen::Index j = 0; j < T; ++j) out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = P(i, j);
  return out;
}

/// Generator cost of serving p: best on/off pattern by enumeration, with
/// p^g_t = max(p_min, p_t - pv_t) when on and p_t <= pv_t required when off.
inline double microgrid_cost_of(const disagg::MicrogridSpec& mg, const Vector& p) {
  const std::size_t T = p.size();
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << T); ++mask) {
    double cost = 0.0;
    bool ok = true;
    for (std::size_t t = 0; t < T && ok; ++t) {
      const bool on = mask >> t & 1U;
      const bool was_on = t > 0 && (mask >> (t - 1) & 1U);
      if (!on) {
        ok = p[t] <= mg.pv[t] + 1e-9;
        continue;
      }
      const double g = std::max(mg.p_min, p[t] - mg.pv[t]);
      if (g > mg.p_max + 1e-9) {
        ok = false;
        continue;
      }
      cost += mg.alpha1 + (t > 0 && !was_on ? mg.start_cost : 0.0);
      for (std::size_t k = 0; k < mg.n_breakpoints; ++k)
        cost += mg.marginal_cost[k] * std::clamp(g - mg.theta[k], 0.0, mg.theta[k + 1] - mg.theta[k]);
    }
    if (ok) best = std::min(best, cost);
  }
  return best;
}

/// Minimum of microgrid_cost_of over the lattice points of the region with spacing `step`.
inline double microgrid_grid_search(const disagg::FeasibleRegion& region, const disagg::MicrogridSpec& mg, double step) {
  const std::size_t T = region.horizon();
  double best = std::numeric_limits<double>::infinity();
  Vector p(T);
  auto rec = [&](auto&& self, std::size_t t, double used) -> void {
    if (t + 1 == T) {
      p[t] = region.box.sum_target - used;
      if (region.contains(p, 1e-9)) best = std::min(best, microgrid_cost_of(mg, p));
      return;
    }
    for (double v = region.box.col_lower[t]; v <= region.box.col_upper[t] + 1e-12; v += step) {
      p[t] = v;
      self(self, t + 1, used + v);
    }
  };
  rec(rec, 0, 0.0);
  return best;
}

/// Chi-square p-value for uniformity of single shares on Z_M: `draws` secrets
/// are split among `n_agents`, the share addressed to agent 1 is binned by its
/// top log2(bins) bits.
inline double share_uniformity_pvalue(std::size_t draws, std::size_t bins, std::size_t n_agents, std::uint64_t seed) {
  std::vector<double> count(bins, 0.0);
  disagg::CounterRng rng(seed);
  int shift = 61;
  for (std::size_t b = bins; b > 1; b >>= 1) --shift;
  for (std::size_t d = 0; d < draws; ++d) {
    const double secret = rng.uniform(-100.0, 100.0);
    const auto bundles = disagg::split(0, std::vector<double>{secret}, n_agents, rng);
    ++count[bundles[1].shares[0].raw >> shift];
  }
  const double expected = static_cast<double>(draws) / static_cast<double>(bins);
  double chi2 = 0.0;
  for (double c : count) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(static_cast<double>(bins - 1));
  return boost::math::cdf(boost::math::complement(dist, chi2));
}

}  // namespace oracle
