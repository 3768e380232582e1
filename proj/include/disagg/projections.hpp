#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "disagg/matrix.hpp"
#include "disagg/model.hpp"

namespace disagg {

/// One agent's feasible set: box [lower, upper] cut by sum_t x_t = demand.
struct AgentBlock {
  Vector lower;
  Vector upper;
  double demand = 0.0;
};

inline AgentBlock agent_block(const TransportInstance& inst, std::size_t n) {
  return {inst.lower.row_vector(n), inst.upper.row_vector(n), inst.demand[n]};
}

enum class HalfspaceKind { le, eq };

/// a . v <= b, or a . v = b.
struct Halfspace {
  Vector normal;
  double offset = 0.0;
  HalfspaceKind kind = HalfspaceKind::le;

  double value(std::span<const double> v) const { return dot(normal, v) - offset; }
  /// Positive part of the violation (absolute value for equalities).
  double violation(std::span<const double> v) const {
    const double r = value(v);
    return kind == HalfspaceKind::eq ? std::abs(r) : std::max(0.0, r);
  }
};

/// Euclidean projection onto the agent block. The multiplier lambda of the
/// sum constraint is located exactly on the piecewise-linear map
/// lambda -> sum_t clamp(y_t + lambda, lower_t, upper_t).
inline Vector project_agent(std::span<const double> y, const AgentBlock& block, double tol = 1e-9) {
  const std::size_t T = y.size();
  if (block.lower.size() != T || block.upper.size() != T)
    throw std::invalid_argument("project_agent: dimension mismatch");
  double lo_sum = 0.0, hi_sum = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    if (block.lower[t] > block.upper[t]) throw std::invalid_argument("project_agent: lower > upper");
    lo_sum += block.lower[t];
    hi_sum += block.upper[t];
  }
  const double scale = std::max({1.0, std::abs(lo_sum), std::abs(hi_sum)});
  if (block.demand < lo_sum - tol * scale || block.demand > hi_sum + tol * scale)
    throw std::invalid_argument("project_agent: infeasible block");

  struct Breakpoint {
    double at;
    int slope_change;
  };
  std::vector<Breakpoint> bp;
  bp.reserve(2 * T);
  for (std::size_t t = 0; t < T; ++t) {
    if (block.lower[t] == block.upper[t]) continue;
    bp.push_back({block.lower[t] - y[t], +1});
    bp.push_back({block.upper[t] - y[t], -1});
  }
  std::sort(bp.begin(), bp.end(), [](const Breakpoint& a, const Breakpoint& b) {
    return a.at < b.at || (a.at == b.at && a.slope_change < b.slope_change);
  });

  // g(lambda) = sum clamp(...) - demand, nondecreasing; g = lo_sum - demand <= 0 left of all breakpoints.
  double lambda = bp.empty() ? 0.0 : bp.front().at;
  double g = lo_sum - block.demand;
  int slope = 0;
  if (g < 0.0) {
    for (std::size_t k = 0; k < bp.size(); ++k) {
      slope += bp[k].slope_change;
      const double next = k + 1 < bp.size() ? bp[k + 1].at : bp[k].at;
      const double g_next = g + slope * (next - bp[k].at);
      if (slope > 0 && g_next >= 0.0) {
        lambda = bp[k].at - g / slope;
        break;
      }
      g = g_next;
      lambda = next;
    }
  }
  Vector x(T);
  for (std::size_t t = 0; t < T; ++t) x[t] = std::clamp(y[t] + lambda, block.lower[t], block.upper[t]);
  return x;
}

/// Projection onto Y_p = { y : sum_n y_n = p }: every row moves by (p - sum_n x_n)/N.
inline Matrix project_aggregate(const Matrix& x, std::span<const double> p) {
  if (x.cols() != p.size() || x.rows() == 0) throw std::invalid_argument("project_aggregate: dimension mismatch");
  const Vector col = x.column_sums();
  const double inv_n = 1.0 / static_cast<double>(x.rows());
  Matrix y = x;
  for (std::size_t t = 0; t < p.size(); ++t) {
    const double shift = (p[t] - col[t]) * inv_n;
    for (std::size_t n = 0; n < x.rows(); ++n) y(n, t) += shift;
  }
  return y;
}

inline Vector project_halfspace(std::span<const double> v, const Halfspace& h) {
  if (h.normal.size() != v.size()) throw std::invalid_argument("project_halfspace: dimension mismatch");
  const double nn = dot(h.normal, h.normal);
  if (nn == 0.0) throw std::invalid_argument("project_halfspace: zero normal");
  Vector out(v.begin(), v.end());
  const double r = h.value(v);
  if (h.kind == HalfspaceKind::le && r <= 0.0) return out;
  const double f = r / nn;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= f * h.normal[i];
  return out;
}

struct DykstraResult {
  Vector point;
  std::size_t cycles = 0;
  double residual = 0.0;   // max violation at exit
  bool converged = false;
};

/// Dykstra's cyclic projections onto the intersection of `hs`.
/// max_cycles == 0 selects 10 * d * hs.size().
inline DykstraResult dykstra_project(std::span<const double> v, const std::vector<Halfspace>& hs, double tol = 1e-10,
                                     std::size_t max_cycles = 0) {
  const std::size_t d = v.size();
  if (max_cycles == 0) max_cycles = std::max<std::size_t>(10 * d * hs.size(), 100);
  DykstraResult res;
  res.point.assign(v.begin(), v.end());
  if (hs.empty()) {
    res.converged = true;
    return res;
  }
  std::vector<Vector> incr(hs.size(), Vector(d, 0.0));
  Vector prev;
  for (res.cycles = 1; res.cycles <= max_cycles; ++res.cycles) {
    prev = res.point;
    double incr_change = 0.0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      Vector yv(d);
      for (std::size_t j = 0; j < d; ++j) yv[j] = res.point[j] + incr[i][j];
      res.point = project_halfspace(yv, hs[i]);
      for (std::size_t j = 0; j < d; ++j) {
        const double next = yv[j] - res.point[j];
        incr_change = std::max(incr_change, std::abs(next - incr[i][j]));
        incr[i][j] = next;
      }
    }
    double viol = 0.0;
    for (const auto& h : hs) viol = std::max(viol, h.violation(res.point));
    res.residual = viol;
    // a fixed iterate with moving increments is not a fixed point
    if (max_abs_diff(prev, res.point) <= tol && incr_change <= tol && viol <= tol) {
      res.converged = true;
      return res;
    }
  }
  res.cycles = max_cycles;
  return res;
}

struct QpResult {
  Vector point;
  Vector multipliers;  // one per halfspace, >= 0 on inequalities, zero off the working set
  std::size_t iterations = 0;
  bool converged = false;
};

/// Exact projection of `v` onto the polyhedron `hs` by a primal active-set
/// method started at the feasible point `start`. The working set is kept
/// linearly independent, so every equality-QP solve is nonsingular.
inline QpResult project_polyhedron(std::span<const double> v, const std::vector<Halfspace>& hs, Vector start,
                                   double tol = 1e-10, std::size_t max_iter = 0) {
  const std::size_t d = v.size(), m = hs.size();
  if (start.size() != d) throw std::invalid_argument("project_polyhedron: dimension mismatch");
  if (max_iter == 0) max_iter = 100 + 20 * (m + d);
  QpResult res;
  res.point = std::move(start);
  res.multipliers.assign(m, 0.0);

  std::vector<std::size_t> work;
  // Gram matrix of the working rows must stay nonsingular: admit equality rows greedily.
  auto independent_with = [&](const std::vector<std::size_t>& rows, std::size_t cand) {
    std::vector<std::size_t> trial = rows;
    trial.push_back(cand);
    Matrix g(trial.size(), trial.size());
    for (std::size_t a = 0; a < trial.size(); ++a)
      for (std::size_t b = 0; b < trial.size(); ++b) g(a, b) = dot(hs[trial[a]].normal, hs[trial[b]].normal);
    Vector rhs(trial.size(), 0.0), sol;
    rhs.back() = 1.0;
    return solve_linear(g, rhs, sol, 1e-10);
  };
  for (std::size_t i = 0; i < m; ++i)
    if (hs[i].kind == HalfspaceKind::eq && independent_with(work, i)) work.push_back(i);

  for (res.iterations = 1; res.iterations <= max_iter; ++res.iterations) {
    const std::size_t w = work.size();
    Vector diff(d);
    for (std::size_t j = 0; j < d; ++j) diff[j] = v[j] - res.point[j];
    Vector mu;
    if (w > 0) {
      Matrix g(w, w);
      Vector rhs(w);
      for (std::size_t a = 0; a < w; ++a) {
        rhs[a] = dot(hs[work[a]].normal, diff);
        for (std::size_t b = 0; b < w; ++b) g(a, b) = dot(hs[work[a]].normal, hs[work[b]].normal);
      }
      if (!solve_linear(g, rhs, mu, 1e-14)) return res;
    }
    Vector step = diff;
    for (std::size_t a = 0; a < w; ++a)
      for (std::size_t j = 0; j < d; ++j) step[j] -= mu[a] * hs[work[a]].normal[j];

    if (norm_inf(step) <= tol) {
      std::size_t worst = w;
      double most_negative = -tol;
      for (std::size_t a = 0; a < w; ++a)
        if (hs[work[a]].kind == HalfspaceKind::le && mu[a] < most_negative) {
          most_negative = mu[a];
          worst = a;
        }
      if (worst == w) {
        std::fill(res.multipliers.begin(), res.multipliers.end(), 0.0);
        for (std::size_t a = 0; a < w; ++a) res.multipliers[work[a]] = mu[a];
        res.converged = true;
        return res;
      }
      work.erase(work.begin() + static_cast<std::ptrdiff_t>(worst));
      continue;
    }

    double alpha = 1.0;
    std::size_t blocking = m;
    for (std::size_t i = 0; i < m; ++i) {
      if (hs[i].kind == HalfspaceKind::eq || std::find(work.begin(), work.end(), i) != work.end()) continue;
      const double ad = dot(hs[i].normal, step);
      if (ad <= 1e-14 * norm2(hs[i].normal) * norm2(step)) continue;
      const double room = std::max(0.0, -hs[i].value(res.point));
      const double a_i = room / ad;
      if (a_i < alpha) {
        alpha = a_i;
        blocking = i;
      }
    }
    for (std::size_t j = 0; j < d; ++j) res.point[j] += alpha * step[j];
    if (blocking != m) work.push_back(blocking);
  }
  res.iterations = max_iter;
  return res;
}

/// Exact projection by a dual active-set method (Goldfarb-Idnani with an
/// identity Hessian). Starts at the unconstrained minimiser and adds violated
/// rows; the working set stays linearly independent, so near-parallel rows
/// cannot make it cycle. Needs no feasible start.
inline QpResult project_polyhedron_dual(std::span<const double> v, const std::vector<Halfspace>& hs,
                                        double tol = 1e-10, std::size_t max_iter = 0) {
  const std::size_t d = v.size(), m = hs.size();
  if (max_iter == 0) max_iter = 100 + 20 * (m + d);
  QpResult res;
  res.point.assign(v.begin(), v.end());
  res.multipliers.assign(m, 0.0);
  std::vector<std::size_t> work;
  Vector mu;  // aligned with work

  // r = (N^T N)^{-1} N^T a, z = a - N r for the working rows N
  auto split_off = [&](const Vector& a, Vector& r, Vector& z) {
    const std::size_t w = work.size();
    z = a;
    r.assign(w, 0.0);
    if (w == 0) return true;
    Matrix g(w, w);
    Vector rhs(w);
    for (std::size_t i = 0; i < w; ++i) {
      rhs[i] = dot(hs[work[i]].normal, a);
      for (std::size_t j = 0; j < w; ++j) g(i, j) = dot(hs[work[i]].normal, hs[work[j]].normal);
    }
    if (!solve_linear(g, rhs, r, 1e-14)) return false;
    for (std::size_t i = 0; i < w; ++i)
      for (std::size_t t = 0; t < d; ++t) z[t] -= r[i] * hs[work[i]].normal[t];
    return true;
  };
  auto signed_normal = [&](std::size_t i, double sign) {
    Vector a = hs[i].normal;
    for (double& x : a) x *= sign;
    return a;
  };

  for (res.iterations = 1; res.iterations <= max_iter; ++res.iterations) {
    // most violated row, scaled by its norm; an equality row enters with the sign of its residual
    std::size_t pick = m;
    double worst = tol, sign = 1.0;
    for (std::size_t i = 0; i < m; ++i) {
      if (std::find(work.begin(), work.end(), i) != work.end()) continue;
      const double nrm = std::max(norm2(hs[i].normal), 1e-300);
      const double val = hs[i].value(res.point) / nrm;
      const double viol = hs[i].kind == HalfspaceKind::eq ? std::abs(val) : val;
      if (viol > worst) {
        worst = viol;
        pick = i;
        sign = val < 0.0 ? -1.0 : 1.0;
      }
    }
    if (pick == m) {
      for (std::size_t a = 0; a < work.size(); ++a) res.multipliers[work[a]] = mu[a];
      res.converged = true;
      return res;
    }
    const Vector a = signed_normal(pick, sign);
    double s = sign * hs[pick].value(res.point);
    double mu_p = 0.0;
    for (;; ++res.iterations) {
      if (res.iterations > max_iter) return res;
      Vector r, z;
      if (!split_off(a, r, z)) return res;
      // rows with a sign constraint whose multiplier falls as mu_p grows
      std::size_t drop = work.size();
      double t1 = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < work.size(); ++j) {
        const double rj = hs[work[j]].kind == HalfspaceKind::eq ? 0.0 : r[j];
        if (rj > 0.0 && mu[j] / rj < t1) {
          t1 = mu[j] / rj;
          drop = j;
        }
      }
      const double zz = dot(z, z);
      const bool dependent = zz <= 1e-20 * dot(a, a);
      if (dependent && drop == work.size()) return res;  // infeasible
      const double t2 = dependent ? std::numeric_limits<double>::infinity() : s / zz;
      const double t = std::min(t1, t2);
      if (!dependent)
        for (std::size_t k = 0; k < d; ++k) res.point[k] -= t * z[k];
      for (std::size_t j = 0; j < work.size(); ++j) mu[j] -= t * r[j];
      mu_p += t;
      s -= dependent ? 0.0 : t * zz;
      if (t2 <= t1) {
        work.push_back(pick);
        mu.push_back(sign * mu_p);
        break;
      }
      work.erase(work.begin() + static_cast<std::ptrdiff_t>(drop));
      mu.erase(mu.begin() + static_cast<std::ptrdiff_t>(drop));
    }
  }
  res.iterations = max_iter;
  return res;
}

}  // namespace disagg
