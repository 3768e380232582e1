#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "disagg/cuts.hpp"
#include "disagg/lp.hpp"
#include "disagg/model.hpp"
#include "disagg/projections.hpp"

namespace disagg {

/// P^(s): aggregate box, sum equality, Hoffman cuts and general halfspaces on p.
struct FeasibleRegion {
  AggregateBox box;
  std::vector<HoffmanCut> cuts;
  std::vector<Halfspace> extra;

  FeasibleRegion() = default;
  explicit FeasibleRegion(AggregateBox b) : box(std::move(b)) {}

  std::size_t horizon() const { return box.col_lower.size(); }

  /// Adds the cut unless an identical time set with the same rhs is present.
  bool add_cut(const HoffmanCut& c, double tol = 1e-12) {
    for (const auto& old : cuts)
      if (old.time_set == c.time_set && std::abs(old.rhs - c.rhs) <= tol) return false;
    cuts.push_back(c);
    return true;
  }

  bool add_halfspace(const Halfspace& h, double tol = 1e-12) {
    for (const auto& old : extra)
      if (old.kind == h.kind && max_abs_diff(old.normal, h.normal) <= tol && std::abs(old.offset - h.offset) <= tol)
        return false;
    extra.push_back(h);
    return true;
  }

  /// Equality first, then box rows, cuts, extra halfspaces.
  std::vector<Halfspace> halfspaces() const {
    const std::size_t T = horizon();
    std::vector<Halfspace> hs;
    hs.push_back({Vector(T, 1.0), box.sum_target, HalfspaceKind::eq});
    for (std::size_t t = 0; t < T; ++t) {
      Vector e(T, 0.0);
      e[t] = 1.0;
      hs.push_back({e, box.col_upper[t], HalfspaceKind::le});
      e[t] = -1.0;
      hs.push_back({e, -box.col_lower[t], HalfspaceKind::le});
    }
    for (const auto& c : cuts) hs.push_back(c.as_halfspace(T));
    for (const auto& h : extra) hs.push_back(h);
    return hs;
  }

  bool contains(std::span<const double> p, double tol) const {
    for (const auto& h : halfspaces())
      if (h.violation(p) > tol) return false;
    return true;
  }

  /// Zero-objective LP over p with the region's rows; bounds carry the box.
  LinearProgram feasibility_lp() const {
    const std::size_t T = horizon();
    LinearProgram lp = LinearProgram::with_vars(T);
    lp.var_lower = box.col_lower;
    lp.var_upper = box.col_upper;
    append_rows(lp, 0);
    return lp;
  }

  /// Appends the sum equality, cuts and extra halfspaces acting on variables offset..offset+T-1.
  void append_rows(LinearProgram& lp, std::size_t offset) const {
    const std::size_t T = horizon();
    Vector row(lp.n_vars(), 0.0);
    for (std::size_t t = 0; t < T; ++t) row[offset + t] = 1.0;
    lp.add_row(row, RowKind::eq, box.sum_target);
    for (const auto& c : cuts) {
      std::fill(row.begin(), row.end(), 0.0);
      for (std::size_t t : c.time_set) row[offset + t] = 1.0;
      lp.add_row(row, RowKind::le, c.rhs);
    }
    for (const auto& h : extra) {
      std::fill(row.begin(), row.end(), 0.0);
      for (std::size_t t = 0; t < T; ++t) row[offset + t] = h.normal[t];
      lp.add_row(row, h.kind == HalfspaceKind::eq ? RowKind::eq : RowKind::le, h.offset);
    }
  }
};

struct MasterSolution {
  bool feasible = false;
  Allocation p;
  double objective = std::numeric_limits<double>::infinity();
  std::vector<int> commitment;     // b^on, microgrid only
  Vector generation;               // p^g_t, microgrid only
  Vector certificate;              // Farkas multipliers when infeasible (quadratic master)
  std::size_t lps_solved = 0;
};

/// Largest violation of the projection KKT system for min ||z - v||^2 over hs.
inline double kkt_residual(std::span<const double> v, const std::vector<Halfspace>& hs, std::span<const double> z,
                           std::span<const double> mu) {
  Vector grad(z.size());
  for (std::size_t j = 0; j < z.size(); ++j) grad[j] = z[j] - v[j];
  double worst = 0.0;
  for (std::size_t i = 0; i < hs.size(); ++i) {
    for (std::size_t j = 0; j < z.size(); ++j) grad[j] += mu[i] * hs[i].normal[j];
    worst = std::max(worst, hs[i].violation(z));
    if (hs[i].kind == HalfspaceKind::le) {
      worst = std::max(worst, -mu[i]);
      worst = std::max(worst, std::abs(mu[i] * hs[i].value(z)));
    }
  }
  return std::max(worst, norm_inf(grad));
}

namespace detail {

/// Equality-QP on the rows active at `guess`; accepted only if KKT holds.
inline std::optional<QpResult> polish_active_set(std::span<const double> v, const std::vector<Halfspace>& hs,
                                                 std::span<const double> guess, double tol) {
  const double activity = 1e-6 * std::max(1.0, norm_inf(guess));
  std::vector<std::size_t> work;
  for (std::size_t i = 0; i < hs.size(); ++i) {
    if (hs[i].kind == HalfspaceKind::le && hs[i].value(guess) < -activity) continue;
    std::vector<std::size_t> trial = work;
    trial.push_back(i);
    Matrix g(trial.size(), trial.size());
    for (std::size_t a = 0; a < trial.size(); ++a)
      for (std::size_t b = 0; b < trial.size(); ++b) g(a, b) = dot(hs[trial[a]].normal, hs[trial[b]].normal);
    Vector e(trial.size(), 0.0), sol;
    e.back() = 1.0;
    if (solve_linear(g, e, sol, 1e-10)) work = std::move(trial);
  }
  const std::size_t w = work.size();
  QpResult res;
  res.point.assign(v.begin(), v.end());
  res.multipliers.assign(hs.size(), 0.0);
  if (w > 0) {
    Matrix g(w, w);
    Vector rhs(w), mu;
    for (std::size_t a = 0; a < w; ++a) {
      rhs[a] = hs[work[a]].value(v);
      for (std::size_t b = 0; b < w; ++b) g(a, b) = dot(hs[work[a]].normal, hs[work[b]].normal);
    }
    if (!solve_linear(g, rhs, mu, 1e-14)) return std::nullopt;
    for (std::size_t a = 0; a < w; ++a) {
      res.multipliers[work[a]] = mu[a];
      for (std::size_t j = 0; j < v.size(); ++j) res.point[j] -= mu[a] * hs[work[a]].normal[j];
    }
  }
  if (kkt_residual(v, hs, res.point, res.multipliers) > tol) return std::nullopt;
  res.converged = true;
  return res;
}

}  // namespace detail

/// min sum_t lin p_t + quad p_t^2 over the region: the projection of
/// (-lin / 2 quad) 1 onto the region. Emptiness is decided by LP phase 1;
/// the projection is computed by Dykstra and snapped to its active set.
inline MasterSolution solve_quadratic_master(const FeasibleRegion& region, const QuadraticCost& cost, double tol = 1e-8) {
  if (!(cost.quad > 0.0)) throw std::invalid_argument("solve_quadratic_master: quadratic coefficient must be positive");
  MasterSolution sol;
  const LpOutcome phase1 = solve_lp(region.feasibility_lp());
  sol.lps_solved = 1;
  if (phase1.status == LpStatus::infeasible) {
    sol.certificate = phase1.certificate;
    return sol;
  }
  const std::size_t T = region.horizon();
  const Vector target(T, -cost.lin / (2.0 * cost.quad));
  const auto hs = region.halfspaces();
  const DykstraResult dyk = dykstra_project(target, hs, 1e-12);
  std::optional<QpResult> qp = detail::polish_active_set(target, hs, dyk.point, tol);
  if (!qp) {
    // Dykstra did not expose the active set: exact dual active-set method,
    // then the primal one from the LP vertex.
    QpResult exact = project_polyhedron_dual(target, hs, 1e-12);
    if (!exact.converged) exact = project_polyhedron(target, hs, phase1.primal, 1e-12);
    if (!exact.converged || kkt_residual(target, hs, exact.point, exact.multipliers) > tol)
      throw std::runtime_error("solve_quadratic_master: projection did not reach KKT tolerance");
    qp = std::move(exact);
  }
  sol.feasible = true;
  sol.p = qp->point;
  sol.objective = cost(sol.p);
  return sol;
}

/// Generator cost of a schedule under the piecewise-linear model, with
/// b^st_t = max(0, b^on_t - b^on_{t-1}).
inline double microgrid_fixed_cost(const MicrogridSpec& mg, const std::vector<int>& on) {
  double c = 0.0;
  for (std::size_t t = 0; t < on.size(); ++t) {
    c += mg.alpha1 * on[t];
    if (t > 0 && on[t] > on[t - 1]) c += mg.start_cost;
  }
  return c;
}

/// Exact master for the microgrid MILP: every on/off pattern is enumerated
/// and the remaining problem in (p, p^g_k) is an LP. The piece indicators are
/// implied because marginal costs increase.
inline MasterSolution solve_microgrid_master(const FeasibleRegion& region, const MicrogridSpec& mg, double tol = 1e-6) {
  const std::size_t T = region.horizon();
  const std::size_t K = mg.n_breakpoints;
  if (T != mg.horizon) throw std::invalid_argument("solve_microgrid_master: horizon mismatch");
  if (T > 16) throw std::invalid_argument("solve_microgrid_master: horizon above 16 not supported by enumeration");
  for (std::size_t k = 1; k < K; ++k)
    if (!(mg.marginal_cost[k] > mg.marginal_cost[k - 1]))
      throw std::invalid_argument("solve_microgrid_master: marginal costs must increase");

  MasterSolution best;
  const std::uint64_t n_patterns = std::uint64_t{1} << T;
  for (std::uint64_t idx = 0; idx < n_patterns; ++idx) {
    const std::uint64_t mask = n_patterns - 1 - idx;  // all-on first gives an early incumbent
    std::vector<int> on(T);
    bool possible = true;
    for (std::size_t t = 0; t < T; ++t) {
      on[t] = static_cast<int>(mask >> t & 1U);
      if (!on[t] && region.box.col_lower[t] > mg.pv[t] + tol) possible = false;
    }
    if (!possible) continue;
    const double fixed = microgrid_fixed_cost(mg, on);
    if (best.feasible && fixed >= best.objective) continue;

    const std::size_t nv = T + K * T;
    auto pg = [&](std::size_t k, std::size_t t) { return T + t * K + k; };
    LinearProgram lp = LinearProgram::with_vars(nv);
    for (std::size_t t = 0; t < T; ++t) {
      lp.var_lower[t] = region.box.col_lower[t];
      lp.var_upper[t] = region.box.col_upper[t];
      for (std::size_t k = 0; k < K; ++k) {
        lp.var_upper[pg(k, t)] = on[t] ? mg.theta[k + 1] - mg.theta[k] : 0.0;
        lp.objective[pg(k, t)] = mg.marginal_cost[k];
      }
    }
    Vector row(nv, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      if (on[t] && mg.p_min > 0.0) {
        std::fill(row.begin(), row.end(), 0.0);
        for (std::size_t k = 0; k < K; ++k) row[pg(k, t)] = 1.0;
        lp.add_row(row, RowKind::ge, mg.p_min);
      }
      std::fill(row.begin(), row.end(), 0.0);
      row[t] = 1.0;
      for (std::size_t k = 0; k < K; ++k) row[pg(k, t)] = -1.0;
      lp.add_row(row, RowKind::le, mg.pv[t]);
    }
    region.append_rows(lp, 0);
    const LpOutcome out = solve_lp(lp);
    ++best.lps_solved;
    if (out.status != LpStatus::optimal) continue;
    const double total = fixed + out.objective;
    if (best.feasible && total >= best.objective) continue;

    best.feasible = true;
    best.objective = total;
    best.p.assign(out.primal.begin(), out.primal.begin() + static_cast<std::ptrdiff_t>(T));
    best.commitment = on;
    best.generation.assign(T, 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t k = 0; k < K; ++k) {
        best.generation[t] += out.primal[pg(k, t)];
        // Lower pieces fill first; a gap here would mean the LP relaxation is not exact.
        if (k + 1 < K && out.primal[pg(k + 1, t)] > tol &&
            out.primal[pg(k, t)] < mg.theta[k + 1] - mg.theta[k] - tol)
          throw std::logic_error("solve_microgrid_master: generation pieces filled out of order");
      }
    }
  }
  return best;
}

}  // namespace disagg
