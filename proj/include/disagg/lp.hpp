#pragma once

// Dense two-phase primal simplex (Bland's rule) with dual values and
// infeasibility / unboundedness certificates. Sized for the small LPs of the
// master problems and the per-agent dual LPs (a few hundred columns at most).

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "disagg/matrix.hpp"

namespace disagg {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class RowKind { le, eq, ge };
enum class Sense { minimize, maximize };
enum class LpStatus { optimal, infeasible, unbounded };

inline const char* to_string(LpStatus s) {
  switch (s) {
    case LpStatus::optimal: return "optimal";
    case LpStatus::infeasible: return "infeasible";
    case LpStatus::unbounded: return "unbounded";
  }
  return "?";
}

struct LinearProgram {
  Vector objective;             // c, length d
  Matrix constraint_matrix;     // A, m x d
  Vector rhs;                   // b, length m
  std::vector<RowKind> row_kind;
  Vector var_lower;             // may be -inf
  Vector var_upper;             // may be +inf
  Sense sense = Sense::minimize;

  std::size_t n_vars() const { return objective.size(); }
  std::size_t n_rows() const { return rhs.size(); }

  /// Empty LP over `d` variables with the given bounds.
  static LinearProgram with_vars(std::size_t d, double lo = 0.0, double hi = kInf) {
    LinearProgram lp;
    lp.objective.assign(d, 0.0);
    lp.constraint_matrix = Matrix(0, d);
    lp.var_lower.assign(d, lo);
    lp.var_upper.assign(d, hi);
    return lp;
  }

  void add_row(std::span<const double> coeffs, RowKind kind, double b) {
    if (coeffs.size() != n_vars()) throw std::invalid_argument("add_row: wrong row length");
    Matrix grown(constraint_matrix.rows() + 1, n_vars());
    for (std::size_t i = 0; i < constraint_matrix.rows(); ++i)
      std::copy(constraint_matrix.row(i).begin(), constraint_matrix.row(i).end(), grown.row(i).begin());
    std::copy(coeffs.begin(), coeffs.end(), grown.row(grown.rows() - 1).begin());
    constraint_matrix = std::move(grown);
    rhs.push_back(b);
    row_kind.push_back(kind);
  }
};

/// On `optimal`: primal, row_duals and reduced_costs satisfy
///   c = A^T y + r  and  c^T x = b^T y + r^T x,
/// with r_j != 0 only where x_j sits at a bound.
/// On `infeasible`: certificate is a row multiplier y (y_i <= 0 on <= rows,
/// y_i >= 0 on >= rows) with  max_{l<=x<=u} (A^T y)^T x < b^T y  (see farkas_gap).
/// On `unbounded`: primal is feasible and certificate is a ray d along which
/// the objective improves without bound (see is_improving_ray).
struct LpOutcome {
  LpStatus status = LpStatus::infeasible;
  double objective = 0.0;
  Vector primal;
  Vector row_duals;
  Vector reduced_costs;
  Vector certificate;
  std::size_t pivots = 0;
};

namespace detail {

enum class VarMap { shifted, flipped, split };

struct StandardForm {
  // Tableau rows: constraints; columns: structural, slack, artificial, rhs.
  Matrix tab;
  std::size_t n_struct = 0;
  std::size_t n_slack = 0;
  std::size_t n_rows = 0;
  std::vector<std::size_t> basis;
  std::vector<double> row_sign;          // sigma_i per tableau row
  std::vector<VarMap> map;               // per original variable
  std::vector<std::size_t> first_col;    // first structural column of each original variable
  std::vector<double> shift;             // bound used by shifted/flipped
  Vector cost;                           // structural costs (minimisation form)

  std::size_t art_begin() const { return n_struct + n_slack; }
  std::size_t rhs_col() const { return n_struct + n_slack + n_rows; }
};

inline void pivot(Matrix& tab, Vector& rc, double& rc_rhs, std::size_t r, std::size_t c) {
  const std::size_t ncols = tab.cols();
  const double piv = tab(r, c);
  for (std::size_t j = 0; j < ncols; ++j) tab(r, j) /= piv;
  for (std::size_t i = 0; i < tab.rows(); ++i) {
    if (i == r) continue;
    const double f = tab(i, c);
    if (f == 0.0) continue;
    for (std::size_t j = 0; j < ncols; ++j) tab(i, j) -= f * tab(r, j);
    tab(i, c) = 0.0;
  }
  const double f = rc[c];
  if (f != 0.0) {
    for (std::size_t j = 0; j + 1 < ncols; ++j) rc[j] -= f * tab(r, j);
    rc_rhs -= f * tab(r, ncols - 1);
    rc[c] = 0.0;
  }
}

/// Runs Bland-rule simplex on the tableau with reduced-cost row `rc`.
/// Columns with allowed[j]==false never enter. Returns the entering column
/// of an unbounded direction, or npos when optimal.
inline std::size_t run_simplex(Matrix& tab, std::vector<std::size_t>& basis, Vector& rc, double& rc_rhs,
                               const std::vector<bool>& allowed, double tol, std::size_t& pivots) {
  constexpr std::size_t npos = static_cast<std::size_t>(-1);
  const std::size_t m = tab.rows();
  const std::size_t rhs = tab.cols() - 1;
  const std::size_t max_pivots = 50000 + 50 * tab.cols() * (m + 1);
  for (;;) {
    std::size_t enter = npos;
    for (std::size_t j = 0; j < rhs; ++j)
      if (allowed[j] && rc[j] < -tol) {
        enter = j;
        break;
      }
    if (enter == npos) return npos;
    std::size_t leave = npos;
    double best = kInf;
    for (std::size_t i = 0; i < m; ++i) {
      const double a = tab(i, enter);
      if (a <= tol) continue;
      const double ratio = tab(i, rhs) / a;
      if (ratio < best - 1e-12 * std::max(1.0, std::abs(best)) ||
          (std::abs(ratio - best) <= 1e-12 * std::max(1.0, std::abs(best)) && basis[i] < basis[leave])) {
        best = ratio;
        leave = i;
      }
    }
    if (leave == npos) return enter;
    pivot(tab, rc, rc_rhs, leave, enter);
    basis[leave] = enter;
    if (++pivots > max_pivots) throw std::runtime_error("solve_lp: pivot limit exceeded");
  }
}

}  // namespace detail

/// Slack of the Farkas certificate: b^T y - max_{l<=x<=u} (A^T y)^T x.
/// Positive means `y` proves the LP infeasible; -inf when the box term is unbounded.
inline double farkas_gap(const LinearProgram& lp, std::span<const double> y, double tol = 1e-9) {
  const std::size_t m = lp.n_rows(), d = lp.n_vars();
  for (std::size_t i = 0; i < m; ++i) {
    if (lp.row_kind[i] == RowKind::le && y[i] > tol) return -kInf;
    if (lp.row_kind[i] == RowKind::ge && y[i] < -tol) return -kInf;
  }
  double box = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double g = 0.0;
    for (std::size_t i = 0; i < m; ++i) g += lp.constraint_matrix(i, j) * y[i];
    if (std::abs(g) <= tol) continue;
    const double bound = g > 0 ? lp.var_upper[j] : lp.var_lower[j];
    if (!std::isfinite(bound)) return -kInf;
    box += g * bound;
  }
  return dot(lp.rhs, y) - box;
}

/// True when `ray` keeps every row and bound direction feasible and strictly
/// improves the objective.
inline bool is_improving_ray(const LinearProgram& lp, std::span<const double> ray, double tol = 1e-9) {
  const std::size_t m = lp.n_rows(), d = lp.n_vars();
  for (std::size_t j = 0; j < d; ++j) {
    if (std::isfinite(lp.var_lower[j]) && ray[j] < -tol) return false;
    if (std::isfinite(lp.var_upper[j]) && ray[j] > tol) return false;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double ad = dot(lp.constraint_matrix.row(i), ray);
    if (lp.row_kind[i] == RowKind::le && ad > tol) return false;
    if (lp.row_kind[i] == RowKind::ge && ad < -tol) return false;
    if (lp.row_kind[i] == RowKind::eq && std::abs(ad) > tol) return false;
  }
  const double slope = dot(lp.objective, ray);
  return lp.sense == Sense::minimize ? slope < -tol : slope > tol;
}

inline LpOutcome solve_lp(const LinearProgram& lp, double tol = 1e-9) {
  const std::size_t d = lp.n_vars();
  const std::size_t m = lp.n_rows();
  const Matrix& A = lp.constraint_matrix;
  if (A.rows() != m || (m > 0 && A.cols() != d) || lp.row_kind.size() != m || lp.var_lower.size() != d ||
      lp.var_upper.size() != d)
    throw std::invalid_argument("solve_lp: dimension mismatch");
  auto bad = [](double v) { return std::isnan(v); };
  for (double v : lp.objective)
    if (bad(v) || std::isinf(v)) throw std::invalid_argument("solve_lp: non-finite objective");
  for (double v : lp.rhs)
    if (bad(v) || std::isinf(v)) throw std::invalid_argument("solve_lp: non-finite rhs");
  for (double v : A.data())
    if (bad(v) || std::isinf(v)) throw std::invalid_argument("solve_lp: non-finite matrix entry");
  for (std::size_t j = 0; j < d; ++j) {
    if (bad(lp.var_lower[j]) || bad(lp.var_upper[j])) throw std::invalid_argument("solve_lp: NaN bound");
    if (lp.var_lower[j] > lp.var_upper[j]) throw std::invalid_argument("solve_lp: lower bound above upper bound");
  }

  const double sgn_obj = lp.sense == Sense::minimize ? 1.0 : -1.0;
  detail::StandardForm sf;
  sf.map.resize(d);
  sf.first_col.resize(d);
  sf.shift.assign(d, 0.0);
  std::vector<std::size_t> bound_rows;  // original vars needing an explicit upper-bound row
  for (std::size_t j = 0; j < d; ++j) {
    const bool lo = std::isfinite(lp.var_lower[j]), hi = std::isfinite(lp.var_upper[j]);
    sf.first_col[j] = sf.n_struct;
    if (lo) {
      sf.map[j] = detail::VarMap::shifted;
      sf.shift[j] = lp.var_lower[j];
      sf.n_struct += 1;
      if (hi) bound_rows.push_back(j);
    } else if (hi) {
      sf.map[j] = detail::VarMap::flipped;
      sf.shift[j] = lp.var_upper[j];
      sf.n_struct += 1;
    } else {
      sf.map[j] = detail::VarMap::split;
      sf.n_struct += 2;
    }
  }
  sf.n_rows = m + bound_rows.size();
  for (std::size_t i = 0; i < m; ++i)
    if (lp.row_kind[i] != RowKind::eq) ++sf.n_slack;
  sf.n_slack += bound_rows.size();
  sf.tab = Matrix(sf.n_rows, sf.n_struct + sf.n_slack + sf.n_rows + 1);
  sf.row_sign.assign(sf.n_rows, 1.0);
  sf.cost.assign(sf.n_struct + sf.n_slack + sf.n_rows, 0.0);

  for (std::size_t j = 0; j < d; ++j) {
    const double c = sgn_obj * lp.objective[j];
    const std::size_t col = sf.first_col[j];
    switch (sf.map[j]) {
      case detail::VarMap::shifted: sf.cost[col] = c; break;
      case detail::VarMap::flipped: sf.cost[col] = -c; break;
      case detail::VarMap::split:
        sf.cost[col] = c;
        sf.cost[col + 1] = -c;
        break;
    }
  }

  const std::size_t rhs_col = sf.rhs_col();
  std::size_t slack = sf.n_struct;
  for (std::size_t i = 0; i < m; ++i) {
    double b = lp.rhs[i];
    for (std::size_t j = 0; j < d; ++j) {
      const double a = A(i, j);
      if (a == 0.0) continue;
      const std::size_t col = sf.first_col[j];
      switch (sf.map[j]) {
        case detail::VarMap::shifted:
          sf.tab(i, col) = a;
          b -= a * sf.shift[j];
          break;
        case detail::VarMap::flipped:
          sf.tab(i, col) = -a;
          b -= a * sf.shift[j];
          break;
        case detail::VarMap::split:
          sf.tab(i, col) = a;
          sf.tab(i, col + 1) = -a;
          break;
      }
    }
    if (lp.row_kind[i] == RowKind::le) sf.tab(i, slack++) = 1.0;
    else if (lp.row_kind[i] == RowKind::ge) sf.tab(i, slack++) = -1.0;
    sf.tab(i, rhs_col) = b;
  }
  for (std::size_t k = 0; k < bound_rows.size(); ++k) {
    const std::size_t j = bound_rows[k], r = m + k;
    sf.tab(r, sf.first_col[j]) = 1.0;
    sf.tab(r, slack++) = 1.0;
    sf.tab(r, rhs_col) = lp.var_upper[j] - lp.var_lower[j];
  }
  for (std::size_t r = 0; r < sf.n_rows; ++r) {
    if (sf.tab(r, rhs_col) < 0.0) {
      sf.row_sign[r] = -1.0;
      for (std::size_t j = 0; j < rhs_col + 1; ++j) sf.tab(r, j) = -sf.tab(r, j);
    }
    sf.tab(r, sf.art_begin() + r) = 1.0;
  }
  sf.basis.resize(sf.n_rows);
  for (std::size_t r = 0; r < sf.n_rows; ++r) sf.basis[r] = sf.art_begin() + r;

  const std::size_t ncols = rhs_col;
  LpOutcome out;
  Vector rc(ncols, 0.0);
  double rc_rhs = 0.0;

  // Phase 1: minimise the sum of artificials.
  for (std::size_t j = 0; j < ncols; ++j) {
    double s = j >= sf.art_begin() ? 1.0 : 0.0;
    for (std::size_t r = 0; r < sf.n_rows; ++r) s -= sf.tab(r, j);
    rc[j] = s;
  }
  for (std::size_t r = 0; r < sf.n_rows; ++r) rc_rhs -= sf.tab(r, rhs_col);
  for (std::size_t r = 0; r < sf.n_rows; ++r) rc[sf.art_begin() + r] = 0.0;
  std::vector<bool> allowed(ncols, true);
  detail::run_simplex(sf.tab, sf.basis, rc, rc_rhs, allowed, tol, out.pivots);

  double bnorm = 1.0;
  for (std::size_t r = 0; r < sf.n_rows; ++r) bnorm = std::max(bnorm, std::abs(sf.tab(r, rhs_col)));
  for (double v : lp.rhs) bnorm = std::max(bnorm, std::abs(v));
  const double infeas = -rc_rhs;
  if (infeas > tol * bnorm * 10.0) {
    out.status = LpStatus::infeasible;
    // Phase-1 duals: reduced cost of artificial r is 1 - ytilde_r.
    out.certificate.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) out.certificate[i] = sf.row_sign[i] * (1.0 - rc[sf.art_begin() + i]);
    return out;
  }

  // Drive artificials out of the basis where a structural/slack pivot exists.
  for (std::size_t r = 0; r < sf.n_rows; ++r) {
    if (sf.basis[r] < sf.art_begin()) continue;
    std::size_t best = ncols;
    double mag = 1e-9;
    for (std::size_t j = 0; j < sf.art_begin(); ++j)
      if (std::abs(sf.tab(r, j)) > mag) {
        mag = std::abs(sf.tab(r, j));
        best = j;
      }
    if (best == ncols) continue;  // redundant row: artificial stays basic at zero
    Vector dummy(ncols, 0.0);
    double dummy_rhs = 0.0;
    detail::pivot(sf.tab, dummy, dummy_rhs, r, best);
    sf.basis[r] = best;
  }

  // Phase 2.
  for (std::size_t j = 0; j < ncols; ++j) rc[j] = sf.cost[j];
  rc_rhs = 0.0;
  for (std::size_t r = 0; r < sf.n_rows; ++r) {
    const double cb = sf.cost[sf.basis[r]];
    if (cb == 0.0) continue;
    for (std::size_t j = 0; j < ncols; ++j) rc[j] -= cb * sf.tab(r, j);
    rc_rhs -= cb * sf.tab(r, rhs_col);
  }
  for (std::size_t j = sf.art_begin(); j < ncols; ++j) allowed[j] = false;
  const std::size_t ray_col = detail::run_simplex(sf.tab, sf.basis, rc, rc_rhs, allowed, tol, out.pivots);

  auto to_original = [&](const Vector& stdv, bool as_direction) {
    Vector x(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      const std::size_t col = sf.first_col[j];
      const double base = as_direction ? 0.0 : sf.shift[j];
      switch (sf.map[j]) {
        case detail::VarMap::shifted: x[j] = base + stdv[col]; break;
        case detail::VarMap::flipped: x[j] = base - stdv[col]; break;
        case detail::VarMap::split: x[j] = stdv[col] - stdv[col + 1]; break;
      }
    }
    return x;
  };

  Vector stdx(ncols, 0.0);
  for (std::size_t r = 0; r < sf.n_rows; ++r) stdx[sf.basis[r]] = std::max(0.0, sf.tab(r, rhs_col));
  out.primal = to_original(stdx, false);
  out.objective = dot(lp.objective, out.primal);

  if (ray_col != static_cast<std::size_t>(-1)) {
    out.status = LpStatus::unbounded;
    Vector dir(ncols, 0.0);
    dir[ray_col] = 1.0;
    for (std::size_t r = 0; r < sf.n_rows; ++r) dir[sf.basis[r]] -= sf.tab(r, ray_col);
    out.certificate = to_original(dir, true);
    return out;
  }

  out.status = LpStatus::optimal;
  // Phase-2 duals (minimisation form): reduced cost of artificial r is -ytilde_r.
  out.row_duals.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) out.row_duals[i] = -sgn_obj * sf.row_sign[i] * rc[sf.art_begin() + i];
  out.reduced_costs = lp.objective;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out.reduced_costs[j] -= A(i, j) * out.row_duals[i];
  return out;
}

}  // namespace disagg
