#pragma once

// Agents with general polyhedral sets X_n = { x : A_n x <= b_n }. Cuts come
// from the agents' support values M_n = max_{X_n} nu^T x, each computed
// locally as the dual LP min b_n^T lambda_n s.t. A_n^T lambda_n = nu, lambda_n >= 0.

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "disagg/lp.hpp"
#include "disagg/master.hpp"
#include "disagg/projections.hpp"
#include "disagg/protocol.hpp"

namespace disagg {

struct PolyAgent {
  Matrix constraint_matrix;  // A_n, k_n x T
  Vector rhs;                // b_n
  Vector interior;           // a feasible point, set by make_poly_agent

  std::size_t horizon() const { return constraint_matrix.cols(); }

  std::vector<Halfspace> halfspaces() const {
    std::vector<Halfspace> hs;
    for (std::size_t i = 0; i < constraint_matrix.rows(); ++i)
      hs.push_back({constraint_matrix.row_vector(i), rhs[i], HalfspaceKind::le});
    return hs;
  }
};

/// Validates nonemptiness and boundedness by LP and caches a feasible point.
inline PolyAgent make_poly_agent(Matrix a, Vector b) {
  if (a.rows() != b.size() || a.cols() == 0) throw std::invalid_argument("make_poly_agent: dimension mismatch");
  PolyAgent ag{std::move(a), std::move(b), {}};
  const std::size_t T = ag.horizon();
  LinearProgram lp = LinearProgram::with_vars(T, -kInf, kInf);
  for (std::size_t i = 0; i < ag.rhs.size(); ++i) lp.add_row(ag.constraint_matrix.row(i), RowKind::le, ag.rhs[i]);
  const LpOutcome feas = solve_lp(lp);
  if (feas.status == LpStatus::infeasible) throw std::invalid_argument("make_poly_agent: empty polyhedron");
  ag.interior = feas.primal;
  for (std::size_t t = 0; t < T; ++t)
    for (double dir : {1.0, -1.0}) {
      lp.objective.assign(T, 0.0);
      lp.objective[t] = dir;
      if (solve_lp(lp).status == LpStatus::unbounded) throw std::invalid_argument("make_poly_agent: unbounded polyhedron");
    }
  return ag;
}

/// Transport block as rows x <= u, -x <= -l, 1^T x <= E, -1^T x <= -E.
inline PolyAgent poly_agent_from_block(const AgentBlock& blk) {
  const std::size_t T = blk.lower.size();
  Matrix a(2 * T + 2, T);
  Vector b(2 * T + 2);
  for (std::size_t t = 0; t < T; ++t) {
    a(t, t) = 1.0;
    b[t] = blk.upper[t];
    a(T + t, t) = -1.0;
    b[T + t] = -blk.lower[t];
    a(2 * T, t) = 1.0;
    a(2 * T + 1, t) = -1.0;
  }
  b[2 * T] = blk.demand;
  b[2 * T + 1] = -blk.demand;
  return make_poly_agent(std::move(a), std::move(b));
}

inline std::vector<PolyAgent> poly_agents_from_transport(const TransportInstance& inst) {
  std::vector<PolyAgent> out;
  for (std::size_t n = 0; n < inst.n_agents; ++n) out.push_back(poly_agent_from_block(agent_block(inst, n)));
  return out;
}

/// Dykstra over the rows of A_n, then snapped to the exact projection on the
/// identified active set; exact active-set solves cover the cases where
/// Dykstra's active set is wrong.
inline Vector project_poly_agent(std::span<const double> y, const PolyAgent& ag, double tol = 1e-10) {
  const auto hs = ag.halfspaces();
  bool inside = true;
  for (const auto& h : hs)
    if (h.violation(y) > 0.0) {
      inside = false;
      break;
    }
  if (inside) return {y.begin(), y.end()};
  const DykstraResult dyk = dykstra_project(y, hs, 1e-13);
  if (auto qp = detail::polish_active_set(y, hs, dyk.point, tol)) return qp->point;
  QpResult exact = project_polyhedron_dual(y, hs, 1e-13);
  if (!exact.converged) exact = project_polyhedron(y, hs, ag.interior, 1e-13);
  if (!exact.converged) throw std::runtime_error("project_poly_agent: projection did not converge");
  return exact.point;
}

inline Vector project_local(const PolyAgent& ag, std::span<const double> y) { return project_poly_agent(y, ag); }
inline Vector initial_iterate(const PolyAgent& ag) { return Vector(ag.horizon(), 0.0); }

struct SupportValue {
  double value = 0.0;  // M_n = min b^T lambda = max_{X_n} nu^T x
  Vector lambda;
};

/// Agent-local dual LP. Empty when nu is outside the row cone of A_n.
inline std::optional<SupportValue> support_value(const PolyAgent& ag, std::span<const double> nu) {
  const std::size_t k = ag.rhs.size(), T = ag.horizon();
  LinearProgram lp = LinearProgram::with_vars(k);
  lp.objective = ag.rhs;
  Vector row(k);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < k; ++i) row[i] = ag.constraint_matrix(i, t);
    lp.add_row(row, RowKind::eq, nu[t]);
  }
  const LpOutcome out = solve_lp(lp);
  if (out.status != LpStatus::optimal) return std::nullopt;
  return SupportValue{out.objective, out.primal};
}

struct LambdaCertificate {
  LambdaCut cut;               // normalised
  Vector lambda0;              // unnormalised, = -mu_n
  std::vector<Vector> lambdas; // per agent
};

/// max_n || lambda0 + A_n^T lambda_n ||_inf: zero on the cone Lambda.
inline double cone_residual(const LambdaCertificate& c, const std::vector<PolyAgent>& agents) {
  double worst = 0.0;
  for (std::size_t n = 0; n < agents.size(); ++n)
    for (std::size_t t = 0; t < c.lambda0.size(); ++t) {
      double r = c.lambda0[t];
      for (std::size_t i = 0; i < c.lambdas[n].size(); ++i) r += agents[n].constraint_matrix(i, t) * c.lambdas[n][i];
      worst = std::max(worst, std::abs(r));
    }
  return worst;
}

inline LambdaCut normalise(const Vector& lambda0, double beta) {
  const double s = norm_inf(lambda0);
  if (!(s > 0.0)) throw std::invalid_argument("normalise: zero lambda0");
  LambdaCut c;
  c.lambda0.resize(lambda0.size());
  for (std::size_t t = 0; t < lambda0.size(); ++t) c.lambda0[t] = lambda0[t] / s;
  c.beta = beta / s;
  return c;
}

/// Cut from the separating direction mu = y - x (rows are all equal to nu).
inline LambdaCertificate lambda_from_orbit(const Matrix& mu, const std::vector<PolyAgent>& agents,
                                           std::span<const double> p, double tol = 1e-9) {
  if (mu.rows() != agents.size() || mu.cols() != p.size()) throw std::invalid_argument("lambda_from_orbit: dimension mismatch");
  LambdaCertificate c;
  c.lambda0.resize(mu.cols());
  for (std::size_t t = 0; t < mu.cols(); ++t) c.lambda0[t] = -mu(0, t);
  for (std::size_t n = 1; n < mu.rows(); ++n)
    for (std::size_t t = 0; t < mu.cols(); ++t)
      if (std::abs(mu(n, t) - mu(0, t)) > tol * std::max(1.0, std::abs(mu(0, t))))
        throw std::invalid_argument("lambda_from_orbit: mu rows differ, lambda0 is not determined");
  double beta = 0.0;
  for (std::size_t n = 0; n < agents.size(); ++n) {
    const auto sv = support_value(agents[n], mu.row(0));
    if (!sv) throw std::runtime_error("lambda_from_orbit: dual LP infeasible for agent " + std::to_string(n));
    beta += sv->value;
    c.lambdas.push_back(sv->lambda);
  }
  c.cut = normalise(c.lambda0, beta);
  return c;
}

/// Polyhedral cut stage: agents solve their dual LPs at nu / ||nu||_inf,
/// M = SMC sum rounded up, accepted when -nu . p + M < 0 at that scale.
/// The violation shrinks with |nu|^2 at raw scale and would drop below the
/// fixed-point resolution near the end of a run.
inline auto lambda_cut_stage(Network<PolyAgent>& net, std::span<const double> p, OuterRecord& rec,
                             std::optional<LambdaCut>& cut) {
  return [&net, p, &rec, &cut](std::span<const double> nu, double) {
    const double scale = norm_inf(nu);
    if (!(scale > 0.0)) return false;
    Vector dir(nu.size());
    for (std::size_t t = 0; t < nu.size(); ++t) dir[t] = nu[t] / scale;
    std::vector<FixedVector> secrets(net.size());
    for (std::size_t n = 0; n < net.size(); ++n) {
      const auto sv = support_value(net.agents()[n].block, dir);
      if (!sv) return false;  // nu not yet in the row cone: refine
      secrets[n] = {FixedPoint::encode_ceil(sv->value)};
    }
    const FixedPoint m = net.smc_round(secrets).front();
    rec.m_values.push_back(m.raw);
    const double value = -dot(dir, p) + m.decode();
    if (value < 0.0) {
      Vector lambda0(dir.size());
      for (std::size_t t = 0; t < dir.size(); ++t) lambda0[t] = -dir[t];
      cut = normalise(lambda0, m.decode());
      return true;
    }
    return false;
  };
}

/// Cutting-plane loop with polyhedral agents; `region` carries P.
inline RunReport optimal_disaggregation_poly(const std::vector<PolyAgent>& agents, FeasibleRegion region,
                                             const MasterFn& master, const ProtocolOptions& opt = {},
                                             Bus* bus_out = nullptr) {
  RunReport rep;
  Network<PolyAgent> net(agents, region.horizon(), opt);
  const std::size_t max_outer = opt.max_outer ? opt.max_outer : 500;
  detail::outer_loop(region, master, max_outer, rep, [&](const Allocation& p, OuterRecord& rec) {
    std::optional<LambdaCut> cut;
    const NiApmOutcome r = run_ni_apm(net, p, opt, rec, lambda_cut_stage(net, p, rec, cut));
    rep.total_projections += r.sweeps;
    rep.halvings += r.halvings;
    rep.eps_history.push_back(r.eps_final);
    rep.gap = r.gap;
    if (r.disaggregated) return true;
    region.add_halfspace(cut->as_halfspace());
    rep.lambda_cuts.push_back(*cut);
    return false;
  });
  rep.agent_profiles = net.profiles();
  if (bus_out) *bus_out = net.bus();
  return rep;
}

}  // namespace disagg
