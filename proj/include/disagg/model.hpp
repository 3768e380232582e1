#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "disagg/matrix.hpp"
#include "disagg/random.hpp"

namespace disagg {

using Allocation = Vector;      ///< aggregate profile p, length T
using ProfileMatrix = Matrix;   ///< per-agent profiles, N x T

/// Generator and PV data of the microgrid master problem. Piece k covers
/// [theta[k-1], theta[k]) at marginal cost marginal_cost[k-1].
struct MicrogridSpec {
  std::size_t horizon = 0;
  std::size_t n_breakpoints = 0;  // K
  Vector theta;                   // K+1 breakpoints, theta[0]=0, theta[K]=p_max
  Vector marginal_cost;           // K
  double alpha1 = 0.0;            // fixed cost while on
  double start_cost = 0.0;
  double p_min = 0.0;
  double p_max = 0.0;
  Vector pv;                      // T
  double scale = 1.0;             // kappa_N

  friend bool operator==(const MicrogridSpec&, const MicrogridSpec&) = default;
};

/// Agents with X_n = { x : sum_t x_t = demand[n], lower[n,t] <= x_t <= upper[n,t] }.
struct TransportInstance {
  std::size_t n_agents = 0;
  std::size_t horizon = 0;
  Matrix lower;
  Matrix upper;
  Vector demand;
  std::optional<MicrogridSpec> microgrid;

  friend bool operator==(const TransportInstance&, const TransportInstance&) = default;
};

/// Necessary aggregate conditions on p: sum p = sum_target, col_lower <= p <= col_upper.
struct AggregateBox {
  double sum_target = 0.0;
  Vector col_lower;
  Vector col_upper;
};

/// Separable cost sum_t lin * p_t + quad * p_t^2.
struct QuadraticCost {
  double lin = 0.0;
  double quad = 1.0;

  double operator()(std::span<const double> p) const {
    double f = 0.0;
    for (double v : p) f += lin * v + quad * v * v;
    return f;
  }
};

struct Violation {
  std::string what;
  std::optional<std::size_t> agent;
  std::optional<std::size_t> period;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const noexcept { return violations.empty(); }
  std::string to_string() const {
    std::ostringstream os;
    for (const auto& v : violations) {
      os << v.what;
      if (v.agent) os << " n=" << *v.agent;
      if (v.period) os << " t=" << *v.period;
      os << '\n';
    }
    return os.str();
  }
};

/// Collects every broken invariant instead of stopping at the first one.
inline ValidationReport validate(const TransportInstance& inst, double tol = 1e-12) {
  ValidationReport rep;
  auto add = [&](std::string what, std::optional<std::size_t> n = {}, std::optional<std::size_t> t = {}) {
    rep.violations.push_back({std::move(what), n, t});
  };
  if (inst.n_agents < 1) add("n_agents must be >= 1");
  if (inst.horizon < 2) add("horizon must be >= 2");
  if (inst.lower.rows() != inst.n_agents || inst.lower.cols() != inst.horizon ||
      inst.upper.rows() != inst.n_agents || inst.upper.cols() != inst.horizon ||
      inst.demand.size() != inst.n_agents) {
    add("dimension mismatch");
    return rep;
  }
  for (std::size_t n = 0; n < inst.n_agents; ++n) {
    double lo = 0.0, hi = 0.0;
    for (std::size_t t = 0; t < inst.horizon; ++t) {
      const double l = inst.lower(n, t), u = inst.upper(n, t);
      if (!std::isfinite(l) || !std::isfinite(u)) add("non-finite bound", n, t);
      if (l > u + tol) add("lower > upper", n, t);
      lo += l;
      hi += u;
    }
    const double e = inst.demand[n];
    if (!std::isfinite(e)) add("non-finite demand", n);
    else if (e < lo - tol) add("demand below sum of lower bounds", n);
    else if (e > hi + tol) add("demand above sum of upper bounds", n);
  }
  if (inst.microgrid) {
    const auto& mg = *inst.microgrid;
    if (mg.n_breakpoints < 1 || mg.theta.size() != mg.n_breakpoints + 1 || mg.marginal_cost.size() != mg.n_breakpoints)
      add("microgrid: breakpoint arrays inconsistent");
    else {
      if (mg.theta.front() != 0.0) add("microgrid: theta[0] must be 0");
      if (std::abs(mg.theta.back() - mg.p_max) > tol * std::max(1.0, mg.p_max)) add("microgrid: theta[K] must equal p_max");
      for (std::size_t k = 1; k < mg.theta.size(); ++k)
        if (!(mg.theta[k] > mg.theta[k - 1])) add("microgrid: theta not strictly increasing");
    }
    if (mg.pv.size() != inst.horizon || mg.horizon != inst.horizon) add("microgrid: horizon mismatch");
  }
  return rep;
}

inline AggregateBox aggregate_box(const TransportInstance& inst) {
  AggregateBox box;
  box.sum_target = sum(inst.demand);
  box.col_lower = inst.lower.column_sums();
  box.col_upper = inst.upper.column_sums();
  return box;
}

/// Relabels agents: agent n of the result is agent perm[n] of the input.
inline TransportInstance permute_agents(const TransportInstance& inst, const std::vector<std::size_t>& perm) {
  if (perm.size() != inst.n_agents) throw std::invalid_argument("permute_agents: permutation size mismatch");
  TransportInstance out = inst;
  std::vector<char> used(inst.n_agents, 0);
  for (std::size_t n = 0; n < inst.n_agents; ++n) {
    const std::size_t src = perm[n];
    if (src >= inst.n_agents) throw std::invalid_argument("permute_agents: index out of range");
    if (used[src]++) throw std::invalid_argument("permute_agents: repeated index");
    for (std::size_t t = 0; t < inst.horizon; ++t) {
      out.lower(n, t) = inst.lower(src, t);
      out.upper(n, t) = inst.upper(src, t);
    }
    out.demand[n] = inst.demand[src];
  }
  return out;
}

struct ToyProblem {
  TransportInstance instance;
  QuadraticCost cost;
};

/// Three agents, four periods, zero lower bounds, f(p) = sum 0.8 p_t + 0.1 p_t^2.
inline ToyProblem toy_instance() {
  ToyProblem toy;
  auto& inst = toy.instance;
  inst.n_agents = 3;
  inst.horizon = 4;
  inst.lower = Matrix(3, 4, 0.0);
  inst.upper = Matrix::from_rows({{0.8, 0.2, 0.7, 0.1}, {0.5, 0.1, 0.3, 0.6}, {0.1, 0.1, 0.7, 0.2}});
  inst.demand = {1.8, 0.4, 1.1};
  toy.cost = QuadraticCost{0.8, 0.1};
  return toy;
}

/// Random microgrid instance. Consumption: lower ~ U[0,10], upper = lower + U[0,5],
/// demand ~ U[sum lower, sum upper]. Generator and PV data are scaled by N/20.
/// Every draw comes from a named sub-stream of `seed`, keyed by agent and period.
inline TransportInstance microgrid_instance(std::size_t n_agents, std::size_t horizon, std::uint64_t seed) {
  if (n_agents < 1 || horizon < 2) throw std::invalid_argument("microgrid_instance: need n_agents >= 1 and horizon >= 2");
  const CounterRng root(seed);
  TransportInstance inst;
  inst.n_agents = n_agents;
  inst.horizon = horizon;
  inst.lower = Matrix(n_agents, horizon);
  inst.upper = Matrix(n_agents, horizon);
  inst.demand.assign(n_agents, 0.0);
  const CounterRng consumption = root.split("consumption");
  for (std::size_t n = 0; n < n_agents; ++n) {
    CounterRng rng = consumption.split(n);
    double lo = 0.0, hi = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      const double l = rng.uniform(0.0, 10.0);
      const double u = l + rng.uniform(0.0, 5.0);
      inst.lower(n, t) = l;
      inst.upper(n, t) = u;
      lo += l;
      hi += u;
    }
    inst.demand[n] = rng.uniform(lo, hi);
  }

  MicrogridSpec mg;
  const double kappa = static_cast<double>(n_agents) / 20.0;
  mg.horizon = horizon;
  mg.n_breakpoints = 3;
  mg.theta = {0.0, 70.0 * kappa, 100.0 * kappa, 300.0 * kappa};
  mg.marginal_cost = {0.2, 0.4, 0.5};
  mg.alpha1 = 4.0;
  mg.start_cost = 15.0;
  mg.p_min = 50.0 * kappa;
  mg.p_max = 300.0 * kappa;
  mg.scale = kappa;
  mg.pv.assign(horizon, 0.0);
  const CounterRng pv = root.split("pv");
  for (std::size_t t = 0; t < horizon; ++t) {
    const double hour = static_cast<double>(t + 1);  // periods are 1-based in the PV profile
    if (hour >= 6.0 && hour <= 20.0) {
      CounterRng rng = pv.split(t);
      const double shape = 50.0 * (1.0 - std::cos((hour - 6.0) * 2.0 * std::numbers::pi / 16.0));
      mg.pv[t] = (shape + rng.uniform(0.0, 10.0)) * kappa;
    }
  }
  inst.microgrid = std::move(mg);
  return inst;
}

/// Property-test instance: lower ~ U[0,1], upper = lower + U[0,1],
/// demand ~ U[sum lower, sum upper], one sub-stream per agent.
inline TransportInstance random_instance(std::size_t n_agents, std::size_t horizon, std::uint64_t seed) {
  if (n_agents < 1 || horizon < 1) throw std::invalid_argument("random_instance: empty dimensions");
  const CounterRng root = CounterRng(seed).split("random_instance");
  TransportInstance inst;
  inst.n_agents = n_agents;
  inst.horizon = horizon;
  inst.lower = Matrix(n_agents, horizon);
  inst.upper = Matrix(n_agents, horizon);
  inst.demand.assign(n_agents, 0.0);
  for (std::size_t n = 0; n < n_agents; ++n) {
    CounterRng rng = root.split(n);
    double lo = 0.0, hi = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      inst.lower(n, t) = rng.uniform();
      inst.upper(n, t) = inst.lower(n, t) + rng.uniform();
      lo += inst.lower(n, t);
      hi += inst.upper(n, t);
    }
    inst.demand[n] = rng.uniform(lo, hi);
  }
  return inst;
}

// ---- JSON ------------------------------------------------------------------

namespace detail {
inline nlohmann::json matrix_to_json(const Matrix& m) {
  auto arr = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) arr.push_back(m.row_vector(i));
  return arr;
}
inline Matrix matrix_from_json(const nlohmann::json& j) {
  return Matrix::from_rows(j.get<std::vector<Vector>>());
}
}  // namespace detail

inline void to_json(nlohmann::json& j, const MicrogridSpec& mg) {
  j = {{"horizon", mg.horizon},       {"n_breakpoints", mg.n_breakpoints}, {"theta", mg.theta},
       {"marginal_cost", mg.marginal_cost}, {"alpha1", mg.alpha1},         {"start_cost", mg.start_cost},
       {"p_min", mg.p_min},           {"p_max", mg.p_max},                 {"pv", mg.pv},
       {"scale", mg.scale}};
}

inline void from_json(const nlohmann::json& j, MicrogridSpec& mg) {
  j.at("horizon").get_to(mg.horizon);
  j.at("n_breakpoints").get_to(mg.n_breakpoints);
  j.at("theta").get_to(mg.theta);
  j.at("marginal_cost").get_to(mg.marginal_cost);
  j.at("alpha1").get_to(mg.alpha1);
  j.at("start_cost").get_to(mg.start_cost);
  j.at("p_min").get_to(mg.p_min);
  j.at("p_max").get_to(mg.p_max);
  j.at("pv").get_to(mg.pv);
  mg.scale = j.value("scale", 1.0);
}

inline void to_json(nlohmann::json& j, const TransportInstance& inst) {
  j = {{"n_agents", inst.n_agents},
       {"horizon", inst.horizon},
       {"lower", detail::matrix_to_json(inst.lower)},
       {"upper", detail::matrix_to_json(inst.upper)},
       {"demand", inst.demand}};
  if (inst.microgrid) j["microgrid"] = *inst.microgrid;
  else j["microgrid"] = nullptr;
}

inline void from_json(const nlohmann::json& j, TransportInstance& inst) {
  j.at("n_agents").get_to(inst.n_agents);
  j.at("horizon").get_to(inst.horizon);
  inst.lower = detail::matrix_from_json(j.at("lower"));
  inst.upper = detail::matrix_from_json(j.at("upper"));
  j.at("demand").get_to(inst.demand);
  if (j.contains("microgrid") && !j.at("microgrid").is_null()) inst.microgrid = j.at("microgrid").get<MicrogridSpec>();
  else inst.microgrid.reset();
}

}  // namespace disagg
