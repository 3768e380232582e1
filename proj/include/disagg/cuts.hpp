#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "disagg/apm.hpp"
#include "disagg/model.hpp"
#include "disagg/projections.hpp"
#include "disagg/random.hpp"

namespace disagg {

enum class CutProvenance { apm, oracle };

/// sum_{t in time_set} p_t <= rhs. Periods are 0-based.
struct HoffmanCut {
  std::vector<std::size_t> time_set;
  double rhs = 0.0;
  CutProvenance provenance = CutProvenance::apm;

  double lhs(std::span<const double> p) const {
    double s = 0.0;
    for (std::size_t t : time_set) s += p[t];
    return s;
  }
  /// Positive when p violates the cut.
  double violation(std::span<const double> p) const { return lhs(p) - rhs; }

  Halfspace as_halfspace(std::size_t horizon) const {
    Halfspace h;
    h.normal.assign(horizon, 0.0);
    for (std::size_t t : time_set) h.normal[t] = 1.0;
    h.offset = rhs;
    return h;
  }

  /// "p1 + p2 + p4 <= 1.9" with 1-based period labels.
  std::string to_string(int precision = 6) const {
    std::string s;
    for (std::size_t i = 0; i < time_set.size(); ++i) {
      if (i) s += " + ";
      s += "p" + std::to_string(time_set[i] + 1);
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, " <= %.*g", precision, rhs);
    return s + buf;
  }
};

inline void to_json(nlohmann::json& j, const HoffmanCut& c) { j = {{"time_set", c.time_set}, {"rhs", c.rhs}}; }
inline void from_json(const nlohmann::json& j, HoffmanCut& c) {
  j.at("time_set").get_to(c.time_set);
  j.at("rhs").get_to(c.rhs);
}

/// lambda0^T p + beta >= 0. Stored normalised so that ||lambda0||_inf = 1.
struct LambdaCut {
  Vector lambda0;
  double beta = 0.0;

  double value(std::span<const double> p) const { return dot(lambda0, p) + beta; }
  /// Positive when p violates the cut.
  double violation(std::span<const double> p) const { return -value(p); }

  /// The same cut as -lambda0^T p <= beta.
  Halfspace as_halfspace() const {
    Halfspace h;
    h.normal.resize(lambda0.size());
    for (std::size_t t = 0; t < lambda0.size(); ++t) h.normal[t] = -lambda0[t];
    h.offset = beta;
    return h;
  }

  /// "-0.25 p1 - 0.25 p2 + 1 p3 - 0.5 p4 >= 0.75", i.e. lambda0^T p >= -beta.
  std::string to_string(int precision = 4) const {
    std::string s;
    char buf[64];
    for (std::size_t t = 0; t < lambda0.size(); ++t) {
      const double c = lambda0[t];
      if (t == 0) std::snprintf(buf, sizeof buf, "%.*g p%zu", precision, c, t + 1);
      else std::snprintf(buf, sizeof buf, " %c %.*g p%zu", c < 0 ? '-' : '+', precision, std::abs(c), t + 1);
      s += buf;
    }
    std::snprintf(buf, sizeof buf, " >= %.*g", precision, -beta);
    return s + buf;
  }
};

inline void to_json(nlohmann::json& j, const LambdaCut& c) { j = {{"lambda0", c.lambda0}, {"beta", c.beta}}; }
inline void from_json(const nlohmann::json& j, LambdaCut& c) {
  j.at("lambda0").get_to(c.lambda0);
  j.at("beta").get_to(c.beta);
}

inline std::vector<std::size_t> mask_to_set(std::uint64_t mask, std::size_t horizon) {
  std::vector<std::size_t> s;
  for (std::size_t t = 0; t < horizon; ++t)
    if (mask >> t & 1U) s.push_back(t);
  return s;
}

struct StrongestN {
  std::vector<std::size_t> agents;
  double rhs = 0.0;
  std::size_t zero_terms = 0;  // agents with term exactly 0, excluded
};

/// Minimises the Hoffman right-hand side over agent subsets for a fixed time
/// set. Agent n enters iff E_n - sum_{t not in T} lower - sum_{t in T} upper < 0.
inline StrongestN strongest_n(const TransportInstance& inst, const std::vector<std::size_t>& time_set) {
  const std::size_t T = inst.horizon;
  if (time_set.empty() || time_set.size() >= T) throw std::invalid_argument("strongest_n: time set must be proper and nonempty");
  std::vector<char> in(T, 0);
  for (std::size_t t : time_set) {
    if (t >= T) throw std::invalid_argument("strongest_n: period out of range");
    in[t] = 1;
  }
  StrongestN out;
  for (std::size_t n = 0; n < inst.n_agents; ++n) {
    double term = inst.demand[n];
    double cap = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      if (in[t]) {
        term -= inst.upper(n, t);
        cap += inst.upper(n, t);
      } else {
        term -= inst.lower(n, t);
      }
    }
    out.rhs += cap;
    if (term < 0.0) {
      out.agents.push_back(n);
      out.rhs += term;
    } else if (term == 0.0) {
      ++out.zero_terms;
    }
  }
  return out;
}

struct HoffmanCheck {
  bool feasible = true;
  std::vector<std::size_t> time_set;   // most violated subset
  std::vector<std::size_t> agent_set;
  double slack = 0.0;                  // sum_T p - rhs at the most violated subset (> tol when infeasible)
  double sum_mismatch = 0.0;           // |sum p - sum E|
};

/// Exhaustive check of every proper time subset with its strongest agent set.
inline HoffmanCheck hoffman_feasible(const TransportInstance& inst, std::span<const double> p, double tol = 1e-9) {
  const std::size_t T = inst.horizon;
  if (T > 20) throw std::invalid_argument("hoffman_feasible: horizon too large for enumeration (T <= 20)");
  if (p.size() != T) throw std::invalid_argument("hoffman_feasible: allocation length differs from horizon");
  HoffmanCheck res;
  res.sum_mismatch = std::abs(sum(p) - sum(inst.demand));
  if (res.sum_mismatch > tol) res.feasible = false;
  res.slack = -std::numeric_limits<double>::infinity();
  const std::uint64_t full = (std::uint64_t{1} << T) - 1;
  for (std::uint64_t mask = 1; mask < full; ++mask) {
    const auto ts = mask_to_set(mask, T);
    const StrongestN sn = strongest_n(inst, ts);
    double lhs = 0.0;
    for (std::size_t t : ts) lhs += p[t];
    const double slack = lhs - sn.rhs;
    if (slack > res.slack) {
      res.slack = slack;
      res.time_set = ts;
      res.agent_set = sn.agents;
    }
  }
  if (res.slack > tol) res.feasible = false;
  return res;
}

/// How T^(K) is read off the multiplier nu^(K).
///  superlevel:      T = {t : nu_t > -B * eps}
///  strict_positive: T = {t : nu_t >  B * eps}
enum class TimeSetRule { superlevel, strict_positive };

inline std::vector<std::size_t> select_time_set(std::span<const double> nu, double threshold, TimeSetRule rule) {
  std::vector<std::size_t> ts;
  for (std::size_t t = 0; t < nu.size(); ++t) {
    const bool take = rule == TimeSetRule::superlevel ? nu[t] > -threshold : nu[t] > threshold;
    if (take) ts.push_back(t);
  }
  return ts;
}

/// Cut from a converged APM run: rhs A_T = sum_{t in T} sum_n x_{n,t}^(K).
/// Returns nothing when T^(K) is empty or the full horizon.
inline std::optional<HoffmanCut> extract_cut(const ApmResult& apm, const TransportInstance& inst, double threshold_b,
                                             double eps_cvg, TimeSetRule rule = TimeSetRule::superlevel) {
  if (apm.x_final.rows() != inst.n_agents || apm.multiplier.size() != inst.horizon)
    throw std::invalid_argument("extract_cut: APM result does not match the instance");
  const auto ts = select_time_set(apm.multiplier, threshold_b * eps_cvg, rule);
  if (ts.empty() || ts.size() == apm.multiplier.size()) return std::nullopt;
  HoffmanCut cut;
  cut.time_set = ts;
  cut.provenance = CutProvenance::apm;
  for (std::size_t n = 0; n < apm.x_final.rows(); ++n)
    for (std::size_t t : ts) cut.rhs += apm.x_final(n, t);
  return cut;
}

/// Structure of an infeasible APM limit (x, y), with T = {t : some y_{n,t} > upper}
/// and N the agents whose strongest-cut term is negative for that T.
struct FixedPointFacts {
  std::vector<std::size_t> time_set;
  std::vector<std::size_t> agent_set;
  bool upper_block = false;   // t in T, n not in N: x = upper and y >= upper
  bool sign_pattern = false;  // T = {t : nu_t > 0}
  bool lower_block = false;   // t not in T, n in N: x = lower
  bool nonempty = false;      // T, T^c, N, N^c all nonempty
  bool all() const { return upper_block && sign_pattern && lower_block && nonempty; }
};

inline FixedPointFacts fixed_point_facts(const ApmResult& apm, const TransportInstance& inst, double tol) {
  const std::size_t N = inst.n_agents, T = inst.horizon;
  if (apm.x_final.rows() != N || apm.x_final.cols() != T) throw std::invalid_argument("fixed_point_facts: shape mismatch");
  FixedPointFacts f;
  std::vector<char> in_t(T, 0), in_n(N, 0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t n = 0; n < N; ++n)
      if (apm.y_final(n, t) > inst.upper(n, t) + tol) in_t[t] = 1;
  for (std::size_t t = 0; t < T; ++t)
    if (in_t[t]) f.time_set.push_back(t);
  for (std::size_t n = 0; n < N; ++n) {
    double term = inst.demand[n];
    for (std::size_t t = 0; t < T; ++t) term -= in_t[t] ? inst.upper(n, t) : inst.lower(n, t);
    if (term < 0.0) {
      in_n[n] = 1;
      f.agent_set.push_back(n);
    }
  }
  f.upper_block = f.lower_block = f.sign_pattern = true;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t n = 0; n < N; ++n) {
      if (in_t[t] && !in_n[n])
        f.upper_block = f.upper_block && std::abs(apm.x_final(n, t) - inst.upper(n, t)) <= tol &&
                        apm.y_final(n, t) >= inst.upper(n, t) - tol;
      if (!in_t[t] && in_n[n]) f.lower_block = f.lower_block && std::abs(apm.x_final(n, t) - inst.lower(n, t)) <= tol;
    }
    const double nu = apm.multiplier[t];
    if (in_t[t] ? !(nu > 0.0) : nu > tol) f.sign_pattern = false;
  }
  f.nonempty = !f.time_set.empty() && f.time_set.size() < T && !f.agent_set.empty() && f.agent_set.size() < N;
  return f;
}

/// A random point of X_n: a draw around the box, projected onto the block.
/// Projection puts mass on faces and vertices, where cut violations show up.
inline Vector sample_agent_point(const AgentBlock& b, CounterRng& rng) {
  Vector y(b.lower.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double w = b.upper[t] - b.lower[t];
    y[t] = rng.uniform(b.lower[t] - w, b.upper[t] + w);
  }
  return project_agent(y, b);
}

inline Matrix sample_feasible_profile(const TransportInstance& inst, CounterRng& rng) {
  Matrix x(inst.n_agents, inst.horizon);
  for (std::size_t n = 0; n < inst.n_agents; ++n) {
    const Vector xn = sample_agent_point(agent_block(inst, n), rng);
    std::copy(xn.begin(), xn.end(), x.row(n).begin());
  }
  return x;
}

/// An allocation inside the aggregate box that violates the strongest cut of
/// a random time set by at least `margin`. Empty when no tried time set leaves
/// that much room inside the box.
inline std::optional<Vector> sample_infeasible_allocation(const TransportInstance& inst, double margin, CounterRng& rng,
                                                          std::size_t tries = 64) {
  const std::size_t T = inst.horizon;
  if (T < 2) return std::nullopt;
  const AggregateBox box = aggregate_box(inst);
  const std::uint64_t full = (std::uint64_t{1} << T) - 1;
  for (std::size_t k = 0; k < tries; ++k) {
    const auto ts = mask_to_set(1 + rng.below(full - 1), T);
    std::vector<char> in(T, 0);
    for (std::size_t t : ts) in[t] = 1;
    double lo_in = 0, hi_in = 0, lo_out = 0, hi_out = 0;
    for (std::size_t t = 0; t < T; ++t) {
      (in[t] ? lo_in : lo_out) += box.col_lower[t];
      (in[t] ? hi_in : hi_out) += box.col_upper[t];
    }
    // s = sum_{t in T} p_t must satisfy the box on both sides of the split.
    const double s_max = std::min(hi_in, box.sum_target - lo_out);
    const double s_min = std::max({lo_in, box.sum_target - hi_out, strongest_n(inst, ts).rhs + margin});
    if (!(s_min <= s_max)) continue;
    const double s = rng.uniform(s_min, s_max);
    const double f_in = hi_in > lo_in ? (s - lo_in) / (hi_in - lo_in) : 0.0;
    const double f_out = hi_out > lo_out ? (box.sum_target - s - lo_out) / (hi_out - lo_out) : 0.0;
    Vector p(T);
    for (std::size_t t = 0; t < T; ++t) {
      const double f = in[t] ? f_in : f_out;
      p[t] = box.col_lower[t] + f * (box.col_upper[t] - box.col_lower[t]);
    }
    return p;
  }
  return std::nullopt;
}

/// Checks the cut against `samples` disaggregable allocations sum_n x_n.
inline bool cut_is_valid(const HoffmanCut& cut, const TransportInstance& inst, std::size_t samples, CounterRng rng,
                         double tol = 1e-8) {
  for (std::size_t s = 0; s < samples; ++s) {
    const Vector p = sample_feasible_profile(inst, rng).column_sums();
    if (cut.violation(p) > tol) return false;
  }
  return true;
}

}  // namespace disagg
