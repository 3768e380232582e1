#pragma once

// Laplacian of the face graph behind the APM rate bound. For saturated sets
// T_n (periods where agent n sits at a bound), periods k != l are joined with
// weight (1/N) sum_n 1{k,l not in T_n} / (T - |T_n|). The APM contraction on
// that face pair is 1 - lambda_1(P).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "disagg/apm.hpp"
#include "disagg/linalg.hpp"
#include "disagg/matrix.hpp"
#include "disagg/random.hpp"

namespace disagg {

struct FaceConfig {
  std::size_t n_agents = 0;
  std::size_t horizon = 0;
  std::vector<std::vector<std::size_t>> saturated;  // T_n, 0-based, each a proper subset
};

inline void validate(const FaceConfig& c) {
  if (c.n_agents == 0 || c.horizon == 0) throw std::invalid_argument("FaceConfig: empty dimensions");
  if (c.saturated.size() != c.n_agents) throw std::invalid_argument("FaceConfig: need one subset per agent");
  for (const auto& s : c.saturated) {
    std::vector<char> seen(c.horizon, 0);
    for (std::size_t t : s) {
      if (t >= c.horizon) throw std::invalid_argument("FaceConfig: period out of range");
      if (seen[t]) throw std::invalid_argument("FaceConfig: repeated period");
      seen[t] = 1;
    }
    if (s.size() >= c.horizon) throw std::invalid_argument("FaceConfig: saturated set covers the whole horizon");
  }
}

inline Matrix laplacian(const FaceConfig& c) {
  validate(c);
  const std::size_t T = c.horizon;
  Matrix P(T, T);
  std::vector<char> free_t(T);
  for (const auto& s : c.saturated) {
    std::fill(free_t.begin(), free_t.end(), 1);
    for (std::size_t t : s) free_t[t] = 0;
    const double w = 1.0 / (static_cast<double>(c.n_agents) * static_cast<double>(T - s.size()));
    for (std::size_t k = 0; k < T; ++k)
      for (std::size_t l = 0; l < T; ++l)
        if (k != l && free_t[k] && free_t[l]) P(k, l) -= w;
  }
  for (std::size_t k = 0; k < T; ++k) {
    double r = 0.0;
    for (std::size_t l = 0; l < T; ++l)
      if (l != k) r += P(k, l);
    P(k, k) = -r;
  }
  return P;
}

/// Smallest eigenvalue above 1e-9 of P restricted to the periods free for at
/// least one agent; 0 when that block has no positive eigenvalue.
inline double lambda1(const FaceConfig& c) {
  const Matrix P = laplacian(c);
  const std::size_t T = c.horizon;
  std::vector<char> free_any(T, 0);
  for (const auto& s : c.saturated) {
    std::vector<char> sat(T, 0);
    for (std::size_t t : s) sat[t] = 1;
    for (std::size_t t = 0; t < T; ++t)
      if (!sat[t]) free_any[t] = 1;
  }
  std::vector<std::size_t> idx;
  for (std::size_t t = 0; t < T; ++t)
    if (free_any[t]) idx.push_back(t);
  Matrix block(idx.size(), idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < idx.size(); ++j) block(i, j) = P(idx[i], idx[j]);
  for (double ev : symmetric_eigenvalues(block))
    if (ev > 1e-9) return ev;
  return 0.0;
}

/// Each period enters T_n independently with probability p_sat; T_n = [T] is redrawn.
inline FaceConfig random_face_config(std::size_t n_agents, std::size_t horizon, double p_sat, CounterRng& rng) {
  if (horizon < 2) throw std::invalid_argument("random_face_config: horizon must be at least 2");
  if (!(p_sat >= 0.0 && p_sat < 1.0)) throw std::invalid_argument("random_face_config: p_sat must lie in [0, 1)");
  FaceConfig c{n_agents, horizon, std::vector<std::vector<std::size_t>>(n_agents)};
  for (auto& s : c.saturated) {
    do {
      s.clear();
      for (std::size_t t = 0; t < horizon; ++t)
        if (rng.uniform() < p_sat) s.push_back(t);
    } while (s.size() == horizon);
  }
  return c;
}

struct ScalingRow {
  std::size_t horizon = 0;
  std::size_t draws = 0;
  double worst_lambda1 = 0.0;  // min over draws
  double kappa_bound = 0.0;
  std::size_t violations = 0;  // draws with 0 < lambda_1 < kappa_bound
  std::size_t degenerate = 0;  // draws whose block has no positive eigenvalue
};

struct ScalingResult {
  std::vector<ScalingRow> rows;
  double slope = 0.0;  // least-squares slope of log worst_lambda1 against log T
};

struct ScalingOptions {
  std::size_t draws_per_unit_t = 100;  // draws = draws_per_unit_t * T unless `draws` is set
  std::size_t draws = 0;
  std::uint64_t seed = 1;
  double p_sat = 0.65;
  std::size_t jobs = 1;
};

inline double loglog_slope(const std::vector<ScalingRow>& rows) {
  if (rows.size() < 2) throw std::invalid_argument("loglog_slope: need at least two horizons");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& r : rows) {
    if (!(r.worst_lambda1 > 0.0)) throw std::domain_error("loglog_slope: nonpositive lambda_1");
    const double x = std::log(static_cast<double>(r.horizon)), y = std::log(r.worst_lambda1);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double n = static_cast<double>(rows.size());
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

/// Draw d at horizon T uses stream seed/T/d, so results do not depend on `jobs`.
/// Draws with no positive eigenvalue (no edge among the free periods) carry no
/// rate information and are counted as degenerate, not as worst cases.
inline ScalingResult scaling_experiment(std::size_t n_agents, const std::vector<std::size_t>& horizons,
                                        const ScalingOptions& opt = {}) {
  struct Tally {
    double worst = std::numeric_limits<double>::infinity();
    std::size_t violations = 0, degenerate = 0;
  };
  ScalingResult res;
  const CounterRng root(opt.seed);
  for (std::size_t T : horizons) {
    ScalingRow row;
    row.horizon = T;
    row.draws = opt.draws ? opt.draws : opt.draws_per_unit_t * T;
    row.kappa_bound = rate_kappa(n_agents, T);
    const CounterRng rt = root.split(T);
    auto worker = [&](std::size_t first, std::size_t last) {
      Tally acc;
      for (std::size_t d = first; d < last; ++d) {
        CounterRng r = rt.split(d);
        const double l1 = lambda1(random_face_config(n_agents, T, opt.p_sat, r));
        if (l1 == 0.0) {
          ++acc.degenerate;
          continue;
        }
        acc.worst = std::min(acc.worst, l1);
        if (l1 < row.kappa_bound) ++acc.violations;
      }
      return acc;
    };
    const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, row.draws));
    std::vector<std::future<Tally>> parts;
    for (std::size_t j = 0; j < jobs; ++j)
      parts.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async, worker,
                                 row.draws * j / jobs, row.draws * (j + 1) / jobs));
    row.worst_lambda1 = std::numeric_limits<double>::infinity();
    for (auto& f : parts) {
      const Tally t = f.get();
      row.worst_lambda1 = std::min(row.worst_lambda1, t.worst);
      row.violations += t.violations;
      row.degenerate += t.degenerate;
    }
    res.rows.push_back(row);
  }
  if (res.rows.size() >= 2) res.slope = loglog_slope(res.rows);
  return res;
}

inline void write_scaling_csv(std::ostream& os, const ScalingResult& r) {
  os << "T,worst_lambda1,kappa_bound\n";
  os.precision(17);
  for (const auto& row : r.rows) os << row.horizon << ',' << row.worst_lambda1 << ',' << row.kappa_bound << '\n';
}

}  // namespace disagg
