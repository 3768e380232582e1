#pragma once

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "disagg/matrix.hpp"
#include "disagg/model.hpp"
#include "disagg/projections.hpp"

namespace disagg {

/// l2 is the Frobenius norm over the N x T profile; operator_norm is max_n sum_t |.|.
enum class NormKind { l2, operator_norm };

inline double profile_norm(const Matrix& a, NormKind kind) {
  if (kind == NormKind::l2) return norm2(a.data());
  double best = 0.0;
  for (std::size_t n = 0; n < a.rows(); ++n) best = std::max(best, norm1(a.row(n)));
  return best;
}

inline double profile_distance(const Matrix& a, const Matrix& b, NormKind kind) { return profile_norm(a - b, kind); }

/// Lower bound on 1 - rate for transport instances.
inline double rate_kappa(std::size_t n_agents, std::size_t horizon) {
  const double N = static_cast<double>(n_agents), T = static_cast<double>(horizon);
  return 4.0 / (N * (T + 1.0) * (T + 1.0) * (T - 1.0));
}

struct ApmOptions {
  double eps_cvg = 1e-5;
  std::size_t max_iter = 0;            // 0: budget from the rate bound
  NormKind norm = NormKind::operator_norm;
  std::optional<Matrix> y0;            // default: lower bounds
  bool record_trace = false;
};

struct ApmTraceRow {
  std::size_t k = 0;
  double residual = 0.0;
  double gap = 0.0;
  double ratio = 0.0;  // NaN when undefined
};

struct ApmResult {
  Matrix x_final;
  Matrix y_final;
  std::size_t iterations = 0;          // K
  double residual = 0.0;               // ||x^(K) - x^(K-1)|| in the selected norm
  double gap = 0.0;                    // ||x^(K) - y^(K)|| in the selected norm
  Vector contraction_ratios;           // l2 residual ratios, k >= 3, noise floor skipped
  Vector residuals_l2;                 // ||x^(k) - x^(k-1)||_2 for k = 1..K
  Vector multiplier;                   // nu^(K) = (p - sum_n x_n^(K)) / N
  bool converged = false;
  std::vector<ApmTraceRow> trace;
};

/// Worst-case sweep budget from the rate bound, capped at 1e6.
inline std::size_t default_max_iter(double eps, double first_step, std::size_t n_agents, std::size_t horizon) {
  if (!(first_step > eps)) return 1;
  const double kappa = rate_kappa(n_agents, horizon);
  const double k = std::ceil(std::log(eps / first_step) / std::log1p(-kappa));
  if (!std::isfinite(k) || k > 1e6) return 1000000;
  return std::max<std::size_t>(2, static_cast<std::size_t>(k) + 1);
}

/// Alternating projections between X = prod X_n and Y_p. Stops when
/// ||x^(k) - x^(k-1)|| < eps_cvg with x^(0) := y^(0).
inline ApmResult run_apm(const TransportInstance& inst, std::span<const double> p, const ApmOptions& opt = {}) {
  const std::size_t N = inst.n_agents, T = inst.horizon;
  if (p.size() != T) throw std::invalid_argument("run_apm: allocation length differs from horizon");
  for (double v : p)
    if (!std::isfinite(v)) throw std::invalid_argument("run_apm: non-finite allocation");
  std::vector<AgentBlock> blocks;
  blocks.reserve(N);
  for (std::size_t n = 0; n < N; ++n) blocks.push_back(agent_block(inst, n));

  ApmResult res;
  Matrix y = opt.y0 ? *opt.y0 : inst.lower;
  if (y.rows() != N || y.cols() != T) throw std::invalid_argument("run_apm: y0 has wrong shape");
  Matrix x_prev = y;
  Matrix x(N, T);
  std::size_t budget = opt.max_iter;
  double prev_l2 = -1.0;

  for (std::size_t k = 1;; ++k) {
    for (std::size_t n = 0; n < N; ++n) {
      const Vector xn = project_agent(y.row(n), blocks[n]);
      std::copy(xn.begin(), xn.end(), x.row(n).begin());
    }
    const Matrix step = x - x_prev;
    const double step_l2 = norm2(step.data());
    const double residual = profile_norm(step, opt.norm);
    if (!std::isfinite(residual)) throw std::runtime_error("run_apm: non-finite iterate at sweep " + std::to_string(k));
    if (budget == 0) budget = default_max_iter(opt.eps_cvg, residual, N, T);

    y = project_aggregate(x, p);
    res.residuals_l2.push_back(step_l2);
    double ratio = std::numeric_limits<double>::quiet_NaN();
    // x^(k) = P_X P_Y x^(k-1) only from k = 2 on, so nonexpansiveness bounds
    // the ratio of steps k and k-1 from k = 3.
    if (k >= 3 && prev_l2 > 1e-13 * std::max(1.0, norm2(x.data()))) {
      ratio = step_l2 / prev_l2;
      res.contraction_ratios.push_back(ratio);
    }
    prev_l2 = step_l2;
    if (opt.record_trace) res.trace.push_back({k, residual, profile_distance(x, y, opt.norm), ratio});

    res.iterations = k;
    res.residual = residual;
    if (residual < opt.eps_cvg || k >= budget) {
      res.converged = residual < opt.eps_cvg;
      break;
    }
    x_prev = x;
  }

  res.gap = profile_distance(x, y, opt.norm);
  const Vector col = x.column_sums();
  res.multiplier.resize(T);
  for (std::size_t t = 0; t < T; ++t) res.multiplier[t] = (p[t] - col[t]) / static_cast<double>(N);
  res.x_final = std::move(x);
  res.y_final = std::move(y);
  return res;
}

/// Largest l2 residual ratio over the last half of the recorded ratios.
inline double observed_rate(const ApmResult& r) {
  if (r.iterations < 3 || r.contraction_ratios.empty()) throw std::invalid_argument("observed_rate: too few iterations");
  const std::size_t start = r.contraction_ratios.size() / 2;
  double worst = 0.0;
  for (std::size_t i = start; i < r.contraction_ratios.size(); ++i) worst = std::max(worst, r.contraction_ratios[i]);
  return worst;
}

inline void write_trace_csv(std::ostream& os, const ApmResult& r) {
  os << "k,residual,gap,ratio\n";
  char buf[160];
  for (const auto& row : r.trace) {
    if (std::isnan(row.ratio))
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,\n", row.k, row.residual, row.gap);
    else
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", row.k, row.residual, row.gap, row.ratio);
    os << buf;
  }
}

}  // namespace disagg
