#pragma once

// Simulated multi-agent run: agents keep their blocks and iterates private and
// talk to the operator only through SMC rounds on a logged, round-synchronous bus.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "disagg/apm.hpp"
#include "disagg/cuts.hpp"
#include "disagg/master.hpp"
#include "disagg/model.hpp"
#include "disagg/projections.hpp"
#include "disagg/random.hpp"
#include "disagg/smc.hpp"

namespace disagg {

// ---- bus ---------------------------------------------------------------------

enum class MessageKind { share, sigma, aggregate, debug_profile };

inline const char* to_string(MessageKind k) {
  switch (k) {
    case MessageKind::share: return "share";
    case MessageKind::sigma: return "sigma";
    case MessageKind::aggregate: return "aggregate";
    case MessageKind::debug_profile: return "debug_profile";
  }
  return "?";
}

inline constexpr std::int64_t kOperatorId = -1;
inline constexpr std::int64_t kBroadcastId = -2;

struct Message {
  std::uint64_t round = 0;
  MessageKind kind = MessageKind::share;
  std::int64_t from = 0;
  std::int64_t to = 0;
  std::vector<std::uint64_t> payload;
};

inline void to_json(nlohmann::json& j, const Message& m) {
  j = {{"round", m.round}, {"kind", to_string(m.kind)}, {"from", m.from}, {"to", m.to}, {"payload", m.payload}};
}

/// Round-synchronous in-process bus. Messages pass through the hook (fault
/// injection) and, when enabled, into the log.
class Bus {
 public:
  using Hook = std::function<void(Message&)>;

  explicit Bus(bool keep_log = false) : keep_log_(keep_log) {}

  bool recording() const { return keep_log_ || static_cast<bool>(hook_); }
  void set_hook(Hook h) { hook_ = std::move(h); }
  std::uint64_t begin_round() { return ++round_; }
  std::uint64_t round() const { return round_; }

  /// Delivers the message and returns it as received.
  Message send(Message m) {
    if (hook_) hook_(m);
    if (keep_log_) log_.push_back(m);
    return m;
  }

  const std::vector<Message>& log() const { return log_; }

  void write_ndjson(std::ostream& os) const {
    for (const auto& m : log_) os << nlohmann::json(m).dump() << '\n';
  }

 private:
  bool keep_log_ = false;
  Hook hook_;
  std::uint64_t round_ = 0;
  std::vector<Message> log_;
};

// ---- operator transcript -----------------------------------------------------

struct CutCheck {
  std::vector<std::size_t> time_set;
  std::uint64_t a_t = 0;  // fixed-point word
  friend bool operator==(const CutCheck&, const CutCheck&) = default;
};

/// Everything the operator sees during one outer iteration.
struct OuterRecord {
  std::vector<std::vector<std::uint64_t>> aggregates;  // S^(s,k), one per sweep
  std::vector<std::uint64_t> moved;                    // convergence statistic per sweep
  std::vector<CutCheck> cut_checks;                    // (T, A_T) per violation test
  std::vector<std::uint64_t> m_values;                 // polyhedral: M per violation test
  friend bool operator==(const OuterRecord&, const OuterRecord&) = default;
};

struct OperatorTranscript {
  std::vector<OuterRecord> outer;
  std::string status;
  friend bool operator==(const OperatorTranscript&, const OperatorTranscript&) = default;
};

inline void to_json(nlohmann::json& j, const CutCheck& c) { j = {{"time_set", c.time_set}, {"a_t", c.a_t}}; }

inline void to_json(nlohmann::json& j, const OuterRecord& r) {
  j = {{"aggregates", r.aggregates}, {"moved", r.moved}, {"cut_checks", r.cut_checks}};
  if (!r.m_values.empty()) j["m_values"] = r.m_values;
}

inline void to_json(nlohmann::json& j, const OperatorTranscript& t) { j = {{"outer", t.outer}, {"status", t.status}}; }

// ---- options and reports -----------------------------------------------------

/// Fault injection for the privacy audit.
enum class LeakMode { none, raw_profile_message, raw_sigma };

struct ProtocolOptions {
  double eps_dis = 0.01;
  double eps_cvg0 = 0.1;
  double threshold_b = 10.0;
  NormKind norm = NormKind::operator_norm;
  TimeSetRule rule = TimeSetRule::superlevel;
  std::size_t max_halvings = 40;
  std::size_t max_sweeps = 2000000;     // per NI-APM call
  std::size_t max_outer = 0;            // 0: 2^T - 1 for Hoffman cuts, 500 for polyhedral cuts
  std::uint64_t seed = 0;
  bool log_bus = false;
  LeakMode leak = LeakMode::none;
};

enum class RunStatus { disaggregated, no_solution, aborted, iteration_cap };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::disaggregated: return "disaggregated";
    case RunStatus::no_solution: return "no_solution";
    case RunStatus::aborted: return "aborted";
    case RunStatus::iteration_cap: return "iteration_cap";
  }
  return "?";
}

struct RunReport {
  RunStatus status = RunStatus::aborted;
  std::string message;
  std::size_t outer_iterations = 0;     // master solves
  std::size_t total_projections = 0;    // APM sweeps over all NI-APM calls
  std::vector<HoffmanCut> cuts;
  std::vector<LambdaCut> lambda_cuts;
  std::vector<Allocation> iterates;     // p^(s)
  Allocation p;
  double gap = 0.0;                     // operator-side disaggregation gap at exit
  double objective = 0.0;
  Vector objective_history;
  Vector eps_history;                   // eps_cvg at exit of each NI-APM call
  std::size_t halvings = 0;
  std::size_t anomalies = 0;            // T^(K) empty or full while the gap is open
  bool objective_monotone = true;
  std::vector<int> commitment;
  OperatorTranscript transcript;
  Matrix agent_profiles;                // held by the agents; kept for verification only
};

inline void to_json(nlohmann::json& j, const RunReport& r) {
  j = {{"status", to_string(r.status)},
       {"message", r.message},
       {"outer_iterations", r.outer_iterations},
       {"total_projections", r.total_projections},
       {"cuts", r.cuts},
       {"p", r.p},
       {"gap", r.gap},
       {"objective", r.objective},
       {"objective_history", r.objective_history},
       {"eps_history", r.eps_history},
       {"iterates", r.iterates},
       {"halvings", r.halvings},
       {"anomalies", r.anomalies},
       {"objective_monotone", r.objective_monotone}};
  if (!r.lambda_cuts.empty()) j["lambda_cuts"] = r.lambda_cuts;
  if (!r.commitment.empty()) j["commitment"] = r.commitment;
}

// ---- agents and network --------------------------------------------------------

inline Vector project_local(const AgentBlock& b, std::span<const double> y) { return project_agent(y, b); }
inline Vector initial_iterate(const AgentBlock& b) { return b.lower; }

/// Private state of one agent. Only SMC shares and sigmas derived from it reach the bus.
template <class Block>
struct AgentState {
  std::size_t id = 0;
  Block block;
  Vector x;
  Vector y;
  CounterRng rng;
};

template <class Block>
class Network {
 public:
  Network(std::vector<Block> blocks, std::size_t horizon, const ProtocolOptions& opt)
      : horizon_(horizon), bus_(opt.log_bus), leak_(opt.leak) {
    const CounterRng root = CounterRng(opt.seed).split("agents");
    for (std::size_t n = 0; n < blocks.size(); ++n)
      agents_.push_back({n, std::move(blocks[n]), {}, {}, root.split(n)});
  }

  std::size_t size() const { return agents_.size(); }
  std::size_t horizon() const { return horizon_; }
  Bus& bus() { return bus_; }
  const Bus& bus() const { return bus_; }
  std::vector<AgentState<Block>>& agents() { return agents_; }
  const std::vector<AgentState<Block>>& agents() const { return agents_; }

  /// One SMC summation: agent n contributes secrets[n]; returns the operator's words.
  FixedVector smc_round(const std::vector<FixedVector>& secrets) {
    const std::size_t N = agents_.size();
    const std::uint64_t round = bus_.begin_round();
    const bool rec = bus_.recording();
    const std::size_t L = secrets.front().size();
    std::vector<FixedVector> sigma(N, FixedVector(L));
    for (std::size_t n = 0; n < N; ++n) {
      auto bundles = split_encoded(n, secrets[n], N, agents_[n].rng);
      for (auto& b : bundles) {
        if (rec) {
          Message m = bus_.send({round, MessageKind::share, static_cast<std::int64_t>(n),
                                 static_cast<std::int64_t>(b.receiver), raw_words(b.shares)});
          for (std::size_t i = 0; i < L; ++i) b.shares[i].raw = m.payload[i];
        }
        for (std::size_t i = 0; i < L; ++i) sigma[b.receiver][i] += b.shares[i];
      }
    }
    if (leak_ == LeakMode::raw_sigma) sigma[0] = secrets[0];
    FixedVector total(L);
    for (std::size_t n = 0; n < N; ++n) {
      if (rec) {
        Message m = bus_.send({round, MessageKind::sigma, static_cast<std::int64_t>(n), kOperatorId, raw_words(sigma[n])});
        for (std::size_t i = 0; i < L; ++i) sigma[n][i].raw = m.payload[i];
      }
      for (std::size_t i = 0; i < L; ++i) total[i] += sigma[n][i];
    }
    if (rec) bus_.send({round, MessageKind::aggregate, kOperatorId, kBroadcastId, raw_words(total)});
    return total;
  }

  /// Fault injection: an agent pushing its raw profile to the operator.
  void maybe_leak_profile() {
    if (leak_ != LeakMode::raw_profile_message || agents_.empty()) return;
    bus_.send({bus_.round(), MessageKind::debug_profile, 0, kOperatorId, raw_words(quantize(agents_[0].x))});
  }

  Matrix profiles() const {
    Matrix x(agents_.size(), horizon_);
    for (std::size_t n = 0; n < agents_.size(); ++n) std::copy(agents_[n].x.begin(), agents_[n].x.end(), x.row(n).begin());
    return x;
  }

 private:
  std::size_t horizon_;
  std::vector<AgentState<Block>> agents_;
  Bus bus_;
  LeakMode leak_;
};

// ---- NI-APM ------------------------------------------------------------------------

struct NiApmOutcome {
  bool disaggregated = false;
  std::size_t sweeps = 0;
  std::size_t halvings = 0;
  std::size_t anomalies = 0;
  double eps_final = 0.0;
  double gap = 0.0;
  Vector nu;
};

/// Operator-side gap ||x - y|| from nu alone: every y_n - x_n equals nu.
inline double gap_from_nu(std::span<const double> nu, std::size_t n_agents, NormKind norm) {
  return norm == NormKind::operator_norm ? norm1(nu) : std::sqrt(static_cast<double>(n_agents)) * norm2(nu);
}

namespace detail {
inline constexpr double kMovedCap = 1e6;
}

/// Generic NI-APM loop. `cut_stage(nu, eps)` runs the violation test once the
/// iterates have settled with an open gap and returns true when it produced a
/// cut violated by p; otherwise eps is halved and the sweeps resume.
template <class Block, class CutStage>
NiApmOutcome run_ni_apm(Network<Block>& net, std::span<const double> p, const ProtocolOptions& opt, OuterRecord& rec,
                        CutStage&& cut_stage) {
  const std::size_t N = net.size(), T = net.horizon();
  NiApmOutcome out;
  double eps = opt.eps_cvg0;
  for (auto& a : net.agents()) {
    a.y = initial_iterate(a.block);
    a.x = a.y;  // x^(0) := y^(0)
  }
  std::vector<FixedVector> secrets(N);
  Vector nu(T);
  for (;;) {
    if (out.sweeps >= opt.max_sweeps) throw std::runtime_error("ni_apm: sweep budget exhausted");
    ++out.sweeps;
    // Agents: local projection and the movement statistic for the stopping test.
    for (std::size_t n = 0; n < N; ++n) {
      auto& a = net.agents()[n];
      Vector x_new = project_local(a.block, a.y);
      double moved = 0.0;
      if (opt.norm == NormKind::operator_norm) {
        for (std::size_t t = 0; t < T; ++t) moved += std::abs(x_new[t] - a.x[t]);
      } else {
        for (std::size_t t = 0; t < T; ++t) moved += (x_new[t] - a.x[t]) * (x_new[t] - a.x[t]);
      }
      a.x = std::move(x_new);
      secrets[n] = quantize(a.x);
      const double stat = opt.norm == NormKind::operator_norm ? (moved < eps ? 1.0 : 0.0)
                                                              : std::min(moved / (eps * eps), detail::kMovedCap);
      secrets[n].push_back(FixedPoint::encode(stat));
    }
    net.maybe_leak_profile();
    const FixedVector total = net.smc_round(secrets);
    std::vector<std::uint64_t> words = raw_words(total);
    rec.moved.push_back(words.back());
    words.pop_back();
    rec.aggregates.push_back(words);
    // Shared by operator and agents: nu = (p - S) / N from the exact aggregate.
    for (std::size_t t = 0; t < T; ++t) nu[t] = (p[t] - total[t].decode()) / static_cast<double>(N);
    for (auto& a : net.agents())
      for (std::size_t t = 0; t < T; ++t) a.y[t] = a.x[t] + nu[t];

    const double stat = total.back().decode();
    const bool settled = opt.norm == NormKind::operator_norm ? stat > static_cast<double>(N) - 0.5 : stat < 1.0;
    if (!settled) continue;

    out.gap = gap_from_nu(nu, N, opt.norm);
    if (out.gap <= opt.eps_dis) {
      out.disaggregated = true;
      break;
    }
    if (cut_stage(std::span<const double>(nu), eps)) break;
    if (out.halvings >= opt.max_halvings)
      throw std::runtime_error("ni_apm: no violated cut after " + std::to_string(opt.max_halvings) + " halvings of eps_cvg");
    eps /= 2.0;
    ++out.halvings;
  }
  out.eps_final = eps;
  out.nu = nu;
  return out;
}

/// Hoffman cut stage: T from the threshold rule, A_T by scalar SMC with
/// upward rounding so the quantized right-hand side never undershoots.
/// A_T never exceeds the exact right-hand side and reaches it once the agents
/// saturate, so a violated check is only turned into a cut when the previous
/// settle point (at twice the eps) gave the same T and the same A_T to within
/// one quantum per agent.
inline auto hoffman_cut_stage(Network<AgentBlock>& net, std::span<const double> p, const ProtocolOptions& opt,
                              OuterRecord& rec, std::optional<HoffmanCut>& cut, std::size_t& anomalies) {
  return [&net, p, &opt, &rec, &cut, &anomalies, pending = std::optional<CutCheck>{}](std::span<const double> nu,
                                                                                       double eps) mutable {
    const auto ts = select_time_set(nu, opt.threshold_b * eps, opt.rule);
    if (ts.empty() || ts.size() == nu.size()) {
      ++anomalies;
      pending.reset();
      return false;
    }
    std::vector<FixedVector> secrets(net.size());
    for (std::size_t n = 0; n < net.size(); ++n) {
      double a = 0.0;
      for (std::size_t t : ts) a += net.agents()[n].x[t];
      secrets[n] = {FixedPoint::encode_ceil(a)};
    }
    const FixedPoint a_t = net.smc_round(secrets).front();
    rec.cut_checks.push_back({ts, a_t.raw});
    double lhs = 0.0;
    for (std::size_t t : ts) lhs += p[t];
    if (!(a_t.decode() - lhs < 0.0)) {
      pending.reset();
      return false;
    }
    const bool stable = pending && pending->time_set == ts &&
                        std::abs((a_t - FixedPoint{pending->a_t}).to_integer()) <=
                            static_cast<std::int64_t>(net.size());
    pending = CutCheck{ts, a_t.raw};
    if (!stable) return false;
    cut = HoffmanCut{ts, a_t.decode(), CutProvenance::apm};
    return true;
  };
}

struct HoffmanNiApmResult {
  NiApmOutcome outcome;
  std::optional<HoffmanCut> cut;
};

/// One NI-APM call on allocation p.
inline HoffmanNiApmResult ni_apm(Network<AgentBlock>& net, std::span<const double> p, const ProtocolOptions& opt,
                                 OuterRecord& rec) {
  HoffmanNiApmResult res;
  std::size_t anomalies = 0;
  res.outcome = run_ni_apm(net, p, opt, rec, hoffman_cut_stage(net, p, opt, rec, res.cut, anomalies));
  res.outcome.anomalies = anomalies;
  return res;
}

using MasterFn = std::function<MasterSolution(const FeasibleRegion&)>;

inline std::vector<AgentBlock> agent_blocks(const TransportInstance& inst) {
  std::vector<AgentBlock> blocks;
  for (std::size_t n = 0; n < inst.n_agents; ++n) blocks.push_back(agent_block(inst, n));
  return blocks;
}

namespace detail {

/// Shared outer loop: master, NI-APM, cut or stop. `step` runs NI-APM on p and
/// either returns true (disaggregated) or adds a cut to the region and report.
template <class Step>
void outer_loop(FeasibleRegion& region, const MasterFn& master, std::size_t max_outer, RunReport& rep, Step&& step) {
  try {
    for (;;) {
      if (rep.outer_iterations >= max_outer) {
        rep.status = RunStatus::iteration_cap;
        rep.message = "outer iteration cap reached";
        break;
      }
      const MasterSolution m = master(region);
      ++rep.outer_iterations;
      if (!m.feasible) {
        rep.status = RunStatus::no_solution;
        rep.message = "master problem infeasible";
        break;
      }
      if (!rep.objective_history.empty()) {
        const double prev = rep.objective_history.back();
        if (m.objective < prev - 1e-9 * std::max(1.0, std::abs(prev))) rep.objective_monotone = false;
      }
      rep.objective_history.push_back(m.objective);
      rep.iterates.push_back(m.p);
      rep.p = m.p;
      rep.objective = m.objective;
      rep.commitment = m.commitment;
      rep.transcript.outer.emplace_back();
      if (step(m.p, rep.transcript.outer.back())) {
        rep.status = RunStatus::disaggregated;
        break;
      }
    }
  } catch (const std::runtime_error& e) {
    rep.status = RunStatus::aborted;
    rep.message = e.what();
  }
  rep.transcript.status = to_string(rep.status);
}

}  // namespace detail

/// Cutting-plane loop with Hoffman cuts.
inline RunReport optimal_disaggregation(const TransportInstance& inst, const MasterFn& master,
                                        const ProtocolOptions& opt = {}, Bus* bus_out = nullptr) {
  RunReport rep;
  Network<AgentBlock> net(agent_blocks(inst), inst.horizon, opt);
  FeasibleRegion region(aggregate_box(inst));
  const std::size_t max_cuts = (std::size_t{1} << std::min<std::size_t>(inst.horizon, 62)) - 2;
  const std::size_t max_outer = opt.max_outer ? opt.max_outer : max_cuts + 1;
  detail::outer_loop(region, master, max_outer, rep, [&](const Allocation& p, OuterRecord& rec) {
    const HoffmanNiApmResult r = ni_apm(net, p, opt, rec);
    rep.total_projections += r.outcome.sweeps;
    rep.halvings += r.outcome.halvings;
    rep.anomalies += r.outcome.anomalies;
    rep.eps_history.push_back(r.outcome.eps_final);
    rep.gap = r.outcome.gap;
    if (r.outcome.disaggregated) return true;
    if (!region.add_cut(*r.cut)) throw std::logic_error("optimal_disaggregation: cut already present");
    rep.cuts.push_back(*r.cut);
    if (rep.cuts.size() > max_cuts) throw std::logic_error("optimal_disaggregation: more than 2^T - 2 cuts");
    return false;
  });
  rep.agent_profiles = net.profiles();
  if (bus_out) *bus_out = net.bus();
  return rep;
}

// ---- privacy -------------------------------------------------------------------------

struct AuditReport {
  std::vector<std::string> findings;
  bool clean() const { return findings.empty(); }
};

/// Checks (a) the bus: agent-to-operator traffic is only sigma words equal to
/// the mod-M sum of the shares that agent received in the same round, and
/// agent-to-agent traffic is only shares; (b) the transcript carries only the
/// whitelisted fields.
inline AuditReport privacy_audit(const OperatorTranscript& transcript, const std::vector<Message>& bus_log,
                                 bool allow_m_values = false) {
  AuditReport rep;
  auto describe = [](const Message& m) { return nlohmann::json(m).dump().substr(0, 160); };
  struct Key {
    std::uint64_t round;
    std::int64_t agent;
    bool operator<(const Key& o) const { return round < o.round || (round == o.round && agent < o.agent); }
  };
  std::map<Key, std::vector<std::uint64_t>> received;
  for (const auto& m : bus_log) {
    if (m.kind != MessageKind::share) continue;
    auto& acc = received[{m.round, m.to}];
    if (acc.empty()) acc.assign(m.payload.size(), 0);
    for (std::size_t i = 0; i < m.payload.size() && i < acc.size(); ++i) acc[i] = (acc[i] + m.payload[i]) & kModMask;
  }
  for (const auto& m : bus_log) {
    const bool from_agent = m.from >= 0;
    if (from_agent && m.to == kOperatorId) {
      if (m.kind != MessageKind::sigma) {
        rep.findings.push_back("non-SMC message from agent to operator: " + describe(m));
        continue;
      }
      const auto it = received.find({m.round, m.from});
      if (it == received.end() || it->second != m.payload)
        rep.findings.push_back("sigma does not match the shares the agent received: " + describe(m));
    } else if (from_agent && m.to >= 0) {
      if (m.kind != MessageKind::share) rep.findings.push_back("non-share message between agents: " + describe(m));
    } else if (m.from == kOperatorId) {
      if (m.kind != MessageKind::aggregate) rep.findings.push_back("unexpected operator message: " + describe(m));
    } else {
      rep.findings.push_back("message with unknown route: " + describe(m));
    }
  }
  const nlohmann::json j = transcript;
  for (const auto& [key, _] : j.items())
    if (key != "outer" && key != "status") rep.findings.push_back("transcript field outside whitelist: " + key);
  std::set<std::string> allowed{"aggregates", "moved", "cut_checks"};
  if (allow_m_values) allowed.insert("m_values");
  for (const auto& rec : j.at("outer"))
    for (const auto& [key, _] : rec.items())
      if (!allowed.count(key)) rep.findings.push_back("transcript field outside whitelist: " + key);
  return rep;
}

/// Runs the protocol on the instance and on its agent permutation and compares
/// the operator transcripts and cut sequences bit for bit.
inline bool permutation_invariance_check(const TransportInstance& inst, const std::vector<std::size_t>& perm,
                                         const MasterFn& master, const ProtocolOptions& opt = {}) {
  const RunReport a = optimal_disaggregation(inst, master, opt);
  ProtocolOptions other = opt;
  other.seed = opt.seed ^ 0x5bd1e995ULL;  // agent-side randomness may differ; the transcript must not
  const RunReport b = optimal_disaggregation(permute_agents(inst, perm), master, other);
  if (!(a.transcript == b.transcript)) return false;
  if (a.cuts.size() != b.cuts.size()) return false;
  for (std::size_t i = 0; i < a.cuts.size(); ++i)
    if (a.cuts[i].time_set != b.cuts[i].time_set || a.cuts[i].rhs != b.cuts[i].rhs) return false;
  return true;
}

}  // namespace disagg
