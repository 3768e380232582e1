#pragma once

// Command implementations behind tools/disagg_cli. Each command takes parsed
// options and output streams and returns the process exit code, so tests can
// drive them without a subprocess.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "disagg/apm.hpp"
#include "disagg/cuts.hpp"
#include "disagg/master.hpp"
#include "disagg/model.hpp"
#include "disagg/polyhedral.hpp"
#include "disagg/protocol.hpp"
#include "disagg/spectral.hpp"

namespace disagg {

struct RunConfig {
  double eps_dis = 0.01;
  double eps_cvg = 0.1;
  double threshold_b = 10.0;
  std::uint64_t seed = 1;
  std::string out;  // empty: stdout
  bool json = false;
  std::size_t jobs = 1;
};

inline ProtocolOptions protocol_options(const RunConfig& c) {
  if (!(c.eps_dis > 0.0) || !(c.eps_cvg > 0.0) || !(c.threshold_b > 0.0))
    throw std::invalid_argument("tolerances and threshold must be positive");
  ProtocolOptions o;
  o.eps_dis = c.eps_dis;
  o.eps_cvg0 = c.eps_cvg;
  o.threshold_b = c.threshold_b;
  o.seed = c.seed;
  return o;
}

/// Runs `body` in parallel over [0, count) with at most `jobs` threads; results keep index order.
template <class R, class F>
std::vector<R> parallel_map(std::size_t count, std::size_t jobs, F&& body) {
  std::vector<R> out(count);
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  std::vector<std::future<void>> parts;
  for (std::size_t j = 0; j < jobs; ++j)
    parts.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async, [&, j] {
      for (std::size_t i = j; i < count; i += jobs) out[i] = body(i);
    }));
  for (auto& f : parts) f.get();
  return out;
}

// ---- toy ---------------------------------------------------------------------------

struct ToyReport {
  RunReport hoffman;
  RunReport polyhedral;
  std::vector<std::string> mismatches;
  double seconds = 0.0;
  bool ok() const { return mismatches.empty(); }
};

namespace detail {
inline void expect_close(std::vector<std::string>& bad, const std::string& what, double got, double want, double tol) {
  if (!(std::abs(got - want) <= tol)) {
    std::ostringstream os;
    os << what << ": got " << got << ", expected " << want;
    bad.push_back(os.str());
  }
}
inline void expect_vector(std::vector<std::string>& bad, const std::string& what, const Vector& got, const Vector& want,
                          double tol) {
  if (got.size() != want.size()) {
    bad.push_back(what + ": length " + std::to_string(got.size()) + ", expected " + std::to_string(want.size()));
    return;
  }
  for (std::size_t i = 0; i < want.size(); ++i) expect_close(bad, what + "[" + std::to_string(i + 1) + "]", got[i], want[i], tol);
}
}  // namespace detail

/// Both pipelines on the toy data, compared with the published iterates and cuts at 1e-2.
inline ToyReport toy_reproduction(const ToyProblem& toy, const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  ToyReport rep;
  const ProtocolOptions opt = protocol_options(cfg);
  const MasterFn master = [&](const FeasibleRegion& r) { return solve_quadratic_master(r, toy.cost); };
  auto& bad = rep.mismatches;
  const double tol = 1e-2;

  rep.hoffman = optimal_disaggregation(toy.instance, master, opt);
  const auto& h = rep.hoffman;
  if (h.status != RunStatus::disaggregated) bad.push_back(std::string("hoffman: status ") + to_string(h.status));
  if (h.outer_iterations != 3) bad.push_back("hoffman: " + std::to_string(h.outer_iterations) + " outer iterations, expected 3");
  const std::vector<Vector> want_p{{1.0, 0.4, 1.0, 0.9}, {0.75, 0.4, 1.4, 0.75}, {0.9, 0.4, 1.4, 0.6}};
  for (std::size_t s = 0; s < std::min(want_p.size(), h.iterates.size()); ++s)
    detail::expect_vector(bad, "hoffman p(" + std::to_string(s + 1) + ")", h.iterates[s], want_p[s], tol);
  const std::vector<HoffmanCut> want_cuts{{{0, 1, 3}, 1.9, CutProvenance::oracle}, {{1, 2, 3}, 2.4, CutProvenance::oracle}};
  if (h.cuts.size() != want_cuts.size()) bad.push_back("hoffman: " + std::to_string(h.cuts.size()) + " cuts, expected 2");
  for (std::size_t i = 0; i < std::min(h.cuts.size(), want_cuts.size()); ++i) {
    if (h.cuts[i].time_set != want_cuts[i].time_set)
      bad.push_back("hoffman cut " + std::to_string(i + 1) + ": " + h.cuts[i].to_string() + ", expected " + want_cuts[i].to_string());
    detail::expect_close(bad, "hoffman cut " + std::to_string(i + 1) + " rhs", h.cuts[i].rhs, want_cuts[i].rhs, tol);
  }

  rep.polyhedral = optimal_disaggregation_poly(poly_agents_from_transport(toy.instance),
                                               FeasibleRegion(aggregate_box(toy.instance)), master, opt);
  const auto& q = rep.polyhedral;
  if (q.status != RunStatus::disaggregated) bad.push_back(std::string("polyhedral: status ") + to_string(q.status));
  if (q.outer_iterations != 4) bad.push_back("polyhedral: " + std::to_string(q.outer_iterations) + " outer iterations, expected 4");
  detail::expect_vector(bad, "polyhedral final p", q.p, want_p.back(), tol);
  if (q.lambda_cuts.size() < 3) {
    bad.push_back("polyhedral: " + std::to_string(q.lambda_cuts.size()) + " cuts, expected 3");
  } else {
    detail::expect_vector(bad, "polyhedral cut 1 lambda0", q.lambda_cuts[0].lambda0, {-0.25, -0.25, 1.0, -0.5}, tol);
    detail::expect_close(bad, "polyhedral cut 1 bound", -q.lambda_cuts[0].beta, 0.75, tol);
    detail::expect_vector(bad, "polyhedral cut 3 lambda0", q.lambda_cuts[2].lambda0, {-1.0 / 3, -1.0 / 3, 1.0, -1.0 / 3}, tol);
    detail::expect_close(bad, "polyhedral cut 3 bound", -q.lambda_cuts[2].beta, 0.7666, tol);
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

inline void print_run(std::ostream& os, const std::string& title, const RunReport& r) {
  char buf[256];
  os << title << ": " << to_string(r.status) << ", " << r.outer_iterations << " master solves, " << r.total_projections
     << " sweeps\n";
  for (std::size_t s = 0; s < r.iterates.size(); ++s) {
    os << "  p(" << s + 1 << ") =";
    for (double v : r.iterates[s]) {
      std::snprintf(buf, sizeof buf, " %.4f", v);
      os << buf;
    }
    os << '\n';
    if (s < r.cuts.size()) os << "    cut " << r.cuts[s].to_string() << '\n';
    if (s < r.lambda_cuts.size()) os << "    cut " << r.lambda_cuts[s].to_string() << '\n';
  }
  if (!r.message.empty()) os << "  " << r.message << '\n';
}

inline int cmd_toy(const RunConfig& cfg, std::ostream& out, std::ostream& err, const ToyProblem& toy = toy_instance()) {
  const ToyReport rep = toy_reproduction(toy, cfg);
  if (cfg.json) {
    nlohmann::json j = {{"hoffman", rep.hoffman}, {"polyhedral", rep.polyhedral}, {"mismatches", rep.mismatches},
                        {"ok", rep.ok()}, {"seconds", rep.seconds}};
    out << j.dump(2) << '\n';
  } else {
    print_run(out, "hoffman", rep.hoffman);
    print_run(out, "polyhedral", rep.polyhedral);
  }
  for (const auto& m : rep.mismatches) err << "mismatch: " << m << '\n';
  return rep.ok() ? 0 : 1;
}

// ---- run ---------------------------------------------------------------------------

enum class Pipeline { hoffman, polyhedral };

/// Instance JSON, optionally with "cost": {"lin", "quad"} for transport instances.
inline int cmd_run(const std::string& path, const RunConfig& cfg, Pipeline pipeline, std::ostream& out,
                   std::ostream& err, const std::string& bus_log = {}) {
  std::ifstream in(path);
  if (!in) {
    err << "cannot open " << path << '\n';
    return 2;
  }
  const nlohmann::json j = nlohmann::json::parse(in);
  const TransportInstance inst = j.get<TransportInstance>();
  const ValidationReport v = validate(inst);
  if (!v.ok()) {
    err << "invalid instance:\n" << v.to_string();
    return 2;
  }
  QuadraticCost cost{0.8, 0.1};
  if (j.contains("cost")) {
    cost.lin = j.at("cost").value("lin", cost.lin);
    cost.quad = j.at("cost").value("quad", cost.quad);
  }
  MasterFn master;
  if (inst.microgrid) master = [&](const FeasibleRegion& r) { return solve_microgrid_master(r, *inst.microgrid); };
  else master = [&](const FeasibleRegion& r) { return solve_quadratic_master(r, cost); };
  ProtocolOptions opt = protocol_options(cfg);
  opt.log_bus = !bus_log.empty();
  Bus bus;
  const RunReport rep = pipeline == Pipeline::hoffman
                            ? optimal_disaggregation(inst, master, opt, &bus)
                            : optimal_disaggregation_poly(poly_agents_from_transport(inst),
                                                          FeasibleRegion(aggregate_box(inst)), master, opt, &bus);
  if (!bus_log.empty()) {
    std::ofstream log(bus_log);
    bus.write_ndjson(log);
  }
  if (cfg.json) out << nlohmann::json(rep).dump(2) << '\n';
  else print_run(out, pipeline == Pipeline::hoffman ? "hoffman" : "polyhedral", rep);
  return rep.status == RunStatus::disaggregated || rep.status == RunStatus::no_solution ? 0 : 1;
}

// ---- microgrid -------------------------------------------------------------------

struct CampaignRow {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::aborted;
  std::size_t master_solves = 0;
  std::size_t cuts = 0;
  std::size_t projections = 0;
  double objective = 0.0;
  double gap = 0.0;
  bool monotone = false;
  double seconds = 0.0;
  std::string error;
};

struct CampaignSummary {
  std::vector<CampaignRow> rows;
  std::size_t horizon = 0;
  double eps_dis = 0.0;
  /// Every instance disaggregated within eps_dis, with at most 2^T - 2 cuts and a nondecreasing objective.
  bool all_ok() const {
    const std::size_t cap = (std::size_t{1} << horizon) - 2;
    for (const auto& r : rows)
      if (r.status != RunStatus::disaggregated || !(r.gap <= eps_dis) || r.cuts > cap || !r.monotone) return false;
    return !rows.empty();
  }
};

inline CampaignSummary microgrid_campaign(std::size_t n_agents, std::size_t horizon, std::size_t n_instances,
                                          const RunConfig& cfg) {
  if (horizon > 16) throw std::invalid_argument("microgrid: horizon must be at most 16");
  const ProtocolOptions opt = protocol_options(cfg);
  CampaignSummary s;
  s.horizon = horizon;
  s.eps_dis = cfg.eps_dis;
  const CounterRng seeds = CounterRng(cfg.seed).split("microgrid");
  s.rows = parallel_map<CampaignRow>(n_instances, cfg.jobs, [&](std::size_t i) {
    CampaignRow row;
    row.index = i;
    row.seed = seeds.split(i)();
    const auto start = std::chrono::steady_clock::now();
    try {
      const TransportInstance inst = microgrid_instance(n_agents, horizon, row.seed);
      const MasterFn master = [&](const FeasibleRegion& r) { return solve_microgrid_master(r, *inst.microgrid); };
      ProtocolOptions o = opt;
      o.seed = row.seed;
      const RunReport r = optimal_disaggregation(inst, master, o);
      row.status = r.status;
      row.master_solves = r.outer_iterations;
      row.cuts = r.cuts.size();
      row.projections = r.total_projections;
      row.objective = r.objective;
      row.gap = r.gap;
      row.monotone = r.objective_monotone;
      row.error = r.message;
    } catch (const std::exception& e) {
      row.status = RunStatus::aborted;
      row.error = e.what();
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return row;
  });
  return s;
}

inline int cmd_microgrid(std::size_t n_agents, std::size_t horizon, std::size_t n_instances, const RunConfig& cfg,
                         std::ostream& out, std::ostream& err) {
  const CampaignSummary s = microgrid_campaign(n_agents, horizon, n_instances, cfg);
  double solves = 0, projections = 0, cuts = 0;
  for (const auto& r : s.rows) {
    solves += static_cast<double>(r.master_solves);
    projections += static_cast<double>(r.projections);
    cuts += static_cast<double>(r.cuts);
  }
  const double n = std::max<double>(1.0, static_cast<double>(s.rows.size()));
  if (cfg.json) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : s.rows)
      rows.push_back({{"instance", r.index}, {"seed", r.seed}, {"status", to_string(r.status)},
                      {"master_solves", r.master_solves}, {"cuts", r.cuts}, {"projections", r.projections},
                      {"objective", r.objective}, {"gap", r.gap}, {"monotone", r.monotone}, {"seconds", r.seconds},
                      {"error", r.error}});
    out << nlohmann::json{{"instances", rows},
                          {"mean_master_solves", solves / n},
                          {"mean_projections", projections / n},
                          {"mean_cuts", cuts / n},
                          {"ok", s.all_ok()}}
               .dump(2)
        << '\n';
  } else {
    out << "instance,seed,status,master_solves,cuts,projections,objective,gap,monotone,seconds,error\n";
    out.precision(10);
    for (const auto& r : s.rows)
      out << r.index << ',' << r.seed << ',' << to_string(r.status) << ',' << r.master_solves << ',' << r.cuts << ','
          << r.projections << ',' << r.objective << ',' << r.gap << ',' << (r.monotone ? 1 : 0) << ',' << r.seconds
          << ',' << '"' << r.error << '"' << '\n';
  }
  err << "mean master solves " << solves / n << ", mean projections " << projections / n << ", mean cuts " << cuts / n
      << '\n';
  return s.all_ok() ? 0 : 1;
}

// ---- spectral --------------------------------------------------------------------

inline int cmd_spectral(std::size_t n_agents, const std::vector<std::size_t>& horizons, const ScalingOptions& opt,
                        bool json, std::ostream& out, std::ostream& err) {
  const ScalingResult r = scaling_experiment(n_agents, horizons, opt);
  std::size_t violations = 0;
  for (const auto& row : r.rows) violations += row.violations;
  if (json) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows)
      rows.push_back({{"T", row.horizon}, {"draws", row.draws}, {"worst_lambda1", row.worst_lambda1},
                      {"kappa_bound", row.kappa_bound}, {"violations", row.violations}, {"degenerate", row.degenerate}});
    out << nlohmann::json{{"rows", rows}, {"slope", r.slope}, {"violations", violations}}.dump(2) << '\n';
  } else {
    write_scaling_csv(out, r);
  }
  err << "log-log slope " << r.slope << ", bound violations " << violations << '\n';
  return violations == 0 ? 0 : 1;
}

// ---- privacy -----------------------------------------------------------------------

struct PrivacyReport {
  AuditReport audit;
  bool permutation_invariant = false;
  std::vector<std::size_t> permutation;
  std::size_t outer_iterations = 0;
  std::size_t messages = 0;
};

/// Random instance with a quadratic master: bus audit of one run, then the
/// permutation check with a random agent permutation.
inline PrivacyReport privacy_check(std::size_t n_agents, std::size_t horizon, const RunConfig& cfg,
                                   LeakMode leak = LeakMode::none) {
  PrivacyReport rep;
  const CounterRng root = CounterRng(cfg.seed).split("privacy");
  const QuadraticCost cost{0.8, 0.1};
  const MasterFn master = [&](const FeasibleRegion& r) { return solve_quadratic_master(r, cost); };
  // Prefer an instance whose first master point is not disaggregable, so the run exercises cuts.
  TransportInstance inst;
  for (std::uint64_t k = 0; k < 64; ++k) {
    inst = random_instance(n_agents, horizon, root.split("instance").split(k)());
    if (!hoffman_feasible(inst, master(FeasibleRegion(aggregate_box(inst))).p, 1e-6).feasible) break;
  }
  ProtocolOptions opt = protocol_options(cfg);
  opt.log_bus = true;
  opt.leak = leak;
  Bus bus;
  const RunReport r = optimal_disaggregation(inst, master, opt, &bus);
  rep.outer_iterations = r.outer_iterations;
  rep.messages = bus.log().size();
  rep.audit = privacy_audit(r.transcript, bus.log());
  rep.permutation.resize(n_agents);
  std::iota(rep.permutation.begin(), rep.permutation.end(), std::size_t{0});
  CounterRng prng = root.split("permutation");
  std::shuffle(rep.permutation.begin(), rep.permutation.end(), prng);
  ProtocolOptions plain = protocol_options(cfg);
  rep.permutation_invariant = permutation_invariance_check(inst, rep.permutation, master, plain);
  return rep;
}

inline int cmd_privacy(std::size_t n_agents, std::size_t horizon, const RunConfig& cfg, LeakMode leak, std::ostream& out,
                       std::ostream& err) {
  const PrivacyReport rep = privacy_check(n_agents, horizon, cfg, leak);
  if (cfg.json) {
    out << nlohmann::json{{"audit_clean", rep.audit.clean()},
                          {"findings", rep.audit.findings},
                          {"permutation", rep.permutation},
                          {"permutation_invariant", rep.permutation_invariant},
                          {"outer_iterations", rep.outer_iterations},
                          {"messages", rep.messages}}
               .dump(2)
        << '\n';
  } else {
    out << "audit: " << (rep.audit.clean() ? "clean" : "FINDINGS") << " (" << rep.messages << " messages, "
        << rep.outer_iterations << " master solves)\n";
    out << "permutation invariance: " << (rep.permutation_invariant ? "identical transcripts" : "transcripts differ") << '\n';
  }
  for (const auto& f : rep.audit.findings) err << "finding: " << f << '\n';
  return rep.audit.clean() && rep.permutation_invariant ? 0 : 1;
}

// ---- oracle-check ---------------------------------------------------------------------

struct OracleCase {
  std::size_t n_agents = 0;
  std::size_t horizon = 0;
  bool oracle_feasible = false;
  bool apm_feasible = false;
  double gap = 0.0;
  std::size_t iterations = 0;
  double max_ratio = 0.0;    // over recorded ratios
  double tail_ratio = 0.0;   // observed_rate, 0 when too short
  double kappa = 0.0;
  std::optional<HoffmanCut> cut;
  double cut_violation = 0.0;      // sum_T p - rhs at the generating p
  std::size_t cut_sample_failures = 0;
  double rhs_drift = 0.0;          // |rhs(eps) - rhs(eps/10)|, inf when T changes
};

struct OracleSummary {
  std::vector<OracleCase> cases;
  std::size_t agreements() const {
    std::size_t a = 0;
    for (const auto& c : cases) a += c.oracle_feasible == c.apm_feasible;
    return a;
  }
};

struct OracleCheckOptions {
  std::size_t instances = 200;
  std::size_t max_agents = 5;
  std::size_t max_horizon = 6;
  double eps_dis = 1e-4;
  double eps_cvg = 1e-10;
  double margin = 0.05;          // Hoffman violation of the infeasible draws
  std::size_t cut_samples = 100;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
};

/// Even cases draw p = sum of a random feasible profile, odd cases an
/// allocation violating some Hoffman cut by `margin` (instance redrawn until
/// one exists). Each p goes to the exhaustive oracle and to APM.
inline OracleSummary oracle_check(const OracleCheckOptions& o) {
  OracleSummary s;
  const CounterRng root = CounterRng(o.seed).split("oracle-check");
  s.cases = parallel_map<OracleCase>(o.instances, o.jobs, [&](std::size_t i) {
    CounterRng rng = root.split(i);
    OracleCase c;
    TransportInstance inst;
    Vector p;
    for (;;) {
      c.n_agents = 1 + rng.below(o.max_agents);
      c.horizon = 2 + rng.below(o.max_horizon - 1);
      inst = random_instance(c.n_agents, c.horizon, rng());
      if (i % 2 == 0) {
        p = sample_feasible_profile(inst, rng).column_sums();
        break;
      }
      if (auto q = sample_infeasible_allocation(inst, o.margin, rng)) {
        p = *q;
        break;
      }
    }
    c.kappa = rate_kappa(c.n_agents, c.horizon);
    c.oracle_feasible = hoffman_feasible(inst, p).feasible;
    ApmOptions ao;
    ao.eps_cvg = o.eps_cvg;
    const ApmResult a = run_apm(inst, p, ao);
    c.gap = a.gap;
    c.iterations = a.iterations;
    c.apm_feasible = a.gap <= o.eps_dis;
    for (double r : a.contraction_ratios) c.max_ratio = std::max(c.max_ratio, r);
    if (a.iterations >= 3 && !a.contraction_ratios.empty()) c.tail_ratio = observed_rate(a);
    if (!c.apm_feasible) {
      c.cut = extract_cut(a, inst, 10.0, o.eps_cvg);
      if (c.cut) {
        c.cut_violation = c.cut->violation(p);
        CounterRng samples = rng.split("samples");
        for (std::size_t k = 0; k < o.cut_samples; ++k)
          if (c.cut->violation(sample_feasible_profile(inst, samples).column_sums()) > 1e-8) ++c.cut_sample_failures;
        ApmOptions finer = ao;
        finer.eps_cvg = o.eps_cvg / 10.0;
        const auto again = extract_cut(run_apm(inst, p, finer), inst, 10.0, finer.eps_cvg);
        c.rhs_drift = again && again->time_set == c.cut->time_set ? std::abs(again->rhs - c.cut->rhs)
                                                                  : std::numeric_limits<double>::infinity();
      }
    }
    return c;
  });
  return s;
}

inline int cmd_oracle_check(const OracleCheckOptions& o, bool json, std::ostream& out, std::ostream& err) {
  const OracleSummary s = oracle_check(o);
  std::size_t bad_cuts = 0;
  for (const auto& c : s.cases)
    if (!c.apm_feasible && (!c.cut || !(c.cut_violation > 0.0) || c.cut_sample_failures > 0 || c.rhs_drift > 1e-9))
      ++bad_cuts;
  if (json) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : s.cases) {
      nlohmann::json r = {{"n_agents", c.n_agents}, {"horizon", c.horizon}, {"oracle_feasible", c.oracle_feasible},
                          {"apm_feasible", c.apm_feasible}, {"gap", c.gap}, {"iterations", c.iterations},
                          {"tail_ratio", c.tail_ratio}, {"kappa", c.kappa}};
      if (c.cut) r["cut"] = *c.cut;
      rows.push_back(r);
    }
    out << nlohmann::json{{"cases", rows}, {"agreements", s.agreements()}, {"bad_cuts", bad_cuts}}.dump(2) << '\n';
  } else {
    out << "case,n_agents,horizon,oracle_feasible,apm_feasible,gap,iterations,tail_ratio,one_minus_kappa,cut\n";
    out.precision(10);
    for (std::size_t i = 0; i < s.cases.size(); ++i) {
      const auto& c = s.cases[i];
      out << i << ',' << c.n_agents << ',' << c.horizon << ',' << c.oracle_feasible << ',' << c.apm_feasible << ','
          << c.gap << ',' << c.iterations << ',' << c.tail_ratio << ',' << 1.0 - c.kappa << ','
          << '"' << (c.cut ? c.cut->to_string() : "") << '"' << '\n';
    }
  }
  err << "agreement " << s.agreements() << "/" << s.cases.size() << ", unsound or drifting cuts " << bad_cuts << '\n';
  return s.agreements() == s.cases.size() && bad_cuts == 0 ? 0 : 1;
}

}  // namespace disagg
