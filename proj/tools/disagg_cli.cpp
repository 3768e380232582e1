#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"

#include "disagg/commands.hpp"

namespace {

void add_common(CLI::App* cmd, disagg::RunConfig& cfg) {
  cmd->add_option("--eps-dis", cfg.eps_dis, "disaggregation tolerance")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--eps-cvg", cfg.eps_cvg, "initial APM stopping tolerance")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--threshold-b", cfg.threshold_b, "time-set threshold factor B")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "random seed")->capture_default_str();
  cmd->add_option("--out", cfg.out, "write the report here instead of stdout");
  cmd->add_flag("--json", cfg.json, "machine-readable report");
  cmd->add_option("--jobs", cfg.jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Privacy-preserving disaggregation of aggregate allocations"};
  app.require_subcommand(1);

  disagg::RunConfig toy_cfg;
  toy_cfg.eps_dis = 1e-3;
  toy_cfg.eps_cvg = 1e-5;
  auto* toy = app.add_subcommand("toy", "reproduce the 3-agent, 4-period example with both pipelines");
  add_common(toy, toy_cfg);

  disagg::RunConfig run_cfg;
  std::string instance_path, bus_log, pipeline_name = "hoffman";
  auto* run = app.add_subcommand("run", "optimal disaggregation on an instance JSON file");
  add_common(run, run_cfg);
  run->add_option("instance", instance_path, "instance JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--pipeline", pipeline_name, "hoffman or polyhedral")
      ->check(CLI::IsMember({"hoffman", "polyhedral"}))
      ->capture_default_str();
  run->add_option("--bus-log", bus_log, "write the simulated bus as NDJSON");

  disagg::RunConfig mg_cfg;
  std::size_t mg_agents = 16, mg_horizon = 6, mg_instances = 20;
  auto* mg = app.add_subcommand("microgrid", "campaign of random microgrid instances");
  add_common(mg, mg_cfg);
  mg->add_option("--agents", mg_agents)->check(CLI::PositiveNumber)->capture_default_str();
  mg->add_option("--horizon", mg_horizon)->check(CLI::Range(2, 16))->capture_default_str();
  mg->add_option("--instances", mg_instances)->check(CLI::PositiveNumber)->capture_default_str();

  disagg::RunConfig sp_cfg;
  disagg::ScalingOptions sp_opt;
  std::size_t sp_agents = 6;
  std::vector<std::size_t> sp_horizons{4, 6, 8, 12};
  auto* sp = app.add_subcommand("spectral", "worst lambda_1 of random face Laplacians against the rate bound");
  add_common(sp, sp_cfg);
  sp->add_option("--agents", sp_agents)->check(CLI::PositiveNumber)->capture_default_str();
  sp->add_option("--horizons", sp_horizons)->delimiter(',')->capture_default_str();
  sp->add_option("--draws", sp_opt.draws, "draws per horizon (0: 100 T)")->capture_default_str();
  sp->add_option("--p-sat", sp_opt.p_sat, "probability that a period is saturated")->check(CLI::Range(0.0, 0.999))->capture_default_str();

  disagg::RunConfig pr_cfg;
  std::size_t pr_agents = 4, pr_horizon = 4;
  std::string leak_name = "none";
  auto* pr = app.add_subcommand("privacy", "bus audit and permutation invariance on a random instance");
  add_common(pr, pr_cfg);
  pr->add_option("--agents", pr_agents)->check(CLI::Range(2, 64))->capture_default_str();
  pr->add_option("--horizon", pr_horizon)->check(CLI::Range(2, 12))->capture_default_str();
  pr->add_option("--inject-leak", leak_name, "fault injection: none, profile or sigma")
      ->check(CLI::IsMember({"none", "profile", "sigma"}))
      ->capture_default_str();

  disagg::RunConfig oc_cfg;
  oc_cfg.eps_dis = 1e-4;
  oc_cfg.eps_cvg = 1e-10;
  disagg::OracleCheckOptions oc_opt;
  auto* oc = app.add_subcommand("oracle-check", "APM gap test against the exhaustive Hoffman oracle");
  add_common(oc, oc_cfg);
  oc->add_option("--instances", oc_opt.instances)->check(CLI::PositiveNumber)->capture_default_str();
  oc->add_option("--margin", oc_opt.margin, "Hoffman violation of the infeasible draws")->check(CLI::PositiveNumber)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  auto with_output = [](const disagg::RunConfig& cfg, auto&& body) -> int {
    if (cfg.out.empty()) return body(std::cout);
    std::ofstream file(cfg.out);
    if (!file) {
      std::cerr << "cannot write " << cfg.out << '\n';
      return 2;
    }
    return body(file);
  };

  try {
    if (*toy) return with_output(toy_cfg, [&](std::ostream& os) { return disagg::cmd_toy(toy_cfg, os, std::cerr); });
    if (*run) {
      const auto p = pipeline_name == "hoffman" ? disagg::Pipeline::hoffman : disagg::Pipeline::polyhedral;
      return with_output(run_cfg, [&](std::ostream& os) { return disagg::cmd_run(instance_path, run_cfg, p, os, std::cerr, bus_log); });
    }
    if (*mg)
      return with_output(mg_cfg, [&](std::ostream& os) {
        return disagg::cmd_microgrid(mg_agents, mg_horizon, mg_instances, mg_cfg, os, std::cerr);
      });
    if (*sp) {
      sp_opt.seed = sp_cfg.seed;
      sp_opt.jobs = sp_cfg.jobs;
      return with_output(sp_cfg, [&](std::ostream& os) {
        return disagg::cmd_spectral(sp_agents, sp_horizons, sp_opt, sp_cfg.json, os, std::cerr);
      });
    }
    if (*pr) {
      const std::map<std::string, disagg::LeakMode> leaks{{"none", disagg::LeakMode::none},
                                                          {"profile", disagg::LeakMode::raw_profile_message},
                                                          {"sigma", disagg::LeakMode::raw_sigma}};
      return with_output(pr_cfg, [&](std::ostream& os) {
        return disagg::cmd_privacy(pr_agents, pr_horizon, pr_cfg, leaks.at(leak_name), os, std::cerr);
      });
    }
    if (*oc) {
      oc_opt.eps_dis = oc_cfg.eps_dis;
      oc_opt.eps_cvg = oc_cfg.eps_cvg;
      oc_opt.seed = oc_cfg.seed;
      oc_opt.jobs = oc_cfg.jobs;
      return with_output(oc_cfg, [&](std::ostream& os) { return disagg::cmd_oracle_check(oc_opt, oc_cfg.json, os, std::cerr); });
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
