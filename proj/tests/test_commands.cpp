#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "disagg/commands.hpp"

using namespace disagg;

namespace {

RunConfig toy_config() {
  RunConfig c;
  c.eps_dis = 1e-3;
  c.eps_cvg = 1e-5;
  return c;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("disagg_test_" + name);
}

}  // namespace

TEST(Commands, ToyReproduces) {
  std::ostringstream out, err;
  EXPECT_EQ(cmd_toy(toy_config(), out, err), 0) << err.str();
  EXPECT_NE(out.str().find("p1 + p2 + p4 <= 1.9"), std::string::npos);
  EXPECT_NE(out.str().find("p2 + p3 + p4 <= 2.4"), std::string::npos);
  EXPECT_TRUE(err.str().empty());
}

TEST(Commands, CorruptedToyFails) {
  ToyProblem toy = toy_instance();
  toy.instance.upper(1, 3) = 0.5;
  toy.instance.demand[1] = 0.3;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_toy(toy_config(), out, err, toy), 1);
  EXPECT_NE(err.str().find("mismatch"), std::string::npos);
}

TEST(Commands, ToyJson) {
  RunConfig c = toy_config();
  c.json = true;
  std::ostringstream out, err;
  ASSERT_EQ(cmd_toy(c, out, err), 0);
  const auto j = nlohmann::json::parse(out.str());
  EXPECT_TRUE(j.at("ok").get<bool>());
  EXPECT_EQ(j.at("hoffman").at("status"), "disaggregated");
  EXPECT_EQ(j.at("hoffman").at("cuts").size(), 2u);
  EXPECT_EQ(j.at("polyhedral").at("lambda_cuts").size(), 3u);
}

TEST(Commands, RunOnInstanceFile) {
  const auto path = temp_file("toy.json");
  {
    nlohmann::json j = toy_instance().instance;
    j["cost"] = {{"lin", 0.8}, {"quad", 0.1}};
    std::ofstream(path) << j.dump();
  }
  const auto log = temp_file("bus.ndjson");
  const ToyProblem toy = toy_instance();
  const QuadraticCost cost{0.8, 0.1};
  const RunReport direct = optimal_disaggregation_poly(poly_agents_from_transport(toy.instance),
                                                       FeasibleRegion(aggregate_box(toy.instance)),
                                                       [&](const FeasibleRegion& r) { return solve_quadratic_master(r, cost); },
                                                       protocol_options(toy_config()));
  for (Pipeline pl : {Pipeline::hoffman, Pipeline::polyhedral}) {
    RunConfig c = toy_config();
    c.json = true;
    std::ostringstream out, err;
    ASSERT_EQ(cmd_run(path.string(), c, pl, out, err, log.string()), 0) << err.str();
    const auto j = nlohmann::json::parse(out.str());
    EXPECT_EQ(j.at("status"), "disaggregated");
    if (pl == Pipeline::hoffman) {
      EXPECT_NEAR(j.at("objective").get<double>(), cost(Vector{0.9, 0.4, 1.4, 0.6}), 1e-6);
    } else {
      EXPECT_EQ(j.at("objective").get<double>(), direct.objective);
    }
    std::ifstream in(log);
    std::string line;
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_NO_THROW((void)nlohmann::json::parse(line).at("payload"));
  }
  std::filesystem::remove(path);
  std::filesystem::remove(log);
}

TEST(Commands, RunRejectsInvalidInstance) {
  const auto path = temp_file("bad.json");
  TransportInstance inst = toy_instance().instance;
  inst.demand[0] = 10.0;
  std::ofstream(path) << nlohmann::json(inst).dump();
  std::ostringstream out, err;
  EXPECT_EQ(cmd_run(path.string(), toy_config(), Pipeline::hoffman, out, err), 2);
  EXPECT_NE(err.str().find("demand above"), std::string::npos);
  EXPECT_EQ(cmd_run("/nonexistent/instance.json", toy_config(), Pipeline::hoffman, out, err), 2);
  std::filesystem::remove(path);
}

TEST(Commands, MicrogridCampaignCsv) {
  RunConfig c;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_microgrid(4, 3, 2, c, out, err), 0) << err.str();
  std::istringstream in(out.str());
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "instance,seed,status,master_solves,cuts,projections,objective,gap,monotone,seconds,error");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) {
    ++rows;
    EXPECT_NE(line.find(",disaggregated,"), std::string::npos) << line;
  }
  EXPECT_EQ(rows, 2u);
}

TEST(Commands, MicrogridCampaignIndependentOfJobs) {
  RunConfig a, b;
  b.jobs = 3;
  const CampaignSummary sa = microgrid_campaign(6, 4, 4, a), sb = microgrid_campaign(6, 4, 4, b);
  ASSERT_EQ(sa.rows.size(), sb.rows.size());
  for (std::size_t i = 0; i < sa.rows.size(); ++i) {
    EXPECT_EQ(sa.rows[i].seed, sb.rows[i].seed);
    EXPECT_EQ(sa.rows[i].objective, sb.rows[i].objective);
    EXPECT_EQ(sa.rows[i].cuts, sb.rows[i].cuts);
  }
  EXPECT_TRUE(sa.all_ok());
}

TEST(Commands, SpectralJson) {
  ScalingOptions o;
  o.draws_per_unit_t = 10;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_spectral(4, {4, 6}, o, true, out, err), 0);
  const auto j = nlohmann::json::parse(out.str());
  EXPECT_EQ(j.at("rows").size(), 2u);
  EXPECT_EQ(j.at("violations"), 0);
}

TEST(Commands, PrivacyCleanAndLeaky) {
  RunConfig c;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_privacy(3, 4, c, LeakMode::none, out, err), 0) << err.str();
  std::ostringstream out2, err2;
  EXPECT_EQ(cmd_privacy(3, 4, c, LeakMode::raw_profile_message, out2, err2), 1);
  EXPECT_NE(err2.str().find("finding"), std::string::npos);
}

TEST(Commands, OracleCheckSmall) {
  OracleCheckOptions o;
  o.instances = 20;
  std::ostringstream out, err;
  EXPECT_EQ(cmd_oracle_check(o, false, out, err), 0) << err.str();
  EXPECT_NE(err.str().find("agreement 20/20"), std::string::npos);
}

TEST(Commands, ProtocolOptionsValidation) {
  RunConfig c;
  c.eps_dis = 0.0;
  EXPECT_THROW(protocol_options(c), std::invalid_argument);
}
