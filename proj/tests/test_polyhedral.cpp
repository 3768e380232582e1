#include <gtest/gtest.h>

#include "disagg/polyhedral.hpp"
#include "oracles.hpp"

using namespace disagg;

namespace {

ProtocolOptions toy_options() {
  ProtocolOptions o;
  o.eps_dis = 1e-3;
  o.eps_cvg0 = 1e-5;
  return o;
}

MasterFn quadratic_master(const QuadraticCost& cost) {
  return [cost](const FeasibleRegion& r) { return solve_quadratic_master(r, cost); };
}

}  // namespace

TEST(PolyAgent, RejectsEmptyAndUnbounded) {
  EXPECT_THROW(make_poly_agent(Matrix::from_rows({{1.0}, {-1.0}}), {0.0, -1.0}), std::invalid_argument);
  EXPECT_THROW(make_poly_agent(Matrix::from_rows({{1.0, 0.0}, {-1.0, 0.0}}), {1.0, 1.0}), std::invalid_argument);
  EXPECT_NO_THROW(make_poly_agent(Matrix::from_rows({{1.0}, {-1.0}}), {1.0, 1.0}));
}

TEST(PolyAgent, ProjectionAgreesWithTransportProjection) {
  CounterRng rng(81);
  for (int rep = 0; rep < 300; ++rep) {
    const TransportInstance inst = random_instance(1, 2 + rng.below(4), rng());
    const AgentBlock blk = agent_block(inst, 0);
    const PolyAgent ag = poly_agent_from_block(blk);
    Vector y(inst.horizon);
    for (auto& v : y) v = rng.uniform(-2, 3);
    EXPECT_LE(max_abs_diff(project_poly_agent(y, ag), project_agent(y, blk)), 1e-9) << "case " << rep;
  }
}

TEST(PolyAgent, ProjectionOntoGeneralPolytopeMatchesKkt) {
  // triangle-ish polytope in R^3 with a coupling row
  const PolyAgent ag = make_poly_agent(Matrix::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {-1, -1, -1}, {1, -1, 0}}),
                                       {1.0, 1.0, 1.0, -0.5, 0.2});
  CounterRng rng(82);
  for (int rep = 0; rep < 200; ++rep) {
    Vector y(3);
    for (auto& v : y) v = rng.uniform(-2, 3);
    const auto ref = oracle::project_by_kkt_enumeration(y, ag.halfspaces());
    ASSERT_TRUE(ref.has_value());
    EXPECT_LE(max_abs_diff(project_poly_agent(y, ag), *ref), 1e-9);
  }
}

TEST(SupportValue, MatchesPrimalLp) {
  CounterRng rng(83);
  for (int rep = 0; rep < 50; ++rep) {
    const TransportInstance inst = random_instance(1, 2 + rng.below(4), rng());
    const PolyAgent ag = poly_agent_from_block(agent_block(inst, 0));
    Vector nu(inst.horizon);
    for (auto& v : nu) v = rng.uniform(-1, 1);
    const auto sv = support_value(ag, nu);
    ASSERT_TRUE(sv.has_value());
    const auto ref = oracle::lp_by_vertex_enumeration([&] {
      Vector c(nu);
      for (auto& v : c) v = -v;
      return c;
    }(), ag.constraint_matrix, ag.rhs);
    ASSERT_TRUE(ref.has_value());
    EXPECT_NEAR(sv->value, -*ref, 1e-8);
  }
}

TEST(LambdaCut, NormaliseAndString) {
  const LambdaCut c = normalise({-0.5, -0.5, 2.0, -1.0}, -1.5);
  EXPECT_EQ(c.lambda0, (Vector{-0.25, -0.25, 1.0, -0.5}));
  EXPECT_DOUBLE_EQ(c.beta, -0.75);
  EXPECT_EQ(c.to_string(), "-0.25 p1 - 0.25 p2 + 1 p3 - 0.5 p4 >= 0.75");
  const Halfspace h = c.as_halfspace();
  EXPECT_NEAR(h.value(Vector{0, 0, 0.75, 0}), 0.0, 1e-15);
  EXPECT_THROW(normalise({0.0, 0.0}, 1.0), std::invalid_argument);
}

TEST(Polyhedral, ToyRun) {
  const ToyProblem toy = toy_instance();
  const RunReport r = optimal_disaggregation_poly(poly_agents_from_transport(toy.instance),
                                                  FeasibleRegion(aggregate_box(toy.instance)),
                                                  quadratic_master(toy.cost), toy_options());
  ASSERT_EQ(r.status, RunStatus::disaggregated) << r.message;
  EXPECT_EQ(r.outer_iterations, 4u);
  const Vector want{0.9, 0.4, 1.4, 0.6};
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(r.p[t], want[t], 1e-2);
  ASSERT_EQ(r.lambda_cuts.size(), 3u);
  const Vector first{-0.25, -0.25, 1.0, -0.5};
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(r.lambda_cuts[0].lambda0[t], first[t], 1e-2);
  EXPECT_NEAR(-r.lambda_cuts[0].beta, 0.75, 1e-2);
  const Vector third{-1.0 / 3, -1.0 / 3, 1.0, -1.0 / 3};
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(r.lambda_cuts[2].lambda0[t], third[t], 1e-2);
  EXPECT_NEAR(-r.lambda_cuts[2].beta, 0.7666, 1e-2);
  EXPECT_TRUE(r.objective_monotone);
}

TEST(Polyhedral, CutsAreValidForDisaggregableAllocations) {
  const ToyProblem toy = toy_instance();
  const RunReport r = optimal_disaggregation_poly(poly_agents_from_transport(toy.instance),
                                                  FeasibleRegion(aggregate_box(toy.instance)),
                                                  quadratic_master(toy.cost), toy_options());
  CounterRng rng(84);
  for (int k = 0; k < 500; ++k) {
    const Vector p = sample_feasible_profile(toy.instance, rng).column_sums();
    for (const auto& c : r.lambda_cuts) EXPECT_LE(c.violation(p), 1e-8);
  }
  for (std::size_t s = 0; s < r.lambda_cuts.size(); ++s) EXPECT_GT(r.lambda_cuts[s].violation(r.iterates[s]), 0.0);
}

TEST(Polyhedral, AgreesWithHoffmanPipeline) {
  const ToyProblem toy = toy_instance();
  const RunReport h = optimal_disaggregation(toy.instance, quadratic_master(toy.cost), toy_options());
  const RunReport q = optimal_disaggregation_poly(poly_agents_from_transport(toy.instance),
                                                  FeasibleRegion(aggregate_box(toy.instance)),
                                                  quadratic_master(toy.cost), toy_options());
  ASSERT_EQ(h.status, RunStatus::disaggregated);
  ASSERT_EQ(q.status, RunStatus::disaggregated);
  EXPECT_NEAR(h.objective, q.objective, 1e-6);
}

TEST(Polyhedral, LambdaFromOrbitCertificate) {
  const ToyProblem toy = toy_instance();
  const auto agents = poly_agents_from_transport(toy.instance);
  const Vector p{1.0, 0.4, 1.0, 0.9};
  ApmOptions o;
  o.eps_cvg = 1e-12;
  const ApmResult a = run_apm(toy.instance, p, o);
  const Matrix mu = a.y_final - a.x_final;
  const LambdaCertificate c = lambda_from_orbit(mu, agents, p);
  EXPECT_LT(c.cut.value(p), 0.0);
  EXPECT_LE(cone_residual(c, agents), 1e-8);
}
