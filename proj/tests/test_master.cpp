#include <gtest/gtest.h>

#include "disagg/cuts.hpp"
#include "disagg/master.hpp"
#include "oracles.hpp"

using namespace disagg;

namespace {

/// Three periods on an integer lattice: PV 0/3/1, pieces [0,2) at 1, [2,5) at 2, [5,8) at 3.
MicrogridSpec small_spec() {
  MicrogridSpec mg;
  mg.horizon = 3;
  mg.n_breakpoints = 3;
  mg.theta = {0, 2, 5, 8};
  mg.marginal_cost = {1, 2, 3};
  mg.alpha1 = 1.5;
  mg.start_cost = 4.0;
  mg.p_min = 1.0;
  mg.p_max = 8.0;
  mg.pv = {0, 3, 1};
  return mg;
}

FeasibleRegion small_region(double total) {
  AggregateBox box;
  box.sum_target = total;
  box.col_lower = {0, 0, 0};
  box.col_upper = {6, 6, 6};
  return FeasibleRegion(box);
}


/// Aggregate box of the toy plus nearly parallel cuts met by a polyhedral run.
std::vector<Halfspace> near_parallel_region() {
  return {
      {{1.0, 1.0, 1.0, 1.0}, 3.3000000000000003, HalfspaceKind::eq},
      {{1.0, 0.0, 0.0, 0.0}, 1.4000000000000001, HalfspaceKind::le},
      {{-1.0, 0.0, 0.0, 0.0}, -0.0, HalfspaceKind::le},
      {{0.0, 1.0, 0.0, 0.0}, 0.4, HalfspaceKind::le},
      {{0.0, -1.0, 0.0, 0.0}, -0.0, HalfspaceKind::le},
      {{0.0, 0.0, 1.0, 0.0}, 1.7, HalfspaceKind::le},
      {{0.0, 0.0, -1.0, 0.0}, -0.0, HalfspaceKind::le},
      {{0.0, 0.0, 0.0, 1.0}, 0.8999999999999999, HalfspaceKind::le},
      {{0.0, 0.0, 0.0, -1.0}, -0.0, HalfspaceKind::le},
      {{0.20987530696421336, 0.20987626063944012, -1.0, 0.5802479555587353}, -0.7419748306274414, HalfspaceKind::le},
      {{-0.7218334003747289, 0.05237609557565629, -0.33054495356995867, 1.0}, -0.3966989517211914, HalfspaceKind::le},
      {{-0.7990342368419804, 0.09705909607490003, -0.29802823908092524, 1.0}, -0.40725040435791016, HalfspaceKind::le},
      {{-0.9148338884678601, 0.23572984827408583, -0.3209003161383575, 1.0}, -0.5018901824951172, HalfspaceKind::le},
      {{-0.8500762248669894, 0.35418604007539456, -0.5041441594112119, 1.0}, -0.6646137237548828, HalfspaceKind::le},
      {{-0.8205634438160838, 0.6102052927110803, -0.7896897977634753, 1.0}, -0.9610099792480469, HalfspaceKind::le},
      {{0.08843348679014823, 0.33524049306672404, -1.0, 0.5763180509394726}, -0.8164138793945312, HalfspaceKind::le},
      {{-0.7357208161608209, 0.7650348080295727, -1.0, 0.9706706973298553}, -1.153167724609375, HalfspaceKind::le},
      {{0.20750956011113333, 0.29544218309759107, -1.0, 0.49709064904078576}, -0.7766447067260742, HalfspaceKind::le},
      {{0.2615167640335429, 0.3128827037879901, -1.0, 0.4255872333004938}, -0.7728567123413086, HalfspaceKind::le},
      {{-0.4478305055176895, 0.6518065945022071, -1.0, 0.7958717205046374}, -1.050394058227539, HalfspaceKind::le},
      {{-0.02538304221852444, 0.4674435636984396, -1.0, 0.5579152862228665}, -0.8920698165893555, HalfspaceKind::le},
      {{0.10639088222764848, 0.42087038346421757, -1.0, 0.4725495365636014}, -0.8472013473510742, HalfspaceKind::le},
      {{-1.0, 0.4948579163963109, -0.09659134071183086, 0.6016208585385449}, -0.4656343460083008, HalfspaceKind::le},
      {{-1.0, 0.652706787856821, -0.3605338397362505, 0.7076284293346317}, -0.7135944366455078, HalfspaceKind::le},
      {{-0.3769686736320414, 0.6669711963847157, -1.0, 0.7099380429928263}, -1.0422229766845703, HalfspaceKind::le},
      {{0.30095616806662323, 0.32476616447093387, -1.0, 0.3742317121549218}, -0.7697458267211914, HalfspaceKind::le},
  };
}

}  // namespace

TEST(QuadraticMaster, ToyIterates) {
  const ToyProblem toy = toy_instance();
  FeasibleRegion region(aggregate_box(toy.instance));
  MasterSolution s = solve_quadratic_master(region, toy.cost);
  ASSERT_TRUE(s.feasible);
  const Vector p1{1.0, 0.4, 1.0, 0.9};
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(s.p[t], p1[t], 1e-9);
  EXPECT_NEAR(s.objective, toy.cost(p1), 1e-9);

  region.add_cut({{0, 1, 3}, 1.9});
  s = solve_quadratic_master(region, toy.cost);
  const Vector p2{0.75, 0.4, 1.4, 0.75};
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(s.p[t], p2[t], 1e-9);

  region.add_cut({{1, 2, 3}, 2.4});
  s = solve_quadratic_master(region, toy.cost);
  const Vector p3{0.9, 0.4, 1.4, 0.6};
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(s.p[t], p3[t], 1e-9);
}

TEST(QuadraticMaster, MatchesKktEnumeration) {
  CounterRng rng(71);
  for (int rep = 0; rep < 60; ++rep) {
    const TransportInstance inst = random_instance(3, 2 + rng.below(4), rng());
    FeasibleRegion region(aggregate_box(inst));
    for (int k = 0; k < 2; ++k) {
      const auto p = sample_infeasible_allocation(inst, 0.0, rng);
      if (!p) break;
      const HoffmanCheck h = hoffman_feasible(inst, *p);
      region.add_cut({h.time_set, strongest_n(inst, h.time_set).rhs});
    }
    const QuadraticCost cost{rng.uniform(-1, 1), rng.uniform(0.1, 1)};
    const MasterSolution s = solve_quadratic_master(region, cost);
    ASSERT_TRUE(s.feasible);
    const Vector target(inst.horizon, -cost.lin / (2 * cost.quad));
    const auto ref = oracle::project_by_kkt_enumeration(target, region.halfspaces());
    ASSERT_TRUE(ref.has_value());
    EXPECT_LE(max_abs_diff(s.p, *ref), 1e-7) << "case " << rep;
  }
}

TEST(QuadraticMaster, EmptyRegionHasCertificate) {
  const ToyProblem toy = toy_instance();
  FeasibleRegion region(aggregate_box(toy.instance));
  region.add_cut({{0, 1, 2}, 0.5});  // forces p4 >= 2.8 > 0.9
  const MasterSolution s = solve_quadratic_master(region, toy.cost);
  EXPECT_FALSE(s.feasible);
  EXPECT_GT(farkas_gap(region.feasibility_lp(), s.certificate), 0.0);
}

TEST(QuadraticMaster, DuplicateCutsAreIgnored) {
  FeasibleRegion region(aggregate_box(toy_instance().instance));
  EXPECT_TRUE(region.add_cut({{0, 1}, 1.0}));
  EXPECT_FALSE(region.add_cut({{0, 1}, 1.0}));
  EXPECT_TRUE(region.add_cut({{0, 1}, 0.9}));
}

TEST(MicrogridMaster, FixedCostCountsStartups) {
  const MicrogridSpec mg = small_spec();
  EXPECT_DOUBLE_EQ(microgrid_fixed_cost(mg, {1, 1, 1}), 4.5);
  EXPECT_DOUBLE_EQ(microgrid_fixed_cost(mg, {0, 1, 1}), 3.0 + 4.0);
  EXPECT_DOUBLE_EQ(microgrid_fixed_cost(mg, {1, 0, 1}), 3.0 + 4.0);
  EXPECT_DOUBLE_EQ(microgrid_fixed_cost(mg, {0, 0, 0}), 0.0);
}

TEST(MicrogridMaster, MatchesLatticeSearch) {
  const MicrogridSpec mg = small_spec();
  for (double total : {3.0, 7.0, 10.0, 14.0}) {
    const FeasibleRegion region = small_region(total);
    const MasterSolution s = solve_microgrid_master(region, mg);
    ASSERT_TRUE(s.feasible) << total;
    EXPECT_NEAR(s.objective, oracle::microgrid_grid_search(region, mg, 1.0), 1e-7) << total;
    EXPECT_NEAR(s.objective, oracle::microgrid_cost_of(mg, s.p), 1e-7) << total;
  }
}

TEST(MicrogridMaster, CutsRaiseTheObjective) {
  const MicrogridSpec mg = small_spec();
  FeasibleRegion region = small_region(10.0);
  const MasterSolution a = solve_microgrid_master(region, mg);
  region.add_cut({{1}, 1.0});
  const MasterSolution b = solve_microgrid_master(region, mg);
  ASSERT_TRUE(b.feasible);
  EXPECT_LE(b.p[1], 1.0 + 1e-9);
  EXPECT_GE(b.objective, a.objective - 1e-9);
  EXPECT_NEAR(b.objective, oracle::microgrid_grid_search(region, mg, 0.5), 1e-7);
}

TEST(MicrogridMaster, RandomInstanceAgreesWithCostEnumeration) {
  const TransportInstance inst = microgrid_instance(8, 4, 3);
  const FeasibleRegion region(aggregate_box(inst));
  const MasterSolution s = solve_microgrid_master(region, *inst.microgrid);
  ASSERT_TRUE(s.feasible);
  EXPECT_TRUE(region.contains(s.p, 1e-7));
  EXPECT_NEAR(s.objective, oracle::microgrid_cost_of(*inst.microgrid, s.p), 1e-6);
  EXPECT_LE(s.objective, oracle::microgrid_grid_search(region, *inst.microgrid, 1.0) + 1e-7);
}

TEST(MicrogridMaster, RejectsLongHorizon) {
  MicrogridSpec mg = small_spec();
  mg.horizon = 17;
  AggregateBox box{1.0, Vector(17, 0.0), Vector(17, 1.0)};
  EXPECT_THROW(solve_microgrid_master(FeasibleRegion(box), mg), std::invalid_argument);
}

TEST(ExactProjection, NearParallelCutsConverge) {
  const auto hs = near_parallel_region();
  const Vector target(4, -4.0);
  const QpResult dual = project_polyhedron_dual(target, hs, 1e-12);
  ASSERT_TRUE(dual.converged);
  EXPECT_LE(kkt_residual(target, hs, dual.point, dual.multipliers), 1e-10);
  // certificate by hand: feasible, signed multipliers, complementary, target - z = sum mu_i a_i
  Vector stationarity(4, 0.0);
  for (std::size_t i = 0; i < hs.size(); ++i) {
    EXPECT_LE(hs[i].violation(dual.point), 1e-10);
    if (hs[i].kind == HalfspaceKind::le) {
      EXPECT_GE(dual.multipliers[i], 0.0);
      EXPECT_LE(dual.multipliers[i] * std::abs(hs[i].value(dual.point)), 1e-10);
    }
    for (std::size_t t = 0; t < 4; ++t) stationarity[t] += dual.multipliers[i] * hs[i].normal[t];
  }
  for (std::size_t t = 0; t < 4; ++t) EXPECT_NEAR(target[t] - dual.point[t], stationarity[t], 1e-10);
}
