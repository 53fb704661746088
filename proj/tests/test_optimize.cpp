#include "chvel/optimize.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace chvel;

namespace {

constexpr double kPi = 3.14159265358979323846;

StateParams small_params() {
  StateParams sp;
  sp.T = 0.25;
  sp.dt = 0.0625;
  sp.newton_tol = 1e-12;
  return sp;
}

GridPtr small_grid() { return build_grid({8, 8, 8.0, 8.0}); }

CostSpec weights(const GridPtr& grid, std::array<double, 7> beta) {
  CostSpec c = CostSpec::zero_targets(grid);
  c.beta = beta;
  return c;
}

ControlTrajectory uniform_flow(const GridPtr& grid, int steps, double dt, double c) {
  return ControlTrajectory::from_stream_function(grid, steps, dt, [&](double, double y, double) { return c * y; });
}

ControlTrajectory bump(const GridPtr& grid, int steps, double dt, double a) {
  return ControlTrajectory::from_stream_function(grid, steps, dt, [&](double x, double y, double t) {
    return a * (1 + t) * std::pow(std::sin(kPi * y / 8), 2) * std::cos(kPi * x / 4);
  });
}

}  // namespace

TEST(Cost, ConstantStateAgainstZeroTargetsHasClosedForm) {
  // rho = 0.2 is stationary, so every tracking term is an area times 0.04.
  auto grid = small_grid();
  PotentialPair same;
  same.surface = same.bulk;
  const StateSolver s2(grid, small_params(), same);
  const auto u = ControlTrajectory::zero(grid, 4, 0.0625);
  const auto tr = s2.solve(CoupledField::constant(grid, 0.2), u);
  const double T = 0.25;
  const double area = 64.0;
  const double len = 16.0;
  EXPECT_NEAR(evaluate_cost(tr, u, weights(grid, {0, 0, 1, 0, 0, 0, 0})), 0.5 * T * 0.04 * area, 1e-12);
  EXPECT_NEAR(evaluate_cost(tr, u, weights(grid, {0, 0, 0, 1, 0, 0, 0})), 0.5 * T * 0.04 * len, 1e-12);
  EXPECT_NEAR(evaluate_cost(tr, u, weights(grid, {0, 0, 0, 0, 1, 0, 0})), 0.5 * 0.04 * area, 1e-12);
  EXPECT_NEAR(evaluate_cost(tr, u, weights(grid, {0, 0, 0, 0, 0, 1, 0})), 0.5 * 0.04 * len, 1e-12);
}

TEST(Cost, ControlPenaltyOfUniformFlow) {
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  const double c = 0.3;
  const auto u = uniform_flow(grid, 4, 0.0625, c);
  const auto tr = solver.solve(initial_data(grid, {ProfileKind::stripe, 0.0, 0.3, 1, 0}), u);
  EXPECT_NEAR(evaluate_cost(tr, u, weights(grid, {0, 0, 0, 0, 0, 0, 2.0})), c * c * 0.25 * 64.0, 1e-12);
}

TEST(Cost, VanishesWhenTheStateIsTheTarget) {
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  const auto u = bump(grid, 4, 0.0625, 0.1);
  const auto tr = solver.solve(initial_data(grid, {ProfileKind::stripe, 0.0, 0.5, 1, 0}), u);
  CostSpec c = weights(grid, {0, 0, 1, 1, 1, 1, 0});
  std::vector<CoupledField> lv;
  for (const auto& s : tr.snapshots) lv.push_back(s.rho);
  c.rho_Q = TargetSeries(lv);
  c.rho_Sigma = TargetSeries(lv);
  c.rho_Omega = c.rho_Gamma = tr.snapshots.back().rho;
  EXPECT_EQ(evaluate_cost(tr, u, c), 0.0);
}

TEST(Cost, IsLinearInTheWeights) {
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  const auto u = bump(grid, 4, 0.0625, 0.1);
  const auto tr = solver.solve(initial_data(grid, {ProfileKind::stripe, 0.0, 0.5, 1, 0}), u);
  const double a = evaluate_cost(tr, u, weights(grid, {0, 0, 1, 0.5, 2, 0.1, 0.3}));
  const double b = evaluate_cost(tr, u, weights(grid, {0, 0, 2, 1, 4, 0.2, 0.6}));
  EXPECT_NEAR(b, 2 * a, 1e-13 * b);
}

TEST(Cost, RejectsMismatchedTargetsAndNegativeWeights) {
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  const auto u = ControlTrajectory::zero(grid, 4, 0.0625);
  const auto tr = solver.solve(CoupledField::constant(grid, 0.1), u);
  CostSpec c = weights(grid, {0, 0, 1, 0, 0, 0, 0});
  c.rho_Q = TargetSeries(std::vector<CoupledField>(3, CoupledField::zero(grid)));
  EXPECT_THROW(evaluate_cost(tr, u, c), CostMismatch);
  CostSpec d = weights(grid, {0, 0, -1, 0, 0, 0, 0});
  EXPECT_EQ(check(d).size(), 1u);
  EXPECT_THROW(ReducedProblem(solver, CoupledField::constant(grid, 0.1), d), std::invalid_argument);
  EXPECT_TRUE(all_weights_zero(weights(grid, {0, 0, 0, 0, 0, 0, 0})));
}

TEST(Targets, ShearedStripeMovesWithTime) {
  auto grid = small_grid();
  TargetProfile p;
  p.kind = TargetKind::sheared_stripe;
  p.amplitude = 0.8;
  p.shear = 0.2;
  const TargetSeries s = target_series(grid, p, 4, 0.0625);
  EXPECT_EQ(s.size(), 5u);
  EXPECT_GT((s.at(4).bulk() - s.at(0).bulk()).norm(), 0.0);
  p.kind = TargetKind::constant;
  p.value = 0.25;
  EXPECT_EQ(target_series(grid, p, 4, 0.0625).size(), 1u);
  EXPECT_EQ(target_field(grid, p, 0.0).max(), 0.25);
  EXPECT_THROW(parse_target_kind("spiral"), std::invalid_argument);
}

TEST(ReducedGradient, IsDivergenceFreeAndKeepsThePairing) {
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  CostSpec c = weights(grid, {0, 0, 1, 0, 1, 0, 1e-3});
  c.rho_Q = TargetSeries(CoupledField::from_function(grid, [](double x, double) { return 0.5 * std::sin(kPi * x / 4); }));
  const ReducedProblem prob(solver, initial_data(grid, {ProfileKind::stripe, 0.0, 0.5, 1, 0}), c);
  const auto u = bump(grid, 4, 0.0625, 0.1);
  const auto ev = prob.evaluate(u);
  EXPECT_EQ(ev.gradient.at(0).edge_values().cwiseAbs().maxCoeff(), 0.0);
  std::mt19937_64 rng(1);
  for (int n = 1; n <= 4; ++n) EXPECT_LE(ev.gradient.at(n).divergence().cwiseAbs().maxCoeff(), 1e-10);
  for (int i = 0; i < 5; ++i) {
    const auto h = random_control(grid, 4, 0.0625, rng);
    const double raw = pair_gradient(*grid, ev.raw_gradient, h);
    EXPECT_NEAR(ev.gradient.inner(h), raw, 1e-10 * std::max(1.0, std::abs(raw)));
  }
}

TEST(ReducedGradient, ControlPenaltyAloneGivesGradientEqualToControl) {
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  const ReducedProblem prob(solver, initial_data(grid, {ProfileKind::stripe, 0.0, 0.5, 1, 0}),
                            weights(grid, {0, 0, 0, 0, 0, 0, 0.7}));
  const auto u = bump(grid, 4, 0.0625, 0.2);
  const auto ev = prob.evaluate(u);
  for (int n = 1; n <= 4; ++n) {
    EXPECT_LE((ev.gradient.at(n).edge_values() - 0.7 * u.at(n).edge_values()).cwiseAbs().maxCoeff(), 1e-10);
  }
  const auto none = ReducedProblem(solver, prob.rho0(), weights(grid, {0, 0, 0, 0, 0, 0, 0})).evaluate(u);
  EXPECT_EQ(q_norm(none.gradient), 0.0);
  // Doubling the weights doubles the gradient.
  const auto twice = ReducedProblem(solver, prob.rho0(), weights(grid, {0, 0, 0, 0, 0, 0, 1.4})).evaluate(u);
  EXPECT_NEAR(q_norm(twice.gradient), 2 * q_norm(ev.gradient), 1e-12);
}

TEST(Optimize, ControlPenaltyOnlyFromZeroStopsImmediately) {
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  const ReducedProblem prob(solver, initial_data(grid, {ProfileKind::stripe, 0.0, 0.5, 1, 0}),
                            weights(grid, {0, 0, 0, 0, 0, 0, 1}));
  const auto res = optimize(prob, {1.0, 10.0}, OptimizerConfig{}, ControlTrajectory::zero(grid, 4, 0.0625));
  ASSERT_EQ(res.trace.rows.size(), 1u);
  EXPECT_EQ(res.trace.rows[0].cost, 0.0);
  EXPECT_EQ(res.trace.termination, "tolerance");
}

TEST(Optimize, ControlPenaltyOnlyReachesZeroInOneUnitStep) {
  // J = |u|^2/2 has gradient u, so P(u - 1 * u) = 0 is the minimiser.
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  const ReducedProblem prob(solver, initial_data(grid, {ProfileKind::stripe, 0.0, 0.5, 1, 0}),
                            weights(grid, {0, 0, 0, 0, 0, 0, 1}));
  const auto res = optimize(prob, {1.0, 10.0}, OptimizerConfig{}, bump(grid, 4, 0.0625, 0.1));
  ASSERT_GE(res.trace.rows.size(), 2u);
  EXPECT_LE(res.trace.rows[1].cost, 1e-16);
  EXPECT_EQ(res.trace.termination, "tolerance");
}

TEST(Optimize, UncontrolledTargetIsAlreadyOptimal) {
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  const CoupledField rho0 = initial_data(grid, {ProfileKind::stripe, 0.0, 0.5, 1, 0});
  const auto zero = ControlTrajectory::zero(grid, 4, 0.0625);
  const auto tr = solver.solve(rho0, zero);
  CostSpec c = weights(grid, {0, 0, 1, 0, 1, 0, 1e-3});
  std::vector<CoupledField> lv;
  for (const auto& s : tr.snapshots) lv.push_back(s.rho);
  c.rho_Q = TargetSeries(lv);
  c.rho_Omega = tr.snapshots.back().rho;
  const auto res = optimize(ReducedProblem(solver, rho0, c), {1.0, 10.0}, OptimizerConfig{}, zero);
  ASSERT_EQ(res.trace.rows.size(), 1u);
  EXPECT_EQ(res.trace.rows[0].cost, 0.0);
  EXPECT_LE(res.trace.rows[0].stationarity, 1e-12);
}

TEST(Optimize, IteratesAreAdmissibleAndCostDecreases) {
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  CostSpec c = weights(grid, {0, 0, 1, 0, 1, 0, 1e-3});
  TargetProfile tp;
  tp.kind = TargetKind::sheared_stripe;
  tp.amplitude = 0.8;
  tp.shear = 0.2;
  c.rho_Q = target_series(grid, tp, 4, 0.0625);
  c.rho_Omega = target_field(grid, tp, 0.25);
  const ReducedProblem prob(solver, initial_data(grid, {ProfileKind::stripe, 0.0, 0.5, 1, 0}), c);
  OptimizerConfig cfg;
  cfg.max_iters = 8;
  const AdmissibleSet set{0.5, 5.0};
  const auto res = optimize(prob, set, cfg, ControlTrajectory::zero(grid, 4, 0.0625));
  ASSERT_GE(res.trace.rows.size(), 2u);
  for (std::size_t i = 1; i < res.trace.rows.size(); ++i) {
    EXPECT_LE(res.trace.rows[i].cost, res.trace.rows[i - 1].cost);
    EXPECT_TRUE(res.trace.rows[i].admissible);
  }
  EXPECT_LT(res.trace.rows.back().cost, res.trace.rows.front().cost);
  EXPECT_TRUE(is_admissible(res.u_star, set));
  EXPECT_EQ(res.trace.failed_trials, 0);
  // Variational inequality on random admissible probes, up to the reached
  // stationarity.
  std::mt19937_64 rng(2);
  std::vector<ControlTrajectory> probes;
  for (int i = 0; i < 5; ++i) probes.push_back(random_admissible(grid, 4, 0.0625, set, rng));
  const double scale = q_norm(res.gradient) * 2 * set.R0;
  EXPECT_GE(optimality_residual(res.u_star, res.gradient, probes), -scale);
}

TEST(Optimize, InadmissibleStartIsProjectedWithWarning) {
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  const ReducedProblem prob(solver, initial_data(grid, {ProfileKind::stripe, 0.0, 0.5, 1, 0}),
                            weights(grid, {0, 0, 0, 0, 0, 0, 1}));
  OptimizerConfig cfg;
  cfg.max_iters = 0;
  const auto res = optimize(prob, {0.01, 10.0}, cfg, uniform_flow(grid, 4, 0.0625, 1.0));
  ASSERT_EQ(res.trace.warnings.size(), 1u);
  EXPECT_EQ(res.trace.warnings[0], "start_projected");
  EXPECT_TRUE(res.trace.rows[0].admissible);
  EXPECT_NEAR(res.u_star.norms().linf, 0.01, 1e-15);
}

TEST(Optimize, ConfigurationIsValidated) {
  OptimizerConfig cfg;
  cfg.armijo_c = 1.5;
  cfg.armijo_shrink = 0.0;
  cfg.step0 = -1;
  EXPECT_EQ(check(cfg).size(), 3u);
  auto grid = small_grid();
  const StateSolver solver(grid, small_params(), PotentialPair{});
  const ReducedProblem prob(solver, CoupledField::constant(grid, 0.0), weights(grid, {0, 0, 0, 0, 0, 0, 1}));
  EXPECT_THROW(optimize(prob, {1.0, 10.0}, cfg, ControlTrajectory::zero(grid, 4, 0.0625)), std::invalid_argument);
  EXPECT_THROW(optimize(prob, {-1.0, 10.0}, OptimizerConfig{}, ControlTrajectory::zero(grid, 4, 0.0625)),
               std::invalid_argument);
}

TEST(Optimality, ResidualTrivialCases) {
  auto grid = small_grid();
  const auto u = bump(grid, 4, 0.0625, 0.1);
  const auto g = bump(grid, 4, 0.0625, 0.3);
  EXPECT_EQ(optimality_residual(u, g, {}), 0.0);
  EXPECT_EQ(optimality_residual(u, g, {u}), 0.0);
  EXPECT_NEAR(optimality_residual(u, g, {u + g}), g.inner(g), 1e-15);
  EXPECT_EQ(stationarity_measure(u, ControlTrajectory::zero(grid, 4, 0.0625), {1.0, 10.0}, 1.0), 0.0);
}

TEST(Optimality, RandomAdmissibleControlsAreAdmissibleAndSeeded) {
  auto grid = small_grid();
  const AdmissibleSet set{0.3, 1.0};
  std::mt19937_64 a(5), b(5);
  for (int i = 0; i < 20; ++i) {
    const auto u = random_admissible(grid, 4, 0.0625, set, a);
    const auto v = random_admissible(grid, 4, 0.0625, set, b);
    EXPECT_TRUE(is_admissible(u, set));
    EXPECT_EQ((u.at(3).stream() - v.at(3).stream()).norm(), 0.0);
  }
}

TEST(TraceFormat, HeaderAndWarnings) {
  OptimizationTrace tr;
  tr.termination = "tolerance";
  tr.warnings.push_back("start_projected");
  tr.rows.push_back({0, 1.5, 0.5, 0.25, 0.0, true, false, true});
  std::ostringstream os;
  write_trace(os, tr);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line,
            "# chvel.trace v1 columns=iter,cost,grad_norm,step,linf_active,xnorm_active,stationarity,admissible "
            "termination=tolerance failed_trials=0");
  std::getline(is, line);
  EXPECT_EQ(line, "# warning start_projected");
  std::getline(is, line);
  EXPECT_EQ(line, "0,1.5000000000000000e+00,5.0000000000000000e-01,0.0000000000000000e+00,1,0,2.5000000000000000e-01,1");
}
