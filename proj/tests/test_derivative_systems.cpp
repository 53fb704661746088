#include "chvel/derivatives.hpp"
#include "chvel/optimize.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace chvel;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Bench {
  GridPtr grid;
  StateSolver solver;
  CoupledField rho0;
  ControlTrajectory u;
  CostSpec cost;
};

Bench make_setup(PotentialKind kind = PotentialKind::polynomial) {
  GridPtr grid = build_grid({10, 10, 8.0, 8.0});
  StateParams sp;
  sp.T = 0.5;
  sp.dt = 0.0625;
  sp.newton_tol = 1e-12;
  PotentialPair pots;
  if (kind == PotentialKind::polynomial) {
    pots.bulk = {PotentialKind::polynomial, 1.0, 0.5};
    pots.surface = {PotentialKind::polynomial, 1.0, 0.5};
  }
  StateSolver solver(grid, sp, pots);
  CoupledField rho0 = initial_data(grid, {ProfileKind::stripe, 0.1, 0.6, 1, 0});
  ControlTrajectory u = ControlTrajectory::from_stream_function(
      grid, sp.steps(), sp.dt, [](double x, double y, double t) {
        return 0.05 * (y - 4) * (y - 4) + 0.2 * (1 + t) * std::sin(kPi * y / 8) * std::sin(kPi * y / 8) *
                                              std::cos(kPi * x / 4);
      });
  CostSpec cost = CostSpec::zero_targets(grid);
  cost.beta = {0, 0, 1, 1, 1, 1, 1e-3};
  const CoupledField stripe =
      CoupledField::from_function(grid, [](double x, double y) { return 0.8 * std::cos(kPi * (x + 0.2 * y) / 4); });
  cost.rho_Q = TargetSeries(stripe);
  cost.rho_Sigma = TargetSeries(stripe);
  cost.rho_Omega = stripe;
  cost.rho_Gamma = CoupledField::constant(grid, 0.3);
  return {grid, std::move(solver), std::move(rho0), std::move(u), std::move(cost)};
}

std::vector<ControlTrajectory> directions(const Bench& s, int count, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::vector<ControlTrajectory> out;
  for (int i = 0; i < count; ++i) {
    ControlTrajectory h = random_control(s.grid, s.u.steps(), s.u.dt(), rng);
    out.push_back((1.0 / h.norms().combined) * h);
  }
  return out;
}

double max_abs(const std::vector<LinearizedSnapshot>& lin) {
  double m = 0.0;
  for (const auto& l : lin) m = std::max({m, l.eta.bulk().cwiseAbs().maxCoeff(), l.xi.bulk().cwiseAbs().maxCoeff()});
  return m;
}

Vector random_vector(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  Vector v(n);
  for (auto& x : v) x = nd(rng);
  return v;
}

}  // namespace

class DerivativeSystems : public ::testing::Test {
 protected:
  void SetUp() override {
    base_ = s_.solver.solve(s_.rho0, s_.u);
    stepper_ = std::make_unique<LinearizedStepper>(s_.solver, base_, s_.u);
  }
  Bench s_ = make_setup();
  StateTrajectory base_;
  std::unique_ptr<LinearizedStepper> stepper_;
};

TEST_F(DerivativeSystems, ZeroDirectionGivesZeroResponse) {
  const auto lin = solve_linearized(*stepper_, ControlTrajectory::zero(s_.grid, s_.u.steps(), s_.u.dt()));
  EXPECT_EQ(max_abs(lin), 0.0);
}

TEST_F(DerivativeSystems, LinearizedMapIsLinear) {
  const auto d = directions(s_, 2, 1);
  const auto l1 = solve_linearized(*stepper_, d[0]);
  const auto l2 = solve_linearized(*stepper_, d[1]);
  const auto l12 = solve_linearized(*stepper_, 2.0 * d[0] + (-3.0) * d[1]);
  const double scale = max_abs(l12);
  for (std::size_t n = 0; n < l12.size(); ++n) {
    const Vector e = l12[n].xi.bulk() - 2.0 * l1[n].xi.bulk() + 3.0 * l2[n].xi.bulk();
    const Vector m = l12[n].eta.bulk() - 2.0 * l1[n].eta.bulk() + 3.0 * l2[n].eta.bulk();
    EXPECT_LE(e.cwiseAbs().maxCoeff(), 1e-11 * scale);
    EXPECT_LE(m.cwiseAbs().maxCoeff(), 1e-11 * scale);
  }
}

TEST_F(DerivativeSystems, LinearizedStateConservesMass) {
  const auto lin = solve_linearized(*stepper_, directions(s_, 1, 2).front());
  for (const auto& l : lin) EXPECT_LE(std::abs(s_.grid->mass().dot(l.xi.bulk())), 1e-12);
}

TEST_F(DerivativeSystems, LinearizedStateMatchesFiniteDifferenceOfTheSolver) {
  const ControlTrajectory h = directions(s_, 1, 3).front();
  const auto lin = solve_linearized(*stepper_, h);
  const double eps = 1e-5;
  const StateTrajectory p = s_.solver.solve(s_.rho0, s_.u + eps * h);
  const StateTrajectory m = s_.solver.solve(s_.rho0, s_.u + (-eps) * h);
  const double scale = max_abs(lin);
  for (std::size_t n = 1; n < lin.size(); ++n) {
    const Vector fd = (p.snapshots[n].rho.bulk() - m.snapshots[n].rho.bulk()) / (2 * eps);
    EXPECT_LE((fd - lin[n].xi.bulk()).cwiseAbs().maxCoeff(), 1e-6 * scale) << "level " << n;
  }
}

TEST_F(DerivativeSystems, AdjointPairingMatchesLinearizedForm) {
  const StateSensitivity sens = state_sensitivity(base_, s_.cost);
  const AdjointTrajectory adj = solve_adjoint(*stepper_, sens, s_.cost, s_.solver.tau_mass());
  const auto g = raw_gradient(*stepper_, adj, s_.u, s_.cost);
  for (const auto& h : directions(s_, 5, 4)) {
    const double lhs = pair_gradient(*s_.grid, g, h);
    const double rhs = linearized_objective_form(solve_linearized(*stepper_, h), sens, s_.cost, s_.u, h);
    EXPECT_LE(std::abs(lhs - rhs), 1e-8 * std::max(std::abs(lhs), std::abs(rhs)));
  }
}

TEST_F(DerivativeSystems, GradientMatchesCentralDifferenceOfTheCost) {
  const ReducedProblem prob(s_.solver, s_.rho0, s_.cost);
  const auto ev = prob.evaluate(s_.u);
  for (const auto& h : directions(s_, 3, 5)) {
    const double eps = 1e-4;
    const double fd = (prob.cost(s_.u + eps * h) - prob.cost(s_.u + (-eps) * h)) / (2 * eps);
    const double adj = pair_gradient(*s_.grid, ev.raw_gradient, h);
    EXPECT_LE(std::abs(fd - adj), 1e-6 * std::abs(adj));
  }
}

TEST_F(DerivativeSystems, TransposedStepIsTheHAdjoint) {
  std::mt19937_64 rng(6);
  const Grid& g = *s_.grid;
  for (int rep = 0; rep < 5; ++rep) {
    for (int k = 1; k <= stepper_->steps(); ++k) {
      const Vector xi = random_vector(g.node_count(), rng);
      const Vector b = random_vector(g.node_count(), rng);
      const double lhs = g.inner_H(stepper_->propagate(k, xi), b);
      const double rhs = g.inner_H(xi, stepper_->propagate_adjoint(k, b));
      EXPECT_LE(std::abs(lhs - rhs), 1e-12 * std::max(1.0, std::abs(lhs))) << "level " << k;
    }
  }
}

TEST_F(DerivativeSystems, EdgePairingRepresentsTheControlOperator) {
  std::mt19937_64 rng(7);
  const Grid& g = *s_.grid;
  const auto h = directions(s_, 1, 8).front();
  for (int k = 1; k <= stepper_->steps(); ++k) {
    const Vector lam = random_vector(2 * g.node_count(), rng);
    const double lhs = lam.dot(stepper_->apply_E(k, h.at(k)));
    const double rhs = g.edge_weights().cwiseProduct(stepper_->edge_pairing(k, lam.head(g.node_count()))).dot(h.at(k).edge_values());
    EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_F(DerivativeSystems, ZeroWeightsGiveZeroAdjoint) {
  CostSpec c = s_.cost;
  c.beta = {0, 0, 0, 0, 0, 0, 0};
  const AdjointTrajectory adj = solve_adjoint(*stepper_, state_sensitivity(base_, c), c, s_.solver.tau_mass());
  for (const auto& l : adj.levels) {
    EXPECT_LE(l.p.bulk().cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE(l.q.bulk().cwiseAbs().maxCoeff(), 1e-12);
  }
  const auto g = raw_gradient(*stepper_, adj, s_.u, c);
  for (const auto& v : g) EXPECT_EQ(v.cwiseAbs().maxCoeff(), 0.0);
}

TEST_F(DerivativeSystems, ReachedFinalTargetGivesZeroAdjoint) {
  CostSpec c = s_.cost;
  c.beta = {0, 0, 0, 0, 1, 0, 0};
  c.rho_Omega = base_.snapshots.back().rho;
  const AdjointTrajectory adj = solve_adjoint(*stepper_, state_sensitivity(base_, c), c, s_.solver.tau_mass());
  for (const auto& l : adj.levels) EXPECT_LE(l.p.bulk().cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(DerivativeSystems, MuTrackingIsRejected) {
  CostSpec c = s_.cost;
  c.beta[0] = 1.0;
  EXPECT_THROW(solve_adjoint(*stepper_, state_sensitivity(base_, c), c, s_.solver.tau_mass()), AdjointUnsupported);
  c.beta[0] = 0.0;
  c.beta[1] = 0.5;
  EXPECT_THROW(solve_adjoint(*stepper_, state_sensitivity(base_, c), c, s_.solver.tau_mass()), AdjointUnsupported);
}

TEST_F(DerivativeSystems, TerminalPairSatisfiesTheFinalCondition) {
  const StateSensitivity sens = state_sensitivity(base_, s_.cost);
  const AdjointTrajectory adj = solve_adjoint(*stepper_, sens, s_.cost, s_.solver.tau_mass());
  const AdjointSnapshot& t = adj.terminal();
  const Grid& g = *s_.grid;
  EXPECT_LE(final_condition_residual(g, s_.solver.tau_mass(), t, sens.final), 1e-12);
  // Second relation: K p = M q.
  const Vector r = g.stiffness() * t.p.bulk() - g.mass().cwiseProduct(t.q.bulk());
  EXPECT_LE(r.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(adj.steps(), stepper_->steps());
}

TEST_F(DerivativeSystems, ObjectiveFormVanishesWithoutSensitivities) {
  CostSpec c = s_.cost;
  c.beta = {0, 0, 0, 0, 0, 0, 0};
  const auto h = directions(s_, 1, 9).front();
  const auto lin = solve_linearized(*stepper_, h);
  EXPECT_EQ(linearized_objective_form(lin, state_sensitivity(base_, c), c, s_.u, h), 0.0);
  c.beta[6] = 2.0;
  EXPECT_NEAR(linearized_objective_form(lin, state_sensitivity(base_, c), c, s_.u, h), 2.0 * s_.u.inner(h), 1e-14);
}

TEST_F(DerivativeSystems, WrongDirectionLengthIsRejected) {
  EXPECT_THROW(solve_linearized(*stepper_, ControlTrajectory::zero(s_.grid, 3, s_.u.dt())), std::invalid_argument);
}

TEST(DerivativeProbes, RemainderIsSecondOrderAndQuotientFirstOrder) {
  const Bench s = make_setup(PotentialKind::logarithmic);
  const ControlTrajectory h = directions(s, 1, 10).front();
  const std::vector<double> eps{1e-1, 5e-2, 2.5e-2, 1.25e-2};
  const ProbeReport rem = frechet_remainder_probe(s.solver, s.rho0, s.u, h, eps);
  const ProbeReport quo = difference_quotient_probe(s.solver, s.rho0, s.u, h, eps);
  EXPECT_GE(rem.slope, 1.8);
  EXPECT_LE(rem.slope, 2.2);
  EXPECT_GE(quo.slope, 0.9);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    // The remainder and the quotient error differ exactly by the factor eps.
    EXPECT_NEAR(rem.rows[i].value, eps[i] * quo.rows[i].value, 1e-10 * rem.rows[i].value);
  }
}

TEST(DerivativeProbes, OppositeDirectionsAgreeToLeadingOrder) {
  // r(h) - r(-h) is odd in eps, so the relative gap shrinks like eps.
  const Bench s = make_setup(PotentialKind::logarithmic);
  const ControlTrajectory h = directions(s, 1, 11).front();
  const std::vector<double> eps{4e-2, 1e-2};
  const ProbeReport plus = frechet_remainder_probe(s.solver, s.rho0, s.u, h, eps);
  const ProbeReport minus = frechet_remainder_probe(s.solver, s.rho0, s.u, -1.0 * h, eps);
  const double gap0 = std::abs(plus.rows[0].value - minus.rows[0].value) / plus.rows[0].value;
  const double gap1 = std::abs(plus.rows[1].value - minus.rows[1].value) / plus.rows[1].value;
  EXPECT_LT(gap0, 0.5);
  EXPECT_LT(gap1, 0.5 * gap0);
}

TEST(DerivativeProbes, LogLogSlopeOfPowerLaw) {
  std::vector<ProbeRow> rows;
  for (double e : {1.0, 0.5, 0.25, 0.125}) rows.push_back({e, 3.0 * e * e * e});
  EXPECT_NEAR(loglog_slope(rows), 3.0, 1e-12);
}

TEST(DerivativeProbes, YNormOfConstantPair) {
  // z = y = c on every level: each part reduces to a closed form.
  auto grid = build_grid({6, 6, 1.0, 1.0});
  const double dt = 0.25;
  const Vector c = Vector::Constant(grid->node_count(), 2.0);
  const std::vector<Vector> z(5, c);
  const std::vector<Vector> y(5, c);
  const double v = grid->norm_V(c);
  const double h = grid->norm_H(c);
  EXPECT_NEAR(y_norm(*grid, dt, z, y), std::sqrt(4 * dt * v * v) + std::sqrt(4 * dt * h * h) + v, 1e-12);
}

TEST(DerivativeOutput, TablesCarryVersionedHeaders) {
  const Bench s = make_setup();
  const StateTrajectory base = s.solver.solve(s.rho0, s.u);
  const LinearizedStepper st(s.solver, base, s.u);
  std::ostringstream a;
  write_linearized(a, solve_linearized(st, s.u));
  EXPECT_EQ(a.str().rfind("# chvel.linearized v1", 0), 0u);
  std::ostringstream b;
  write_adjoint(b, solve_adjoint(st, state_sensitivity(base, s.cost), s.cost, s.solver.tau_mass()));
  EXPECT_EQ(b.str().rfind("# chvel.adjoint v1", 0), 0u);
}
