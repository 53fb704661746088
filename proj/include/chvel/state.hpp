#pragma once

#include "chvel/grid.hpp"
#include "chvel/potentials.hpp"
#include "chvel/velocity.hpp"

#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace chvel {

struct StateParams {
  double tau_omega = 1.0;
  double tau_gamma = 1.0;
  double T = 0.05;
  double dt = 1e-3;
  double newton_tol = 1e-10;
  int newton_max_iter = 50;

  [[nodiscard]] int steps() const { return static_cast<int>(std::llround(T / dt)); }
};

/// Collects every violated constraint instead of stopping at the first.
inline std::vector<std::string> check(const StateParams& p) {
  std::vector<std::string> errs;
  if (!(p.tau_omega > 0.0)) errs.emplace_back("tau_omega must be positive");
  if (!(p.tau_gamma > 0.0)) errs.emplace_back("tau_gamma must be positive");
  if (!(p.T >= 0.0)) errs.emplace_back("T must be nonnegative");
  if (!(p.dt > 0.0)) errs.emplace_back("dt must be positive");
  if (!(p.newton_tol > 0.0)) errs.emplace_back("newton_tol must be positive");
  if (p.newton_max_iter < 1) errs.emplace_back("newton_max_iter must be at least 1");
  if (p.dt > 0.0 && p.T >= 0.0) {
    const double n = p.T / p.dt;
    if (std::abs(n - std::round(n)) > 1e-9 * std::max(1.0, n)) errs.emplace_back("dt does not divide T");
  }
  return errs;
}

inline void validate(const StateParams& p) {
  const auto errs = check(p);
  if (!errs.empty()) throw std::invalid_argument("state params: " + errs.front());
}

struct StateSnapshot {
  CoupledField mu;
  CoupledField rho;
};

struct LevelDiagnostics {
  double time = 0.0;
  double mass = 0.0;
  double rho_min = 0.0;
  double rho_max = 0.0;
  double energy = 0.0;
  int newton_iterations = 0;
};

struct StateTrajectory {
  std::vector<StateSnapshot> snapshots;
  std::vector<LevelDiagnostics> diagnostics;
  double dt = 0.0;

  [[nodiscard]] int steps() const { return static_cast<int>(snapshots.size()) - 1; }
};

/// Newton failure inside one time step; carries the residual history.
class NewtonError : public std::runtime_error {
 public:
  NewtonError(const std::string& what, std::vector<double> history)
      : std::runtime_error(what), history_(std::move(history)) {}
  [[nodiscard]] const std::vector<double>& history() const { return history_; }

 private:
  std::vector<double> history_;
};

/// A step failure annotated with the level being computed.
class StepError : public std::runtime_error {
 public:
  StepError(const std::string& what, int index) : std::runtime_error(what), index_(index) {}
  [[nodiscard]] int index() const { return index_; }

 private:
  int index_;
};

class InitialDataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class ProfileKind { constant, stripe, random };

struct InitialProfile {
  ProfileKind kind = ProfileKind::stripe;
  double value = 0.0;      // constant value / mean of stripe and random profiles
  double amplitude = 0.5;  // stripe and random
  int wavenumber = 1;      // stripe: cos(2 pi k x / L)
  unsigned seed = 0;       // random
};

/// rho_0 on the grid; every value must lie strictly inside (-1,1).
inline CoupledField initial_data(const GridPtr& grid, const InitialProfile& p) {
  const Grid& g = *grid;
  Vector v(g.node_count());
  switch (p.kind) {
    case ProfileKind::constant: v.setConstant(p.value); break;
    case ProfileKind::stripe: {
      const double k = 2.0 * 3.14159265358979323846 * p.wavenumber / g.spec().length_x;
      for (int n = 0; n < v.size(); ++n) v[n] = p.value + p.amplitude * std::cos(k * g.x(g.ix(n)));
      break;
    }
    case ProfileKind::random: {
      std::mt19937_64 rng(p.seed);
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (int n = 0; n < v.size(); ++n) v[n] = p.value + p.amplitude * dist(rng);
      break;
    }
  }
  if (!v.allFinite() || v.maxCoeff() >= 1.0 || v.minCoeff() <= -1.0) {
    throw InitialDataError("initial data must lie strictly inside (-1,1)");
  }
  return {grid, std::move(v)};
}

/// Lumped nodal evaluation of the bulk and surface potentials. Wall nodes
/// carry both the bulk weight and the surface weight.
class NodalPotential {
 public:
  NodalPotential(GridPtr grid, PotentialPair pots) : grid_(std::move(grid)), pots_(pots) {}

  [[nodiscard]] const PotentialPair& pair() const { return pots_; }
  [[nodiscard]] bool logarithmic() const {
    return pots_.bulk.kind == PotentialKind::logarithmic || pots_.surface.kind == PotentialKind::logarithmic;
  }

  /// sum_k (Mb_k f^(order)(r_k) + Ms_k f_G^(order)(r_k)) e_k for the convex part.
  [[nodiscard]] Vector convex(int order, const Vector& r) const { return eval(r, order, true); }
  [[nodiscard]] Vector concave(int order, const Vector& r) const { return eval(r, order, false); }

  [[nodiscard]] double energy_density_sum(const Vector& r) const {
    return convex(0, r).sum() + concave(0, r).sum();
  }

 private:
  [[nodiscard]] Vector eval(const Vector& r, int order, bool convex_part_wanted) const {
    const Grid& g = *grid_;
    Vector out(r.size());
    for (int k = 0; k < r.size(); ++k) {
      const double fb = convex_part_wanted ? convex_part(pots_.bulk, order, r[k]) : concave_part(pots_.bulk, order, r[k]);
      double v = g.bulk_weights()[k] * fb;
      if (g.is_wall_node(k)) {
        const double fs = convex_part_wanted ? convex_part(pots_.surface, order, r[k])
                                             : concave_part(pots_.surface, order, r[k]);
        v += g.surface_weights()[k] * fs;
      }
      out[k] = v;
    }
    return out;
  }

  GridPtr grid_;
  PotentialPair pots_;
};

/// Implicit Euler with convex-concave splitting for the convective viscous
/// Cahn-Hilliard system with dynamic boundary condition. Per step, with
/// M the lumped H mass, T_M its tau-weighted version and K the coupled
/// stiffness:
///
///   M (rho - rho_old)/dt - C(u_new) rho_old + K mu = 0
///   T_M (rho - rho_old)/dt + K rho + F1'(rho) + F2'(rho_old) - M mu = 0
///
/// where v.C(u) rho = int rho u.grad v with edge quadrature. Testing the
/// first line with the constant vector shows exact mass conservation.
class StateSolver {
 public:
  StateSolver(GridPtr grid, StateParams params, PotentialPair pots)
      : grid_(std::move(grid)), params_(params), potential_(grid_, pots) {
    validate(params_);
    validate(pots.bulk);
    validate(pots.surface);
    const Grid& g = *grid_;
    tau_mass_ = params_.tau_omega * g.bulk_weights() + params_.tau_gamma * g.surface_weights();
  }

  [[nodiscard]] const GridPtr& grid() const { return grid_; }
  [[nodiscard]] const StateParams& params() const { return params_; }
  [[nodiscard]] const NodalPotential& potential() const { return potential_; }
  [[nodiscard]] const Vector& tau_mass() const { return tau_mass_; }

  /// C(u) with v.C(u) r = sum_e W_e (avg r)_e u_e (grad v)_e.
  [[nodiscard]] SparseMatrix convection(const VelocityField& u) const {
    const Grid& g = *grid_;
    const Vector wu = g.edge_weights().cwiseProduct(u.edge_values());
    SparseMatrix c = g.gradient().transpose() * wu.asDiagonal() * g.average();
    c.makeCompressed();
    return c;
  }

  [[nodiscard]] double mass(const Vector& rho) const { return grid_->mass().dot(rho); }

  /// int (|grad rho|^2/2 + f(rho)) + int_G (|grad_G rho|^2/2 + f_G(rho))
  [[nodiscard]] double energy(const Vector& rho) const {
    return 0.5 * grid_->form_A(rho, rho) + potential_.energy_density_sum(rho);
  }

  /// rho_0 with mu_0 from the chemical-potential equation with the time
  /// derivative dropped: M mu_0 = K rho_0 + F'(rho_0).
  [[nodiscard]] StateSnapshot initialize(const CoupledField& rho0) const {
    require_same_grid(*grid_, *rho0.grid(), "initialize");
    const Vector& r = rho0.bulk();
    if (r.maxCoeff() >= 1.0 || r.minCoeff() <= -1.0) throw InitialDataError("initial data must lie in (-1,1)");
    Vector mu = (grid_->stiffness() * r + potential_.convex(1, r) + potential_.concave(1, r)).cwiseQuotient(grid_->mass());
    return {CoupledField(grid_, std::move(mu)), CoupledField(grid_, r)};
  }

  [[nodiscard]] StateSnapshot step(const StateSnapshot& prev, const VelocityField& u_new, int* iterations = nullptr) const {
    const Grid& g = *grid_;
    const int n = g.node_count();
    const double dt = params_.dt;
    const Vector& rho_old = prev.rho.bulk();
    const Vector& M = g.mass();
    const SparseMatrix& K = g.stiffness();
    // Explicit parts of both equations.
    const Vector b1 = -M.cwiseProduct(rho_old) / dt - convection(u_new) * rho_old;
    const Vector b2 = -tau_mass_.cwiseProduct(rho_old) / dt + potential_.concave(1, rho_old);

    Vector mu = prev.mu.bulk();
    Vector rho = rho_old;
    std::vector<double> history;
    const bool guard = potential_.logarithmic();
    Eigen::SparseLU<SparseMatrix> lu;
    for (int it = 0;; ++it) {
      const Vector r1 = M.cwiseProduct(rho) / dt + K * mu + b1;
      const Vector r2 = tau_mass_.cwiseProduct(rho) / dt + K * rho + potential_.convex(1, rho) + b2 - M.cwiseProduct(mu);
      const double res = std::sqrt(r1.cwiseAbs2().cwiseQuotient(M).sum() + r2.cwiseAbs2().cwiseQuotient(M).sum());
      history.push_back(res);
      if (!std::isfinite(res)) throw NewtonError("newton: non-finite residual", history);
      if (res <= params_.newton_tol) {
        if (iterations) *iterations = it;
        break;
      }
      if (it >= params_.newton_max_iter) {
        throw NewtonError("newton: no convergence after " + std::to_string(it) + " iterations (residual " +
                              std::to_string(res) + ")",
                          history);
      }
      const SparseMatrix jac = jacobian(potential_.convex(2, rho));
      lu.compute(jac);
      if (lu.info() != Eigen::Success) throw NewtonError("newton: singular jacobian", history);
      Vector rhs(2 * n);
      rhs << -r1, -r2;
      const Vector d = lu.solve(rhs);
      double alpha = 1.0;
      if (guard) {
        const double lim = 1.0 - kDomainGuard;
        while ((rho + alpha * d.tail(n)).cwiseAbs().maxCoeff() >= lim) {
          alpha *= 0.5;
          if (alpha < 1e-14) throw NewtonError("newton: iterate cannot be kept inside (-1,1)", history);
        }
      }
      mu += alpha * d.head(n);
      rho += alpha * d.tail(n);
    }
    return {CoupledField(grid_, std::move(mu)), CoupledField(grid_, std::move(rho))};
  }

  /// Block matrix [[K, M/dt], [-M, T_M/dt + K + diag(d2)]] acting on (mu, rho).
  /// The same matrix governs the linearized step with d2 = F1''(rho_bar).
  [[nodiscard]] SparseMatrix jacobian(const Vector& d2) const {
    const Grid& g = *grid_;
    const int n = g.node_count();
    const double dt = params_.dt;
    const SparseMatrix& K = g.stiffness();
    std::vector<Triplet> t;
    t.reserve(2 * K.nonZeros() + 3 * n);
    for (int c = 0; c < K.outerSize(); ++c) {
      for (SparseMatrix::InnerIterator it(K, c); it; ++it) {
        t.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()), it.value());
        t.emplace_back(n + static_cast<int>(it.row()), n + static_cast<int>(it.col()), it.value());
      }
    }
    for (int k = 0; k < n; ++k) {
      t.emplace_back(k, n + k, g.mass()[k] / dt);
      t.emplace_back(n + k, k, -g.mass()[k]);
      t.emplace_back(n + k, n + k, tau_mass_[k] / dt + d2[k]);
    }
    SparseMatrix j(2 * n, 2 * n);
    j.setFromTriplets(t.begin(), t.end());
    j.makeCompressed();
    return j;
  }

  [[nodiscard]] LevelDiagnostics diagnostics(const StateSnapshot& s, double time, int iterations) const {
    const Vector& r = s.rho.bulk();
    return {time, mass(r), r.minCoeff(), r.maxCoeff(), energy(r), iterations};
  }

  [[nodiscard]] StateTrajectory solve(const CoupledField& rho0, const ControlTrajectory& u) const {
    const int steps = params_.steps();
    if (u.steps() != steps) {
      throw std::invalid_argument("solve_forward: control has " + std::to_string(u.steps()) + " steps, expected " +
                                  std::to_string(steps));
    }
    if (std::abs(u.dt() - params_.dt) > 1e-12 * params_.dt) throw std::invalid_argument("solve_forward: control dt differs");
    require_same_grid(*grid_, *u.grid(), "solve_forward");
    StateTrajectory tr;
    tr.dt = params_.dt;
    tr.snapshots.reserve(steps + 1);
    tr.snapshots.push_back(initialize(rho0));
    tr.diagnostics.push_back(diagnostics(tr.snapshots.back(), 0.0, 0));
    for (int n = 1; n <= steps; ++n) {
      int its = 0;
      try {
        tr.snapshots.push_back(step(tr.snapshots.back(), u.at(n), &its));
      } catch (const std::exception& e) {
        throw StepError("time level " + std::to_string(n) + ": " + e.what(), n);
      }
      tr.diagnostics.push_back(diagnostics(tr.snapshots.back(), n * params_.dt, its));
    }
    return tr;
  }

 private:
  GridPtr grid_;
  StateParams params_;
  NodalPotential potential_;
  Vector tau_mass_;
};

inline StateTrajectory solve_forward(const StateSolver& solver, const CoupledField& rho0, const ControlTrajectory& u) {
  return solver.solve(rho0, u);
}

struct StabilityReport {
  double state_dist = 0.0;
  double control_dist = 0.0;
  double ratio = 0.0;
};

/// max_n |rho1^n - rho2^n|_H against the H1(L3) distance of the controls.
inline StabilityReport stability_probe(const StateSolver& solver, const CoupledField& rho0, const ControlTrajectory& u1,
                                       const ControlTrajectory& u2) {
  const StateTrajectory a = solver.solve(rho0, u1);
  const StateTrajectory b = solver.solve(rho0, u2);
  StabilityReport rep;
  for (std::size_t n = 0; n < a.snapshots.size(); ++n) {
    rep.state_dist = std::max(rep.state_dist, norm_H(a.snapshots[n].rho - b.snapshots[n].rho));
  }
  rep.control_dist = (u1 - u2).norms().h1l3;
  rep.ratio = rep.control_dist > 0.0 ? rep.state_dist / rep.control_dist : 0.0;
  return rep;
}

}  // namespace chvel
