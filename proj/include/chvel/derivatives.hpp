#pragma once

#include "chvel/cost.hpp"
#include "chvel/grid.hpp"
#include "chvel/state.hpp"
#include "chvel/velocity.hpp"

#include <Eigen/SparseLU>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace chvel {

/// (eta, xi): derivatives of (mu, rho) in a control direction.
struct LinearizedSnapshot {
  CoupledField eta;
  CoupledField xi;
};

/// Scaled multipliers (p, q) of the chemical-potential and order-parameter
/// equations.
struct AdjointSnapshot {
  CoupledField p;
  CoupledField q;
};

/// Lumped second derivatives along a base trajectory. convex[k] is F1'' at
/// level k (the implicit part), concave[k] is F2'' at level k (explicit).
struct FrozenCoefficients {
  std::vector<Vector> convex;
  std::vector<Vector> concave;
};

inline FrozenCoefficients frozen_coefficients(const StateSolver& solver, const StateTrajectory& base) {
  FrozenCoefficients f;
  for (const auto& s : base.snapshots) {
    f.convex.push_back(solver.potential().convex(2, s.rho.bulk()));
    f.concave.push_back(solver.potential().concave(2, s.rho.bulk()));
  }
  return f;
}

class LinearSolveError : public std::runtime_error {
 public:
  LinearSolveError(const std::string& what, int index) : std::runtime_error(what), index_(index) {}
  [[nodiscard]] int index() const { return index_; }

 private:
  int index_;
};

/// Step matrices of the linearized scheme around (rho_bar, u_bar). For step
/// k = 1..N, with y = (eta, xi):
///
///   A_k y^k = B_k xi^{k-1} + E_k h^k
///   A_k    = [[K, M/dt], [-M, T_M/dt + K + F1''(rho^k)]]
///   B_k xi = [(M/dt + C(u^k)) xi ; (T_M/dt - F2''(rho^{k-1})) xi]
///   E_k h  = [C(h) rho^{k-1} ; 0]
///
/// A_k is factored once and serves both forward and transposed solves.
class LinearizedStepper {
 public:
  LinearizedStepper(const StateSolver& solver, const StateTrajectory& base, const ControlTrajectory& u_bar)
      : grid_(solver.grid()), dt_(solver.params().dt), tau_mass_(solver.tau_mass()) {
    const int steps = base.steps();
    if (u_bar.steps() != steps) throw std::invalid_argument("linearized: control and trajectory steps differ");
    require_same_grid(*grid_, *base.snapshots.front().rho.grid(), "linearized");
    require_same_grid(*grid_, *u_bar.grid(), "linearized");
    const FrozenCoefficients f = frozen_coefficients(solver, base);
    for (const auto& s : base.snapshots) rho_.push_back(s.rho.bulk());
    concave_ = f.concave;
    conv_.resize(steps + 1);
    lu_.resize(steps + 1);
    for (int k = 1; k <= steps; ++k) {
      conv_[k] = solver.convection(u_bar.at(k));
      lu_[k] = std::make_unique<Eigen::SparseLU<SparseMatrix>>();
      lu_[k]->compute(solver.jacobian(f.convex[k]));
      if (lu_[k]->info() != Eigen::Success) throw LinearSolveError("linearized: singular step matrix at level " + std::to_string(k), k);
    }
  }

  [[nodiscard]] const GridPtr& grid() const { return grid_; }
  [[nodiscard]] int steps() const { return static_cast<int>(rho_.size()) - 1; }
  [[nodiscard]] double dt() const { return dt_; }
  [[nodiscard]] const Vector& rho(int k) const { return rho_.at(k); }

  [[nodiscard]] Vector apply_B(int k, const Vector& xi_prev) const {
    const Vector& M = grid_->mass();
    const int n = grid_->node_count();
    Vector out(2 * n);
    out.head(n) = M.cwiseProduct(xi_prev) / dt_ + conv_.at(k) * xi_prev;
    out.tail(n) = tau_mass_.cwiseProduct(xi_prev) / dt_ - concave_.at(k - 1).cwiseProduct(xi_prev);
    return out;
  }

  /// B_k^T lam, assembled from the transposed blocks.
  [[nodiscard]] Vector apply_B_transpose(int k, const Vector& lam) const {
    const Vector& M = grid_->mass();
    const int n = grid_->node_count();
    const Vector a = lam.head(n);
    const Vector b = lam.tail(n);
    return M.cwiseProduct(a) / dt_ + conv_.at(k).transpose() * a + tau_mass_.cwiseProduct(b) / dt_ -
           concave_.at(k - 1).cwiseProduct(b);
  }

  [[nodiscard]] Vector apply_E(int k, const VelocityField& h) const {
    const Grid& g = *grid_;
    const int n = g.node_count();
    const Vector wh = g.edge_weights().cwiseProduct(h.edge_values());
    Vector out = Vector::Zero(2 * n);
    out.head(n) = g.gradient().transpose() * wh.cwiseProduct(g.average() * rho_.at(k - 1));
    return out;
  }

  /// Edge field s with lam . E_k h = <s, h>_W for every h:
  /// s = (avg rho^{k-1}) * (grad lam_mu).
  [[nodiscard]] Vector edge_pairing(int k, const Vector& lam_mu) const {
    const Grid& g = *grid_;
    return (g.average() * rho_.at(k - 1)).cwiseProduct(g.gradient() * lam_mu);
  }

  [[nodiscard]] Vector solve(int k, const Vector& rhs) const {
    Vector x = lu_.at(k)->solve(rhs);
    if (lu_[k]->info() != Eigen::Success || !x.allFinite()) throw LinearSolveError("linearized: solve failed at level " + std::to_string(k), k);
    return x;
  }

  [[nodiscard]] Vector solve_transpose(int k, const Vector& rhs) const {
    Vector x = lu_.at(k)->transpose().solve(rhs);
    if (!x.allFinite()) throw LinearSolveError("adjoint: solve failed at level " + std::to_string(k), k);
    return x;
  }

  /// One-step propagator L_k: xi^{k-1} -> xi^k with zero control.
  [[nodiscard]] Vector propagate(int k, const Vector& xi_prev) const {
    return solve(k, apply_B(k, xi_prev)).tail(grid_->node_count());
  }

  /// H-adjoint of L_k: M^{-1} B_k^T A_k^{-T} [0; M b].
  [[nodiscard]] Vector propagate_adjoint(int k, const Vector& b) const {
    const int n = grid_->node_count();
    Vector rhs = Vector::Zero(2 * n);
    rhs.tail(n) = grid_->mass().cwiseProduct(b);
    return apply_B_transpose(k, solve_transpose(k, rhs)).cwiseQuotient(grid_->mass());
  }

 private:
  GridPtr grid_;
  double dt_;
  Vector tau_mass_;
  std::vector<Vector> rho_;
  std::vector<Vector> concave_;
  std::vector<SparseMatrix> conv_;
  std::vector<std::unique_ptr<Eigen::SparseLU<SparseMatrix>>> lu_;
};

/// (eta, xi) at levels 0..N for direction h; level 0 is zero.
inline std::vector<LinearizedSnapshot> solve_linearized(const LinearizedStepper& st, const ControlTrajectory& h) {
  const GridPtr& grid = st.grid();
  const int n = grid->node_count();
  if (h.steps() != st.steps()) throw std::invalid_argument("solve_linearized: direction has the wrong number of steps");
  require_same_grid(*grid, *h.grid(), "solve_linearized");
  std::vector<LinearizedSnapshot> out;
  out.reserve(st.steps() + 1);
  out.push_back({CoupledField::zero(grid), CoupledField::zero(grid)});
  Vector xi = Vector::Zero(n);
  for (int k = 1; k <= st.steps(); ++k) {
    const Vector y = st.solve(k, st.apply_B(k, xi) + st.apply_E(k, h.at(k)));
    xi = y.tail(n);
    out.push_back({CoupledField(grid, y.head(n)), CoupledField(grid, xi)});
  }
  return out;
}

inline std::vector<LinearizedSnapshot> solve_linearized(const StateSolver& solver, const StateTrajectory& base,
                                                        const ControlTrajectory& u_bar, const ControlTrajectory& h) {
  return solve_linearized(LinearizedStepper(solver, base, u_bar), h);
}

/// Derivative of the discrete cost in direction h, from the linearized
/// states: sum_k (d_mu^k.eta^k + d_rho^k.xi^k) + Phi.xi^N + b7 <u_bar, h>.
inline double linearized_objective_form(const std::vector<LinearizedSnapshot>& lin, const StateSensitivity& sens,
                                        const CostSpec& cost, const ControlTrajectory& u_bar, const ControlTrajectory& h) {
  const int steps = static_cast<int>(lin.size()) - 1;
  double v = 0.0;
  for (int k = 1; k <= steps; ++k) {
    v += sens.d_mu[k].dot(lin[k].eta.bulk()) + sens.d_rho[k].dot(lin[k].xi.bulk());
  }
  v += sens.final.dot(lin[steps].xi.bulk());
  if (cost.b(7) != 0.0) v += cost.b(7) * u_bar.inner(h);
  return v;
}

class AdjointUnsupported : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Backward sweep. levels[k-1] holds the multipliers of step k (k = 1..N),
/// scaled by 1/dt:
///
///   A_N^T (p,q)^N = (g_N + [0; Phi]) / dt
///   A_k^T (p,q)^k = g_k / dt + [0; B_{k+1}^T (p,q)^{k+1}]
///
/// with g_k = (d_mu^k, d_rho^k). levels[N] holds the terminal pair solving
/// K p - M q = 0, M p + T_M q = Phi.
struct AdjointTrajectory {
  std::vector<AdjointSnapshot> levels;

  [[nodiscard]] int steps() const { return static_cast<int>(levels.size()) - 1; }
  [[nodiscard]] const AdjointSnapshot& step_multiplier(int k) const { return levels.at(k - 1); }
  [[nodiscard]] const AdjointSnapshot& terminal() const { return levels.back(); }
};

inline AdjointSnapshot terminal_pair(const Grid& g, const GridPtr& grid, const Vector& tau_mass, const Vector& phi) {
  // q = M^{-1} K p, (M + T_M M^{-1} K) p = Phi.
  const Vector& M = g.mass();
  const int n = g.node_count();
  SparseMatrix s = tau_mass.cwiseQuotient(M).asDiagonal() * g.stiffness();
  for (int k = 0; k < n; ++k) s.coeffRef(k, k) += M[k];
  s.makeCompressed();
  Eigen::SparseLU<SparseMatrix> lu(s);
  if (lu.info() != Eigen::Success) throw LinearSolveError("adjoint: singular terminal system", g.node_count());
  Vector p = lu.solve(phi);
  Vector q = (g.stiffness() * p).cwiseQuotient(M);
  return {CoupledField(grid, std::move(p)), CoupledField(grid, std::move(q))};
}

/// Residual of the final condition M p + T_M q = Phi, measured in H.
inline double final_condition_residual(const Grid& g, const Vector& tau_mass, const AdjointSnapshot& t, const Vector& phi) {
  const Vector r = g.mass().cwiseProduct(t.p.bulk()) + tau_mass.cwiseProduct(t.q.bulk()) - phi;
  return g.norm_H(r.cwiseQuotient(g.mass()));
}

inline AdjointTrajectory solve_adjoint(const LinearizedStepper& st, const StateSensitivity& sens, const CostSpec& cost,
                                       const Vector& tau_mass) {
  if (cost.b(1) != 0.0 || cost.b(2) != 0.0) {
    throw AdjointUnsupported("solve_adjoint: beta1 and beta2 must be zero");
  }
  const GridPtr& grid = st.grid();
  const Grid& g = *grid;
  const int n = g.node_count();
  const int steps = st.steps();
  const double dt = st.dt();
  AdjointTrajectory adj;
  adj.levels.resize(steps + 1);
  adj.levels[steps] = terminal_pair(g, grid, tau_mass, sens.final);
  Vector carry = sens.final / dt;
  for (int k = steps; k >= 1; --k) {
    Vector rhs(2 * n);
    rhs.head(n) = sens.d_mu[k] / dt;
    rhs.tail(n) = sens.d_rho[k] / dt + carry;
    const Vector lam = st.solve_transpose(k, rhs);
    if (k > 1) carry = st.apply_B_transpose(k, lam);
    adj.levels[k - 1] = {CoupledField(grid, lam.head(n)), CoupledField(grid, lam.tail(n))};
  }
  return adj;
}

/// Raw edge gradient per control level in the right-endpoint pairing:
/// G^k = (avg rho^{k-1}) * (grad p^k) + b7 u^k for k >= 1, zero at level 0.
inline std::vector<Vector> raw_gradient(const LinearizedStepper& st, const AdjointTrajectory& adj,
                                        const ControlTrajectory& u_bar, const CostSpec& cost) {
  const Grid& g = *st.grid();
  std::vector<Vector> out(st.steps() + 1, Vector::Zero(g.edge_count()));
  for (int k = 1; k <= st.steps(); ++k) {
    out[k] = st.edge_pairing(k, adj.step_multiplier(k).p.bulk()) + cost.b(7) * u_bar.at(k).edge_values();
  }
  return out;
}

/// sum_k dt <G^k, h^k>_W
inline double pair_gradient(const Grid& g, const std::vector<Vector>& grad, const ControlTrajectory& h) {
  double s = 0.0;
  for (int k = 1; k <= h.steps(); ++k) {
    s += h.dt() * g.edge_weights().cwiseProduct(grad.at(k)).dot(h.at(k).edge_values());
  }
  return s;
}

// --- remainder and difference-quotient probes ------------------------------

/// Discrete norm of Y = L2(0,T;V) x (H1(0,T;H) cap Linf(0,T;V)) for a pair
/// (z, y) of level sequences.
inline double y_norm(const Grid& g, double dt, const std::vector<Vector>& z, const std::vector<Vector>& y) {
  double l2v = 0.0;
  double h1h = 0.0;
  double linfv = 0.0;
  for (std::size_t n = 0; n < y.size(); ++n) {
    linfv = std::max(linfv, g.norm_V(y[n]));
    if (n == 0) continue;
    const double zv = g.norm_V(z[n]);
    l2v += dt * zv * zv;
    const double yh = g.norm_H(y[n]);
    const double dh = g.norm_H((y[n] - y[n - 1]) / dt);
    h1h += dt * (yh * yh + dh * dh);
  }
  return std::sqrt(l2v) + std::sqrt(h1h) + linfv;
}

struct ProbeRow {
  double eps;
  double value;
};

struct ProbeReport {
  std::vector<ProbeRow> rows;
  double slope = 0.0;  // least-squares slope of log(value) against log(eps)
};

inline double loglog_slope(const std::vector<ProbeRow>& rows) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int m = 0;
  for (const auto& r : rows) {
    if (!(r.value > 0.0)) continue;
    const double x = std::log(r.eps);
    const double y = std::log(r.value);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++m;
  }
  if (m < 2) return 0.0;
  const double den = m * sxx - sx * sx;
  return den == 0.0 ? 0.0 : (m * sxy - sx * sy) / den;
}

namespace detail {

/// Y-norm of S(u+eps h) - S(u) - c * DS(u)h, c = eps (remainder) or the
/// same divided by eps with c = 1 (difference quotient).
inline double perturbation_error(const StateSolver& solver, const CoupledField& rho0, const StateTrajectory& base,
                                 const std::vector<LinearizedSnapshot>& lin, const ControlTrajectory& u_bar,
                                 const ControlTrajectory& h, double eps, bool quotient) {
  const StateTrajectory pert = solver.solve(rho0, u_bar + eps * h);
  const double scale = quotient ? 1.0 / eps : 1.0;
  const double c = quotient ? 1.0 : eps;
  std::vector<Vector> z, y;
  for (std::size_t n = 0; n < base.snapshots.size(); ++n) {
    z.push_back(scale * (pert.snapshots[n].mu.bulk() - base.snapshots[n].mu.bulk()) - c * lin[n].eta.bulk());
    y.push_back(scale * (pert.snapshots[n].rho.bulk() - base.snapshots[n].rho.bulk()) - c * lin[n].xi.bulk());
  }
  return y_norm(*solver.grid(), base.dt, z, y);
}

}  // namespace detail

/// r(eps) = |S(u+eps h) - S(u) - eps DS(u)h|_Y; the slope should be near 2.
inline ProbeReport frechet_remainder_probe(const StateSolver& solver, const CoupledField& rho0,
                                           const ControlTrajectory& u_bar, const ControlTrajectory& h,
                                           const std::vector<double>& eps) {
  const StateTrajectory base = solver.solve(rho0, u_bar);
  const auto lin = solve_linearized(solver, base, u_bar, h);
  ProbeReport rep;
  for (double e : eps) rep.rows.push_back({e, detail::perturbation_error(solver, rho0, base, lin, u_bar, h, e, false)});
  rep.slope = loglog_slope(rep.rows);
  return rep;
}

/// |(S(u+eps h) - S(u))/eps - DS(u)h|_Y; the slope should be near 1.
inline ProbeReport difference_quotient_probe(const StateSolver& solver, const CoupledField& rho0,
                                             const ControlTrajectory& u_bar, const ControlTrajectory& h,
                                             const std::vector<double>& eps) {
  const StateTrajectory base = solver.solve(rho0, u_bar);
  const auto lin = solve_linearized(solver, base, u_bar, h);
  ProbeReport rep;
  for (double e : eps) rep.rows.push_back({e, detail::perturbation_error(solver, rho0, base, lin, u_bar, h, e, true)});
  rep.slope = loglog_slope(rep.rows);
  return rep;
}

// --- text export -------------------------------------------------------------

inline void write_linearized(std::ostream& os, const std::vector<LinearizedSnapshot>& lin) {
  const Grid& g = *lin.front().xi.grid();
  os << table_header("chvel.linearized", 1, "time_index,ix,iy,eta,xi",
                     "nx=" + std::to_string(g.nx()) + " ny=" + std::to_string(g.ny()))
     << '\n';
  for (std::size_t n = 0; n < lin.size(); ++n) {
    for (int k = 0; k < g.node_count(); ++k) {
      os << n << ',' << g.ix(k) << ',' << g.iy(k) << ',' << format_double(lin[n].eta.bulk()[k]) << ','
         << format_double(lin[n].xi.bulk()[k]) << '\n';
    }
  }
}

inline void write_adjoint(std::ostream& os, const AdjointTrajectory& adj) {
  const Grid& g = *adj.levels.front().p.grid();
  os << table_header("chvel.adjoint", 1, "level,ix,iy,p,q",
                     "nx=" + std::to_string(g.nx()) + " ny=" + std::to_string(g.ny()) + " terminal_level=" +
                         std::to_string(adj.steps()))
     << '\n';
  for (std::size_t n = 0; n < adj.levels.size(); ++n) {
    for (int k = 0; k < g.node_count(); ++k) {
      os << n << ',' << g.ix(k) << ',' << g.iy(k) << ',' << format_double(adj.levels[n].p.bulk()[k]) << ','
         << format_double(adj.levels[n].q.bulk()[k]) << '\n';
    }
  }
}

}  // namespace chvel
