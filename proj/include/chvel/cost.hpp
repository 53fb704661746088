#pragma once

#include "chvel/grid.hpp"
#include "chvel/io.hpp"
#include "chvel/state.hpp"
#include "chvel/velocity.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace chvel {

/// Target values per time level: either one static field or one field for
/// every level 0..N.
class TargetSeries {
 public:
  TargetSeries() = default;
  explicit TargetSeries(CoupledField single) { levels_.push_back(std::move(single)); }
  explicit TargetSeries(std::vector<CoupledField> levels) : levels_(std::move(levels)) {}

  [[nodiscard]] bool empty() const { return levels_.empty(); }
  [[nodiscard]] std::size_t size() const { return levels_.size(); }
  [[nodiscard]] const CoupledField& at(int n) const {
    if (levels_.empty()) throw std::logic_error("TargetSeries: no target set");
    return levels_.size() == 1 ? levels_.front() : levels_.at(n);
  }

 private:
  std::vector<CoupledField> levels_;
};

/// Weights beta_1..beta_7 (index 0..6) and the six targets of the tracking
/// functional
///
///   J = b1/2 int_Q |mu - mu_Q|^2 + b2/2 int_S |mu_G - mu_S|^2
///     + b3/2 int_Q |rho - rho_Q|^2 + b4/2 int_S |rho_G - rho_S|^2
///     + b5/2 int_O |rho(T) - rho_O|^2 + b6/2 int_G |rho_G(T) - rho_Gt|^2
///     + b7/2 int_Q |u|^2
struct CostSpec {
  std::array<double, 7> beta{};
  TargetSeries mu_Q, mu_Sigma, rho_Q, rho_Sigma;
  CoupledField rho_Omega, rho_Gamma;

  [[nodiscard]] double b(int i) const { return beta.at(i - 1); }

  /// All targets zero on the given grid.
  static CostSpec zero_targets(const GridPtr& grid) {
    CostSpec c;
    const CoupledField z = CoupledField::zero(grid);
    c.mu_Q = c.mu_Sigma = c.rho_Q = c.rho_Sigma = TargetSeries(z);
    c.rho_Omega = c.rho_Gamma = z;
    return c;
  }
};

inline std::vector<std::string> check(const CostSpec& c) {
  std::vector<std::string> errs;
  for (int i = 0; i < 7; ++i) {
    if (!(c.beta[i] >= 0.0)) errs.push_back("beta" + std::to_string(i + 1) + " must be nonnegative");
  }
  return errs;
}

inline bool all_weights_zero(const CostSpec& c) {
  for (double b : c.beta) {
    if (b != 0.0) return false;
  }
  return true;
}

class CostMismatch : public GridMismatch {
 public:
  using GridMismatch::GridMismatch;
};

namespace detail {

inline void check_targets(const CostSpec& c, const Grid& g, int steps) {
  for (const TargetSeries* s : {&c.mu_Q, &c.mu_Sigma, &c.rho_Q, &c.rho_Sigma}) {
    if (s->empty()) throw CostMismatch("cost: target series not set");
    if (s->size() != 1 && static_cast<int>(s->size()) != steps + 1) throw CostMismatch("cost: target time levels differ");
    require_same_grid(g, *s->at(0).grid(), "cost target");
  }
  if (!c.rho_Omega.grid() || !c.rho_Gamma.grid()) throw CostMismatch("cost: final-time target not set");
  require_same_grid(g, *c.rho_Omega.grid(), "cost target");
  require_same_grid(g, *c.rho_Gamma.grid(), "cost target");
}

inline double weighted_sq(const Vector& w, const Vector& a, const Vector& b) {
  return w.dot((a - b).cwiseAbs2());
}

}  // namespace detail

/// Discrete cost with the right-endpoint rule in time and the lumped
/// quadratures of the grid.
inline double evaluate_cost(const StateTrajectory& traj, const ControlTrajectory& u, const CostSpec& c) {
  const GridPtr& grid = traj.snapshots.front().rho.grid();
  const Grid& g = *grid;
  const int steps = traj.steps();
  if (u.steps() != steps || std::abs(u.dt() - traj.dt) > 1e-12 * traj.dt) throw CostMismatch("cost: control time levels differ");
  require_same_grid(g, *u.grid(), "cost");
  detail::check_targets(c, g, steps);
  const Vector& mb = g.bulk_weights();
  const Vector& ms = g.surface_weights();
  const double dt = traj.dt;
  double j = 0.0;
  for (int n = 1; n <= steps; ++n) {
    const Vector& mu = traj.snapshots[n].mu.bulk();
    const Vector& rho = traj.snapshots[n].rho.bulk();
    double s = 0.0;
    if (c.b(1) != 0) s += c.b(1) * detail::weighted_sq(mb, mu, c.mu_Q.at(n).bulk());
    if (c.b(2) != 0) s += c.b(2) * detail::weighted_sq(ms, mu, c.mu_Sigma.at(n).bulk());
    if (c.b(3) != 0) s += c.b(3) * detail::weighted_sq(mb, rho, c.rho_Q.at(n).bulk());
    if (c.b(4) != 0) s += c.b(4) * detail::weighted_sq(ms, rho, c.rho_Sigma.at(n).bulk());
    if (c.b(7) != 0) s += c.b(7) * u.at(n).inner(u.at(n));
    j += 0.5 * dt * s;
  }
  const Vector& rho_t = traj.snapshots[steps].rho.bulk();
  if (c.b(5) != 0) j += 0.5 * c.b(5) * detail::weighted_sq(mb, rho_t, c.rho_Omega.bulk());
  if (c.b(6) != 0) j += 0.5 * c.b(6) * detail::weighted_sq(ms, rho_t, c.rho_Gamma.bulk());
  return j;
}

/// Partial derivatives of the discrete cost with respect to the state at
/// each level (dual vectors). d_mu[n], d_rho[n] for n = 1..N hold the
/// distributed terms; final holds the final-time term
///   Phi = b5 Mb (rho(T) - rho_O) + b6 Ms (rho(T) - rho_Gt).
struct StateSensitivity {
  std::vector<Vector> d_mu;
  std::vector<Vector> d_rho;
  Vector final;
};

inline StateSensitivity state_sensitivity(const StateTrajectory& traj, const CostSpec& c) {
  const Grid& g = *traj.snapshots.front().rho.grid();
  const int steps = traj.steps();
  detail::check_targets(c, g, steps);
  const Vector& mb = g.bulk_weights();
  const Vector& ms = g.surface_weights();
  const int n_nodes = g.node_count();
  StateSensitivity s;
  s.d_mu.assign(steps + 1, Vector::Zero(n_nodes));
  s.d_rho.assign(steps + 1, Vector::Zero(n_nodes));
  for (int n = 1; n <= steps; ++n) {
    const Vector& mu = traj.snapshots[n].mu.bulk();
    const Vector& rho = traj.snapshots[n].rho.bulk();
    s.d_mu[n] = traj.dt * (c.b(1) * mb.cwiseProduct(mu - c.mu_Q.at(n).bulk()) +
                           c.b(2) * ms.cwiseProduct(mu - c.mu_Sigma.at(n).bulk()));
    s.d_rho[n] = traj.dt * (c.b(3) * mb.cwiseProduct(rho - c.rho_Q.at(n).bulk()) +
                            c.b(4) * ms.cwiseProduct(rho - c.rho_Sigma.at(n).bulk()));
  }
  const Vector& rho_t = traj.snapshots[steps].rho.bulk();
  s.final = c.b(5) * mb.cwiseProduct(rho_t - c.rho_Omega.bulk()) + c.b(6) * ms.cwiseProduct(rho_t - c.rho_Gamma.bulk());
  return s;
}

// --- named target profiles -------------------------------------------------

enum class TargetKind { zero, constant, stripe, sheared_stripe, file };

/// constant:       value
/// stripe:         value + amplitude cos(2 pi k x / L)
/// sheared_stripe: value + amplitude cos(2 pi k (x - shear (y - H/2) t) / L),
///                 the stripe advected by the shear flow u1 = shear (y - H/2)
/// file:           a field file (static) read from path
struct TargetProfile {
  TargetKind kind = TargetKind::zero;
  double value = 0.0;
  double amplitude = 0.5;
  int wavenumber = 1;
  double shear = 1.0;
  std::string path;
};

inline TargetKind parse_target_kind(const std::string& s) {
  if (s == "zero") return TargetKind::zero;
  if (s == "constant") return TargetKind::constant;
  if (s == "stripe") return TargetKind::stripe;
  if (s == "sheared_stripe" || s == "sheared-stripe") return TargetKind::sheared_stripe;
  if (s == "file") return TargetKind::file;
  throw std::invalid_argument("unknown target kind '" + s + "'");
}

inline CoupledField target_field(const GridPtr& grid, const TargetProfile& p, double t) {
  const Grid& g = *grid;
  const double k = 2.0 * 3.14159265358979323846 * p.wavenumber / g.spec().length_x;
  const double mid = 0.5 * g.spec().height_y;
  switch (p.kind) {
    case TargetKind::zero: return CoupledField::zero(grid);
    case TargetKind::constant: return CoupledField::constant(grid, p.value);
    case TargetKind::stripe:
      return CoupledField::from_function(grid, [&](double x, double) { return p.value + p.amplitude * std::cos(k * x); });
    case TargetKind::sheared_stripe:
      return CoupledField::from_function(
          grid, [&](double x, double y) { return p.value + p.amplitude * std::cos(k * (x - p.shear * (y - mid) * t)); });
    case TargetKind::file: {
      std::ifstream is(p.path);
      if (!is) throw std::runtime_error("cannot open target file '" + p.path + "'");
      return read_field(is, grid);
    }
  }
  throw std::logic_error("target_field: unreachable");
}

inline TargetSeries target_series(const GridPtr& grid, const TargetProfile& p, int steps, double dt) {
  if (p.kind != TargetKind::sheared_stripe) return TargetSeries(target_field(grid, p, 0.0));
  std::vector<CoupledField> lv;
  lv.reserve(steps + 1);
  for (int n = 0; n <= steps; ++n) lv.push_back(target_field(grid, p, n * dt));
  return TargetSeries(std::move(lv));
}

}  // namespace chvel
