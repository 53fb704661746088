#pragma once

#include "chvel/cost.hpp"
#include "chvel/derivatives.hpp"
#include "chvel/state.hpp"
#include "chvel/velocity.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace chvel {

/// Divergence-free representative of the raw gradient at every control
/// level (level 0 carries no sensitivity and stays zero).
inline ControlTrajectory reduced_gradient(const std::vector<Vector>& raw, const LerayProjector& proj, double dt) {
  std::vector<VelocityField> lv;
  lv.reserve(raw.size());
  lv.push_back(VelocityField::zero(proj.grid()));
  for (std::size_t k = 1; k < raw.size(); ++k) lv.push_back(proj.project(raw[k]));
  return {std::move(lv), dt};
}

inline ControlTrajectory reduced_gradient(const LinearizedStepper& st, const AdjointTrajectory& adj,
                                          const ControlTrajectory& u_bar, const CostSpec& cost,
                                          const LerayProjector& proj) {
  return reduced_gradient(raw_gradient(st, adj, u_bar, cost), proj, u_bar.dt());
}

/// Cost and gradient of u -> J(S(u), u) for fixed initial data.
class ReducedProblem {
 public:
  struct Evaluation {
    StateTrajectory trajectory;
    double cost = 0.0;
    std::vector<Vector> raw_gradient;
    ControlTrajectory gradient;
  };

  ReducedProblem(StateSolver solver, CoupledField rho0, CostSpec cost)
      : solver_(std::move(solver)),
        rho0_(std::move(rho0)),
        cost_(std::move(cost)),
        proj_(std::make_shared<LerayProjector>(solver_.grid())) {
    const auto errs = check(cost_);
    if (!errs.empty()) throw std::invalid_argument("cost: " + errs.front());
  }

  [[nodiscard]] const StateSolver& solver() const { return solver_; }
  [[nodiscard]] const CoupledField& rho0() const { return rho0_; }
  [[nodiscard]] const CostSpec& cost_spec() const { return cost_; }
  [[nodiscard]] const LerayProjector& projector() const { return *proj_; }

  [[nodiscard]] double cost(const ControlTrajectory& u) const { return evaluate_cost(solver_.solve(rho0_, u), u, cost_); }

  [[nodiscard]] Evaluation evaluate(const ControlTrajectory& u) const {
    Evaluation ev;
    ev.trajectory = solver_.solve(rho0_, u);
    ev.cost = evaluate_cost(ev.trajectory, u, cost_);
    const LinearizedStepper st(solver_, ev.trajectory, u);
    const StateSensitivity sens = state_sensitivity(ev.trajectory, cost_);
    const AdjointTrajectory adj = solve_adjoint(st, sens, cost_, solver_.tau_mass());
    ev.raw_gradient = raw_gradient(st, adj, u, cost_);
    ev.gradient = reduced_gradient(ev.raw_gradient, *proj_, u.dt());
    return ev;
  }

 private:
  StateSolver solver_;
  CoupledField rho0_;
  CostSpec cost_;
  std::shared_ptr<const LerayProjector> proj_;
};

struct OptimizerConfig {
  int max_iters = 100;
  double armijo_c = 1e-4;
  double armijo_shrink = 0.5;
  double step0 = 1.0;
  double grad_tol = 1e-6;
  bool bb_step = true;      // Barzilai-Borwein trial step after the first iteration
  int max_backtracks = 40;
};

inline std::vector<std::string> check(const OptimizerConfig& c) {
  std::vector<std::string> errs;
  if (c.max_iters < 0) errs.emplace_back("max_iters must be nonnegative");
  if (!(c.armijo_c > 0.0 && c.armijo_c < 1.0)) errs.emplace_back("armijo_c must lie in (0,1)");
  if (!(c.armijo_shrink > 0.0 && c.armijo_shrink < 1.0)) errs.emplace_back("armijo_shrink must lie in (0,1)");
  if (!(c.step0 > 0.0)) errs.emplace_back("step0 must be positive");
  if (!(c.grad_tol >= 0.0)) errs.emplace_back("grad_tol must be nonnegative");
  if (c.max_backtracks < 1) errs.emplace_back("max_backtracks must be at least 1");
  return errs;
}

struct TraceRow {
  int iter = 0;
  double cost = 0.0;
  double grad_norm = 0.0;
  double stationarity = 0.0;
  double step = 0.0;
  bool linf_active = false;
  bool xnorm_active = false;
  bool admissible = false;
};

struct OptimizationTrace {
  std::vector<TraceRow> rows;
  std::vector<std::string> warnings;
  std::string termination;
  int failed_trials = 0;  // trial points whose forward solve raised
};

struct OptimizeResult {
  ControlTrajectory u_star;
  ControlTrajectory gradient;
  OptimizationTrace trace;
};

inline double q_norm(const ControlTrajectory& u) { return std::sqrt(std::max(0.0, u.inner(u))); }

/// |P(u - step0 G) - u|_Q / step0
inline double stationarity_measure(const ControlTrajectory& u, const ControlTrajectory& grad, const AdmissibleSet& set,
                                   double step0) {
  return q_norm(project_admissible(u - step0 * grad, set) - u) / step0;
}

class OptimizeError : public std::runtime_error {
 public:
  OptimizeError(const std::string& what, int iter) : std::runtime_error(what), iter_(iter) {}
  [[nodiscard]] int iteration() const { return iter_; }

 private:
  int iter_;
};

/// Projected gradient with Armijo backtracking. Trial points are
/// P(u - t G); a trial is accepted when J(u_t) <= J(u) + c <G, u_t - u> and
/// J(u_t) <= J(u). Failed forward solves at trial points count as rejected
/// trials.
inline OptimizeResult optimize(const ReducedProblem& prob, const AdmissibleSet& set, const OptimizerConfig& cfg,
                               const ControlTrajectory& start) {
  validate(set);
  if (const auto errs = check(cfg); !errs.empty()) throw std::invalid_argument("optimizer: " + errs.front());
  OptimizeResult res;
  ControlTrajectory u = start;
  if (!is_admissible(u, set)) {
    u = project_admissible(u, set);
    res.trace.warnings.emplace_back("start_projected");
  }
  auto eval = [&](const ControlTrajectory& v, int iter) {
    try {
      return prob.evaluate(v);
    } catch (const std::exception& e) {
      throw OptimizeError("iteration " + std::to_string(iter) + ": " + e.what(), iter);
    }
  };
  ReducedProblem::Evaluation ev = eval(u, 0);
  auto make_row = [&](int iter, double step) {
    TraceRow r;
    r.iter = iter;
    r.cost = ev.cost;
    r.grad_norm = q_norm(ev.gradient);
    r.stationarity = stationarity_measure(u, ev.gradient, set, cfg.step0);
    r.step = step;
    r.linf_active = linf_active(u, set);
    r.xnorm_active = xnorm_active(u, set);
    r.admissible = is_admissible(u, set);
    return r;
  };
  res.trace.rows.push_back(make_row(0, 0.0));
  double trial = cfg.step0;
  res.trace.termination = "max_iters";
  for (int it = 1; it <= cfg.max_iters; ++it) {
    if (res.trace.rows.back().stationarity <= cfg.grad_tol) {
      res.trace.termination = "tolerance";
      break;
    }
    double t = trial;
    bool accepted = false;
    ControlTrajectory u_new;
    for (int b = 0; b < cfg.max_backtracks; ++b, t *= cfg.armijo_shrink) {
      ControlTrajectory cand = project_admissible(u - t * ev.gradient, set);
      double j = 0.0;
      try {
        j = prob.cost(cand);
      } catch (const std::exception&) {
        ++res.trace.failed_trials;
        continue;
      }
      const double decrease = ev.gradient.inner(cand - u);
      if (j <= ev.cost + cfg.armijo_c * decrease && j <= ev.cost) {
        u_new = std::move(cand);
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.trace.termination = "line_search_failed";
      break;
    }
    ReducedProblem::Evaluation ev_new = eval(u_new, it);
    const ControlTrajectory s = u_new - u;
    const ControlTrajectory y = ev_new.gradient - ev.gradient;
    const double sy = s.inner(y);
    trial = cfg.step0;
    if (cfg.bb_step && sy > 0.0) trial = std::clamp(s.inner(s) / sy, 1e-6 * cfg.step0, 1e6 * cfg.step0);
    u = std::move(u_new);
    ev = std::move(ev_new);
    res.trace.rows.push_back(make_row(it, t));
  }
  if (res.trace.termination == "max_iters" && res.trace.rows.back().stationarity <= cfg.grad_tol) {
    res.trace.termination = "tolerance";
  }
  res.u_star = std::move(u);
  res.gradient = std::move(ev.gradient);
  return res;
}

/// min over the probes v of <G, v - u>_Q; nonnegative values certify the
/// discrete variational inequality on the probe set.
inline double optimality_residual(const ControlTrajectory& u, const ControlTrajectory& grad,
                                  const std::vector<ControlTrajectory>& probes) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& v : probes) m = std::min(m, grad.inner(v - u));
  return probes.empty() ? 0.0 : m;
}

// --- random controls -------------------------------------------------------

/// Smooth random stream function: a few wall-vanishing Fourier modes with
/// linear-in-time amplitudes plus a random shear.
inline ControlTrajectory random_control(const GridPtr& grid, int steps, double dt, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> ud(0.0, 2.0 * 3.14159265358979323846);
  const double L = grid->spec().length_x;
  const double H = grid->spec().height_y;
  const double T = std::max(dt * steps, dt);
  struct Mode {
    int m, l;
    double a, b, phase;
  };
  std::vector<Mode> modes;
  for (int m = 1; m <= 2; ++m) {
    for (int l = 0; l <= 2; ++l) modes.push_back({m, l, nd(rng), nd(rng), ud(rng)});
  }
  const double shear0 = nd(rng);
  const double shear1 = nd(rng);
  const double pi = 3.14159265358979323846;
  return ControlTrajectory::from_stream_function(grid, steps, dt, [&](double x, double y, double t) {
    const double s = t / T;
    double v = (shear0 + shear1 * s) * 0.5 * (y - 0.5 * H) * (y - 0.5 * H);
    for (const auto& md : modes) {
      v += 0.05 * (md.a + md.b * s) * std::sin(pi * md.m * y / H) * std::cos(2.0 * pi * md.l * x / L + md.phase);
    }
    return v;
  });
}

/// random_control scaled by a uniform factor in (0,1] into the admissible set.
inline ControlTrajectory random_admissible(const GridPtr& grid, int steps, double dt, const AdmissibleSet& set,
                                           std::mt19937_64& rng) {
  ControlTrajectory v = random_control(grid, steps, dt, rng);
  std::uniform_real_distribution<double> ud(0.05, 1.0);
  const XNorm& x = v.norms();
  double alpha = ud(rng);
  if (x.linf > 0.0) alpha = std::min(alpha, ud(rng) * set.U_bar / x.linf);
  if (x.combined > 0.0) alpha = std::min(alpha, set.R0 / x.combined);
  return (alpha * (1.0 - 1e-9)) * v;
}

// --- trace output ------------------------------------------------------------

inline void write_trace(std::ostream& os, const OptimizationTrace& tr) {
  os << table_header("chvel.trace", 1, "iter,cost,grad_norm,step,linf_active,xnorm_active,stationarity,admissible",
                     "termination=" + tr.termination + " failed_trials=" + std::to_string(tr.failed_trials))
     << '\n';
  for (const auto& w : tr.warnings) os << "# warning " << w << '\n';
  for (const auto& r : tr.rows) {
    os << r.iter << ',' << format_double(r.cost) << ',' << format_double(r.grad_norm) << ',' << format_double(r.step)
       << ',' << (r.linf_active ? 1 : 0) << ',' << (r.xnorm_active ? 1 : 0) << ',' << format_double(r.stationarity)
       << ',' << (r.admissible ? 1 : 0) << '\n';
  }
}

}  // namespace chvel
