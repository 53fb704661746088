#pragma once

#include "chvel/config.hpp"
#include "chvel/derivatives.hpp"
#include "chvel/io.hpp"
#include "chvel/optimize.hpp"
#include "chvel/potentials.hpp"
#include "chvel/spectral.hpp"
#include "chvel/state.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace chvel {

// Pass/fail thresholds of the verify subcommand.
namespace tol {
inline constexpr double kGradcheck = 1e-6;
inline constexpr double kDuality = 1e-8;
inline constexpr double kDualityFd = 1e-5;
inline constexpr double kFdOrderMin = 1.8;
inline constexpr double kRemainderSlopeMin = 1.8;
inline constexpr double kRemainderSlopeMax = 2.2;
inline constexpr double kQuotientOrderMin = 0.9;
inline constexpr double kEigenKernel = 1e-10;
inline constexpr double kEigenOrthonormal = 1e-10;
inline constexpr double kEigenResidual = 1e-8;
inline constexpr double kMassDrift = 1e-11;
inline constexpr double kEnergyIncrease = 1e-12;
}  // namespace tol

/// Step sizes of the finite-difference decay fit.
inline const std::vector<double> kFdDecayEps{1e-1, 3e-2, 1e-2};

struct CheckResult {
  std::string name;
  double value = 0.0;
  std::string bound;  // human-readable acceptance bound, e.g. "<=1e-8"
  bool passed = false;
};

struct VerifyReport {
  std::string which;
  std::string table;  // delimited text, header first
  std::vector<CheckResult> checks;

  [[nodiscard]] bool passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
  }
};

inline CheckResult check_le(std::string name, double v, double bound) {
  return {std::move(name), v, "<=" + format_double(bound), v <= bound};
}
inline CheckResult check_ge(std::string name, double v, double bound) {
  return {std::move(name), v, ">=" + format_double(bound), v >= bound};
}

inline void write_checks(std::ostream& os, const VerifyReport& r) {
  os << table_header("chvel.checks", 1, "check,value,bound,passed", "which=" + r.which) << '\n';
  for (const auto& c : r.checks) {
    os << c.name << ',' << format_double(c.value) << ',' << c.bound << ',' << (c.passed ? 1 : 0) << '\n';
  }
}

/// Everything a run needs, built from a validated config.
struct Scenario {
  GridPtr grid;
  StateSolver solver;
  CoupledField rho0;
  ControlTrajectory u_bar;
  CostSpec cost;
};

inline Scenario build_scenario(const RunConfig& c) {
  GridPtr grid = build_grid(c.grid);
  StateSolver solver = make_solver(c, grid);
  CoupledField rho0 = initial_data(grid, c.initial);
  ControlTrajectory u = make_control(c, grid);
  CostSpec cost = make_cost(c, grid);
  return {grid, std::move(solver), std::move(rho0), std::move(u), std::move(cost)};
}

/// Random smooth directions with X-norm equal to scale.
inline std::vector<ControlTrajectory> random_directions(const GridPtr& grid, int steps, double dt, int count, double scale,
                                                        unsigned long seed) {
  std::mt19937_64 rng(seed);
  std::vector<ControlTrajectory> out;
  for (int i = 0; i < count; ++i) {
    ControlTrajectory h = random_control(grid, steps, dt, rng);
    h *= scale / h.norms().combined;
    out.push_back(std::move(h));
  }
  return out;
}

inline double relative_gap(double a, double b) {
  const double d = std::max(std::abs(a), std::abs(b));
  return d == 0.0 ? 0.0 : std::abs(a - b) / d;
}

inline double central_difference(const ReducedProblem& prob, const ControlTrajectory& u, const ControlTrajectory& h,
                                 double eps) {
  return (prob.cost(u + eps * h) - prob.cost(u - eps * h)) / (2.0 * eps);
}

inline VerifyReport verify_gradcheck(const RunConfig& c) {
  require_adjoint_compatible(c);
  Scenario s = build_scenario(c);
  ReducedProblem prob(s.solver, s.rho0, s.cost);
  const auto ev = prob.evaluate(s.u_bar);
  const auto dirs = random_directions(s.grid, c.state.steps(), c.state.dt, c.verify.directions, c.verify.direction_scale, c.seed);
  VerifyReport r{"gradcheck", {}, {}};
  std::ostringstream os;
  os << table_header("chvel.gradcheck", 1, "h_index,adjoint_value,fd_value,rel_err", "eps=" + format_double(c.verify.fd_eps)) << '\n';
  double worst = 0.0;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const double a = ev.gradient.inner(dirs[i]);
    const double fd = central_difference(prob, s.u_bar, dirs[i], c.verify.fd_eps);
    const double e = relative_gap(a, fd);
    worst = std::max(worst, e);
    os << i << ',' << format_double(a) << ',' << format_double(fd) << ',' << format_double(e) << '\n';
  }
  r.table = os.str();
  r.checks.push_back(check_le("max_rel_err", worst, tol::kGradcheck));
  return r;
}

inline VerifyReport verify_duality(const RunConfig& c) {
  require_adjoint_compatible(c);
  Scenario s = build_scenario(c);
  ReducedProblem prob(s.solver, s.rho0, s.cost);
  const auto ev = prob.evaluate(s.u_bar);
  const LinearizedStepper st(s.solver, ev.trajectory, s.u_bar);
  const StateSensitivity sens = state_sensitivity(ev.trajectory, s.cost);
  const auto dirs =
      random_directions(s.grid, c.state.steps(), c.state.dt, c.verify.duality_directions, c.verify.direction_scale, c.seed);
  VerifyReport r{"duality", {}, {}};
  std::ostringstream os;
  os << table_header("chvel.duality", 1, "h_index,adjoint_value,linearized_value,fd_value,rel_err,fd_rel_err,fd_order",
                     "eps=" + format_double(c.verify.fd_eps))
     << '\n';
  double worst = 0.0;
  double worst_fd = 0.0;
  double worst_order = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const double a = ev.gradient.inner(dirs[i]);
    const double l = linearized_objective_form(solve_linearized(st, dirs[i]), sens, s.cost, s.u_bar, dirs[i]);
    const double fd = central_difference(prob, s.u_bar, dirs[i], c.verify.fd_eps);
    const double e = relative_gap(a, l);
    const double efd = relative_gap(a, fd);
    // Observed order of the central difference error; a direction whose
    // error is exactly zero at every step carries no order information.
    std::vector<ProbeRow> rows;
    bool any = false;
    for (double eps : kFdDecayEps) {
      const double err = std::abs(central_difference(prob, s.u_bar, dirs[i], eps) - a);
      rows.push_back({eps, err});
      any = any || err > 0.0;
    }
    const double order = any ? loglog_slope(rows) : std::numeric_limits<double>::infinity();
    worst = std::max(worst, e);
    worst_fd = std::max(worst_fd, efd);
    worst_order = std::min(worst_order, order);
    os << i << ',' << format_double(a) << ',' << format_double(l) << ',' << format_double(fd) << ',' << format_double(e)
       << ',' << format_double(efd) << ',' << format_double(order) << '\n';
  }
  r.table = os.str();
  r.checks.push_back(check_le("adjoint_vs_linearized", worst, tol::kDuality));
  r.checks.push_back(check_le("adjoint_vs_fd", worst_fd, tol::kDualityFd));
  if (std::isinf(worst_order)) {
    // Exact differences in every direction leave no decay to observe.
    r.checks.push_back(check_le("fd_error_exact", 0.0, 0.0));
  } else {
    r.checks.push_back(check_ge("fd_error_order", worst_order, tol::kFdOrderMin));
  }
  return r;
}

inline VerifyReport verify_frechet(const RunConfig& c) {
  Scenario s = build_scenario(c);
  const auto dirs = random_directions(s.grid, c.state.steps(), c.state.dt, 1, c.verify.direction_scale, c.seed);
  const ControlTrajectory& h = dirs.front();
  const double eps_max = std::max(*std::max_element(c.verify.remainder_eps.begin(), c.verify.remainder_eps.end()),
                                  *std::max_element(c.verify.quotient_eps.begin(), c.verify.quotient_eps.end()));
  const double reach = s.u_bar.norms().combined + eps_max * h.norms().combined;
  const ProbeReport rem = frechet_remainder_probe(s.solver, s.rho0, s.u_bar, h, c.verify.remainder_eps);
  const ProbeReport quo = difference_quotient_probe(s.solver, s.rho0, s.u_bar, h, c.verify.quotient_eps);
  VerifyReport r{"frechet", {}, {}};
  std::ostringstream os;
  os << table_header("chvel.frechet", 1, "probe,eps,value",
                     "remainder_slope=" + format_double(rem.slope) + " quotient_order=" + format_double(quo.slope))
     << '\n';
  for (const auto& row : rem.rows) os << "remainder," << format_double(row.eps) << ',' << format_double(row.value) << '\n';
  for (const auto& row : quo.rows) os << "quotient," << format_double(row.eps) << ',' << format_double(row.value) << '\n';
  r.table = os.str();
  r.checks.push_back(check_le("probe_radius", reach, c.radius));
  r.checks.push_back(check_ge("remainder_slope_min", rem.slope, tol::kRemainderSlopeMin));
  r.checks.push_back(check_le("remainder_slope_max", rem.slope, tol::kRemainderSlopeMax));
  r.checks.push_back(check_ge("quotient_order", quo.slope, tol::kQuotientOrderMin));
  return r;
}

inline VerifyReport verify_eigen(const RunConfig& c) {
  const GridPtr grid = build_grid(c.grid);
  const EigenBasis b = eigendecompose_A(grid, c.verify.eigen_count);
  const int k = static_cast<int>(b.vectors.size());
  VerifyReport r{"eigen", {}, {}};
  std::ostringstream os;
  os << table_header("chvel.eigen", 1, "index,eigenvalue,residual,orthonormality_err") << '\n';
  double orth = 0.0;
  double res = 0.0;
  for (int i = 0; i < k; ++i) {
    double row = 0.0;
    for (int j = 0; j < k; ++j) {
      row = std::max(row, std::abs(inner_H(b.vectors[i], b.vectors[j]) - (i == j ? 1.0 : 0.0)));
    }
    orth = std::max(orth, row);
    res = std::max(res, b.residuals[i]);
    os << i + 1 << ',' << format_double(b.eigenvalues[i]) << ',' << format_double(b.residuals[i]) << ','
       << format_double(row) << '\n';
  }
  const Vector& e1 = b.vectors.front().bulk();
  const double spread = e1.maxCoeff() - e1.minCoeff();
  r.table = os.str();
  r.checks.push_back(check_le("lambda1", std::abs(b.eigenvalues[0]), tol::kEigenKernel));
  r.checks.push_back(check_le("first_vector_spread", spread, tol::kEigenKernel));
  r.checks.push_back(check_le("orthonormality", orth, tol::kEigenOrthonormal));
  r.checks.push_back(check_le("max_residual", res, tol::kEigenResidual));
  return r;
}

inline VerifyReport verify_domination(const RunConfig& c) {
  const DominationReport d = check_domination(c.potentials);
  VerifyReport r{"domination", {}, {}};
  std::ostringstream os;
  os << table_header("chvel.domination", 1, "k,r,bulk_derivative_plus,bulk_derivative_minus",
                     "worst_margin=" + format_double(d.worst_margin) + " worst_r=" + format_double(d.worst_r))
     << '\n';
  if (c.potentials.bulk.kind == PotentialKind::logarithmic) {
    for (const auto& row : singular_limit_probe(c.potentials.bulk)) {
      os << row.k << ',' << format_double(row.r) << ',' << format_double(row.at_plus) << ','
         << format_double(row.at_minus) << '\n';
    }
  }
  r.table = os.str();
  r.checks.push_back(check_ge("domination_margin", d.worst_margin, 0.0));
  return r;
}

/// Mass drift over the configured run; with a zero control also the
/// monotone decay of the discrete energy.
inline VerifyReport verify_massenergy(const RunConfig& c) {
  Scenario s = build_scenario(c);
  const StateTrajectory tr = s.solver.solve(s.rho0, s.u_bar);
  VerifyReport r{"massenergy", {}, {}};
  std::ostringstream os;
  os << table_header("chvel.massenergy", 1, "time_index,time,mass,mass_drift,energy,rho_min,rho_max") << '\n';
  const double m0 = tr.diagnostics.front().mass;
  double drift = 0.0;
  double rise = 0.0;
  double lo = 1.0;
  double hi = -1.0;
  for (std::size_t n = 0; n < tr.diagnostics.size(); ++n) {
    const auto& d = tr.diagnostics[n];
    drift = std::max(drift, std::abs(d.mass - m0));
    if (n > 0) {
      const double prev = tr.diagnostics[n - 1].energy;
      rise = std::max(rise, (d.energy - prev) / std::max(1.0, std::abs(prev)));
    }
    lo = std::min(lo, d.rho_min);
    hi = std::max(hi, d.rho_max);
    os << n << ',' << format_double(d.time) << ',' << format_double(d.mass) << ',' << format_double(d.mass - m0) << ','
       << format_double(d.energy) << ',' << format_double(d.rho_min) << ',' << format_double(d.rho_max) << '\n';
  }
  r.table = os.str();
  r.checks.push_back(check_le("mass_drift", drift, tol::kMassDrift));
  r.checks.push_back(check_le("max_abs_rho", std::max(std::abs(lo), std::abs(hi)), 1.0 - kDomainGuard));
  if (c.control.source == ControlSource::zero) r.checks.push_back(check_le("energy_increase", rise, tol::kEnergyIncrease));
  return r;
}

inline VerifyReport run_verify(const RunConfig& c, const std::string& which) {
  if (which == "gradcheck") return verify_gradcheck(c);
  if (which == "duality") return verify_duality(c);
  if (which == "frechet") return verify_frechet(c);
  if (which == "eigen") return verify_eigen(c);
  if (which == "domination") return verify_domination(c);
  if (which == "massenergy") return verify_massenergy(c);
  throw ConfigError({"verify: unknown check '" + which + "'"});
}

}  // namespace chvel
