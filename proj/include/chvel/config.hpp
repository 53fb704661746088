#pragma once

#include "chvel/cost.hpp"
#include "chvel/optimize.hpp"
#include "chvel/potentials.hpp"
#include "chvel/state.hpp"
#include "chvel/velocity.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <array>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace chvel {

/// Every violation found while reading a config, reported together.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> errors)
      : std::runtime_error(join(errors)), errors_(std::move(errors)) {}
  [[nodiscard]] const std::vector<std::string>& errors() const { return errors_; }

 private:
  static std::string join(const std::vector<std::string>& e) {
    std::string s;
    for (std::size_t i = 0; i < e.size(); ++i) s += (i ? "; " : "") + e[i];
    return s;
  }
  std::vector<std::string> errors_;
};

enum class ControlSource { zero, file, shear };

struct ControlSpec {
  ControlSource source = ControlSource::zero;
  double shear = 1.0;  // psi = shear (y - H/2)^2 / 2, i.e. u1 = shear (y - H/2)
  std::string path;
};

struct CostTargets {
  TargetProfile mu_Q, mu_Sigma, rho_Q, rho_Sigma, rho_Omega, rho_Gamma;
};

/// Settings of the verify subcommand. Pass/fail tolerances are fixed in
/// the harness.
struct VerifySettings {
  int directions = 5;
  int duality_directions = 10;
  double fd_eps = 1e-4;
  int eigen_count = 10;
  int probes = 20;
  std::vector<double> remainder_eps{1e-1, 1e-2, 1e-3, 1e-4};
  std::vector<double> quotient_eps{1e-2, 1e-3, 1e-4};
  double direction_scale = 1.0;
};

struct RunConfig {
  GridSpec grid;
  StateParams state;
  int save_stride = 1;
  PotentialPair potentials;
  InitialProfile initial;
  ControlSpec control;
  AdmissibleSet admissible;
  double radius = 10.0;  // R: ball in which derivative probes stay
  std::array<double, 7> beta{0, 0, 1, 0, 0, 0, 1e-3};
  CostTargets targets;
  OptimizerConfig optimizer;
  VerifySettings verify;
  unsigned long seed = 0;
  std::string output_dir = "out";
  std::vector<std::string> warnings;
};

namespace detail {

using boost::property_tree::ptree;

/// Typed reader that records conversion errors and unknown keys.
class SectionReader {
 public:
  SectionReader(const ptree& root, std::string name, std::vector<std::string>& errs)
      : name_(std::move(name)), errs_(errs) {
    if (auto c = root.get_child_optional(ptree::path_type(name_, '/'))) node_ = &*c;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    used_.insert(key);
    if (!node_) return;
    auto v = node_->get_optional<std::string>(ptree::path_type(key, '/'));
    if (!v) return;
    try {
      out = convert<T>(*v);
    } catch (const std::exception&) {
      errs_.push_back(name_ + "." + key + ": invalid value '" + *v + "'");
    }
  }

  void finish() {
    if (!node_) return;
    for (const auto& kv : *node_) {
      if (!used_.count(kv.first)) errs_.push_back(name_ + "." + kv.first + ": unknown key");
    }
  }

 private:
  template <typename T>
  static T convert(const std::string& s) {
    if constexpr (std::is_same_v<T, std::string>) {
      return s;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (s == "true" || s == "1" || s == "yes") return true;
      if (s == "false" || s == "0" || s == "no") return false;
      throw std::invalid_argument(s);
    } else if constexpr (std::is_same_v<T, double>) {
      return parse_double(s);
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      std::vector<double> out;
      for (const auto& p : split(s)) out.push_back(parse_double(p));
      if (out.empty()) throw std::invalid_argument(s);
      return out;
    } else {
      const long v = parse_long(s);
      if constexpr (std::is_unsigned_v<T>) {
        if (v < 0) throw std::invalid_argument(s);
      }
      return static_cast<T>(v);
    }
  }

  std::string name_;
  std::vector<std::string>& errs_;
  const ptree* node_ = nullptr;
  std::set<std::string> used_;
};

inline void read_potential(SectionReader& r, const std::string& prefix, PotentialSpec& spec,
                           std::vector<std::string>& errs) {
  std::string kind = to_string(spec.kind);
  r.read(prefix + "_kind", kind);
  try {
    spec.kind = parse_potential_kind(kind);
  } catch (const std::exception& e) {
    errs.push_back(std::string("potentials.") + prefix + "_kind: " + e.what());
  }
  r.read(prefix + "_c1", spec.c1);
  r.read(prefix + "_c2", spec.c2);
  if (!(spec.c1 > 0.0) || !(spec.c2 > 0.0)) errs.push_back("potentials." + prefix + ": c1 and c2 must be positive");
}

inline void read_target(SectionReader& r, const std::string& prefix, TargetProfile& t, std::vector<std::string>& errs) {
  std::string kind = "zero";
  r.read(prefix, kind);
  try {
    t.kind = parse_target_kind(kind);
  } catch (const std::exception& e) {
    errs.push_back("cost." + prefix + ": " + e.what());
  }
  r.read(prefix + "_value", t.value);
  r.read(prefix + "_amplitude", t.amplitude);
  r.read(prefix + "_wavenumber", t.wavenumber);
  r.read(prefix + "_shear", t.shear);
  r.read(prefix + "_path", t.path);
  if (t.kind == TargetKind::file && t.path.empty()) errs.push_back("cost." + prefix + "_path: required for file targets");
}

}  // namespace detail

inline RunConfig parse_config(std::istream& is, const std::string& base_dir = ".") {
  using detail::SectionReader;
  boost::property_tree::ptree root;
  try {
    boost::property_tree::ini_parser::read_ini(is, root);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError({std::string("syntax: ") + e.message() + " (line " + std::to_string(e.line()) + ")"});
  }
  RunConfig c;
  std::vector<std::string> errs;
  const std::set<std::string> sections{"grid", "time", "potentials", "state", "initial", "control", "admissible",
                                       "cost", "optimizer", "verify", "rng", "output"};
  for (const auto& kv : root) {
    if (!sections.count(kv.first)) errs.push_back(kv.first + ": unknown section");
  }
  auto resolve = [&](const std::string& p) {
    if (p.empty() || p.front() == '/' || base_dir.empty()) return p;
    return base_dir + "/" + p;
  };

  {
    SectionReader r(root, "grid", errs);
    r.read("nx", c.grid.nx);
    r.read("ny", c.grid.ny);
    r.read("length_x", c.grid.length_x);
    r.read("height_y", c.grid.height_y);
    r.finish();
    if (c.grid.nx < 4 || c.grid.ny < 4) errs.emplace_back("grid: nx and ny must be at least 4");
    if (!(c.grid.length_x > 0.0) || !(c.grid.height_y > 0.0)) errs.emplace_back("grid: lengths must be positive");
  }
  {
    SectionReader r(root, "time", errs);
    r.read("T", c.state.T);
    r.read("dt", c.state.dt);
    r.read("save_stride", c.save_stride);
    r.finish();
    if (c.save_stride < 1) errs.emplace_back("time.save_stride must be at least 1");
  }
  {
    SectionReader r(root, "potentials", errs);
    detail::read_potential(r, "bulk", c.potentials.bulk, errs);
    detail::read_potential(r, "surface", c.potentials.surface, errs);
    r.read("gamma1", c.potentials.gamma1);
    r.read("gamma2", c.potentials.gamma2);
    r.finish();
    if (c.potentials.bulk.kind != c.potentials.surface.kind) errs.emplace_back("potentials: bulk and surface kinds differ");
    if (!(c.potentials.gamma1 >= 0.0) || !(c.potentials.gamma2 >= 0.0)) errs.emplace_back("potentials: gamma1, gamma2 must be nonnegative");
  }
  {
    SectionReader r(root, "state", errs);
    r.read("tau_omega", c.state.tau_omega);
    r.read("tau_gamma", c.state.tau_gamma);
    r.read("newton_tol", c.state.newton_tol);
    r.read("newton_max_iter", c.state.newton_max_iter);
    r.finish();
    for (const auto& e : check(c.state)) errs.push_back("state: " + e);
  }
  {
    SectionReader r(root, "initial", errs);
    std::string kind = "stripe";
    r.read("kind", kind);
    if (kind == "constant") c.initial.kind = ProfileKind::constant;
    else if (kind == "stripe") c.initial.kind = ProfileKind::stripe;
    else if (kind == "random") c.initial.kind = ProfileKind::random;
    else errs.push_back("initial.kind: unknown profile '" + kind + "'");
    r.read("value", c.initial.value);
    r.read("amplitude", c.initial.amplitude);
    r.read("wavenumber", c.initial.wavenumber);
    r.finish();
    if (std::abs(c.initial.value) + std::abs(c.initial.amplitude) >= 1.0) {
      errs.emplace_back("initial: |value| + |amplitude| must be below 1");
    }
  }
  {
    SectionReader r(root, "control", errs);
    std::string src = "zero";
    r.read("source", src);
    if (src == "zero") c.control.source = ControlSource::zero;
    else if (src == "file") c.control.source = ControlSource::file;
    else if (src == "shear") c.control.source = ControlSource::shear;
    else errs.push_back("control.source: unknown source '" + src + "'");
    r.read("shear", c.control.shear);
    r.read("path", c.control.path);
    r.finish();
    if (c.control.source == ControlSource::file && c.control.path.empty()) errs.emplace_back("control.path: required for file controls");
    c.control.path = resolve(c.control.path);
  }
  {
    SectionReader r(root, "admissible", errs);
    r.read("U_bar", c.admissible.U_bar);
    r.read("R0", c.admissible.R0);
    r.read("R", c.radius);
    r.finish();
    if (!(c.admissible.U_bar > 0.0) || !(c.admissible.R0 > 0.0) || !(c.radius > 0.0)) {
      errs.emplace_back("admissible: U_bar, R0 and R must be positive");
    }
  }
  {
    SectionReader r(root, "cost", errs);
    for (int i = 0; i < 7; ++i) r.read("beta" + std::to_string(i + 1), c.beta[i]);
    detail::read_target(r, "mu_Q", c.targets.mu_Q, errs);
    detail::read_target(r, "mu_Sigma", c.targets.mu_Sigma, errs);
    detail::read_target(r, "rho_Q", c.targets.rho_Q, errs);
    detail::read_target(r, "rho_Sigma", c.targets.rho_Sigma, errs);
    detail::read_target(r, "rho_Omega", c.targets.rho_Omega, errs);
    detail::read_target(r, "rho_Gamma", c.targets.rho_Gamma, errs);
    r.finish();
    for (TargetProfile* t : {&c.targets.mu_Q, &c.targets.mu_Sigma, &c.targets.rho_Q, &c.targets.rho_Sigma,
                             &c.targets.rho_Omega, &c.targets.rho_Gamma}) {
      t->path = resolve(t->path);
    }
    for (int i = 0; i < 7; ++i) {
      if (!(c.beta[i] >= 0.0)) errs.push_back("cost.beta" + std::to_string(i + 1) + ": must be nonnegative");
    }
    bool all_zero = true;
    for (double b : c.beta) all_zero = all_zero && b == 0.0;
    if (all_zero) c.warnings.emplace_back("all cost weights are zero");
  }
  {
    SectionReader r(root, "optimizer", errs);
    r.read("max_iters", c.optimizer.max_iters);
    r.read("armijo_c", c.optimizer.armijo_c);
    r.read("armijo_shrink", c.optimizer.armijo_shrink);
    r.read("step0", c.optimizer.step0);
    r.read("grad_tol", c.optimizer.grad_tol);
    r.read("bb_step", c.optimizer.bb_step);
    r.read("max_backtracks", c.optimizer.max_backtracks);
    r.finish();
    for (const auto& e : check(c.optimizer)) errs.push_back("optimizer: " + e);
  }
  {
    SectionReader r(root, "verify", errs);
    r.read("directions", c.verify.directions);
    r.read("duality_directions", c.verify.duality_directions);
    r.read("fd_eps", c.verify.fd_eps);
    r.read("eigen_count", c.verify.eigen_count);
    r.read("probes", c.verify.probes);
    r.read("remainder_eps", c.verify.remainder_eps);
    r.read("quotient_eps", c.verify.quotient_eps);
    r.read("direction_scale", c.verify.direction_scale);
    r.finish();
    if (c.verify.directions < 1 || c.verify.duality_directions < 1 || c.verify.probes < 1) {
      errs.emplace_back("verify: direction and probe counts must be positive");
    }
    if (c.verify.eigen_count < 1 || c.verify.eigen_count > c.grid.nx * c.grid.ny) errs.emplace_back("verify.eigen_count: out of range");
    if (!(c.verify.fd_eps > 0.0) || !(c.verify.direction_scale > 0.0)) errs.emplace_back("verify: fd_eps and direction_scale must be positive");
    for (double e : c.verify.remainder_eps) {
      if (!(e > 0.0)) errs.emplace_back("verify.remainder_eps: values must be positive");
    }
    for (double e : c.verify.quotient_eps) {
      if (!(e > 0.0)) errs.emplace_back("verify.quotient_eps: values must be positive");
    }
  }
  {
    SectionReader r(root, "rng", errs);
    r.read("seed", c.seed);
    r.finish();
  }
  {
    SectionReader r(root, "output", errs);
    r.read("dir", c.output_dir);
    r.finish();
  }
  if (!errs.empty()) throw ConfigError(std::move(errs));
  c.initial.seed = static_cast<unsigned>(c.seed);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError({"cannot open config file '" + path + "'"});
  const auto slash = path.find_last_of('/');
  return parse_config(is, slash == std::string::npos ? "." : path.substr(0, slash));
}

// --- building runtime objects ----------------------------------------------

inline StateSolver make_solver(const RunConfig& c, const GridPtr& grid) { return {grid, c.state, c.potentials}; }

inline ControlTrajectory make_control(const RunConfig& c, const GridPtr& grid) {
  const int steps = c.state.steps();
  switch (c.control.source) {
    case ControlSource::zero: return ControlTrajectory::zero(grid, steps, c.state.dt);
    case ControlSource::shear: {
      const double mid = 0.5 * c.grid.height_y;
      const double s = c.control.shear;
      return ControlTrajectory::from_stream_function(
          grid, steps, c.state.dt, [=](double, double y, double) { return 0.5 * s * (y - mid) * (y - mid); });
    }
    case ControlSource::file: {
      std::ifstream is(c.control.path);
      if (!is) throw ConfigError({"control.path: cannot open '" + c.control.path + "'"});
      ControlTrajectory u = read_control(is, grid);
      if (u.steps() != steps || std::abs(u.dt() - c.state.dt) > 1e-12 * c.state.dt) {
        throw ConfigError({"control.path: time levels do not match [time]"});
      }
      return u;
    }
  }
  throw std::logic_error("make_control: unreachable");
}

inline CostSpec make_cost(const RunConfig& c, const GridPtr& grid) {
  const int steps = c.state.steps();
  const double dt = c.state.dt;
  CostSpec cs;
  cs.beta = c.beta;
  cs.mu_Q = target_series(grid, c.targets.mu_Q, steps, dt);
  cs.mu_Sigma = target_series(grid, c.targets.mu_Sigma, steps, dt);
  cs.rho_Q = target_series(grid, c.targets.rho_Q, steps, dt);
  cs.rho_Sigma = target_series(grid, c.targets.rho_Sigma, steps, dt);
  cs.rho_Omega = target_field(grid, c.targets.rho_Omega, c.state.T);
  cs.rho_Gamma = target_field(grid, c.targets.rho_Gamma, c.state.T);
  return cs;
}

/// Rejects configs whose cost needs an adjoint that is not available.
inline void require_adjoint_compatible(const RunConfig& c) {
  if (c.beta[0] != 0.0 || c.beta[1] != 0.0) throw ConfigError({"cost: beta1 and beta2 must be zero for adjoint gradients"});
}

}  // namespace chvel
