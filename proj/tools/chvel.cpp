// chvel: forward simulation, derivative checks and optimal control runs
// driven by an INI config file.

#include "chvel/config.hpp"
#include "chvel/optimize.hpp"
#include "chvel/verify.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

namespace fs = std::filesystem;
using namespace chvel;

namespace {

enum Exit { kOk = 0, kConfig = 1, kSolver = 2, kCheck = 3 };

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
    if (ch == '"') ch = '\'';
  }
  return s;
}

int fail(Exit code, const char* kind, const std::string& reason) {
  std::cerr << "chvel: error kind=" << kind << " code=" << code << " reason=\"" << one_line(reason) << "\"\n";
  return code;
}

void warn(const std::string& kind, const std::string& detail) {
  std::cerr << "chvel: warning kind=" << kind << " detail=\"" << one_line(detail) << "\"\n";
}

void write_text(const fs::path& p, const std::string& text) {
  auto os = open_output(p.string());
  os << text;
}

void prepare_output(const RunConfig& c, const std::string& config_path) {
  fs::create_directories(c.output_dir);
  fs::copy_file(config_path, fs::path(c.output_dir) / "config.ini", fs::copy_options::overwrite_existing);
}

void write_diagnostics(const fs::path& p, const StateTrajectory& tr) {
  auto os = open_output(p.string());
  os << table_header("chvel.diagnostics", 1, "time_index,time,mass,rho_min,rho_max,energy,newton_iterations") << '\n';
  for (std::size_t n = 0; n < tr.diagnostics.size(); ++n) {
    const auto& d = tr.diagnostics[n];
    os << n << ',' << format_double(d.time) << ',' << format_double(d.mass) << ',' << format_double(d.rho_min) << ','
       << format_double(d.rho_max) << ',' << format_double(d.energy) << ',' << d.newton_iterations << '\n';
  }
}

std::string level_name(const char* what, int n) {
  std::ostringstream s;
  s << what << '_' << std::setw(6) << std::setfill('0') << n << ".csv";
  return s.str();
}

int cmd_simulate(const RunConfig& c, const Scenario& s) {
  const StateTrajectory tr = s.solver.solve(s.rho0, s.u_bar);
  const fs::path out(c.output_dir);
  write_diagnostics(out / "diagnostics.csv", tr);
  fs::create_directories(out / "snapshots");
  const int steps = tr.steps();
  for (int n = 0; n <= steps; ++n) {
    if (n % c.save_stride != 0 && n != steps) continue;
    auto r = open_output((out / "snapshots" / level_name("rho", n)).string());
    write_field(r, tr.snapshots[n].rho);
    auto m = open_output((out / "snapshots" / level_name("mu", n)).string());
    write_field(m, tr.snapshots[n].mu);
  }
  return kOk;
}

int cmd_verify(const RunConfig& c, const std::string& which) {
  const VerifyReport r = run_verify(c, which);
  const fs::path out(c.output_dir);
  write_text(out / ("verify_" + which + ".csv"), r.table);
  {
    auto os = open_output((out / ("checks_" + which + ".csv")).string());
    write_checks(os, r);
  }
  for (const auto& ch : r.checks) {
    std::cout << which << ' ' << ch.name << ' ' << format_double(ch.value) << ' ' << ch.bound << ' '
              << (ch.passed ? "PASS" : "FAIL") << '\n';
  }
  if (!r.passed()) return fail(kCheck, "check", "verify " + which + " failed");
  return kOk;
}

int cmd_optimize(const RunConfig& c, const Scenario& s) {
  ReducedProblem prob(s.solver, s.rho0, s.cost);
  const OptimizeResult res = optimize(prob, c.admissible, c.optimizer, s.u_bar);
  for (const auto& w : res.trace.warnings) warn(w, "start control was scaled into the admissible set");
  const fs::path out(c.output_dir);
  {
    auto os = open_output((out / "trace.csv").string());
    write_trace(os, res.trace);
  }
  {
    auto os = open_output((out / "control.csv").string());
    write_control(os, res.u_star);
  }
  {
    const auto& rows = res.trace.rows;
    auto os = open_output((out / "summary.csv").string());
    os << table_header("chvel.summary", 1, "key,value") << '\n';
    os << "termination," << res.trace.termination << '\n';
    os << "iterations," << rows.back().iter << '\n';
    os << "initial_cost," << format_double(rows.front().cost) << '\n';
    os << "final_cost," << format_double(rows.back().cost) << '\n';
    os << "initial_stationarity," << format_double(rows.front().stationarity) << '\n';
    os << "final_stationarity," << format_double(rows.back().stationarity) << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"chvel: convective viscous Cahn-Hilliard solver with velocity control"};
  app.require_subcommand(1);
  std::string config_path;
  std::optional<std::string> out_dir;
  std::optional<long> seed;
  std::string which;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file")->required();
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "random seed");
  };
  CLI::App* sim = app.add_subcommand("simulate", "forward simulation");
  CLI::App* ver = app.add_subcommand("verify", "derivative and structure checks");
  CLI::App* opt = app.add_subcommand("optimize", "projected-gradient optimal control");
  add_common(sim);
  add_common(ver);
  add_common(opt);
  ver->add_option("which,--which", which, "gradcheck|duality|frechet|eigen|domination|massenergy")
      ->check(CLI::IsMember({"gradcheck", "duality", "frechet", "eigen", "domination", "massenergy"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kConfig, "usage", e.what());
  }

  RunConfig cfg;
  std::optional<Scenario> scenario;
  try {
    cfg = load_config(config_path);
    if (out_dir) cfg.output_dir = *out_dir;
    if (seed) {
      if (*seed < 0) throw ConfigError({"--seed must be nonnegative"});
      cfg.seed = static_cast<unsigned long>(*seed);
      cfg.initial.seed = static_cast<unsigned>(*seed);
    }
    if (ver->parsed() && which.empty()) throw ConfigError({"verify: missing check name"});
    const bool needs_adjoint = opt->parsed() || (ver->parsed() && (which == "gradcheck" || which == "duality"));
    if (needs_adjoint) require_adjoint_compatible(cfg);
    if (opt->parsed()) validate(cfg.admissible);
    scenario = build_scenario(cfg);
    prepare_output(cfg, config_path);
  } catch (const std::exception& e) {
    return fail(kConfig, "config", e.what());
  }
  for (const auto& w : cfg.warnings) warn("config", w);

  try {
    if (sim->parsed()) return cmd_simulate(cfg, *scenario);
    if (ver->parsed()) return cmd_verify(cfg, which);
    return cmd_optimize(cfg, *scenario);
  } catch (const ConfigError& e) {
    return fail(kConfig, "config", e.what());
  } catch (const std::exception& e) {
    return fail(kSolver, "solver", e.what());
  }
}
