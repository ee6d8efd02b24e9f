#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "sphs/scenario.hpp"

#ifndef SPHS_SCENARIO_DIR
#define SPHS_SCENARIO_DIR "scenarios"
#endif

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int list_scenarios(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) {
    std::cerr << "scenario directory not found: " << dir.string() << '\n';
    return sphs::kExitConfigError;
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  int status = sphs::kExitOk;
  for (const auto& f : files) {
    try {
      const sphs::Scenario s = sphs::parse_scenario(f);
      std::cout << s.name << '\t' << f.string();
      if (!s.description.empty()) std::cout << '\t' << s.description;
      std::cout << '\n';
    } catch (const sphs::ConfigError& e) {
      std::cerr << f.string() << ": " << e.what() << '\n';
      status = sphs::kExitConfigError;
    }
  }
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulate and audit singular port-Hamiltonian oscillators"};
  app.require_subcommand(1);

  std::string config;
  std::string out_dir;
  std::uint64_t seed = 0;
  double dt = 0.0;
  double t_final = 0.0;
  std::string variant;
  std::string audit_list;
  auto* run = app.add_subcommand("run", "Run a scenario and its audits");
  run->add_option("config", config, "Scenario file")->required();
  auto* out_opt = run->add_option("--out", out_dir, "Output directory");
  auto* seed_opt = run->add_option("--seed", seed, "Random seed for audits");
  auto* dt_opt = run->add_option("--dt", dt, "Integrator step")->check(CLI::PositiveNumber);
  auto* tf_opt =
      run->add_option("--t-final", t_final, "Horizon in seconds")->check(CLI::PositiveNumber);
  auto* var_opt = run->add_option("--variant", variant, "exact|saturated|linear")
                      ->check(CLI::IsMember({"exact", "saturated", "linear"}));
  auto* audit_opt =
      run->add_option("--audit", audit_list, "Comma-separated audits to run");

  std::string validate_config;
  auto* validate = app.add_subcommand("validate", "Check a scenario file");
  validate->add_option("config", validate_config, "Scenario file")->required();

  std::string scenario_dir = SPHS_SCENARIO_DIR;
  auto* list = app.add_subcommand("list-scenarios", "List bundled scenarios");
  list->add_option("--scenario-dir", scenario_dir, "Directory to scan");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : sphs::kExitConfigError;
  }

  if (*list) return list_scenarios(scenario_dir);

  if (*validate) {
    try {
      const sphs::Scenario s = sphs::parse_scenario(validate_config);
      std::cout << s.name << ": ok (" << s.initial_states.size()
                << " initial states";
      if (s.sweep) std::cout << ", sweep over " << s.sweep->values.size() << ' ' << s.sweep->parameter;
      std::cout << ")\n";
      return sphs::kExitOk;
    } catch (const sphs::ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return sphs::kExitConfigError;
    }
  }

  sphs::Scenario s;
  try {
    s = sphs::parse_scenario(config);
    if (*out_opt) s.output_dir = out_dir;
    if (*seed_opt) s.seed = seed;
    if (*dt_opt) s.integrator.dt = dt;
    if (*tf_opt) s.integrator.t_final = t_final;
    if (*var_opt) s.plant.variant = *sphs::parse_variant(variant);
    if (*audit_opt) {
      sphs::AuditSelection selected;
      const auto& known = sphs::known_audits();
      for (const auto& name : split_list(audit_list)) {
        if (std::find(known.begin(), known.end(), name) == known.end()) {
          throw sphs::ConfigError("--audit: unknown audit " + name);
        }
        const auto it = s.audits.find(name);
        selected[name] = it == s.audits.end() ? std::map<std::string, double>{} : it->second;
      }
      s.audits = std::move(selected);
    }
    // Re-validate after overrides.
    s = sphs::parse_scenario_text(sphs::emit_scenario(s));
  } catch (const sphs::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return sphs::kExitConfigError;
  }

  try {
    const sphs::ScenarioResult r = sphs::run_scenario(s, &std::cout);
    if (r.exit_code == sphs::kExitAuditFailure) std::cerr << "audit failure\n";
    if (r.exit_code == sphs::kExitRuntimeAbort) std::cerr << "runtime abort\n";
    return r.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return sphs::kExitRuntimeAbort;
  }
}
