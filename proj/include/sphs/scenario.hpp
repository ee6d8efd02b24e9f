#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "sphs/audit.hpp"

namespace sphs {

/// Raised for malformed or invalid scenario files. The message names the
/// offending field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct JbarConstant {
  Matrix matrix;
};
struct JbarRotation {
  double omega0 = 0.0;
};
struct JbarPhasePI {
  PhasePIController ctrl;
};
using JbarSpec = std::variant<JbarConstant, JbarRotation, JbarPhasePI>;

struct PlantSpec {
  int n = 2;
  int m = 1;
  Matrix q;
  Matrix r;
  JbarSpec jbar;
  Matrix bbar;
  Variant variant = Variant::kLinear;
  double big_m = 3.0;
  double tol_s = kDefaultTolS;
};

struct LoadStaticGain {
  double k = 1.0;
};
struct LoadStaticMatrix {
  Matrix k;
};
struct LoadTransferFunction {
  std::vector<double> num;
  std::vector<double> den;
};
/// u(t) = amplitude · sin(2π f t + phase) per channel; zero amplitude gives
/// the unforced system.
struct LoadOpenLoop {
  Vector amplitude;
  double frequency = 0.0;
  double phase = 0.0;
};
using LoadSpec = std::variant<LoadStaticGain, LoadStaticMatrix,
                              LoadTransferFunction, LoadOpenLoop>;

/// Audit name -> numeric parameters. Unset parameters take defaults.
using AuditSelection = std::map<std::string, std::map<std::string, double>>;

struct Sweep {
  std::string parameter;  // "r" (R = r I) or "K" (static gain)
  std::vector<double> values;
};

struct Scenario {
  std::string name;
  std::string description;
  PlantSpec plant;
  LoadSpec load;
  std::vector<Vector> initial_states;  // plant states; load/controller start at 0
  IntegratorConfig integrator;
  std::optional<Sweep> sweep;
  AuditSelection audits;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
};

bool operator==(const Scenario& a, const Scenario& b);

/// Names accepted in the "audits" section.
const std::vector<std::string>& known_audits();

Scenario parse_scenario(const std::filesystem::path& path);
Scenario parse_scenario_text(const std::string& json_text);
std::string emit_scenario(const Scenario& s);

/// Applies a sweep value to a copy of the scenario.
Scenario apply_sweep_value(const Scenario& s, const std::string& parameter,
                           double value);

SingularPHSystem build_plant(const PlantSpec& p);
ClosedLoopSystem build_closed_loop(const Scenario& s);

/// Runs the selected audits on one completed trajectory.
AuditReport run_audits(const Scenario& s, const ClosedLoopSystem& cl,
                       const IntegrationResult& run);

enum ExitCode : int {
  kExitOk = 0,
  kExitAuditFailure = 1,
  kExitConfigError = 2,
  kExitRuntimeAbort = 3,
};

struct RunSummary {
  std::string id;
  std::optional<double> sweep_value;
  Vector x0;
  RunStatus status = RunStatus::kCompleted;
  std::string diagnostic;
  AuditReport report;
};

struct ScenarioResult {
  int exit_code = kExitOk;
  std::vector<RunSummary> runs;
};

/// Integrates every (sweep value, initial state) pair, writes
/// <name>_<i>_{traj,events,audit,phase,timeseries}.csv and a manifest into
/// s.output_dir, and returns the exit code.
ScenarioResult run_scenario(const Scenario& s, std::ostream* log = nullptr);

/// Points p with pᵀQp = level, evenly spaced in angle (planar Q only).
std::vector<Eigen::Vector2d> sample_level_set(const Matrix& q, double level,
                                              int count = 720);

/// Writes <prefix>phase.csv and <prefix>timeseries.csv into dir.
void emit_plot_data(const Trajectory& traj, const SingularPHSystem& plant,
                    const std::filesystem::path& dir, const std::string& prefix);

}  // namespace sphs
