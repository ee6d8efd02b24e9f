#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sphs/interconnect.hpp"

namespace sphs {

enum class Method { kRk4, kRk45 };

struct IntegratorConfig {
  Method method = Method::kRk4;
  double dt = 1e-4;         // fixed step, or initial step for kRk45
  double rtol = 1e-8;       // kRk45 only
  double atol = 1e-10;      // kRk45 only
  double dt_max = 1e-2;     // kRk45 only
  double dt_min = 1e-14;    // kRk45 underflow threshold
  double t_final = 10.0;
  double event_refine_tol = 1e-10;
  /// Hysteresis half-width in σ-units; 0 disables sign latching.
  double chatter_guard = 0.0;
  /// A step that starts inside the tol_S band keeps the input channel closed
  /// for all of its stages.
  bool gate_on_s = true;
  /// Half-width of the band whose entry is logged as an S-impact. 0 selects
  /// the plant's tol_S.
  double impact_band = 0.0;

  /// Throws std::invalid_argument when the invariants are violated.
  void validate() const;
  /// Short stable hash of the configuration, for run metadata.
  std::string hash() const;
};

enum class EventKind { kSCrossing, kBoundaryCrossing, kSImpact };

std::string_view to_string(EventKind k);

struct Sample {
  double t = 0.0;
  Vector x;           // plant state
  Vector load_state;  // z
  Vector ctrl_state;  // x_i
  double sigma = 0.0;
  Region region = Region::kNotOnS;
  double h = 0.0;        // H(x)
  double storage = 0.0;  // variant storage
  Vector y;
  Vector u;
  double supply = 0.0;     // yᵀu reaching the storage
  double diss_rate = 0.0;  // d(x, t)
  double phase_error = 0.0;
  std::optional<EventKind> event;  // set on samples emitted at an event
  bool load_in_bounds = true;
  /// The step ending here evaluated a discontinuous input gain on both sides
  /// of S, so the sample follows stage-averaged sliding rather than the
  /// pointwise vector field.
  bool straddles_s = false;
  /// h·ρ of the step ending here, with ρ a stage-difference estimate of the
  /// local Lipschitz constant of the vector field. Large values mean the step
  /// outran the fastest local time scale.
  double step_stiffness = 0.0;
};

struct Trajectory {
  std::vector<Sample> samples;
  std::string scenario_id;
  Variant variant = Variant::kLinear;
  std::string config_hash;
  double tol_s = kDefaultTolS;
  double impact_band = kDefaultTolS;
  double big_m = 0.0;

  bool empty() const { return samples.empty(); }
  const Sample& front() const { return samples.front(); }
  const Sample& back() const { return samples.back(); }
};

struct Event {
  double t = 0.0;
  EventKind kind = EventKind::kSCrossing;
  /// +1 when σ increases through the level, -1 when it decreases.
  int direction = 0;
  double level = 0.0;
  Vector x;
};

struct EventLog {
  std::vector<Event> events;
};

enum class RunStatus { kCompleted, kStepUnderflow, kNonFinite, kEvalError };

std::string_view to_string(RunStatus s);

struct IntegrationResult {
  Trajectory trajectory;
  EventLog events;
  RunStatus status = RunStatus::kCompleted;
  std::string diagnostic;
  std::vector<std::string> warnings;
  std::size_t load_bound_violations = 0;
  std::size_t rejected_steps = 0;

  bool ok() const { return status == RunStatus::kCompleted; }
};

IntegrationResult integrate(const ClosedLoopSystem& cl, const Vector& x0,
                            const IntegratorConfig& cfg,
                            const std::string& scenario_id = "");

/// Builds a fully instrumented sample at one (t, total state).
Sample make_sample(const ClosedLoopSystem& cl, const Vector& total, double t);

/// Earliest time at which the trajectory reaches S: the first S-crossing or
/// S-impact event, or the first sample inside the impact band.
std::optional<double> first_impact_time(const Trajectory& traj,
                                        const EventLog& log);

// CSV export ---------------------------------------------------------------

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

void write_trajectory_csv(std::ostream& os, const Trajectory& traj);
void write_events_csv(std::ostream& os, const EventLog& log, int n);

}  // namespace sphs
