#include "sphs/sim.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace sphs {
namespace {

struct Level {
  double value;
  EventKind kind;
};

// Cubic Hermite interpolant over one accepted step.
struct DenseStep {
  double t0, h;
  const Vector& x0;
  const Vector& f0;
  const Vector& x1;
  const Vector& f1;

  Vector at(double theta) const {
    const double t2 = theta * theta;
    const double t3 = t2 * theta;
    return (2 * t3 - 3 * t2 + 1) * x0 + (t3 - 2 * t2 + theta) * h * f0 +
           (-2 * t3 + 3 * t2) * x1 + (t3 - t2) * h * f1;
  }
};

bool same_gate(const InputGate& a, const InputGate& b) {
  return a.mode == b.mode && a.latched_sign == b.latched_sign &&
         a.guard == b.guard;
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Dormand-Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                 a53 = 64448.0 / 6561, a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

}  // namespace

void IntegratorConfig::validate() const {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  if (!(t_final > 0.0)) throw std::invalid_argument("t_final must be positive");
  if (!(event_refine_tol > 0.0) || !(event_refine_tol < dt)) {
    throw std::invalid_argument("event_refine_tol must satisfy 0 < tol < dt");
  }
  if (chatter_guard < 0.0) throw std::invalid_argument("chatter_guard must be >= 0");
  if (impact_band < 0.0) throw std::invalid_argument("impact_band must be >= 0");
  if (method == Method::kRk45) {
    if (!(rtol > 0.0) || !(atol > 0.0)) {
      throw std::invalid_argument("rtol and atol must be positive");
    }
    if (!(dt_max > 0.0) || !(dt_min > 0.0) || dt_min >= dt_max) {
      throw std::invalid_argument("need 0 < dt_min < dt_max");
    }
  }
}

std::string IntegratorConfig::hash() const {
  std::ostringstream os;
  os << std::setprecision(17) << static_cast<int>(method) << '|' << dt << '|'
     << rtol << '|' << atol << '|' << dt_max << '|' << dt_min << '|'
     << t_final << '|' << event_refine_tol << '|' << chatter_guard << '|'
     << gate_on_s << '|' << impact_band;
  std::ostringstream hex;
  hex << std::hex << std::setw(16) << std::setfill('0') << fnv1a(os.str());
  return hex.str();
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::kSCrossing: return "S_crossing";
    case EventKind::kBoundaryCrossing: return "dM_crossing";
    case EventKind::kSImpact: return "S_impact";
  }
  return "?";
}

std::string_view to_string(RunStatus s) {
  switch (s) {
    case RunStatus::kCompleted: return "completed";
    case RunStatus::kStepUnderflow: return "step_underflow";
    case RunStatus::kNonFinite: return "non_finite_state";
    case RunStatus::kEvalError: return "evaluation_error";
  }
  return "?";
}

Sample make_sample(const ClosedLoopSystem& cl, const Vector& total, double t) {
  const SingularPHSystem& plant = cl.plant();
  Sample s;
  s.t = t;
  s.x = cl.plant_state(total);
  s.load_state = cl.load_state(total);
  s.ctrl_state = cl.ctrl_state(total);
  s.sigma = sigma(s.x, plant.q());
  s.region = classify(plant, s.sigma);
  s.h = 0.5 * s.sigma * s.sigma;
  s.storage = storage(plant, s.x);
  PortSignals port = port_signals(cl, total, t);
  s.y = std::move(port.y);
  s.u = std::move(port.u);
  s.phase_error = port.phase_error;
  s.load_in_bounds = port.load_within_bounds;
  s.supply = supply_rate(plant, s.x, s.y, s.u);
  s.diss_rate = dissipation_rate(plant, s.x, t);
  return s;
}

namespace {

struct StepOutcome {
  bool accepted = false;
  double h_used = 0.0;
  double h_next = 0.0;
  Vector x1;
  Vector f1;
  double stiffness = 0.0;  // h·ρ, see Sample::step_stiffness
};

// h·‖Δf‖/‖Δx‖ over two stages evaluated at the same time.
double stiffness_ratio(double h, const Vector& fa, const Vector& fb,
                       const Vector& dx) {
  const double den = dx.norm();
  return den > 0.0 ? h * (fb - fa).norm() / den : 0.0;
}

template <typename F>
StepOutcome rk4_step(const F& f, const Vector& x, const Vector& f0, double t,
                     double h) {
  StepOutcome out;
  const Vector k2 = f(x + 0.5 * h * f0, t + 0.5 * h);
  const Vector k3 = f(x + 0.5 * h * k2, t + 0.5 * h);
  const Vector k4 = f(x + h * k3, t + h);
  out.x1 = x + (h / 6.0) * (f0 + 2.0 * k2 + 2.0 * k3 + k4);
  out.stiffness = stiffness_ratio(h, k2, k3, 0.5 * h * (k2 - f0));
  out.accepted = true;
  out.h_used = h;
  out.h_next = h;
  if (out.x1.allFinite()) out.f1 = f(out.x1, t + h);
  return out;
}

template <typename F>
StepOutcome dopri_step(const F& f, const Vector& x, const Vector& k1, double t,
                       double h, const IntegratorConfig& cfg) {
  StepOutcome out;
  out.h_used = h;
  const Vector k2 = f(x + h * a21 * k1, t + c2 * h);
  const Vector k3 = f(x + h * (a31 * k1 + a32 * k2), t + c3 * h);
  const Vector k4 = f(x + h * (a41 * k1 + a42 * k2 + a43 * k3), t + c4 * h);
  const Vector k5 =
      f(x + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4), t + c5 * h);
  const Vector x6 =
      x + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
  const Vector k6 = f(x6, t + h);
  out.x1 = x + h * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
  if (!out.x1.allFinite()) {
    out.accepted = true;  // reported as non-finite by the caller
    return out;
  }
  out.f1 = f(out.x1, t + h);
  out.stiffness = stiffness_ratio(h, k6, out.f1, out.x1 - x6);
  const Vector err =
      h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * out.f1);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < err.size(); ++i) {
    const double sc =
        cfg.atol + cfg.rtol * std::max(std::abs(x(i)), std::abs(out.x1(i)));
    acc += (err(i) / sc) * (err(i) / sc);
  }
  const double en = std::sqrt(acc / static_cast<double>(err.size()));
  const double factor =
      en == 0.0 ? 5.0 : std::clamp(0.9 * std::pow(en, -0.2), 0.2, 5.0);
  out.accepted = en <= 1.0;
  out.h_next = std::min(h * factor, cfg.dt_max);
  return out;
}

}  // namespace

IntegrationResult integrate(const ClosedLoopSystem& cl, const Vector& x0,
                            const IntegratorConfig& cfg,
                            const std::string& scenario_id) {
  cfg.validate();
  if (x0.size() != cl.total_dim()) {
    throw std::invalid_argument("initial state has wrong dimension");
  }
  const SingularPHSystem& plant = cl.plant();
  const double tol_s = plant.tol_s();
  const double band = cfg.impact_band > 0.0 ? cfg.impact_band : tol_s;

  std::vector<Level> levels{{0.0, EventKind::kSCrossing},
                            {band, EventKind::kSImpact},
                            {-band, EventKind::kSImpact}};
  if (plant.variant() != Variant::kExact) {
    levels.push_back({1.0 / plant.big_m(), EventKind::kBoundaryCrossing});
    levels.push_back({-1.0 / plant.big_m(), EventKind::kBoundaryCrossing});
  }

  IntegrationResult res;
  Trajectory& traj = res.trajectory;
  traj.scenario_id = scenario_id;
  traj.variant = plant.variant();
  traj.config_hash = cfg.hash();
  traj.tol_s = tol_s;
  traj.impact_band = band;
  traj.big_m = plant.big_m();
  if (plant.variant() == Variant::kExact) {
    res.warnings.push_back(
        "exact variant: the singular input gain produces chattering at S");
  }

  auto sig_of = [&](const Vector& total) {
    return sigma(cl.plant_state(total), plant.q());
  };
  // Exact and saturated input gains jump at S; the linear one is continuous.
  const bool gain_jumps = plant.variant() != Variant::kLinear;
  bool step_straddled = false;
  double step_stiffness = 0.0;
  auto record = [&](const Vector& total, double time,
                    std::optional<EventKind> event) {
    if (!traj.samples.empty() && time <= traj.samples.back().t) return;
    Sample s = make_sample(cl, total, time);
    s.event = event;
    s.straddles_s = step_straddled;
    s.step_stiffness = step_stiffness;
    if (!s.load_in_bounds) ++res.load_bound_violations;
    traj.samples.push_back(std::move(s));
  };

  // Logs every level crossing inside [t, t + h] and emits a sample per event.
  auto handle_events = [&](double t, double h, const Vector& x,
                           const Vector& f0, const Vector& x1,
                           const Vector& f1) {
    const DenseStep dense{t, h, x, f0, x1, f1};
    const double s0 = sig_of(x);
    const double s1 = sig_of(x1);
    std::vector<std::pair<double, Event>> found;
    for (const Level& lv : levels) {
      const double g0 = s0 - lv.value;
      const double g1 = s1 - lv.value;
      if (g0 == 0.0) continue;
      if (g1 != 0.0 && (g0 > 0.0) == (g1 > 0.0)) continue;
      double lo = 0.0, hi = 1.0;
      if (g1 != 0.0) {
        while ((hi - lo) * h > cfg.event_refine_tol) {
          const double mid = 0.5 * (lo + hi);
          const double gm = sig_of(dense.at(mid)) - lv.value;
          if (gm != 0.0 && (gm > 0.0) == (g0 > 0.0)) lo = mid;
          else hi = mid;
        }
      }
      const double theta = g1 == 0.0 ? 1.0 : 0.5 * (lo + hi);
      found.push_back({theta, Event{t + theta * h, lv.kind, g1 > g0 ? 1 : -1,
                                    lv.value, cl.plant_state(dense.at(theta))}});
    }
    std::sort(found.begin(), found.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (auto& [theta, ev] : found) {
      if (theta < 1.0) record(dense.at(theta), ev.t, ev.kind);
      res.events.events.push_back(std::move(ev));
    }
  };

  double t = 0.0;
  Vector x = x0;
  double latched_sign = sig_of(x) < 0.0 ? -1.0 : 1.0;

  try {
    if (!x.allFinite()) {
      res.status = RunStatus::kNonFinite;
      res.diagnostic = "initial state is not finite";
      return res;
    }
    record(x, t, std::nullopt);

    double h = std::min(cfg.dt, cfg.t_final);
    Vector f0;
    InputGate cached_gate;
    bool have_f0 = false;
    long long step_index = 0;
    double grid_next = 0.0;
    const double t_end = cfg.t_final * (1.0 - 1e-15);

    while (t < t_end) {
      const double s0 = sig_of(x);
      InputGate gate = InputGate::pointwise();
      if (cfg.gate_on_s && std::abs(s0) <= tol_s) {
        gate = InputGate::closed();
      } else if (cfg.chatter_guard > 0.0) {
        if (std::abs(s0) > cfg.chatter_guard) latched_sign = s0 < 0.0 ? -1.0 : 1.0;
        gate = {InputGate::Mode::kSignLatched, latched_sign, cfg.chatter_guard};
      }
      const bool watch = gain_jumps && gate.mode == InputGate::Mode::kPointwise;
      bool straddled = false;
      auto f = [&](const Vector& state, double time) {
        if (watch) {
          const double s = sig_of(state);
          if (std::abs(s) <= tol_s || (s > 0.0) != (s0 > 0.0)) straddled = true;
        }
        return closed_loop_derivative(cl, state, time, gate);
      };
      if (!have_f0 || !same_gate(gate, cached_gate)) f0 = f(x, t);
      cached_gate = gate;
      have_f0 = true;

      if (cfg.method == Method::kRk4) {
        // Step k ends at (k + 1)·dt so rounding never leaves a sliver step.
        grid_next = static_cast<double>(step_index + 1) * cfg.dt;
        if (grid_next >= t_end || cfg.t_final - grid_next < 1e-6 * cfg.dt) {
          grid_next = cfg.t_final;
        }
        h = grid_next - t;
      } else h = std::min({h, cfg.dt_max, cfg.t_final - t});

      StepOutcome step = cfg.method == Method::kRk4
                             ? rk4_step(f, x, f0, t, h)
                             : dopri_step(f, x, f0, t, h, cfg);
      if (!step.x1.allFinite() || (step.accepted && !step.f1.allFinite())) {
        res.status = RunStatus::kNonFinite;
        res.diagnostic = "non-finite state at t=" + format_double(t + h);
        break;
      }
      if (!step.accepted) {
        ++res.rejected_steps;
        h = step.h_next;
        if (h < cfg.dt_min) {
          res.status = RunStatus::kStepUnderflow;
          res.diagnostic = "step size underflow at t=" + format_double(t);
          break;
        }
        continue;
      }

      step_straddled = straddled;
      step_stiffness = step.stiffness;
      handle_events(t, step.h_used, x, f0, step.x1, step.f1);
      if (cfg.method == Method::kRk4) t = grid_next;
      else t = (t + step.h_used >= t_end) ? cfg.t_final : t + step.h_used;
      ++step_index;
      x = std::move(step.x1);
      f0 = std::move(step.f1);
      h = step.h_next;
      record(x, t, std::nullopt);
      step_straddled = false;
      step_stiffness = 0.0;
    }
  } catch (const std::exception& e) {
    res.status = RunStatus::kEvalError;
    res.diagnostic = std::string("evaluation failed at t=") + format_double(t) +
                     ": " + e.what();
  }
  return res;
}

std::optional<double> first_impact_time(const Trajectory& traj,
                                        const EventLog& log) {
  if (traj.empty()) return std::nullopt;
  std::optional<double> best;
  for (const Sample& s : traj.samples) {
    if (std::abs(s.sigma) <= traj.impact_band) {
      best = s.t;
      break;
    }
  }
  for (const Event& ev : log.events) {
    if (ev.kind == EventKind::kBoundaryCrossing) continue;
    if (!best || ev.t < *best) best = ev.t;
    break;
  }
  return best;
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) return "nan";
  return std::string(buf.data(), ptr);
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const int n = traj.empty() ? 0 : static_cast<int>(traj.front().x.size());
  const int m = traj.empty() ? 0 : static_cast<int>(traj.front().y.size());
  os << 't';
  for (int i = 1; i <= n; ++i) os << ",x" << i;
  os << ",sigma,region,H,Hstorage";
  for (int i = 1; i <= m; ++i) os << ",y" << i;
  for (int i = 1; i <= m; ++i) os << ",u" << i;
  os << ",supply,diss_rate\n";
  for (const Sample& s : traj.samples) {
    os << format_double(s.t);
    for (int i = 0; i < n; ++i) os << ',' << format_double(s.x(i));
    os << ',' << format_double(s.sigma) << ',' << to_string(s.region) << ','
       << format_double(s.h) << ',' << format_double(s.storage);
    for (int i = 0; i < m; ++i) os << ',' << format_double(s.y(i));
    for (int i = 0; i < m; ++i) os << ',' << format_double(s.u(i));
    os << ',' << format_double(s.supply) << ',' << format_double(s.diss_rate)
       << '\n';
  }
}

void write_events_csv(std::ostream& os, const EventLog& log, int n) {
  os << "t,kind,direction";
  for (int i = 1; i <= n; ++i) os << ",x" << i;
  os << '\n';
  for (const Event& ev : log.events) {
    os << format_double(ev.t) << ',' << to_string(ev.kind) << ','
       << ev.direction;
    for (int i = 0; i < n; ++i) os << ',' << format_double(ev.x(i));
    os << '\n';
  }
}

}  // namespace sphs
