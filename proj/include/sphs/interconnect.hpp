#pragma once

#include <complex>
#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "sphs/core.hpp"

namespace sphs {

/// Passive static load u = -K(y) y with κ₁ I ≺ K(y) ≺ κ₂ I.
struct StaticLoad {
  std::function<Matrix(const Vector& y)> gain;
  double kappa1 = 0.0;
  double kappa2 = 0.0;

  /// K(y) = k I_m with bounds (k/2, 2k).
  static StaticLoad scalar(double k, int m = 1);
  /// Constant symmetric K with bounds bracketing its spectrum.
  static StaticLoad matrix(const Matrix& k);
};

struct StaticLoadResponse {
  Vector u;
  bool within_bounds = true;
};

StaticLoadResponse static_load_eval(const Vector& y, const StaticLoad& load);

/// SISO LTI load K(s) = num(s)/den(s) in controllable canonical form.
struct LtiLoad {
  std::vector<double> num;  // descending powers of s, den-normalized
  std::vector<double> den;  // monic
  Matrix a;
  Vector b;
  Eigen::RowVectorXd c;
  double d = 0.0;

  int order() const { return static_cast<int>(a.rows()); }

  /// C(sI - A)⁻¹B + D
  std::complex<double> response(std::complex<double> s) const;
  /// num(s)/den(s) by direct polynomial evaluation.
  std::complex<double> rational(std::complex<double> s) const;
};

/// Throws std::invalid_argument for improper transfer functions or a zero
/// leading denominator coefficient.
LtiLoad realize_tf(std::vector<double> num, std::vector<double> den);

struct LtiLoadDerivative {
  Vector zdot;
  double u = 0.0;
};

/// ż = Az + By, u = -(Cz + Dy).
LtiLoadDerivative lti_load_step_derivative(const LtiLoad& load, const Vector& z,
                                           double y);

/// Phase PI controller acting through J̄: the off-diagonal entry is
/// ω₀ + k_p e + k_i x_i with e = φ_ref - arg(x₁ + j x₂) wrapped to (-π, π].
struct PhasePIController {
  double omega0 = 0.0;
  double kp = 0.0;
  double ki = 0.0;
  double phi_ref = 0.0;
};

/// Wraps an angle into (-π, π].
double wrap_angle(double a);

struct PhasePIJbar {
  Matrix jbar;
  double error = 0.0;
};

/// Throws std::domain_error when ‖x‖ < 1e-12 (phase undefined at origin).
PhasePIJbar phase_pi_jbar(const Vector& x, double xi,
                          const PhasePIController& ctrl);

/// J̄ evaluator reading the integrator state from the controller slot.
InterconnectionMatrix phase_pi_interconnection(const PhasePIController& ctrl);

struct OpenLoop {
  std::function<Vector(double t)> signal;

  static OpenLoop zero(int m);
};

using Load = std::variant<OpenLoop, StaticLoad, LtiLoad>;

/// Plant + load + optional phase controller. Total state is laid out as
/// [x (n) | z (load order) | x_i (1 if controller)].
class ClosedLoopSystem {
 public:
  ClosedLoopSystem(SingularPHSystem plant, Load load,
                   std::optional<PhasePIController> controller = std::nullopt);

  const SingularPHSystem& plant() const { return plant_; }
  const Load& load() const { return load_; }
  const std::optional<PhasePIController>& controller() const {
    return controller_;
  }

  int n() const { return plant_.n(); }
  int load_dim() const { return load_dim_; }
  int ctrl_dim() const { return controller_ ? 1 : 0; }
  int total_dim() const { return n() + load_dim_ + ctrl_dim(); }

  Vector plant_state(const Vector& total) const { return total.head(n()); }
  Vector load_state(const Vector& total) const {
    return total.segment(n(), load_dim_);
  }
  Vector ctrl_state(const Vector& total) const {
    return total.tail(ctrl_dim());
  }

  ClosedLoopSystem with_plant(SingularPHSystem plant) const;

 private:
  SingularPHSystem plant_;
  Load load_;
  std::optional<PhasePIController> controller_;
  int load_dim_ = 0;
};

/// Port signals at one instant.
struct PortSignals {
  Vector y;
  Vector u;
  double phase_error = 0.0;
  bool load_within_bounds = true;
};

PortSignals port_signals(const ClosedLoopSystem& cl, const Vector& total,
                         double t);

Vector closed_loop_derivative(const ClosedLoopSystem& cl, const Vector& total,
                              double t,
                              const InputGate& gate = InputGate::pointwise());

}  // namespace sphs
