#include "sphs/interconnect.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace sphs {

StaticLoad StaticLoad::scalar(double k, int m) {
  if (!(k > 0.0)) throw std::invalid_argument("static gain must be positive");
  return {[k, m](const Vector&) { return Matrix(k * Matrix::Identity(m, m)); },
          0.5 * k, 2.0 * k};
}

StaticLoad StaticLoad::matrix(const Matrix& k) {
  if (k.rows() != k.cols() || (k - k.transpose()).norm() > 1e-12 * k.norm()) {
    throw std::invalid_argument("static load matrix must be square symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) {
    throw std::invalid_argument("static load matrix must be positive definite");
  }
  return {[k](const Vector&) { return k; }, 0.5 * lo, 2.0 * hi};
}

StaticLoadResponse static_load_eval(const Vector& y, const StaticLoad& load) {
  const Matrix k = load.gain(y);
  if (k.rows() != y.size() || k.cols() != y.size()) {
    throw std::invalid_argument("static load gain has wrong dimension");
  }
  StaticLoadResponse out;
  out.u = -(k * y);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(k, Eigen::EigenvaluesOnly);
  out.within_bounds = eig.eigenvalues().minCoeff() > load.kappa1 &&
                      eig.eigenvalues().maxCoeff() < load.kappa2;
  return out;
}

std::complex<double> LtiLoad::response(std::complex<double> s) const {
  const int n = order();
  if (n == 0) return d;
  const Eigen::MatrixXcd sia =
      s * Eigen::MatrixXcd::Identity(n, n) - a.cast<std::complex<double>>();
  const Eigen::VectorXcd x = sia.partialPivLu().solve(b.cast<std::complex<double>>());
  return (c.cast<std::complex<double>>() * x)(0) + d;
}

std::complex<double> LtiLoad::rational(std::complex<double> s) const {
  auto horner = [s](const std::vector<double>& p) {
    std::complex<double> acc = 0.0;
    for (double coeff : p) acc = acc * s + coeff;
    return acc;
  };
  return horner(num) / horner(den);
}

LtiLoad realize_tf(std::vector<double> num, std::vector<double> den) {
  if (den.empty() || den.front() == 0.0) {
    throw std::invalid_argument("denominator leading coefficient must be nonzero");
  }
  while (num.size() > 1 && num.front() == 0.0) num.erase(num.begin());
  if (num.empty()) num.push_back(0.0);
  if (num.size() > den.size()) {
    throw std::invalid_argument("improper transfer function: deg(num) > deg(den)");
  }
  const double lead = den.front();
  for (double& v : den) v /= lead;
  for (double& v : num) v /= lead;

  const int n = static_cast<int>(den.size()) - 1;
  std::vector<double> padded(n + 1 - num.size(), 0.0);
  padded.insert(padded.end(), num.begin(), num.end());

  LtiLoad out;
  out.num = num;
  out.den = den;
  out.d = padded[0];
  out.a = Matrix::Zero(n, n);
  out.b = Vector::Zero(n);
  out.c = Eigen::RowVectorXd::Zero(n);
  if (n > 0) {
    out.a.topRightCorner(n - 1, n - 1).setIdentity();
    for (int i = 0; i < n; ++i) {
      // den = s^n + a1 s^(n-1) + ... + an; last row is [-an ... -a1].
      out.a(n - 1, i) = -den[n - i];
      out.c(i) = padded[n - i] - out.d * den[n - i];
    }
    out.b(n - 1) = 1.0;
  }
  return out;
}

LtiLoadDerivative lti_load_step_derivative(const LtiLoad& load, const Vector& z,
                                           double y) {
  if (z.size() != load.order()) {
    throw std::invalid_argument("load state has wrong dimension");
  }
  LtiLoadDerivative out;
  out.zdot = load.a * z + load.b * y;
  out.u = -(load.c.dot(z) + load.d * y);
  return out;
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  return a - two_pi * std::ceil((a - std::numbers::pi) / two_pi);
}

PhasePIJbar phase_pi_jbar(const Vector& x, double xi,
                          const PhasePIController& ctrl) {
  if (x.size() != 2) throw std::invalid_argument("phase PI control needs n = 2");
  if (x.norm() < 1e-12) throw std::domain_error("phase undefined at origin");
  PhasePIJbar out;
  out.error = wrap_angle(ctrl.phi_ref - std::atan2(x(1), x(0)));
  const double w = ctrl.omega0 + ctrl.kp * out.error + ctrl.ki * xi;
  out.jbar.resize(2, 2);
  out.jbar << 0.0, -w, w, 0.0;
  return out;
}

InterconnectionMatrix phase_pi_interconnection(const PhasePIController& ctrl) {
  return {[ctrl](const Vector& x, double, const Vector& c) {
            return phase_pi_jbar(x, c.size() > 0 ? c(0) : 0.0, ctrl).jbar;
          },
          Dependence::kStateDependent};
}

OpenLoop OpenLoop::zero(int m) {
  return {[m](double) { return Vector(Vector::Zero(m)); }};
}

ClosedLoopSystem::ClosedLoopSystem(SingularPHSystem plant, Load load,
                                   std::optional<PhasePIController> controller)
    : plant_(std::move(plant)),
      load_(std::move(load)),
      controller_(std::move(controller)) {
  if (const auto* lti = std::get_if<LtiLoad>(&load_)) {
    if (plant_.m() != 1) {
      throw std::invalid_argument("transfer-function loads require m = 1");
    }
    load_dim_ = lti->order();
  }
  if (const auto* ol = std::get_if<OpenLoop>(&load_); ol && !ol->signal) {
    throw std::invalid_argument("open-loop signal is empty");
  }
  if (controller_) {
    if (plant_.n() != 2) {
      throw std::invalid_argument("phase PI control needs n = 2");
    }
    plant_ = plant_.with_jbar(phase_pi_interconnection(*controller_));
  }
}

ClosedLoopSystem ClosedLoopSystem::with_plant(SingularPHSystem plant) const {
  return ClosedLoopSystem(std::move(plant), load_, controller_);
}

PortSignals port_signals(const ClosedLoopSystem& cl, const Vector& total,
                         double t) {
  if (total.size() != cl.total_dim()) {
    throw std::invalid_argument("closed-loop state has wrong dimension");
  }
  const Vector x = cl.plant_state(total);
  PortSignals out;
  out.y = output_map(cl.plant(), x);
  std::visit(
      [&](const auto& load) {
        using T = std::decay_t<decltype(load)>;
        if constexpr (std::is_same_v<T, OpenLoop>) {
          out.u = load.signal(t);
          if (out.u.size() != cl.plant().m()) {
            throw std::invalid_argument("open-loop signal has wrong dimension");
          }
        } else if constexpr (std::is_same_v<T, StaticLoad>) {
          auto r = static_load_eval(out.y, load);
          out.u = std::move(r.u);
          out.load_within_bounds = r.within_bounds;
        } else {
          out.u = Vector::Constant(
              1, -(load.c.dot(cl.load_state(total)) + load.d * out.y(0)));
        }
      },
      cl.load());
  if (cl.controller()) {
    const Vector xi = cl.ctrl_state(total);
    out.phase_error = phase_pi_jbar(x, xi(0), *cl.controller()).error;
  }
  return out;
}

Vector closed_loop_derivative(const ClosedLoopSystem& cl, const Vector& total,
                              double t, const InputGate& gate) {
  const PortSignals sig = port_signals(cl, total, t);
  const Vector x = cl.plant_state(total);
  const Vector ctrl = cl.ctrl_state(total);
  Vector out(cl.total_dim());
  out.head(cl.n()) = vector_field(cl.plant(), x, t, sig.u, ctrl, gate);
  if (const auto* lti = std::get_if<LtiLoad>(&cl.load())) {
    out.segment(cl.n(), cl.load_dim()) =
        lti_load_step_derivative(*lti, cl.load_state(total), sig.y(0)).zdot;
  }
  if (cl.controller()) out(cl.total_dim() - 1) = sig.phase_error;
  return out;
}

}  // namespace sphs
