#include "sphs/core.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sphs {
namespace {

void require_dim(const Vector& x, int n, const char* what) {
  if (x.size() != n) {
    std::ostringstream os;
    os << what << ": expected dimension " << n << ", got " << x.size();
    throw std::invalid_argument(os.str());
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double rel_asymmetry(const Matrix& a) {
  const double norm = a.norm();
  if (norm == 0.0) return 0.0;
  return (a - a.transpose()).norm() / norm;
}

}  // namespace

QuadraticForm::QuadraticForm(Matrix q) : q_(std::move(q)) {
  if (q_.rows() == 0 || q_.rows() != q_.cols()) {
    throw std::invalid_argument("Q must be a non-empty square matrix");
  }
  if (!q_.allFinite()) throw std::invalid_argument("Q has non-finite entries");
  if (rel_asymmetry(q_) > 1e-12) {
    throw std::invalid_argument("Q is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(q_);
  lambda_min_ = eig.eigenvalues().minCoeff();
  lambda_max_ = eig.eigenvalues().maxCoeff();
  if (!(lambda_min_ > 0.0)) {
    throw std::invalid_argument("Q is not positive definite");
  }
}

double QuadraticForm::eval(const Vector& x) const {
  require_dim(x, dim(), "quadratic form");
  return x.dot(q_ * x);
}

std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::kExact: return "exact";
    case Variant::kSaturated: return "saturated";
    case Variant::kLinear: return "linear";
  }
  return "?";
}

std::optional<Variant> parse_variant(std::string_view s) {
  if (s == "exact") return Variant::kExact;
  if (s == "saturated") return Variant::kSaturated;
  if (s == "linear") return Variant::kLinear;
  return std::nullopt;
}

std::string_view to_string(Region r) {
  switch (r) {
    case Region::kOnS: return "on_S";
    case Region::kInMNotS: return "in_M";
    case Region::kOutsideM: return "outside_M";
    case Region::kNotOnS: return "off_S";
  }
  return "?";
}

StorageKind natural_storage(Variant v) {
  switch (v) {
    case Variant::kExact: return StorageKind::kH;
    case Variant::kSaturated: return StorageKind::kHSat;
    case Variant::kLinear: return StorageKind::kHLin;
  }
  return StorageKind::kH;
}

std::string_view to_string(StorageKind k) {
  switch (k) {
    case StorageKind::kH: return "H";
    case StorageKind::kHSat: return "H_sat";
    case StorageKind::kHLin: return "H_lin";
  }
  return "?";
}

DissipationMatrix DissipationMatrix::constant(Matrix r) {
  return {[r = std::move(r)](const Vector&, double) { return r; },
          Dependence::kConstant};
}

InterconnectionMatrix InterconnectionMatrix::constant(Matrix j) {
  return {[j = std::move(j)](const Vector&, double, const Vector&) { return j; },
          Dependence::kConstant};
}

InterconnectionMatrix InterconnectionMatrix::rotation(double omega0) {
  Matrix j(2, 2);
  j << 0.0, -omega0, omega0, 0.0;
  return constant(std::move(j));
}

InputMatrix InputMatrix::constant(Matrix b) {
  return {[b = std::move(b)](const Vector&) { return b; },
          Dependence::kConstant};
}

SingularPHSystem::SingularPHSystem(SystemParams p)
    : SingularPHSystem(p, QuadraticForm(p.q)) {}

SingularPHSystem::SingularPHSystem(const SystemParams& p, QuadraticForm q)
    : q_(std::move(q)),
      r_(p.r),
      jbar_(p.jbar),
      bbar_(p.bbar),
      m_(p.m),
      variant_(p.variant),
      big_m_(p.big_m),
      eps1_(p.eps1),
      eps2_(p.eps2),
      tol_s_(p.tol_s) {
  validate();
}

void SingularPHSystem::validate() {
  if (!r_.eval || !jbar_.eval || !bbar_.eval) {
    throw std::invalid_argument("R, Jbar and Bbar evaluators are required");
  }
  if (m_ < 1) throw std::invalid_argument("input dimension m must be >= 1");
  if (variant_ != Variant::kExact && !(big_m_ > 0.0)) {
    throw std::invalid_argument("M must be positive for the saturated and "
                                "linear variants");
  }
  if (!(tol_s_ > 0.0)) throw std::invalid_argument("tol_S must be positive");

  const Vector x0 = Vector::Zero(n());
  const Matrix b = bbar_.eval(x0);
  if (b.rows() != n() || b.cols() != m_) {
    throw std::invalid_argument("Bbar must be n x m");
  }
  if (r_.dependence == Dependence::kConstant) {
    const Matrix r = r_.eval(x0, 0.0);
    if (r.rows() != n() || r.cols() != n()) {
      throw std::invalid_argument("R must be n x n");
    }
    if (rel_asymmetry(r) > 1e-12) throw std::invalid_argument("R is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(r);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (eps1_ == 0.0 && eps2_ == 0.0) {
      eps1_ = lo;
      eps2_ = hi;
    }
    if (!(lo > 0.0)) throw std::invalid_argument("R is not positive definite");
  }
  if (eps1_ < 0.0 || eps2_ < eps1_) {
    throw std::invalid_argument("R bounds must satisfy 0 < eps1 <= eps2");
  }
  if (jbar_.dependence == Dependence::kConstant) {
    const Matrix j = jbar_.eval(x0, 0.0, Vector());
    if (j.rows() != n() || j.cols() != n()) {
      throw std::invalid_argument("Jbar must be n x n");
    }
    if ((j + j.transpose()).norm() > 1e-12) {
      throw std::invalid_argument("Jbar is not skew-symmetric");
    }
  }
}

SingularPHSystem SingularPHSystem::with_variant(Variant v, double big_m) const {
  SingularPHSystem copy = *this;
  copy.variant_ = v;
  copy.big_m_ = big_m;
  copy.validate();
  return copy;
}

SingularPHSystem SingularPHSystem::with_jbar(InterconnectionMatrix j) const {
  SingularPHSystem copy = *this;
  copy.jbar_ = std::move(j);
  copy.validate();
  return copy;
}

std::optional<std::string> SingularPHSystem::check_structure(
    const Vector& x, double t, const Vector& ctrl) const {
  const Matrix j = jbar(x, t, ctrl);
  if ((j + j.transpose()).norm() > 1e-12) return "Jbar not skew-symmetric";
  const Matrix r = this->r(x, t);
  if (rel_asymmetry(r) > 1e-12) return "R not symmetric";
  Eigen::SelfAdjointEigenSolver<Matrix> eig(r);
  const double slack = 1e-12 * std::max(1.0, eps2_);
  if (eig.eigenvalues().minCoeff() < eps1_ - slack ||
      eig.eigenvalues().maxCoeff() > eps2_ + slack) {
    return "R spectrum outside [eps1, eps2]";
  }
  return std::nullopt;
}

double sigma(const Vector& x, const QuadraticForm& q) {
  require_dim(x, q.dim(), "sigma");
  return 0.5 * (q.eval(x) - 1.0);
}

double sigma_inv(double s, double tol_s) {
  return std::abs(s) <= tol_s ? 0.0 : 1.0 / s;
}

double sigma_inv_sat(double s, double big_m, double tol_s) {
  const double a = std::abs(s);
  if (a <= tol_s) return 0.0;
  if (a <= 1.0 / big_m) return big_m * sign(s);
  return 1.0 / s;
}

double sigma_inv_lin(double s, double big_m) {
  if (std::abs(s) <= 1.0 / big_m) return big_m * big_m * s;
  return 1.0 / s;
}

double sigma_inv(const Vector& x, const QuadraticForm& q, double tol_s) {
  return sigma_inv(sigma(x, q), tol_s);
}

double sigma_inv_sat(const Vector& x, const QuadraticForm& q, double big_m,
                     double tol_s) {
  return sigma_inv_sat(sigma(x, q), big_m, tol_s);
}

double sigma_inv_lin(const Vector& x, const QuadraticForm& q, double big_m) {
  return sigma_inv_lin(sigma(x, q), big_m);
}

double input_gain(const SingularPHSystem& sys, double s) {
  switch (sys.variant()) {
    case Variant::kExact: return sigma_inv(s, sys.tol_s());
    case Variant::kSaturated: return sigma_inv_sat(s, sys.big_m(), sys.tol_s());
    case Variant::kLinear: return sigma_inv_lin(s, sys.big_m());
  }
  return 0.0;
}

Region classify(const SingularPHSystem& sys, double s) {
  const double a = std::abs(s);
  if (a <= sys.tol_s()) return Region::kOnS;
  if (sys.variant() == Variant::kExact) return Region::kNotOnS;
  return a <= 1.0 / sys.big_m() ? Region::kInMNotS : Region::kOutsideM;
}

Region classify(const SingularPHSystem& sys, const Vector& x) {
  return classify(sys, sigma(x, sys.q()));
}

double hamiltonian(const Vector& x, const QuadraticForm& q) {
  const double s = sigma(x, q);
  return 0.5 * s * s;
}

Vector grad_hamiltonian(const Vector& x, const QuadraticForm& q) {
  return sigma(x, q) * (q.matrix() * x);
}

double storage_sat(double s, double big_m, double tol_s) {
  const double a = std::abs(s);
  if (a <= tol_s) return 0.0;
  if (a > 1.0 / big_m) return 0.5 * s * s + 1.0 / (2.0 * big_m * big_m);
  return a / big_m;
}

double storage_lin(double s, double big_m, double tol_s) {
  const double m2 = big_m * big_m;
  if (std::abs(s) > 1.0 / big_m) {
    return 0.5 * s * s - (1.0 + std::log(2.0 * m2)) / (2.0 * m2);
  }
  if (std::abs(s) <= tol_s) return -std::numeric_limits<double>::infinity();
  // ln(H) = ln(σ²/2), written to avoid underflow of σ² for tiny σ.
  return (2.0 * std::log(std::abs(s)) - std::log(2.0)) / (2.0 * m2);
}

double storage_sat(const Vector& x, const QuadraticForm& q, double big_m,
                   double tol_s) {
  return storage_sat(sigma(x, q), big_m, tol_s);
}

double storage_lin(const Vector& x, const QuadraticForm& q, double big_m,
                   double tol_s) {
  return storage_lin(sigma(x, q), big_m, tol_s);
}

double storage(StorageKind kind, const SingularPHSystem& sys, const Vector& x) {
  const double s = sigma(x, sys.q());
  switch (kind) {
    case StorageKind::kH: return 0.5 * s * s;
    case StorageKind::kHSat: return storage_sat(s, sys.big_m(), sys.tol_s());
    case StorageKind::kHLin: return storage_lin(s, sys.big_m(), sys.tol_s());
  }
  return 0.0;
}

Vector grad_storage(StorageKind kind, const SingularPHSystem& sys,
                    const Vector& x) {
  const double s = sigma(x, sys.q());
  const Vector qx = sys.q().matrix() * x;
  const double inv_m = kind == StorageKind::kH ? 0.0 : 1.0 / sys.big_m();
  switch (kind) {
    case StorageKind::kH:
      return s * qx;
    case StorageKind::kHSat:
      if (std::abs(s) > inv_m) return s * qx;
      if (std::abs(s) <= sys.tol_s()) return Vector::Zero(x.size());
      return (sign(s) / sys.big_m()) * qx;
    case StorageKind::kHLin:
      if (std::abs(s) > inv_m) return s * qx;
      if (std::abs(s) <= sys.tol_s()) return Vector::Zero(x.size());
      // d/dx [ln(σ²/2) / (2M²)] = Qx / (M² σ)
      return qx / (sys.big_m() * sys.big_m() * s);
  }
  return qx;
}

double dissipation_rate(const SingularPHSystem& sys, const Vector& x,
                        double t) {
  const double s = sigma(x, sys.q());
  const Vector qx = sys.q().matrix() * x;
  const double qrq = qx.dot(sys.r(x, t) * qx);
  const double a = std::abs(s);
  switch (sys.variant()) {
    case Variant::kExact:
      return s * s * qrq;
    case Variant::kSaturated:
      if (a > 1.0 / sys.big_m()) return s * s * qrq;
      return a / sys.big_m() * qrq;
    case Variant::kLinear:
      if (a > 1.0 / sys.big_m()) return s * s * qrq;
      return qrq / (sys.big_m() * sys.big_m());
  }
  return 0.0;
}

double gated_input_gain(const SingularPHSystem& sys, double s,
                        const InputGate& gate) {
  switch (gate.mode) {
    case InputGate::Mode::kPointwise:
      return input_gain(sys, s);
    case InputGate::Mode::kClosed:
      return 0.0;
    case InputGate::Mode::kSignLatched:
      if (std::abs(s) > gate.guard) return input_gain(sys, s);
      return gate.latched_sign * std::abs(input_gain(sys, std::abs(s)));
  }
  return 0.0;
}

Vector drift(const SingularPHSystem& sys, const Vector& x, double t,
             const Vector& ctrl) {
  const double s = sigma(x, sys.q());
  const Vector qx = sys.q().matrix() * x;
  return sys.jbar(x, t, ctrl) * qx - s * (sys.r(x, t) * qx);
}

Vector vector_field(const SingularPHSystem& sys, const Vector& x, double t,
                    const Vector& u, const Vector& ctrl,
                    const InputGate& gate) {
  require_dim(x, sys.n(), "vector_field state");
  require_dim(u, sys.m(), "vector_field input");
  Vector dx = drift(sys, x, t, ctrl);
  const double gain = gated_input_gain(sys, sigma(x, sys.q()), gate);
  if (gain != 0.0) dx.noalias() += gain * (sys.bbar(x) * u);
  return dx;
}

Vector output_map(const SingularPHSystem& sys, const Vector& x) {
  require_dim(x, sys.n(), "output_map state");
  return sys.bbar(x).transpose() * (sys.q().matrix() * x);
}

double storage_rate(StorageKind kind, const SingularPHSystem& sys,
                    const Vector& x, double t, const Vector& u,
                    const Vector& ctrl) {
  return grad_storage(kind, sys, x).dot(vector_field(sys, x, t, u, ctrl));
}

double supply_rate(const SingularPHSystem& sys, const Vector& x,
                   const Vector& y, const Vector& u) {
  if (std::abs(sigma(x, sys.q())) <= sys.tol_s()) return 0.0;
  return y.dot(u);
}

Vector project_to_s(const Vector& x, const QuadraticForm& q) {
  const double v = q.eval(x);
  if (!(v > 0.0)) throw std::invalid_argument("cannot project the origin onto S");
  return x / std::sqrt(v);
}

}  // namespace sphs
