#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace sphs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Default half-width of the numerical band |sigma| <= tol_S that stands in
/// for membership of the singular set S.
inline constexpr double kDefaultTolS = 1e-9;

/// Symmetric positive definite Q. Validated once at construction.
class QuadraticForm {
 public:
  explicit QuadraticForm(Matrix q);

  const Matrix& matrix() const { return q_; }
  int dim() const { return static_cast<int>(q_.rows()); }
  double lambda_min() const { return lambda_min_; }
  double lambda_max() const { return lambda_max_; }

  /// xᵀQx
  double eval(const Vector& x) const;

 private:
  Matrix q_;
  double lambda_min_{};
  double lambda_max_{};
};

enum class Variant { kExact, kSaturated, kLinear };

std::string_view to_string(Variant v);
std::optional<Variant> parse_variant(std::string_view s);

enum class Region { kOnS, kInMNotS, kOutsideM, kNotOnS };

std::string_view to_string(Region r);

/// Storage function paired with a variant: H for the exact system, H_sat for
/// the saturated one, H_lin for the linear boundary layer.
enum class StorageKind { kH, kHSat, kHLin };

StorageKind natural_storage(Variant v);
std::string_view to_string(StorageKind k);

/// How a matrix-valued callback depends on its arguments. Audits use this to
/// skip re-checking constant matrices.
enum class Dependence { kConstant, kTimeVarying, kStateDependent };

struct DissipationMatrix {
  std::function<Matrix(const Vector& x, double t)> eval;
  Dependence dependence = Dependence::kConstant;

  static DissipationMatrix constant(Matrix r);
};

struct InterconnectionMatrix {
  std::function<Matrix(const Vector& x, double t, const Vector& ctrl)> eval;
  Dependence dependence = Dependence::kConstant;

  static InterconnectionMatrix constant(Matrix j);
  /// [[0, -w0], [w0, 0]]
  static InterconnectionMatrix rotation(double omega0);
};

struct InputMatrix {
  std::function<Matrix(const Vector& x)> eval;
  Dependence dependence = Dependence::kConstant;

  static InputMatrix constant(Matrix b);
};

struct SystemParams {
  Matrix q;
  DissipationMatrix r;
  InterconnectionMatrix jbar;
  InputMatrix bbar;
  int m = 1;
  Variant variant = Variant::kLinear;
  double big_m = 0.0;  // boundary-layer parameter M; unused for kExact
  double eps1 = 0.0;   // 0 means "derive from R when R is constant"
  double eps2 = 0.0;
  double tol_s = kDefaultTolS;
};

/// Singular port-Hamiltonian system
///   ẋ = [J̄(x,t) - σ(x) R(x,t)] Q x + σ*(x) B̄(x) u,   y = B̄(x)ᵀ Q x
/// where σ* is the variant's inverse of σ. Immutable after construction.
class SingularPHSystem {
 public:
  explicit SingularPHSystem(SystemParams p);

  int n() const { return q_.dim(); }
  int m() const { return m_; }
  const QuadraticForm& q() const { return q_; }
  Variant variant() const { return variant_; }
  double big_m() const { return big_m_; }
  double eps1() const { return eps1_; }
  double eps2() const { return eps2_; }
  double tol_s() const { return tol_s_; }

  Matrix r(const Vector& x, double t) const { return r_.eval(x, t); }
  Matrix jbar(const Vector& x, double t, const Vector& ctrl) const {
    return jbar_.eval(x, t, ctrl);
  }
  Matrix bbar(const Vector& x) const { return bbar_.eval(x); }

  const DissipationMatrix& r_fn() const { return r_; }
  const InterconnectionMatrix& jbar_fn() const { return jbar_; }
  const InputMatrix& bbar_fn() const { return bbar_; }

  SingularPHSystem with_variant(Variant v, double big_m) const;
  SingularPHSystem with_jbar(InterconnectionMatrix j) const;

  /// Structural checks on one evaluation: J̄ skew to 1e-12, R symmetric with
  /// spectrum in [eps1, eps2]. Returns a description of the first violation.
  std::optional<std::string> check_structure(const Vector& x, double t,
                                             const Vector& ctrl) const;

 private:
  SingularPHSystem(const SystemParams& p, QuadraticForm q);
  void validate();

  QuadraticForm q_;
  DissipationMatrix r_;
  InterconnectionMatrix jbar_;
  InputMatrix bbar_;
  int m_;
  Variant variant_;
  double big_m_;
  double eps1_;
  double eps2_;
  double tol_s_;
};

// σ and its inverses -------------------------------------------------------

/// σ(x) = ½(xᵀQx - 1). Throws std::invalid_argument on dimension mismatch.
double sigma(const Vector& x, const QuadraticForm& q);

double sigma_inv(double sigma, double tol_s = kDefaultTolS);
double sigma_inv_sat(double sigma, double big_m, double tol_s = kDefaultTolS);
double sigma_inv_lin(double sigma, double big_m);

double sigma_inv(const Vector& x, const QuadraticForm& q,
                 double tol_s = kDefaultTolS);
double sigma_inv_sat(const Vector& x, const QuadraticForm& q, double big_m,
                     double tol_s = kDefaultTolS);
double sigma_inv_lin(const Vector& x, const QuadraticForm& q, double big_m);

/// The variant's σ* at a given σ level.
double input_gain(const SingularPHSystem& sys, double sigma);

Region classify(const SingularPHSystem& sys, double sigma);
Region classify(const SingularPHSystem& sys, const Vector& x);

// Storage functions --------------------------------------------------------

double hamiltonian(const Vector& x, const QuadraticForm& q);
Vector grad_hamiltonian(const Vector& x, const QuadraticForm& q);

/// Zero inside the tol_S band, matching σ* = 0 there.
double storage_sat(double sigma, double big_m, double tol_s = kDefaultTolS);
/// Returns -infinity inside the tol_S band, where ln H diverges.
double storage_lin(double sigma, double big_m, double tol_s = kDefaultTolS);

double storage_sat(const Vector& x, const QuadraticForm& q, double big_m,
                   double tol_s = kDefaultTolS);
double storage_lin(const Vector& x, const QuadraticForm& q, double big_m,
                   double tol_s = kDefaultTolS);

double storage(StorageKind kind, const SingularPHSystem& sys, const Vector& x);
inline double storage(const SingularPHSystem& sys, const Vector& x) {
  return storage(natural_storage(sys.variant()), sys, x);
}

/// Gradient of the chosen storage. Inside the tol_S band H_lin has no
/// gradient; the zero vector is returned there.
Vector grad_storage(StorageKind kind, const SingularPHSystem& sys,
                    const Vector& x);

// Rates and vector field ---------------------------------------------------

/// d(x,t): σ²·xᵀQRQx for Exact everywhere and outside M; (|σ|/M)·xᵀQRQx for
/// Saturated inside M; xᵀQRQx / M² for Linear inside M.
double dissipation_rate(const SingularPHSystem& sys, const Vector& x, double t);

/// How the input channel is evaluated. kPointwise applies the variant's σ*
/// at the evaluation point; kClosed forces σ* = 0 (the on-S mode of a step);
/// kSignLatched evaluates σ* with a frozen sign when |σ| <= guard.
struct InputGate {
  enum class Mode { kPointwise, kClosed, kSignLatched };
  Mode mode = Mode::kPointwise;
  double latched_sign = 1.0;
  double guard = 0.0;

  static InputGate pointwise() { return {}; }
  static InputGate closed() { return {Mode::kClosed, 1.0, 0.0}; }
};

double gated_input_gain(const SingularPHSystem& sys, double sigma,
                        const InputGate& gate);

Vector vector_field(const SingularPHSystem& sys, const Vector& x, double t,
                    const Vector& u, const Vector& ctrl = Vector(),
                    const InputGate& gate = InputGate::pointwise());

/// [J̄ - σR] Q x; identical for all variants.
Vector drift(const SingularPHSystem& sys, const Vector& x, double t,
             const Vector& ctrl = Vector());

Vector output_map(const SingularPHSystem& sys, const Vector& x);

/// Closed-form time derivative of a storage function along the vector field,
/// ∇S(x)ᵀ ẋ, evaluated without reference to the dissipation-rate formulas.
double storage_rate(StorageKind kind, const SingularPHSystem& sys,
                    const Vector& x, double t, const Vector& u,
                    const Vector& ctrl = Vector());

/// Port power reaching the storage: yᵀu off S, zero on S where σ* vanishes.
double supply_rate(const SingularPHSystem& sys, const Vector& x,
                   const Vector& y, const Vector& u);

/// Scales x along its ray so that xᵀQx = 1. x must be nonzero.
Vector project_to_s(const Vector& x, const QuadraticForm& q);

}  // namespace sphs
