#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "sphs/sim.hpp"

namespace sphs {

enum class Verdict { kPass, kFail, kInconclusive };

std::string_view to_string(Verdict v);

/// Largest Sample::step_stiffness at which a sample pair still enters the
/// S^c-conditioned storage checks.
inline constexpr double kMaxResolvedStiffness = 0.05;

/// One audit verdict. worst_margin is signed so that a negative value is a
/// violation; its units are those of the checked quantity.
struct AuditCheck {
  std::string name;
  std::string anchor;  // the property being checked, in words
  Verdict verdict = Verdict::kInconclusive;
  double worst_margin = 0.0;
  double t_at_worst = 0.0;
  Vector x_at_worst;
  double tolerance = 0.0;
  std::size_t excluded = 0;
  std::size_t evaluated = 0;
  std::string note;
  std::vector<std::pair<std::string, double>> metrics;

  bool passed() const { return verdict == Verdict::kPass; }
  double metric(std::string_view key) const;
};

struct AuditReport {
  std::vector<AuditCheck> checks;
  double tol_s = kDefaultTolS;

  /// True when no check failed. Inconclusive checks do not fail a report.
  bool passed() const;
};

void write_report_csv(std::ostream& os, const AuditReport& report);
void write_report_text(std::ostream& os, const AuditReport& report);

/// Dissipation inequality along a sampled trajectory:
///  (a) the closed-form storage rate ∇S·ẋ equals -d + yᵀu at every usable
///      sample, and
///  (b) [S(t_{k+1}) - S(t_k)]/Δt <= trapezoid(yᵀu) + slack on every usable
///      pair, slack = ½ Δt · (local Lipschitz estimate of yᵀu) plus a
///      round-off floor.
/// Pairs touching the tol_S band, crossing S, or ending an unresolved step
/// (stages straddled S, or step_stiffness above kMaxResolvedStiffness) are
/// excluded and counted.
AuditCheck check_passivity(const Trajectory& traj, const SingularPHSystem& sys,
                           StorageKind storage);

/// Analytic storage rate -d + yᵀu against the centred finite difference of
/// the sampled storage. Samples near S or next to an unresolved step are
/// excluded and counted. Passes when the fraction of usable samples within
/// rel_tol is at least min_fraction.
AuditCheck check_storage_rate_consistency(const Trajectory& traj,
                                          double rel_tol = 1e-3,
                                          double min_fraction = 0.99);

/// Net supply ∮yᵀu dt over the best near-closed segment ending at the last
/// sample. Threshold: -(closure gap · supply-per-distance bound + quadrature
/// error estimate).
AuditCheck check_cycle_supply(const Trajectory& traj, double closure_tol);

/// Starts n_points states on S, drives them with random bounded inputs over
/// the horizon and requires max |σ| <= 1e-6. Requires the exact variant.
AuditCheck check_forward_invariance(const SingularPHSystem& sys, int n_points,
                                    double horizon, std::uint64_t seed = 1,
                                    double dt = 1e-3);

struct ImpactBoundData {
  double l = 0.0;
  double kappa1 = 0.0;
  Matrix q;
  Matrix bbar;
};

struct ImpactBound {
  double d_min = 0.0;
  double h0 = 0.0;
  double t_bound = 0.0;
};

/// d_min = κ₁ l² λ_min(Q B̄ B̄ᵀ Q) and t_bound = H(x0)/d_min.
/// Throws std::invalid_argument if l is outside (0, λ_max(Q)^{-1/2}), B̄ is
/// not square and invertible, or x0 is not in S_l^c.
ImpactBound compute_impact_bound(const Vector& x0, const ImpactBoundData& data);

/// Compares the first impact time against the bound. Inconclusive when the
/// state leaves ‖x‖ >= l before impact, or when there is no impact and the
/// horizon ends before the bound. No impact by the bound fails.
AuditCheck check_impact_time(const Trajectory& traj, const EventLog& log,
                             const ImpactBound& bound, double l);

/// |σ(x(t))| <= band over the final settle_frac of the horizon. Throws
/// std::invalid_argument when the trajectory starts at the origin.
AuditCheck check_convergence_to_s(const Trajectory& traj, double band,
                                  double settle_frac);

/// Final-window mean |wrap(arg(x₁ + j x₂) - φ_ref)| <= band_phase and
/// max |σ| <= band_sigma. Records the "sigma_excursion" metric: after the
/// trajectory is first inside the boundary layer, the largest rise of |σ|
/// above its running minimum (how far the state is pulled back off S).
AuditCheck check_phase_tracking(const Trajectory& traj, double phi_ref,
                                double band_phase, double band_sigma,
                                double window_frac = 0.1);

/// Dominant frequency of x₁ over [t_from, end], from the spacing of its
/// interpolated zero crossings. Returns 0 with fewer than two crossings.
double zero_crossing_frequency(const Trajectory& traj, double t_from);

}  // namespace sphs
