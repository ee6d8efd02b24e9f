#include "sphs/audit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <stdexcept>

namespace sphs {
namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr double kInf = std::numeric_limits<double>::infinity();

// Tracks the minimum margin and where it happened.
struct Worst {
  double margin = kInf;
  double t = 0.0;
  Vector x;

  void offer(double m, const Sample& s) {
    if (m < margin) {
      margin = m;
      t = s.t;
      x = s.x;
    }
  }
  void store(AuditCheck& c) const {
    c.worst_margin = std::isfinite(margin) ? margin : 0.0;
    c.t_at_worst = t;
    c.x_at_worst = x;
  }
};

bool in_band(const Sample& s, double tol) { return std::abs(s.sigma) <= tol; }

// The step ending at s tracked its fastest local mode: h·ρ small enough that
// a centred difference of the storage keeps ~(h·ρ)²/6 truncation error.
bool unresolved(const Sample& s) {
  return s.straddles_s || s.step_stiffness > kMaxResolvedStiffness;
}

bool crosses_s(const Sample& a, const Sample& b) {
  return (a.sigma > 0.0) != (b.sigma > 0.0) ||
         a.event == EventKind::kSCrossing || b.event == EventKind::kSCrossing;
}

double wrap(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  return a - two_pi * std::ceil((a - std::numbers::pi) / two_pi);
}

}  // namespace

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::kPass: return "pass";
    case Verdict::kFail: return "fail";
    case Verdict::kInconclusive: return "inconclusive";
  }
  return "?";
}

double AuditCheck::metric(std::string_view key) const {
  for (const auto& [k, v] : metrics) {
    if (k == key) return v;
  }
  return std::numeric_limits<double>::quiet_NaN();
}

bool AuditReport::passed() const {
  return std::none_of(checks.begin(), checks.end(), [](const AuditCheck& c) {
    return c.verdict == Verdict::kFail;
  });
}

void write_report_csv(std::ostream& os, const AuditReport& report) {
  os << "check,verdict,worst_margin,t_at_worst,tolerance,excluded\n";
  for (const AuditCheck& c : report.checks) {
    os << c.name << ',' << to_string(c.verdict) << ','
       << format_double(c.worst_margin) << ',' << format_double(c.t_at_worst)
       << ',' << format_double(c.tolerance) << ',' << c.excluded << '\n';
  }
}

void write_report_text(std::ostream& os, const AuditReport& report) {
  os << "audit report (tol_S = " << format_double(report.tol_s)
     << "; samples with |sigma| <= tol_S count as on S)\n";
  for (const AuditCheck& c : report.checks) {
    os << "  [" << to_string(c.verdict) << "] " << c.name << " -- " << c.anchor
       << "\n      worst margin " << format_double(c.worst_margin) << " at t="
       << format_double(c.t_at_worst) << ", tolerance "
       << format_double(c.tolerance) << ", evaluated " << c.evaluated
       << ", excluded " << c.excluded << '\n';
    for (const auto& [k, v] : c.metrics) {
      os << "      " << k << " = " << format_double(v) << '\n';
    }
    if (!c.note.empty()) os << "      note: " << c.note << '\n';
  }
  os << (report.passed() ? "PASSED\n" : "FAILED\n");
}

AuditCheck check_passivity(const Trajectory& traj, const SingularPHSystem& sys,
                           StorageKind kind) {
  AuditCheck c;
  c.name = "passivity_" + std::string(to_string(kind));
  c.anchor = "storage rate bounded by supply yᵀu off S";
  const auto& s = traj.samples;
  const double tol = sys.tol_s();

  // (a) closed-form identity at each sample.
  double identity_worst = 0.0;
  std::size_t identity_count = 0;
  Worst worst;
  for (const Sample& smp : s) {
    if (in_band(smp, tol)) continue;
    const double rate =
        storage_rate(kind, sys, smp.x, smp.t, smp.u, smp.ctrl_state);
    const double d = dissipation_rate(sys, smp.x, smp.t);
    const double balance = -d + smp.supply;
    const Vector grad = grad_storage(kind, sys, smp.x);
    const Vector f = vector_field(sys, smp.x, smp.t, smp.u, smp.ctrl_state);
    const double scale = std::abs(d) + std::abs(smp.supply) + grad.norm() * f.norm();
    const double err = std::abs(rate - balance) / (scale + 1e-300);
    identity_worst = std::max(identity_worst, err);
    ++identity_count;
  }

  // (b) discrete inequality on sample pairs.
  std::vector<double> lip(s.size(), 0.0);  // |Δw|/Δt on [k, k+1]
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    const double dt = s[k + 1].t - s[k].t;
    lip[k] = std::abs(s[k + 1].supply - s[k].supply) / dt;
  }
  std::size_t usable = 0;
  std::size_t excluded = 0;
  std::size_t violations = 0;
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    const Sample& a = s[k];
    const Sample& b = s[k + 1];
    if (in_band(a, tol) || in_band(b, tol) || crosses_s(a, b) || unresolved(b)) {
      ++excluded;
      continue;
    }
    const double sa = storage(kind, sys, a.x);
    const double sb = storage(kind, sys, b.x);
    const double dt = b.t - a.t;
    double l = lip[k];
    if (k > 0) l = std::max(l, lip[k - 1]);
    if (k + 2 < s.size()) l = std::max(l, lip[k + 1]);
    const double slack =
        0.5 * dt * l + 8.0 * kEps * (std::abs(sa) + std::abs(sb)) / dt;
    const double lhs = (sb - sa) / dt;
    const double rhs = 0.5 * (a.supply + b.supply);
    const double margin = rhs + slack - lhs;
    worst.offer(margin, b);
    if (margin < 0.0) ++violations;
    ++usable;
  }
  worst.store(c);
  c.evaluated = usable;
  c.excluded = excluded;
  c.tolerance = 1e-8;  // identity tolerance, relative
  c.metrics = {{"identity_max_rel_err", identity_worst},
               {"identity_samples", static_cast<double>(identity_count)},
               {"violations", static_cast<double>(violations)}};
  if (usable < 10) {
    c.verdict = Verdict::kInconclusive;
    c.note = "fewer than 10 usable sample pairs";
  } else if (violations > 0 || identity_worst > c.tolerance) {
    c.verdict = Verdict::kFail;
    if (identity_worst > c.tolerance) {
      c.note = "closed-form storage rate does not match -d + yᵀu";
    }
  } else {
    c.verdict = Verdict::kPass;
  }
  return c;
}

AuditCheck check_storage_rate_consistency(const Trajectory& traj,
                                          double rel_tol, double min_fraction) {
  AuditCheck c;
  c.name = "storage_rate_consistency";
  c.anchor = "analytic storage rate -d + yᵀu matches sampled storage";
  c.tolerance = rel_tol;
  const auto& s = traj.samples;
  const double band = 10.0 * traj.tol_s;
  Worst worst;
  std::size_t usable = 0;
  std::size_t excluded = 0;
  std::size_t within = 0;
  double max_err = 0.0;
  for (std::size_t k = 1; k + 1 < s.size(); ++k) {
    const Sample& a = s[k - 1];
    const Sample& b = s[k];
    const Sample& e = s[k + 1];
    const bool ok = std::abs(a.sigma) > band && std::abs(b.sigma) > band &&
                    std::abs(e.sigma) > band && a.region == b.region &&
                    b.region == e.region && !a.event && !b.event && !e.event &&
                    !crosses_s(a, b) && !crosses_s(b, e) && !unresolved(b) &&
                    !unresolved(e);
    if (!ok) {
      ++excluded;
      continue;
    }
    const double h1 = b.t - a.t;
    const double h2 = e.t - b.t;
    const double fd = -h2 / (h1 * (h1 + h2)) * a.storage +
                      (h2 - h1) / (h1 * h2) * b.storage +
                      h1 / (h2 * (h1 + h2)) * e.storage;
    const double analytic = -b.diss_rate + b.supply;
    const double scale = std::abs(b.diss_rate) + std::abs(b.supply);
    const double roundoff = 100.0 * kEps *
                            (std::abs(a.storage) + std::abs(b.storage) +
                             std::abs(e.storage)) /
                            std::min(h1, h2);
    const double err = std::abs(fd - analytic);
    const double allowed = rel_tol * scale + roundoff;
    ++usable;
    if (err <= allowed) ++within;
    const double rel = err / (scale + 1e-300);
    max_err = std::max(max_err, rel);
    worst.offer(allowed - err, b);
  }
  worst.store(c);
  c.evaluated = usable;
  c.excluded = excluded;
  const double fraction =
      usable ? static_cast<double>(within) / static_cast<double>(usable) : 0.0;
  c.metrics = {{"fraction_within", fraction}, {"max_rel_err", max_err}};
  if (usable < 10) {
    c.verdict = Verdict::kInconclusive;
    c.note = "fewer than 10 usable samples";
  } else {
    c.verdict = fraction >= min_fraction ? Verdict::kPass : Verdict::kFail;
  }
  return c;
}

AuditCheck check_cycle_supply(const Trajectory& traj, double closure_tol) {
  AuditCheck c;
  c.name = "cycle_supply";
  c.anchor = "no net supply can be extracted over a closed cycle";
  const auto& s = traj.samples;
  if (s.size() < 3) {
    c.note = "trajectory too short";
    return c;
  }
  const std::size_t j = s.size() - 1;
  const Vector& xe = s[j].x;
  bool departed = false;
  std::size_t best = j;
  double best_gap = kInf;
  for (std::size_t i = j; i-- > 0;) {
    const double gap = (s[i].x - xe).norm();
    if (gap > 10.0 * closure_tol) departed = true;
    if (departed && gap < best_gap) {
      best_gap = gap;
      best = i;
    }
  }
  if (best == j || best_gap > closure_tol) {
    c.note = "no near-closed segment within closure_tol";
    c.metrics = {{"closure_gap", best_gap}};
    return c;
  }

  double integral = 0.0;
  double coarse = 0.0;
  double per_distance = 0.0;  // sup |yᵀu| / ‖ẋ‖ along the segment
  for (std::size_t k = best; k < j; ++k) {
    const double dt = s[k + 1].t - s[k].t;
    integral += 0.5 * dt * (s[k].supply + s[k + 1].supply);
    const double speed = (s[k + 1].x - s[k].x).norm() / dt;
    const double w = std::max(std::abs(s[k].supply), std::abs(s[k + 1].supply));
    if (w > 0.0) per_distance = std::max(per_distance, w / std::max(speed, 1e-300));
  }
  for (std::size_t k = best; k + 2 <= j; k += 2) {
    coarse += 0.5 * (s[k + 2].t - s[k].t) * (s[k].supply + s[k + 2].supply);
  }
  if ((j - best) % 2 == 1) {
    coarse += 0.5 * (s[j].t - s[j - 1].t) * (s[j - 1].supply + s[j].supply);
  }
  const double quad_err = std::abs(integral - coarse) / 3.0;
  c.tolerance = best_gap * per_distance + quad_err;
  c.worst_margin = integral + c.tolerance;
  c.t_at_worst = s[best].t;
  c.x_at_worst = s[best].x;
  c.evaluated = j - best + 1;
  c.metrics = {{"cycle_supply", integral},
               {"closure_gap", best_gap},
               {"t_start", s[best].t},
               {"t_end", s[j].t},
               {"quadrature_error", quad_err}};
  c.verdict = integral >= -c.tolerance ? Verdict::kPass : Verdict::kFail;
  return c;
}

AuditCheck check_forward_invariance(const SingularPHSystem& sys, int n_points,
                                    double horizon, std::uint64_t seed,
                                    double dt) {
  if (sys.variant() != Variant::kExact) {
    throw std::invalid_argument("forward invariance is audited on the exact variant");
  }
  AuditCheck c;
  c.name = "forward_invariance_S";
  c.anchor = "S is forward invariant under any input";
  c.tolerance = 1e-6;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  double max_sigma = 0.0;
  Worst worst;
  IntegratorConfig cfg;
  cfg.dt = dt;
  cfg.t_final = horizon;
  for (int p = 0; p < n_points; ++p) {
    Vector dir(sys.n());
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir(i) = normal(rng);
    const Vector x0 = project_to_s(dir, sys.q());
    // Bounded multisine per channel.
    Matrix amp(sys.m(), 3), freq(sys.m(), 3), phase(sys.m(), 3);
    for (int i = 0; i < sys.m(); ++i) {
      for (int k = 0; k < 3; ++k) {
        amp(i, k) = uni(rng) / 3.0;
        freq(i, k) = 0.5 + 10.0 * uni(rng);
        phase(i, k) = 2.0 * std::numbers::pi * uni(rng);
      }
    }
    OpenLoop input{[amp, freq, phase](double t) {
      Vector u = Vector::Zero(amp.rows());
      for (Eigen::Index i = 0; i < amp.rows(); ++i) {
        for (int k = 0; k < 3; ++k) {
          u(i) += amp(i, k) * std::sin(freq(i, k) * t + phase(i, k));
        }
      }
      return u;
    }};
    const ClosedLoopSystem cl(sys, input);
    const IntegrationResult run = integrate(cl, x0, cfg);
    if (!run.ok()) {
      worst.offer(-kInf, run.trajectory.back());
      c.note = "integration aborted: " + run.diagnostic;
      continue;
    }
    for (const Sample& s : run.trajectory.samples) {
      max_sigma = std::max(max_sigma, std::abs(s.sigma));
      worst.offer(c.tolerance - std::abs(s.sigma), s);
    }
  }
  c.evaluated = static_cast<std::size_t>(std::max(n_points, 0));
  c.metrics = {{"max_abs_sigma", max_sigma}};
  if (n_points <= 0) {
    c.verdict = Verdict::kPass;
    c.note = "no points sampled";
    c.worst_margin = c.tolerance;
    return c;
  }
  worst.store(c);
  c.verdict = c.worst_margin >= 0.0 ? Verdict::kPass : Verdict::kFail;
  return c;
}

ImpactBound compute_impact_bound(const Vector& x0, const ImpactBoundData& data) {
  const QuadraticForm q(data.q);
  const double l_max = 1.0 / std::sqrt(q.lambda_max());
  if (!(data.l > 0.0) || !(data.l < l_max)) {
    throw std::invalid_argument("l must satisfy 0 < l < lambda_max(Q)^(-1/2)");
  }
  if (!(data.kappa1 > 0.0)) throw std::invalid_argument("kappa1 must be positive");
  if (data.bbar.rows() != q.dim() || data.bbar.cols() != q.dim()) {
    throw std::invalid_argument("impact bound requires square Bbar");
  }
  Eigen::FullPivLU<Matrix> lu(data.bbar);
  if (!lu.isInvertible()) throw std::invalid_argument("Bbar is singular");
  const double s0 = sigma(x0, q);
  if (x0.norm() < data.l || s0 == 0.0) {
    throw std::invalid_argument("x0 is not in S_l^c");
  }
  const Matrix qb = q.matrix() * data.bbar;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(qb * qb.transpose(),
                                            Eigen::EigenvaluesOnly);
  ImpactBound out;
  out.d_min = data.kappa1 * data.l * data.l * eig.eigenvalues().minCoeff();
  out.h0 = 0.5 * s0 * s0;
  out.t_bound = out.h0 / out.d_min;
  return out;
}

AuditCheck check_impact_time(const Trajectory& traj, const EventLog& log,
                             const ImpactBound& bound, double l) {
  AuditCheck c;
  c.name = "impact_time_bound";
  c.anchor = "finite-time impact on S no later than H(x0)/d_min";
  c.tolerance = bound.t_bound;
  c.metrics = {{"t_bound", bound.t_bound}, {"d_min", bound.d_min}};
  const std::optional<double> t_imp = first_impact_time(traj, log);
  for (const Sample& s : traj.samples) {
    if (t_imp && s.t >= *t_imp) break;
    if (s.x.norm() < l) {
      c.note = "state left S_l^c before impact";
      if (t_imp) c.metrics.emplace_back("t_impact", *t_imp);
      return c;
    }
  }
  if (!t_imp) {
    if (traj.empty() || traj.back().t < bound.t_bound) {
      c.note = "no impact within a horizon shorter than the bound";
      return c;
    }
    // Still in S_l^c and off S past the bound.
    c.note = "no impact by the bound";
    c.evaluated = 1;
    c.worst_margin = bound.t_bound - traj.back().t;
    c.t_at_worst = traj.back().t;
    c.x_at_worst = traj.back().x;
    c.verdict = Verdict::kFail;
    return c;
  }
  c.metrics.emplace_back("t_impact", *t_imp);
  c.worst_margin = bound.t_bound - *t_imp;
  c.t_at_worst = *t_imp;
  c.evaluated = 1;
  c.verdict = c.worst_margin >= 0.0 ? Verdict::kPass : Verdict::kFail;
  return c;
}

AuditCheck check_convergence_to_s(const Trajectory& traj, double band,
                                  double settle_frac) {
  if (traj.empty()) throw std::invalid_argument("empty trajectory");
  if (traj.front().x.norm() == 0.0) {
    throw std::invalid_argument("convergence to S requires x(0) != 0");
  }
  AuditCheck c;
  c.name = "convergence_to_S";
  c.anchor = "trajectories from x(0) != 0 converge to S";
  c.tolerance = band;
  const double t0 = traj.front().t;
  const double t_from = traj.back().t - settle_frac * (traj.back().t - t0);
  Worst worst;
  double max_sigma = 0.0;
  for (const Sample& s : traj.samples) {
    if (s.t < t_from) {
      ++c.excluded;
      continue;
    }
    ++c.evaluated;
    max_sigma = std::max(max_sigma, std::abs(s.sigma));
    worst.offer(band - std::abs(s.sigma), s);
  }
  worst.store(c);
  c.metrics = {{"max_abs_sigma_settled", max_sigma}};
  c.verdict = c.evaluated > 0 && c.worst_margin >= 0.0 ? Verdict::kPass
                                                        : Verdict::kFail;
  return c;
}

AuditCheck check_phase_tracking(const Trajectory& traj, double phi_ref,
                                double band_phase, double band_sigma,
                                double window_frac) {
  if (traj.empty() || traj.front().x.size() != 2) {
    throw std::invalid_argument("phase tracking needs a planar trajectory");
  }
  AuditCheck c;
  c.name = "phase_tracking";
  c.anchor = "state settles on S at the reference phase";
  c.tolerance = band_phase;
  const double inv_m = traj.big_m > 0.0 ? 1.0 / traj.big_m : 0.0;
  const double t_from =
      traj.back().t - window_frac * (traj.back().t - traj.front().t);
  double phase_sum = 0.0;
  double max_sigma = 0.0;
  std::size_t count = 0;
  bool entered = false;
  double excursion = 0.0;  // largest rise of |σ| above its running minimum
  double peak = 0.0;
  double low = kInf;
  double t_entry = std::numeric_limits<double>::quiet_NaN();
  for (const Sample& s : traj.samples) {
    if (!entered && std::abs(s.sigma) <= inv_m) {
      entered = true;
      t_entry = s.t;
    }
    if (entered) {
      low = std::min(low, std::abs(s.sigma));
      // σ = ½(xᵀQx - 1) is quantized at a few ulps of xᵀQx; smaller rises
      // are round-off, not a detour.
      const double rise = std::abs(s.sigma) - low;
      if (rise > 16.0 * kEps * (1.0 + 2.0 * std::abs(s.sigma))) {
        excursion = std::max(excursion, rise);
      }
      peak = std::max(peak, std::abs(s.sigma));
    }
    if (s.t < t_from) continue;
    phase_sum += std::abs(wrap(std::atan2(s.x(1), s.x(0)) - phi_ref));
    max_sigma = std::max(max_sigma, std::abs(s.sigma));
    ++count;
  }
  const double mean_phase = count ? phase_sum / static_cast<double>(count) : kInf;
  c.evaluated = count;
  c.worst_margin = std::min(band_phase - mean_phase, band_sigma - max_sigma);
  c.t_at_worst = traj.back().t;
  c.x_at_worst = traj.back().x;
  c.metrics = {{"mean_phase_error", mean_phase},
               {"max_abs_sigma_final", max_sigma},
               {"t_entry_M", t_entry},
               {"sigma_excursion", entered ? excursion : kInf},
               {"max_abs_sigma_after_entry", entered ? peak : kInf}};
  c.verdict = count > 0 && mean_phase <= band_phase && max_sigma <= band_sigma
                  ? Verdict::kPass
                  : Verdict::kFail;
  return c;
}

double zero_crossing_frequency(const Trajectory& traj, double t_from) {
  std::vector<double> crossings;
  const auto& s = traj.samples;
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    if (s[k].t < t_from) continue;
    const double a = s[k].x(0);
    const double b = s[k + 1].x(0);
    if ((a < 0.0) != (b < 0.0)) {
      const double theta = a / (a - b);
      crossings.push_back(s[k].t + theta * (s[k + 1].t - s[k].t));
    }
  }
  if (crossings.size() < 2) return 0.0;
  const double span = crossings.back() - crossings.front();
  return 0.5 * static_cast<double>(crossings.size() - 1) / span;
}

}  // namespace sphs
