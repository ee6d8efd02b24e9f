#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "sphs/audit.hpp"

namespace sphs {
namespace {

constexpr double kPi = std::numbers::pi;

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  int i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

SingularPHSystem planar(Variant v, const Matrix& bbar = Matrix::Identity(2, 1),
                        double r = 1.0) {
  SystemParams p;
  p.q = Matrix::Identity(2, 2);
  p.r = DissipationMatrix::constant(r * Matrix::Identity(2, 2));
  p.jbar = InterconnectionMatrix::rotation(2 * kPi);
  p.bbar = InputMatrix::constant(bbar);
  p.m = static_cast<int>(bbar.cols());
  p.variant = v;
  p.big_m = v == Variant::kExact ? 0.0 : 3.0;
  return SingularPHSystem(p);
}

IntegratorConfig rk4(double dt, double t_final) {
  IntegratorConfig c;
  c.dt = dt;
  c.t_final = t_final;
  return c;
}

IntegrationResult run(const ClosedLoopSystem& cl, const Vector& x0, double dt, double tf) {
  return integrate(cl, x0, rk4(dt, tf));
}

TEST(Passivity, ZeroInputStorageNonIncreasing) {
  for (Variant v : {Variant::kExact, Variant::kSaturated, Variant::kLinear}) {
    const ClosedLoopSystem cl(planar(v), OpenLoop::zero(1));
    for (const Vector& x0 : {vec({2, 0}), vec({0.3, -0.2}), vec({-1.1, 0.9})}) {
      const auto r = run(cl, x0, 1e-3, 3.0);
      ASSERT_TRUE(r.ok());
      const StorageKind kind = natural_storage(v);
      const auto c = check_passivity(r.trajectory, cl.plant(), kind);
      EXPECT_EQ(c.verdict, Verdict::kPass) << to_string(v) << " " << c.note;
      const auto& s = r.trajectory.samples;
      for (std::size_t k = 0; k + 1 < s.size(); ++k) {
        // Monotone storage up to an O(Δt²) allowance.
        const double dt = s[k + 1].t - s[k].t;
        EXPECT_LE(s[k + 1].h, s[k].h + 1e-6 * dt * dt);
      }
    }
  }
}

TEST(Passivity, Example1ClosedLoop) {
  const ClosedLoopSystem cl(planar(Variant::kLinear), StaticLoad::scalar(1.0));
  const auto r = run(cl, vec({2, 0}), 1e-4, 10.0);
  const auto c = check_passivity(r.trajectory, cl.plant(), StorageKind::kHLin);
  EXPECT_EQ(c.verdict, Verdict::kPass);
  EXPECT_EQ(c.metric("violations"), 0.0);
  EXPECT_LE(c.metric("identity_max_rel_err"), 1e-8);
  // H itself only decreases; it is not a storage for the supply yᵀu inside M.
  for (std::size_t k = 0; k + 1 < r.trajectory.samples.size(); ++k) {
    EXPECT_LE(r.trajectory.samples[k + 1].h, r.trajectory.samples[k].h + 1e-15);
  }
}

TEST(Passivity, ConstantStateOnS) {
  const auto sys = planar(Variant::kExact);
  Trajectory traj;
  traj.variant = Variant::kExact;
  for (int k = 0; k < 50; ++k) {
    Sample s;
    s.t = 0.01 * k;
    s.x = vec({0, 1});
    s.sigma = 0.0;
    s.region = Region::kOnS;
    s.y = vec({0});
    s.u = vec({0.5});
    traj.samples.push_back(s);
  }
  const auto c = check_passivity(traj, sys, StorageKind::kH);
  EXPECT_EQ(c.verdict, Verdict::kInconclusive);
  EXPECT_EQ(c.excluded, 49u);
  EXPECT_EQ(hamiltonian(vec({0, 1}), sys.q()), 0.0);
  EXPECT_EQ(supply_rate(sys, vec({0, 1}), vec({0}), vec({0.5})), 0.0);
}

TEST(Passivity, DetectsInjectedViolation) {
  const ClosedLoopSystem cl(planar(Variant::kSaturated), StaticLoad::scalar(1.0));
  auto r = run(cl, vec({1.7, 0.2}), 1e-3, 2.0);
  ASSERT_TRUE(r.ok());
  // Pump energy into one sample without a matching supply.
  Sample& s = r.trajectory.samples[50];  // still far outside M
  const double t_bad = s.t;
  s.x *= 1.01;
  s.sigma = sigma(s.x, cl.plant().q());
  const auto c = check_passivity(r.trajectory, cl.plant(), StorageKind::kHSat);
  EXPECT_EQ(c.verdict, Verdict::kFail);
  EXPECT_LT(c.worst_margin, 0.0);
  EXPECT_EQ(c.t_at_worst, t_bad);
}

TEST(Passivity, UnresolvedStepsAreExcludedAndCounted) {
  const ClosedLoopSystem cl(planar(Variant::kSaturated), StaticLoad::scalar(1.0));
  auto r = run(cl, vec({1.7, 0.2}), 1e-3, 2.0);
  const auto clean = check_passivity(r.trajectory, cl.plant(), StorageKind::kHSat);
  Sample& s = r.trajectory.samples[50];
  s = make_sample(cl, 1.01 * s.x, s.t);
  // The pair ending at the perturbed sample is unresolved; the next pair
  // (which now loses energy) remains a valid check.
  s.step_stiffness = 2.0 * kMaxResolvedStiffness;
  const auto c = check_passivity(r.trajectory, cl.plant(), StorageKind::kHSat);
  EXPECT_EQ(c.verdict, Verdict::kPass);
  EXPECT_EQ(c.excluded, clean.excluded + 1);
  s.step_stiffness = 0.0;
  s.straddles_s = true;
  EXPECT_EQ(check_passivity(r.trajectory, cl.plant(), StorageKind::kHSat).excluded,
            clean.excluded + 1);
}

TEST(StorageRate, AgreesWithFiniteDifferences) {
  for (Variant v : {Variant::kExact, Variant::kSaturated, Variant::kLinear}) {
    const ClosedLoopSystem cl(planar(v),
                              OpenLoop{[](double t) { return vec({0.4 * std::sin(3 * t)}); }});
    const auto r = run(cl, vec({1.8, 0.2}), 1e-3, 2.0);
    ASSERT_TRUE(r.ok());
    const auto c = check_storage_rate_consistency(r.trajectory);
    EXPECT_EQ(c.verdict, Verdict::kPass) << to_string(v);
    EXPECT_GE(c.metric("fraction_within"), 0.99);
  }
}

TEST(StorageRate, DetectsWrongRate) {
  const ClosedLoopSystem cl(planar(Variant::kLinear), StaticLoad::scalar(1.0));
  auto r = run(cl, vec({1.8, 0.2}), 1e-3, 1.0);
  for (Sample& s : r.trajectory.samples) s.diss_rate *= 1.1;
  EXPECT_EQ(check_storage_rate_consistency(r.trajectory).verdict, Verdict::kFail);
}

TEST(CycleSupply, ZeroInputOutsideM) {
  // Weak dissipation leaves a nearly closed orbit at radius 2, in M^c.
  const ClosedLoopSystem cl(planar(Variant::kLinear, Matrix::Identity(2, 1), 1e-5),
                            OpenLoop::zero(1));
  const auto r = run(cl, vec({2, 0}), 1e-3, 3.0);
  for (const Sample& s : r.trajectory.samples) ASSERT_EQ(s.region, Region::kOutsideM);
  const auto c = check_cycle_supply(r.trajectory, 1e-3);
  EXPECT_EQ(c.verdict, Verdict::kPass);
  EXPECT_EQ(c.metric("cycle_supply"), 0.0);
}

TEST(CycleSupply, ForcedOrbitOutsideM) {
  // Small forcing at the rotation frequency on a weakly damped orbit in M^c.
  const ClosedLoopSystem cl(planar(Variant::kLinear, Matrix::Identity(2, 1), 1e-5),
                            OpenLoop{[](double t) { return vec({0.01 * std::sin(2 * kPi * t)}); }});
  const auto r = run(cl, vec({2, 0}), 1e-3, 5.0);
  ASSERT_TRUE(r.ok());
  for (const Sample& s : r.trajectory.samples) ASSERT_EQ(s.region, Region::kOutsideM);
  const auto c = check_cycle_supply(r.trajectory, 1e-3);
  ASSERT_NE(c.verdict, Verdict::kInconclusive) << c.note;
  EXPECT_EQ(c.verdict, Verdict::kPass);
}

TEST(CycleSupply, CircleOnSExact) {
  const ClosedLoopSystem cl(planar(Variant::kExact), StaticLoad::scalar(1.0));
  const auto r = run(cl, vec({0, 1}), 1e-3, 2.5);
  const auto c = check_cycle_supply(r.trajectory, 1e-3);
  EXPECT_EQ(c.verdict, Verdict::kPass);
  EXPECT_EQ(c.metric("cycle_supply"), 0.0);
}

TEST(CycleSupply, NoClosedSegment) {
  const ClosedLoopSystem cl(planar(Variant::kLinear), StaticLoad::scalar(1.0));
  const auto r = run(cl, vec({3, 0}), 1e-3, 0.1);
  EXPECT_EQ(check_cycle_supply(r.trajectory, 1e-6).verdict, Verdict::kInconclusive);
}

TEST(ForwardInvariance, Examples) {
  const auto sys = planar(Variant::kExact);
  const auto c = check_forward_invariance(sys, 5, 10.0, 3);
  EXPECT_EQ(c.verdict, Verdict::kPass);
  EXPECT_LE(c.metric("max_abs_sigma"), 1e-6);
  EXPECT_EQ(check_forward_invariance(sys, 0, 10.0).verdict, Verdict::kPass);
  EXPECT_THROW(check_forward_invariance(planar(Variant::kLinear), 1, 1.0), std::invalid_argument);

  // Single start at (0, 1) under pure rotation.
  const ClosedLoopSystem cl(sys, OpenLoop::zero(1));
  const auto r = run(cl, vec({0, 1}), 1e-3, 10.0);
  double worst = 0.0;
  for (const Sample& s : r.trajectory.samples) worst = std::max(worst, std::abs(s.sigma));
  EXPECT_LE(worst, 1e-6);
}

TEST(ForwardInvariance, OffSDecaysMonotonically) {
  const ClosedLoopSystem cl(planar(Variant::kExact), OpenLoop::zero(1));
  const auto r = run(cl, vec({std::sqrt(1.2), 0}), 1e-3, 5.0);  // σ₀ = 0.1
  const auto& s = r.trajectory.samples;
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    EXPECT_LE(std::abs(s[k + 1].sigma), std::abs(s[k].sigma));
  }
  EXPECT_LT(std::abs(s.back().sigma), 0.05);
}

TEST(ImpactBound, Examples) {
  ImpactBoundData d;
  d.l = 0.5;
  d.kappa1 = 1.0;
  d.q = Matrix::Identity(2, 2);
  d.bbar = Matrix::Identity(2, 2);
  const ImpactBound b = compute_impact_bound(vec({2, 0}), d);
  EXPECT_DOUBLE_EQ(b.d_min, 0.25);
  EXPECT_DOUBLE_EQ(b.h0, 1.125);
  EXPECT_DOUBLE_EQ(b.t_bound, 4.5);

  ImpactBoundData bad = d;
  bad.l = 1.0;  // must be below λ_max(Q)^{-1/2} = 1
  EXPECT_THROW(compute_impact_bound(vec({2, 0}), bad), std::invalid_argument);
  bad = d;
  bad.bbar = Matrix::Zero(2, 2);
  EXPECT_THROW(compute_impact_bound(vec({2, 0}), bad), std::invalid_argument);
  bad = d;
  bad.bbar = Matrix::Identity(2, 1);
  EXPECT_THROW(compute_impact_bound(vec({2, 0}), bad), std::invalid_argument);
  EXPECT_THROW(compute_impact_bound(vec({0.1, 0}), d), std::invalid_argument);
  EXPECT_THROW(compute_impact_bound(vec({1, 0}), d), std::invalid_argument);
}

TEST(ImpactBound, SimulatedImpactRespectsBound) {
  const ClosedLoopSystem cl(planar(Variant::kExact, Matrix::Identity(2, 2)),
                            StaticLoad::scalar(1.0, 2));
  ImpactBoundData d{0.5, 1.0, Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
  const Vector x0 = vec({2, 0});
  const ImpactBound b = compute_impact_bound(x0, d);
  const auto r = run(cl, x0, 1e-4, 5.0);
  const auto c = check_impact_time(r.trajectory, r.events, b, d.l);
  EXPECT_EQ(c.verdict, Verdict::kPass) << c.note;
  EXPECT_LE(c.metric("t_impact"), 4.5);
}

TEST(ImpactBound, MissingImpactFailsOnlyPastTheBound) {
  // Zero input: σ decays only asymptotically, so S is never reached.
  const ClosedLoopSystem cl(planar(Variant::kExact),
                            OpenLoop{[](double) -> Vector { return Vector::Zero(1); }});
  ImpactBoundData d{0.5, 1.0, Matrix::Identity(2, 2), Matrix::Identity(2, 2)};
  const Vector x0 = vec({2, 0});
  const ImpactBound b = compute_impact_bound(x0, d);
  const auto long_run = run(cl, x0, 1e-3, 5.0);
  const auto c = check_impact_time(long_run.trajectory, long_run.events, b, d.l);
  EXPECT_EQ(c.verdict, Verdict::kFail);
  EXPECT_EQ(c.note, "no impact by the bound");
  const auto short_run = run(cl, x0, 1e-3, 1.0);
  EXPECT_EQ(check_impact_time(short_run.trajectory, short_run.events, b, d.l).verdict,
            Verdict::kInconclusive);
}

TEST(Convergence, Examples) {
  const ClosedLoopSystem k1(planar(Variant::kLinear), StaticLoad::scalar(1.0));
  const auto r1 = run(k1, vec({2, 0}), 1e-4, 10.0);
  EXPECT_EQ(check_convergence_to_s(r1.trajectory, 0.02, 0.5).verdict, Verdict::kPass);
  const ClosedLoopSystem k5(planar(Variant::kLinear), StaticLoad::scalar(5.0));
  const auto r5 = run(k5, vec({0.1, 0.1}), 1e-4, 10.0);
  EXPECT_EQ(check_convergence_to_s(r5.trajectory, 0.02, 0.5).verdict, Verdict::kPass);
  const auto r0 = run(k1, vec({0, 0}), 1e-3, 0.1);
  EXPECT_THROW(check_convergence_to_s(r0.trajectory, 0.02, 0.5), std::invalid_argument);
  const auto short_run = run(k1, vec({2, 0}), 1e-3, 0.2);
  EXPECT_EQ(check_convergence_to_s(short_run.trajectory, 0.02, 0.5).verdict, Verdict::kFail);
}

TEST(PhaseTracking, SteadyPointPassesImmediately) {
  Trajectory traj;
  const double phi = 1.1;
  for (int k = 0; k <= 100; ++k) {
    Sample s;
    s.t = 0.01 * k;
    s.x = vec({std::cos(phi), std::sin(phi)});
    s.sigma = 0.0;
    s.region = Region::kOnS;
    traj.samples.push_back(s);
  }
  const auto c = check_phase_tracking(traj, phi, 0.05, 0.02);
  EXPECT_EQ(c.verdict, Verdict::kPass);
  EXPECT_NEAR(c.metric("mean_phase_error"), 0.0, 1e-15);
  const auto off = check_phase_tracking(traj, phi + 0.2, 0.05, 0.02);
  EXPECT_EQ(off.verdict, Verdict::kFail);
}

TEST(PhaseTracking, ExcursionIsReboundAfterEnteringM) {
  auto make = [](const std::vector<double>& sigmas) {
    Trajectory traj;
    traj.big_m = 3.0;
    for (std::size_t k = 0; k < sigmas.size(); ++k) {
      Sample s;
      s.t = 0.1 * static_cast<double>(k);
      s.sigma = sigmas[k];
      s.x = vec({-std::sqrt(0.5 * (1 + 2 * s.sigma)), std::sqrt(0.5 * (1 + 2 * s.sigma))});
      traj.samples.push_back(s);
    }
    return check_phase_tracking(traj, 3 * kPi / 4, 0.05, 0.02);
  };
  // Enters M at 0.1, bottoms out at 0.05, is pulled back to 0.4.
  const auto detour = make({0.8, 0.1, 0.05, 0.4, 0.2, 0.0, 0.0});
  EXPECT_DOUBLE_EQ(detour.metric("sigma_excursion"), 0.35);
  EXPECT_DOUBLE_EQ(detour.metric("max_abs_sigma_after_entry"), 0.4);
  EXPECT_DOUBLE_EQ(detour.metric("t_entry_M"), 0.1);
  // Starting inside M and decaying monotonically: no detour.
  EXPECT_EQ(make({0.2, 0.1, 0.05, 0.0, 0.0}).metric("sigma_excursion"), 0.0);
  // Round-off wiggles at S are not a detour.
  EXPECT_EQ(make({0.2, 0.0, 1.1e-16, 0.0, 2.2e-16, 0.0}).metric("sigma_excursion"), 0.0);
  // Never inside M.
  EXPECT_TRUE(std::isinf(make({0.9, 0.8, 0.7}).metric("sigma_excursion")));
}

TEST(ZeroCrossing, SyntheticSine) {
  Trajectory traj;
  for (int k = 0; k <= 10000; ++k) {
    Sample s;
    s.t = 1e-3 * k;
    s.x = vec({std::sin(2 * kPi * 1.3 * s.t + 0.2), 0});
    traj.samples.push_back(s);
  }
  EXPECT_NEAR(zero_crossing_frequency(traj, 5.0), 1.3, 1e-4);
  EXPECT_EQ(zero_crossing_frequency(traj, 9.9999), 0.0);
}

TEST(Report, CsvAndText) {
  AuditReport report;
  AuditCheck c;
  c.name = "demo";
  c.verdict = Verdict::kFail;
  c.worst_margin = -0.5;
  c.t_at_worst = 1.25;
  c.tolerance = 1e-8;
  c.excluded = 3;
  report.checks.push_back(c);
  std::ostringstream os;
  write_report_csv(os, report);
  EXPECT_EQ(os.str(),
            "check,verdict,worst_margin,t_at_worst,tolerance,excluded\n"
            "demo,fail,-0.5,1.25,1e-08,3\n");
  EXPECT_FALSE(report.passed());
  report.checks[0].verdict = Verdict::kInconclusive;
  EXPECT_TRUE(report.passed());
  std::ostringstream text;
  write_report_text(text, report);
  EXPECT_NE(text.str().find("tol_S"), std::string::npos);
}

}  // namespace
}  // namespace sphs
