#include <chrono>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "sphs/sim.hpp"

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
                        double big_m = 3.0) {
  SystemParams p;
  p.q = Matrix::Identity(2, 2);
  p.r = DissipationMatrix::constant(Matrix::Identity(2, 2));
  p.jbar = InterconnectionMatrix::rotation(2 * kPi);
  p.bbar = InputMatrix::constant(bbar);
  p.m = static_cast<int>(bbar.cols());
  p.variant = v;
  p.big_m = v == Variant::kExact ? 0.0 : big_m;
  return SingularPHSystem(p);
}

IntegratorConfig rk4(double dt, double t_final) {
  IntegratorConfig c;
  c.dt = dt;
  c.t_final = t_final;
  return c;
}

TEST(IntegratorConfig, Validation) {
  IntegratorConfig c;
  EXPECT_NO_THROW(c.validate());
  c.dt = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = IntegratorConfig{};
  c.event_refine_tol = c.dt;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = IntegratorConfig{};
  c.t_final = -1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(IntegratorConfig{}.hash(), IntegratorConfig{}.hash());
  IntegratorConfig d;
  d.dt = 2e-4;
  EXPECT_NE(IntegratorConfig{}.hash(), d.hash());
}

TEST(Integrate, DriftOnlyRotationStaysOnS) {
  const ClosedLoopSystem cl(planar(Variant::kExact), OpenLoop::zero(1));
  const auto r = integrate(cl, vec({0, 1}), rk4(1e-3, 10.0));
  ASSERT_TRUE(r.ok()) << r.diagnostic;
  double worst = 0.0;
  for (const Sample& s : r.trajectory.samples) {
    worst = std::max(worst, std::abs(s.x.squaredNorm() - 1.0));
  }
  EXPECT_LE(worst, 1e-6);
  EXPECT_FALSE(r.warnings.empty());
  EXPECT_NEAR(r.trajectory.back().t, 10.0, 1e-12);
}

TEST(Integrate, FixedStepGridHasNoSliverStep) {
  const ClosedLoopSystem cl(planar(Variant::kLinear), StaticLoad::scalar(1.0));
  for (double t_final : {3.0, 0.0105}) {
    const auto r = integrate(cl, vec({1.5, 0.2}), rk4(1e-3, t_final));
    ASSERT_TRUE(r.ok());
    std::vector<double> grid;
    for (const Sample& smp : r.trajectory.samples) {
      if (!smp.event) grid.push_back(smp.t);
    }
    EXPECT_EQ(grid.back(), t_final);
    for (std::size_t k = 1; k + 1 < grid.size(); ++k) {
      EXPECT_NEAR(grid[k], 1e-3 * static_cast<double>(k), 1e-15) << k;
    }
    EXPECT_GE(grid.back() - grid[grid.size() - 2], 0.5e-3 - 1e-12);
  }
}

TEST(Integrate, StepStiffnessOfARotation) {
  // On S the exact plant's input is gated off. The RK4 stage difference is
  // radial, along which the Jacobian J̄ - x xᵀ (Q = R = I) stretches by
  // sqrt(ω₀² + 1), up to the O(hω₀) curvature of σ between stages.
  const ClosedLoopSystem cl(planar(Variant::kExact), StaticLoad::scalar(1.0));
  const auto r = integrate(cl, vec({0, 1}), rk4(1e-3, 0.1));
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(r.trajectory.front().step_stiffness, 0.0);
  for (std::size_t k = 1; k < r.trajectory.samples.size(); ++k) {
    const double expected = 1e-3 * std::hypot(2 * kPi, 1.0);
    EXPECT_NEAR(r.trajectory.samples[k].step_stiffness, expected, 1e-3 * expected);
  }
}

TEST(Integrate, TrajectoryInvariants) {
  const ClosedLoopSystem cl(planar(Variant::kSaturated), StaticLoad::scalar(2.0));
  const auto r = integrate(cl, vec({1.8, -0.4}), rk4(1e-3, 3.0));
  ASSERT_TRUE(r.ok());
  const auto& s = r.trajectory.samples;
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (k > 0) {
      EXPECT_GT(s[k].t, s[k - 1].t);
    }
    EXPECT_NEAR(s[k].sigma, sigma(s[k].x, cl.plant().q()), 1e-12);
  }
}

// Exact variant with a static load reaches S in finite time and chatters across it.
TEST(Integrate, EverySignChangeOfSigmaIsLogged) {
  const ClosedLoopSystem cl(planar(Variant::kExact), StaticLoad::scalar(1.0));
  const auto r = integrate(cl, vec({1.6, 0.3}), rk4(1e-3, 3.0));
  ASSERT_TRUE(r.ok()) << r.diagnostic;
  std::vector<double> crossings;
  for (const Event& e : r.events.events) {
    if (e.kind == EventKind::kSCrossing) crossings.push_back(e.t);
  }
  ASSERT_FALSE(crossings.empty());
  const auto& s = r.trajectory.samples;
  std::size_t unlogged = 0;
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    if ((s[k].sigma > 0.0) == (s[k + 1].sigma > 0.0)) continue;
    if (s[k].sigma == 0.0 || s[k + 1].sigma == 0.0) continue;
    const bool logged = std::any_of(crossings.begin(), crossings.end(), [&](double t) {
      return t >= s[k].t - 1e-12 && t <= s[k + 1].t + 1e-12;
    });
    if (!logged) ++unlogged;
  }
  EXPECT_EQ(unlogged, 0u);
  for (const Event& e : r.events.events) {
    if (e.kind == EventKind::kSCrossing) {
      EXPECT_LE(std::abs(sigma(e.x, cl.plant().q())), 1e-6);
    }
  }
}

TEST(Integrate, BoundaryEventsRefined) {
  const ClosedLoopSystem cl(planar(Variant::kLinear), StaticLoad::scalar(1.0));
  const auto r = integrate(cl, vec({2, 0}), rk4(1e-3, 2.0));
  ASSERT_TRUE(r.ok());
  int boundary = 0;
  for (const Event& e : r.events.events) {
    if (e.kind != EventKind::kBoundaryCrossing) continue;
    ++boundary;
    EXPECT_NEAR(std::abs(sigma(e.x, cl.plant().q())), 1.0 / 3.0, 1e-8);
    EXPECT_EQ(e.direction, -1);
  }
  EXPECT_EQ(boundary, 1);
}

TEST(Integrate, Example1EntersBoundaryLayerAndStays) {
  const ClosedLoopSystem cl(planar(Variant::kLinear), StaticLoad::scalar(1.0));
  const auto r = integrate(cl, vec({2, 0}), rk4(1e-4, 10.0));
  ASSERT_TRUE(r.ok());
  std::optional<double> entry;
  double after = 0.0;
  for (const Sample& s : r.trajectory.samples) {
    if (!entry && std::abs(s.sigma) <= 1.0 / 3.0) entry = s.t;
    if (entry) after = std::max(after, std::abs(s.sigma));
  }
  ASSERT_TRUE(entry.has_value());
  EXPECT_LT(*entry, 1.0);
  EXPECT_LE(after, 1.0 / 3.0);
  double tail = 0.0;
  for (const Sample& s : r.trajectory.samples) {
    if (s.t > *entry + 1.0) tail = std::max(tail, std::abs(s.sigma));
  }
  EXPECT_LE(tail, 0.05);
}

TEST(Integrate, AdaptiveMatchesFixedStep) {
  const ClosedLoopSystem cl(planar(Variant::kLinear), StaticLoad::scalar(1.0));
  IntegratorConfig a;
  a.method = Method::kRk45;
  a.dt = 1e-3;
  a.t_final = 3.0;
  a.rtol = 1e-10;
  a.atol = 1e-12;
  const auto ra = integrate(cl, vec({1.5, 0.5}), a);
  const auto rf = integrate(cl, vec({1.5, 0.5}), rk4(1e-4, 3.0));
  ASSERT_TRUE(ra.ok() && rf.ok());
  EXPECT_NEAR(ra.trajectory.back().t, 3.0, 1e-12);
  EXPECT_LE((ra.trajectory.back().x - rf.trajectory.back().x).norm(), 1e-8);
  EXPECT_LT(ra.trajectory.samples.size(), rf.trajectory.samples.size());
}

TEST(Integrate, AdaptiveUnderflowAborts) {
  // Exact variant chattering with a huge gain forces tiny steps.
  const ClosedLoopSystem cl(planar(Variant::kExact), StaticLoad::scalar(1e6));
  IntegratorConfig a;
  a.method = Method::kRk45;
  a.dt = 1e-3;
  a.t_final = 2.0;
  a.rtol = 1e-12;
  a.atol = 1e-14;
  a.dt_min = 1e-9;
  a.event_refine_tol = 1e-12;
  a.gate_on_s = false;
  const auto r = integrate(cl, vec({1.2, 0}), a);
  EXPECT_FALSE(r.ok());
  EXPECT_FALSE(r.diagnostic.empty());
  EXPECT_FALSE(r.trajectory.empty());
}

TEST(Integrate, Rk4FourthOrder) {
  const ClosedLoopSystem cl(planar(Variant::kLinear), StaticLoad::scalar(1.0));
  const Vector x0 = vec({std::sqrt(1.4), 0});  // σ₀ = 0.2, inside M throughout
  const double dt = 1e-2;
  const Vector ref = integrate(cl, x0, rk4(dt / 16, 1.0)).trajectory.back().x;
  const double e1 = (integrate(cl, x0, rk4(dt, 1.0)).trajectory.back().x - ref).norm();
  const double e2 = (integrate(cl, x0, rk4(dt / 2, 1.0)).trajectory.back().x - ref).norm();
  EXPECT_GE(e1 / e2, 12.0);
  EXPECT_LE(e1 / e2, 20.0);
}

TEST(Integrate, LinearVariantEnergyBookkeeping) {
  // Inside M the linear variant gives Ḣ = -σ²xᵀQRQx + M²σ²yᵀu.
  const double m = 3.0;
  const ClosedLoopSystem cl(
      planar(Variant::kLinear, Matrix::Identity(2, 1), m),
      OpenLoop{[](double t) { return vec({0.3 * std::sin(5 * t)}); }});
  const auto r = integrate(cl, vec({std::sqrt(1.5), 0}), rk4(1e-3, 2.0));
  ASSERT_TRUE(r.ok());
  const auto& s = r.trajectory.samples;
  auto integrand = [&](const Sample& p) {
    const double sig = p.sigma;
    const double inv = std::abs(sig) > 1.0 / m ? 1.0 / sig : m * m * sig;
    return -sig * sig * p.x.squaredNorm() + sig * inv * p.y.dot(p.u);
  };
  double integral = 0.0;
  double mass = 0.0;
  for (std::size_t k = 0; k + 1 < s.size(); ++k) {
    ASSERT_GT(std::abs(s[k].sigma), 1e-6);
    const double dt = s[k + 1].t - s[k].t;
    integral += 0.5 * dt * (integrand(s[k]) + integrand(s[k + 1]));
    mass += 0.5 * dt * (std::abs(integrand(s[k])) + std::abs(integrand(s[k + 1])));
  }
  const double dh = s.back().h - s.front().h;
  EXPECT_LE(std::abs(dh - integral), 1e-3 * mass);
}

TEST(Integrate, DeterministicCsv) {
  const ClosedLoopSystem cl(planar(Variant::kSaturated), StaticLoad::scalar(5.0));
  auto dump = [&] {
    const auto r = integrate(cl, vec({0.1, 0.1}), rk4(1e-3, 1.0), "det");
    std::ostringstream a, b;
    write_trajectory_csv(a, r.trajectory);
    write_events_csv(b, r.events, 2);
    return a.str() + b.str();
  };
  EXPECT_EQ(dump(), dump());
}

TEST(Integrate, ErrorsAreReported) {
  const ClosedLoopSystem cl(planar(Variant::kLinear), StaticLoad::scalar(1.0));
  EXPECT_THROW(integrate(cl, vec({1, 0, 0}), rk4(1e-3, 1.0)), std::invalid_argument);
  const auto nan = integrate(cl, vec({NAN, 0}), rk4(1e-3, 1.0));
  EXPECT_EQ(nan.status, RunStatus::kNonFinite);

  PhasePIController c{2 * kPi, 50, 200, 0.0};
  SystemParams p;
  p.q = Matrix::Identity(2, 2);
  p.r = DissipationMatrix::constant(Matrix::Identity(2, 2));
  p.jbar = phase_pi_interconnection(c);
  p.bbar = InputMatrix::constant(Matrix::Identity(2, 1));
  p.variant = Variant::kLinear;
  p.big_m = 3.0;
  const ClosedLoopSystem pi(SingularPHSystem(p), StaticLoad::scalar(1.0), c);
  const auto origin = integrate(pi, Vector::Zero(3), rk4(1e-3, 1.0));
  EXPECT_EQ(origin.status, RunStatus::kEvalError);
  EXPECT_NE(origin.diagnostic.find("origin"), std::string::npos);
}

TEST(FirstImpact, Examples) {
  const ClosedLoopSystem zero(planar(Variant::kExact), OpenLoop::zero(1));
  const auto on_s = integrate(zero, vec({0, 1}), rk4(1e-3, 0.5));
  ASSERT_EQ(first_impact_time(on_s.trajectory, on_s.events), 0.0);

  const ClosedLoopSystem lin(planar(Variant::kLinear), OpenLoop::zero(1));
  const auto never = integrate(lin, vec({3, 0}), rk4(1e-3, 0.05));
  EXPECT_FALSE(first_impact_time(never.trajectory, never.events).has_value());

  // B̄ = I, K = I: bound H(x0)/d_min = 1.125 / 0.25 with l = 0.5.
  const ClosedLoopSystem full(planar(Variant::kExact, Matrix::Identity(2, 2)),
                              StaticLoad::scalar(1.0, 2));
  const auto r = integrate(full, vec({2, 0}), rk4(1e-4, 5.0));
  const auto t = first_impact_time(r.trajectory, r.events);
  ASSERT_TRUE(t.has_value());
  EXPECT_LE(*t, 4.5);
}

TEST(LtiLoadSim, SteadyStateAmplitudeMatchesFrequencyResponse) {
  // Plant bypassed: drive the realized load directly with y = sin t.
  const LtiLoad l = realize_tf({1, 3}, {1, 4, 4});
  const auto deriv = [&](const Vector& z, double t) {
    return lti_load_step_derivative(l, z, std::sin(t)).zdot;
  };
  Vector z = Vector::Zero(2);
  const double dt = 1e-3;
  double t = 0.0;
  double peak = 0.0;
  for (int k = 0; k < 60000; ++k) {
    const Vector k1 = deriv(z, t);
    const Vector k2 = deriv(z + 0.5 * dt * k1, t + 0.5 * dt);
    const Vector k3 = deriv(z + 0.5 * dt * k2, t + 0.5 * dt);
    const Vector k4 = deriv(z + dt * k3, t + dt);
    z += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
    t += dt;
    if (t > 40.0) peak = std::max(peak, std::abs(lti_load_step_derivative(l, z, std::sin(t)).u));
  }
  const std::complex<double> j1(0, 1);
  const double gain = std::abs((j1 + 3.0) / (j1 * j1 + 4.0 * j1 + 4.0));
  EXPECT_NEAR(peak, gain, 1e-3);
}

TEST(Csv, Formats) {
  EXPECT_EQ(format_double(0.1), "0.1");
  EXPECT_EQ(format_double(1e-4), "1e-04");
  EXPECT_EQ(std::stod(format_double(1.0 / 3.0)), 1.0 / 3.0);
  const ClosedLoopSystem cl(planar(Variant::kLinear), StaticLoad::scalar(1.0));
  const auto r = integrate(cl, vec({2, 0}), rk4(1e-3, 0.01));
  std::ostringstream os;
  write_trajectory_csv(os, r.trajectory);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')),
            "t,x1,x2,sigma,region,H,Hstorage,y1,u1,supply,diss_rate");
  std::ostringstream ev;
  write_events_csv(ev, r.events, 2);
  EXPECT_EQ(ev.str(), "t,kind,direction,x1,x2\n");
}

TEST(Performance, Example1RunUnderFiveSeconds) {
  const ClosedLoopSystem cl(planar(Variant::kLinear), StaticLoad::scalar(5.0));
  const auto start = std::chrono::steady_clock::now();
  const auto r = integrate(cl, vec({-1.5, 1.5}), rk4(1e-4, 10.0));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ASSERT_TRUE(r.ok());
  EXPECT_LE(secs, 5.0);
}

}  // namespace
}  // namespace sphs
