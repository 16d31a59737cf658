#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "evfleet/fluid.hpp"

using namespace evfleet;

namespace {

// Exact probability that a uniform d-subset of `top` vehicles holds one above level j,
// when `low` of them sit at or below j. Counted over all subsets.
double enumerate_p(int low, int top, int d) {
  long hits = 0, total = 0;
  for (unsigned mask = 0; mask < (1u << top); ++mask) {
    if (__builtin_popcount(mask) != d) continue;
    ++total;
    bool any_high = false;
    for (int v = low; v < top; ++v)
      if (mask & (1u << v)) any_high = true;
    hits += any_high;
  }
  return double(hits) / double(total);
}

// Small instance: four trips per charge, two choices.
FluidParams synthetic(double n = 400, double lambda_tilde = 10) {
  FluidParams p;
  p.lambda_tilde = lambda_tilde;
  p.n = n;
  p.m = 60;
  p.A = 40;
  p.d = 2;
  p.T_R = 15;
  p.r = 0.25;
  p.tau1 = 1;
  p.tau2 = 2;
  p.N_trips = 4;
  p.T_B = p.tau1 * std::sqrt(p.d / (p.n - p.T_R * lambda_tilde)) + p.T_R + p.tau2 / std::sqrt(p.m - p.A);
  return p;
}

FluidParams planned(double lambda_tilde, double gamma) {
  const SystemParams sp;
  return FluidParams::from_plan(plan_at_lambda_tilde(lambda_tilde, gamma, sp, minimum_kappas(sp)), sp);
}

double total(const FluidState& s) { return s.XC.back() + s.XB.back(); }

bool sorted(const FluidState& s, double tol) {
  for (std::size_t j = 1; j < s.XC.size(); ++j)
    if (s.XC[j] < s.XC[j - 1] - tol) return false;
  for (std::size_t j = 2; j < s.XB.size(); ++j)
    if (s.XB[j] < s.XB[j - 1] - tol) return false;
  return true;
}

}  // namespace

TEST(Pj, HandValues) {
  EXPECT_NEAR(p_j(2, 4, 2), 5.0 / 6.0, 1e-15);
  EXPECT_DOUBLE_EQ(p_j(4, 4, 2), 0.0);
  EXPECT_DOUBLE_EQ(p_j(1, 4, 2, LowCountRule::ZeroBelowD), 0.0);
  EXPECT_DOUBLE_EQ(p_j(1, 4, 2, LowCountRule::Enumeration), 1.0);
  EXPECT_THROW(p_j(1, 1.5, 2), ModelError);
  EXPECT_THROW(p_j(5, 4, 2), ValidationError);
}

TEST(Pj, MatchesExhaustiveEnumeration) {
  for (int top = 1; top <= 12; ++top)
    for (int d = 1; d <= std::min(4, top); ++d)
      for (int low = 0; low <= top; ++low)
        EXPECT_NEAR(p_j(low, top, d, LowCountRule::Enumeration), enumerate_p(low, top, d), 1e-12)
            << "low=" << low << " top=" << top << " d=" << d;
}

TEST(PBounds, HandValues) {
  const auto b = p_bounds(2, 4, 2);
  EXPECT_NEAR(b.lower, 0.75, 1e-15);
  EXPECT_NEAR(b.upper, 1.0, 1e-15);
  const auto t = p_bounds(4, 4, 2);
  EXPECT_EQ(t.lower, 0.0);
  EXPECT_EQ(t.upper, 0.0);
}

TEST(PBounds, SandwichOnRandomTriples) {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> U(0, 1);
  std::uniform_int_distribution<int> D(1, 8);
  for (int i = 0; i < 10000; ++i) {
    const int d = D(rng);
    const double top = d + std::exp(U(rng) * std::log(1e6));
    const double xj = d + U(rng) * (top - d);
    const auto b = p_bounds(xj, top, d);
    const double v = p_j(xj, top, d, LowCountRule::Enumeration);
    ASSERT_LE(b.lower, v + 1e-12) << xj << " " << top << " " << d;
    ASSERT_LE(v, b.upper + 1e-12) << xj << " " << top << " " << d;
  }
}

TEST(Mu, Substitution) {
  FluidParams p;
  p.n = 500;
  p.m = 200;
  p.A = 100;
  p.d = 4;
  p.T_R = 15;
  p.tau1 = 1;
  p.tau2 = 2;
  EXPECT_NEAR(mu_from(100, 150, p), 1 / 15.3, 1e-15);
  p.tau1 = p.tau2 = 0;
  EXPECT_DOUBLE_EQ(mu_from(100, 150, p), 1 / 15.0);
  p.tau1 = 1;
  EXPECT_THROW(mu_from(500, 0, p), ModelError);
}

TEST(Mu, BetweenTripTimeAndBusyBound) {
  const FluidParams p = planned(1e4, 0.4);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(0, 1);
  for (int i = 0; i < 1000; ++i) {
    const double XB = U(rng) * p.busy_cap();
    const double XC = U(rng) * p.n;
    const double inv = 1.0 / mu_from(XB, XC, p);
    EXPECT_GE(inv, p.T_R);
    EXPECT_LE(inv, p.T_B * (1 + 1e-12));
  }
}

TEST(OdeRhs, ConservesFleetAtRandomStates) {
  const FluidParams p = planned(1e4, 0.4);
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const FluidState s = FluidState::random_feasible(p, rng);
    ASSERT_NEAR(total(s), p.n, 1e-9 * p.n);
    const FluidState ds = ode_rhs(s, p);
    EXPECT_NEAR(ds.XC.back() + ds.XB.back(), 0.0, 1e-9 * p.n);
    EXPECT_EQ(ds.XB[0], 0.0);
  }
}

TEST(OdeRhs, NoDemandDrainsBusyAndCharges) {
  FluidParams p = synthetic();
  p.lambda_tilde = 0;
  FluidState s = FluidState::zeros(p.N_trips);
  s.XC = {10, 30, 60, 100, 250};
  s.XB = {0, 10, 40, 80, 150};
  const FluidState ds = ode_rhs(s, p);
  const double u = mu(s, p);
  for (std::size_t j = 1; j < s.XB.size(); ++j) EXPECT_NEAR(ds.XB[j], -s.XB[j] * u, 1e-12);
  // Charging moves mass up: the lowest cumulative level loses vehicles to charging.
  const double rate = 1.0 / (p.r * p.T_B);
  EXPECT_NEAR(ds.XC[0], -std::min(s.XC[0], p.A) * rate + s.XB[1] * u, 1e-12);

  IntegrateOptions o;
  o.stop_when_converged = false;
  const auto tr = integrate(s, p, 50 * p.T_R, o);
  ASSERT_FALSE(tr.diverged) << tr.failure;
  EXPECT_LT(tr.final_state.XB.back(), 1e-6 * p.n);
  EXPECT_NEAR(tr.final_state.XC.back(), p.n, 1e-6 * p.n);
}

TEST(Integrate, ConservesAndStaysSorted) {
  const FluidParams p = planned(1e4, 0.4);
  std::mt19937_64 rng(8);
  IntegrateOptions o;
  o.record_every = 50;
  o.stop_when_converged = false;
  const auto tr = integrate(FluidState::random_feasible(p, rng), p, 20 * p.T_R, o);
  ASSERT_FALSE(tr.diverged) << tr.failure;
  ASSERT_GT(tr.states.size(), 10u);
  for (const auto& s : tr.states) {
    EXPECT_NEAR(total(s), p.n, 1e-8 * p.n);
    EXPECT_TRUE(sorted(s, 0));
    for (double x : s.XC) EXPECT_GE(x, 0);
  }
  EXPECT_THROW(integrate(tr.final_state, p, 10, [] {
                 IntegrateOptions big;
                 big.dt = 1.0;
                 return big;
               }()),
               ValidationError);
}

TEST(Equilibrium, ResidualOnPlannedInstances) {
  for (double g : {1.0 / 3.0, 0.4, 0.45})
    for (double lt : {1e3, 1e4, 1e5}) {
      const FluidParams p = planned(lt, g);
      const auto e = equilibrium(p);
      EXPECT_LT(e.residual_norm, 1e-8 * p.n) << "gamma=" << g << " lt=" << lt;
      EXPECT_NEAR(total(e.state), p.n, 1e-9 * p.n);
      EXPECT_TRUE(sorted(e.state, 1e-9 * p.n));
      EXPECT_GT(e.p0, 0);
      EXPECT_LE(e.p0, 1);
      EXPECT_LE(e.XB_top, p.busy_cap() * (1 + 1e-12));
    }
}

TEST(Equilibrium, StartingThereStaysThere) {
  const FluidParams p = synthetic();
  const auto e = equilibrium(p);
  IntegrateOptions o;
  o.dt = p.T_R / 100;
  o.stop_when_converged = false;
  const auto tr = integrate(e.state, p, 1000 * p.T_R, o);
  ASSERT_FALSE(tr.diverged);
  EXPECT_LT(max_abs_diff(tr.final_state, e.state), 1e-6 * p.n);
}

TEST(Equilibrium, RandomStartsLandOnBisectionPoint) {
  for (double n : {400.0, 2000.0}) {
    const FluidParams p = synthetic(n);
    const auto e = equilibrium(p);
    std::mt19937_64 rng(13);
    for (int i = 0; i < 20; ++i) {
      IntegrateOptions o;
      o.dt = p.T_R / 100;
      o.converge_tol = 1e-10;
      const auto tr = integrate(FluidState::random_feasible(p, rng), p, 1e5, o);
      ASSERT_TRUE(tr.converged) << tr.failure;
      EXPECT_LT(max_abs_diff(tr.final_state, e.state), 1e-6 * p.n) << "n=" << n << " start " << i;
    }
  }
}

TEST(Equilibrium, VanishingDemandEmptiesBusyPool) {
  for (double lt : {1e-3, 1e-6}) {
    const FluidParams p = synthetic(400, lt);
    const auto e = equilibrium(p);
    EXPECT_NEAR(e.XC_top, p.n, 1e-4 * p.n);
    EXPECT_LT(e.XB_top, 1e-4 * p.n);
  }
}

TEST(Equilibrium, UnitBusyClosureIsAValidChain) {
  const FluidParams p = synthetic();
  const auto e = equilibrium(p, EquilibriumForm::UnitBusyClosure);
  EXPECT_NEAR(total(e.state), p.n, 1e-9 * p.n);
  EXPECT_TRUE(sorted(e.state, 1e-9 * p.n));
}

TEST(HatFixedPoint, FiniteForHugeExponent) {
  FluidParams p = planned(1e4, 0.4);
  p.d = 2;
  p.N_trips = 32;  // d^N = 2^32
  const double x = hat_fixed_point(p);
  EXPECT_TRUE(std::isfinite(x));
  EXPECT_GT(x, 0);
  EXPECT_LT(x, p.n);
}

TEST(GenericOde, BalancedPointIsStationary) {
  GenericParams p{1000, 300, 15, 1, 2, 40, 20, 5};
  const double q = 300, cC = 100;
  GenericControls c;
  c.pickup_time = p.tau1 / std::sqrt(p.n - q);
  c.lambda_eff = q / (p.T_R + c.pickup_time);
  c.charge_time = p.pack_kwh / p.charge_rate_kw * 60.0;
  c.drive_to_charger_time = p.tau2 / std::sqrt(p.m - cC);
  c.reach_fraction = 1;
  c.driving_to_charger = cC * c.drive_to_charger_time / c.charge_time;
  c.idle = p.n - cC - cC * p.charge_rate_kw / p.discharge_rate_kw;
  const auto d = generic_ode_rhs(q, cC, 0, c, p);
  EXPECT_NEAR(d.dq, 0, 1e-12);
  EXPECT_NEAR(d.dcC, 0, 1e-12);
  EXPECT_NEAR(d.ds, 0, 1e-12);
  const auto g = generic_relations(c.lambda_eff, q, cC, c.idle, c.driving_to_charger, p);
  EXPECT_NEAR(g.littles_law_slack, 0, 1e-9);
  EXPECT_NEAR(g.energy_balance, 0, 1e-9);
  EXPECT_GE(g.charger_slack, -1e-12);
}

TEST(GenericOde, NoArrivalsDecayAndControlBounds) {
  GenericParams p{1000, 300, 15, 1, 2, 40, 20, 5};
  GenericControls c;
  c.pickup_time = 0.5;
  c.charge_time = 60;
  c.drive_to_charger_time = 1;
  const double a = generic_ode_rhs(100, 0, 0, c, p).dq, b = generic_ode_rhs(200, 0, 0, c, p).dq;
  EXPECT_LT(a, 0);
  EXPECT_NEAR(b, 2 * a, 1e-12);
  EXPECT_NEAR(a, -100 / 15.5, 1e-12);
  c.pickup_time = 0.001;
  EXPECT_THROW(generic_ode_rhs(100, 0, 0, c, p), ValidationError);
  c.pickup_time = 0.5;
  c.charge_time = 500;
  EXPECT_THROW(generic_ode_rhs(100, 0, 0, c, p), ValidationError);
}
