#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "error.hpp"

namespace evfleet {

// Units: minutes, miles, kWh, kW. SoC is a fraction of pack_kwh.
struct SystemParams {
  double charge_rate_kw = 20.0;
  double discharge_rate_kw = 5.0;
  double pack_kwh = 40.0;
  double speed_mph = 20.0;
  double region_side_mi = 10.0;
  double trip_time_min = 15.14;  // T_R; the fulfilled-trip calibration by default
  // Pickup and drive-to-charger constants. Defaults come from the nearest-point law
  // E[dist] ~ side / (2 sqrt(k)): tau1 = side / (2 v) and tau2 = tau1 * sqrt(posts).
  double tau1_min = 15.0;
  double tau2_min = 42.42640687119285;
  double s_min = 0.2;
  double s_max = 0.9;
  int posts_per_charger = 8;

  double ratio() const { return discharge_rate_kw / charge_rate_kw; }
  double speed_mi_per_min() const { return speed_mph / 60.0; }

  void validate() const {
    using detail::require;
    require(discharge_rate_kw > 0, "discharge_rate_kw must be positive");
    require(charge_rate_kw > discharge_rate_kw, "charge_rate_kw must exceed discharge_rate_kw");
    require(pack_kwh > 0, "pack_kwh must be positive");
    require(speed_mph > 0, "speed_mph must be positive");
    require(region_side_mi > 0, "region_side_mi must be positive");
    require(trip_time_min > 0, "trip_time_min must be positive");
    require(tau1_min >= 0 && tau2_min >= 0, "tau1_min and tau2_min must be non-negative");
    require(0 <= s_min && s_min < s_max && s_max <= 1, "need 0 <= s_min < s_max <= 1");
    require(posts_per_charger >= 1, "posts_per_charger must be at least 1");
  }
};

struct PlanInputs {
  double n = 0;
  double m = 0;
  double A = 0;
  int d = 2;
  double lambda_tilde = 0;
};

struct DerivedQuantities {
  double r = 0;          // r_d / r_c
  double T_B = 0;        // busy-time upper bound, minutes
  double delta_kwh = 0;  // energy per standardized trip
  int N_trips = 0;       // floor(pack / delta)
  // Trips per charge computed with T_R in place of T_B and rounded to nearest.
  int N_trips_footnote = 0;
};

inline double busy_time_bound(const SystemParams& p, const PlanInputs& in) {
  return p.tau1_min * std::sqrt(double(in.d) / (in.n - p.trip_time_min * in.lambda_tilde)) +
         p.trip_time_min + p.tau2_min / std::sqrt(in.m - in.A);
}

inline DerivedQuantities derive_quantities(const SystemParams& p, const PlanInputs& in) {
  p.validate();
  if (!(in.n > p.trip_time_min * in.lambda_tilde))
    throw ValidationError("infeasible plan: n must exceed T_R * lambda_tilde (n=" + std::to_string(in.n) +
                          ", T_R*lambda_tilde=" + std::to_string(p.trip_time_min * in.lambda_tilde) + ")");
  if (!(in.m > in.A))
    throw ValidationError("infeasible plan: m must exceed A (m=" + std::to_string(in.m) +
                          ", A=" + std::to_string(in.A) + ")");
  detail::require(in.d >= 1, "d must be at least 1");
  DerivedQuantities q;
  q.r = p.ratio();
  q.T_B = busy_time_bound(p, in);
  q.delta_kwh = p.discharge_rate_kw * q.T_B / 60.0;
  q.N_trips = int(std::floor(p.pack_kwh / q.delta_kwh));
  q.N_trips_footnote = int(std::lround(p.pack_kwh / (p.discharge_rate_kw * p.trip_time_min / 60.0)));
  if (q.N_trips < 1)
    throw ValidationError("pack_kwh too small for a single trip (delta=" + std::to_string(q.delta_kwh) + " kWh)");
  return q;
}

// Real fixed point of d = lt^(gamma/N) * ln(d)^(1/N), found by damped iteration from 2.
// Empty when the iteration falls to d <= 1, i.e. there is no fixed point above 1.
inline std::optional<double> solve_d_fixed_point(double lambda_tilde, double gamma, int N_trips) {
  detail::require(lambda_tilde > 1, "solve_d: lambda_tilde must exceed 1");
  detail::require(N_trips >= 2, "solve_d: N_trips must be at least 2");
  const double a = std::exp(gamma * std::log(lambda_tilde) / N_trips);
  const double inv_n = 1.0 / N_trips;
  constexpr double damping = 0.5;
  double x = 2.0;
  for (int it = 0; it < 10000; ++it) {
    const double next = x + damping * (a * std::pow(std::log(x), inv_n) - x);
    if (!(next > 1.0)) return std::nullopt;
    if (std::abs(next - x) < 1e-9) return next;
    x = next;
  }
  throw ModelError("solve_d: no convergence after 10000 iterations");
}

inline int solve_d(double lambda_tilde, double gamma, int N_trips) {
  const auto x = solve_d_fixed_point(lambda_tilde, gamma, N_trips);
  if (!x) return 2;
  return std::max(2, int(std::ceil(*x)));
}

struct Kappas {
  double kappa1 = 0;
  double kappa2 = 0;
  std::optional<double> kappa3;  // defaults to kappa4
};

inline Kappas minimum_kappas(const SystemParams& p) {
  const double r = p.ratio();
  return {2 * r * p.tau2_min, 2 + 4 * r * p.tau2_min, std::nullopt};
}

inline double kappa4(const SystemParams& p, int N_trips, double gamma, double kappa1) {
  return p.ratio() * N_trips / gamma + (kappa1 + 2 * p.tau2_min) / p.trip_time_min;
}

inline double max_gamma(int N_trips) { return 1.0 / (2.0 + 1.0 / N_trips); }

struct CapacityPlan {
  double lambda_tilde = 0;
  long long n = 0;
  long long m = 0;
  long long A = 0;
  int d = 2;
  double gamma = 0;
  double kappa1 = 0;
  double kappa2 = 0;
  double kappa3 = 0;
  // Not part of the serialized plan.
  int N_trips = 0;
  bool lambda_tilde_exceeds_lambda = false;

  PlanInputs inputs() const { return {double(n), double(m), double(A), d, lambda_tilde}; }
};

// Second-order sizing for a given admitted rate. N_trips only feeds solve_d here.
inline CapacityPlan plan_for_lambda_tilde(double lambda_tilde, double gamma, const SystemParams& p,
                                          double kappa1, double kappa2, double kappa3, int N_trips) {
  detail::require(lambda_tilde > 0, "lambda_tilde must be positive");
  const double r = p.ratio();
  const double T_R = p.trip_time_min;
  CapacityPlan plan;
  plan.lambda_tilde = lambda_tilde;
  plan.gamma = gamma;
  plan.kappa1 = kappa1;
  plan.kappa2 = kappa2;
  plan.kappa3 = kappa3;
  plan.N_trips = N_trips;
  plan.n = (long long)std::ceil((1 + r) * T_R * lambda_tilde + kappa1 * std::pow(lambda_tilde, 1 - gamma));
  plan.m = (long long)std::ceil(r * T_R * lambda_tilde + kappa2 * std::pow(lambda_tilde, 2 * gamma));
  plan.A = plan.m - (long long)std::ceil(std::pow(lambda_tilde, 2 * gamma));
  plan.d = lambda_tilde > 1 ? solve_d(lambda_tilde, gamma, N_trips) : 2;
  return plan;
}

inline void check_kappas(const SystemParams& p, const Kappas& k) {
  const Kappas lo = minimum_kappas(p);
  // Small slack so the documented minima themselves are accepted after a round trip through text.
  const double eps = 1e-12;
  if (k.kappa1 < lo.kappa1 * (1 - eps))
    throw ValidationError("kappa1 must be at least 2*r*tau2 = " + std::to_string(lo.kappa1));
  if (k.kappa2 < lo.kappa2 * (1 - eps))
    throw ValidationError("kappa2 must be at least 2 + 4*r*tau2 = " + std::to_string(lo.kappa2));
  if (k.kappa3 && *k.kappa3 < 0) throw ValidationError("kappa3 must be non-negative");
}

// Second-order sizing at a prescribed admitted rate, with N resolved as in capacity_plan.
// kappa3 is recorded as kappa4 unless given; it plays no role in the sizing here.
inline CapacityPlan plan_at_lambda_tilde(double lambda_tilde, double gamma, const SystemParams& p,
                                         const Kappas& kappas) {
  p.validate();
  detail::require(lambda_tilde > 1, "lambda_tilde must exceed 1");
  detail::require(gamma >= 1.0 / 3.0 && gamma < 0.5, "gamma must lie in [1/3, 1/2)");
  check_kappas(p, kappas);
  int N = int(std::floor(p.pack_kwh / (p.discharge_rate_kw * p.trip_time_min / 60.0)));
  for (int iter = 0; iter < 64; ++iter) {
    detail::require(N >= 2, "pack supports fewer than two trips per charge");
    const double k3 = kappas.kappa3.value_or(kappa4(p, N, gamma, kappas.kappa1));
    CapacityPlan plan = plan_for_lambda_tilde(lambda_tilde, gamma, p, kappas.kappa1, kappas.kappa2, k3, N);
    const DerivedQuantities q = derive_quantities(p, plan.inputs());
    if (q.N_trips == N) {
      if (!(gamma < max_gamma(N)))
        throw ValidationError("gamma must be below 1/(2+1/N) = " + std::to_string(max_gamma(N)));
      return plan;
    }
    N = q.N_trips;
  }
  throw ModelError("plan_at_lambda_tilde: trips-per-charge count did not settle");
}

// The trips-per-charge count and the plan depend on each other (kappa4 and T_B both
// involve N). Iterate from the T_R-based upper estimate until N stops changing.
inline CapacityPlan capacity_plan(double alpha, double lambda, double gamma, const SystemParams& p,
                                  const Kappas& kappas) {
  p.validate();
  detail::require(alpha > 0 && alpha < 1, "alpha must lie in (0, 1)");
  detail::require(lambda > 0, "lambda must be positive");
  detail::require(gamma >= 1.0 / 3.0 && gamma < 0.5, "gamma must lie in [1/3, 1/2)");
  check_kappas(p, kappas);

  int N = int(std::floor(p.pack_kwh / (p.discharge_rate_kw * p.trip_time_min / 60.0)));
  for (int iter = 0; iter < 64; ++iter) {
    detail::require(N >= 2, "pack supports fewer than two trips per charge");
    const double k3 = kappas.kappa3.value_or(kappa4(p, N, gamma, kappas.kappa1));
    const double lt = alpha * lambda + k3 * std::pow(lambda, 1 - gamma);
    CapacityPlan plan = plan_for_lambda_tilde(lt, gamma, p, kappas.kappa1, kappas.kappa2, k3, N);
    const DerivedQuantities q = derive_quantities(p, plan.inputs());
    if (q.N_trips == N) {
      if (!(gamma < max_gamma(N)))
        throw ValidationError("gamma must be below 1/(2+1/N) = " + std::to_string(max_gamma(N)));
      plan.lambda_tilde_exceeds_lambda = lt > lambda;
      return plan;
    }
    N = q.N_trips;
  }
  throw ModelError("capacity_plan: trips-per-charge count did not settle");
}

// Perpetual valleys and peaks: rate lambda for T1 minutes, then c*lambda for T2 minutes.
struct DemandProfile {
  double base_rate = 0;
  double peak_multiplier = 1;
  double valley_length = 0;
  double peak_length = 0;

  void validate() const {
    detail::require(base_rate >= 0, "profile base_rate must be non-negative");
    detail::require(peak_multiplier >= 1, "profile peak_multiplier must be at least 1");
    detail::require(valley_length > 0, "profile valley_length must be positive");
    detail::require(peak_length >= 0, "profile peak_length must be non-negative");
  }
  double period() const { return valley_length + peak_length; }
  double lambda_avg() const {
    return (valley_length + peak_multiplier * peak_length) / period() * base_rate;
  }
  bool in_peak(double t) const { return std::fmod(t, period()) >= valley_length; }
  double rate_at(double t) const { return in_peak(t) ? peak_multiplier * base_rate : base_rate; }
};

}  // namespace evfleet
