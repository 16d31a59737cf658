#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "error.hpp"
#include "model.hpp"

namespace evfleet {

struct FirstOrderBounds {
  double n_lb = 0;
  double m_lb = 0;
};

// Real-valued; callers round.
inline FirstOrderBounds first_order_bounds(double alpha, double lambda, double T_R, double r) {
  detail::require(alpha >= 0 && alpha <= 1, "first_order_bounds: alpha must be in [0, 1]");
  detail::require(lambda >= 0 && T_R > 0 && r > 0, "first_order_bounds: need lambda >= 0, T_R > 0, r > 0");
  return {(1 + r) * T_R * alpha * lambda, r * T_R * alpha * lambda};
}

// Leading term plus the exponent of the second-order term. The coefficient is a unit
// placeholder: the lower bound is existential and gives no constant.
struct ScalingTerm {
  double leading = 0;
  double exponent = 0;
  double coefficient = 1;
  double value(double lambda) const { return leading + coefficient * std::pow(lambda, exponent); }
};

struct UniversalScaling {
  ScalingTerm fleet;
  ScalingTerm chargers;
};

inline UniversalScaling universal_scaling(double alpha, double lambda, double gamma, double T_R, double r) {
  detail::require(gamma >= 1.0 / 3 - 1e-12 && gamma <= 0.5 + 1e-12, "universal_scaling: gamma must be in [1/3, 1/2]");
  const FirstOrderBounds fo = first_order_bounds(alpha, lambda, T_R, r);
  return {{fo.n_lb, 1 - gamma, 1}, {fo.m_lb, 2 * gamma, 1}};
}

// Largest gamma the power-of-d construction reaches with N trips per charge.
inline double achievable_gamma_cap(int N_trips) {
  detail::require(N_trips >= 1, "achievable_gamma_cap: N_trips must be at least 1");
  return max_gamma(N_trips);
}

// Predicted fleet exponent 1 - gamma when chargers scale as lambda^beta.
inline double theoretical_fleet_exponent(int N_trips, double beta) {
  detail::require(beta > 0, "theoretical_fleet_exponent: beta must be positive");
  return 1.0 - std::min(achievable_gamma_cap(N_trips), beta / 2);
}

// Extra fleet fraction closest dispatch needs, as a multiple of lambda: n >= (1+r) T_R alpha lambda + eps lambda
// for alpha >= delta.
inline double cd_failure_epsilon(double delta, double T_R, double r, double tau1, int N_trips) {
  detail::require(delta > 0 && delta <= 1, "cd_failure_epsilon: delta must be in (0, 1]");
  detail::require(T_R > 0 && r > 0 && tau1 >= 0 && N_trips >= 1, "cd_failure_epsilon: need T_R, r > 0, tau1 >= 0, N >= 1");
  const double mu_l = 1.0 / (T_R + tau1 * std::sqrt(1 + r) / std::sqrt(r));
  const double q = 1.0 / (delta * mu_l * T_R);
  const double N = N_trips;
  // (q - 1)/(q^N - 1), with its limit 1/N at q = 1.
  double geometric;
  if (std::abs(q - 1) < 1e-9)
    geometric = 1.0 / N;
  else
    geometric = std::expm1(std::log(q)) / std::expm1(N * std::log(q));
  return T_R * r * delta * std::min(1.0 / (N + 1), geometric);
}

inline double cd_fleet_lower_bound(double alpha, double delta, double lambda, double T_R, double r, double tau1,
                                   int N_trips) {
  detail::require(alpha >= delta, "cd_fleet_lower_bound: needs alpha >= delta");
  return first_order_bounds(alpha, lambda, T_R, r).n_lb + cd_failure_epsilon(delta, T_R, r, tau1, N_trips) * lambda;
}

struct PackTradeoff {
  double leading = 0;
  double exponent = 0;
  double n = 0;  // leading + lambda^exponent
};

inline PackTradeoff pack_size_tradeoff(int N_trips, double lambda, double T_R, double r) {
  detail::require(N_trips >= 1, "pack_size_tradeoff: N_trips must be at least 1");
  detail::require(lambda >= 0 && T_R > 0 && r > 0, "pack_size_tradeoff: need lambda >= 0, T_R > 0, r > 0");
  PackTradeoff out;
  out.leading = (1 + r) * T_R * lambda;
  out.exponent = (1 + 1.0 / N_trips) / (2 + 1.0 / N_trips);
  out.n = out.leading + std::pow(lambda, out.exponent);
  return out;
}

struct SwapVsCharge {
  ScalingTerm fleet_swap;
  ScalingTerm batteries_swap;
  ScalingTerm fleet_charge;
  ScalingTerm batteries_charge;
};

inline SwapVsCharge swap_vs_charge(double lambda, double T_R, double r, double gamma, int N_trips) {
  detail::require(lambda >= 0 && T_R > 0 && r > 0, "swap_vs_charge: need lambda >= 0, T_R > 0, r > 0");
  detail::require(gamma >= 1.0 / 3 - 1e-12 && gamma < achievable_gamma_cap(N_trips),
                  "swap_vs_charge: gamma must be in [1/3, 1/(2+1/N))");
  SwapVsCharge out;
  out.fleet_swap = {T_R * lambda, 2.0 / 3, 1};
  out.batteries_swap = {(1 + r) * T_R * lambda, 2.0 / 3, 1};
  out.fleet_charge = {(1 + r) * T_R * lambda, 1 - gamma, 1};
  out.batteries_charge = out.fleet_charge;
  return out;
}

// ---- peaks and valleys ----

enum class VaryingCase { I = 1, II = 2, III = 3 };

inline std::string to_string(VaryingCase c) {
  switch (c) {
    case VaryingCase::I: return "I";
    case VaryingCase::II: return "II";
    case VaryingCase::III: return "III";
  }
  return "?";
}

struct CaseThresholds {
  double I_II = 0;    // (T1 + T2)/(T1 + c T2)
  double II_III = 0;  // (1 + T2/T1)/((1 + c T2/T1)(1 - r T2/T1)), unclipped
};

inline CaseThresholds case_thresholds(double c, double r, double T2_over_T1) {
  detail::require(c >= 1, "peak multiplier c must be at least 1");
  detail::require(r > 0 && T2_over_T1 >= 0, "need r > 0 and T2/T1 >= 0");
  if (!(r * T2_over_T1 < 1))
    throw ValidationError("r T2/T1 = " + std::to_string(r * T2_over_T1) +
                          " is not below 1; only the lower two cases exist there and that regime is unsupported");
  const double k = T2_over_T1;
  return {(1 + k) / (1 + c * k), (1 + k) / ((1 + c * k) * (1 - r * k))};
}

inline CaseThresholds case_thresholds(const DemandProfile& prof, double r) {
  prof.validate();
  return case_thresholds(prof.peak_multiplier, r, prof.peak_length / prof.valley_length);
}

// Threshold level above which the fleet can stop charging during peaks, clipped to (0, 1].
inline double phase_boundary(double c, double r, double T2_over_T1) {
  return std::min(1.0, case_thresholds(c, r, T2_over_T1).II_III);
}

// Values on a threshold go to the lower case.
inline VaryingCase varying_case(double alpha, const DemandProfile& prof, double r) {
  detail::require(alpha > 0 && alpha < 1, "varying_case: alpha must be in (0, 1)");
  const CaseThresholds t = case_thresholds(prof, r);
  if (alpha <= t.I_II) return VaryingCase::I;
  if (alpha <= t.II_III) return VaryingCase::II;
  return VaryingCase::III;
}

struct Interval {
  double lo = 0;
  double hi = 0;
  bool contains(double x, double tol = 1e-12) const { return x >= lo - tol && x <= hi + tol; }
};

// Legal c_alpha values for the case containing alpha. The upper end is clipped at 0 when the
// stated endpoint is negative (small T2 or large T_R). Case I has no dial: [0, 0].
inline Interval c_alpha_interval(double alpha, const DemandProfile& prof, double r, double T_R) {
  const VaryingCase vc = varying_case(alpha, prof, r);
  const double T1 = prof.valley_length, T2 = prof.peak_length, c = prof.peak_multiplier;
  const double edge = c * T_R * (1 + T2 / T1) / (T1 + c * T2);
  double upper = 0;
  if (vc == VaryingCase::II) upper = alpha - (T1 + T2 - c * T_R * (1 + T2 / T1)) / (T1 + c * T2);
  if (vc == VaryingCase::III) upper = alpha * r * T2 / T1 - edge;
  return {0.0, std::max(0.0, upper)};
}

struct BoundResult {
  double n_lb = 0;            // with the edge term c T_R^2 lambda / T2
  double n_lb_no_edge = 0;    // the planning form, edge term dropped
  double m_lb = 0;
  double edge_term = 0;
  double c_alpha = 0;
  VaryingCase case_id = VaryingCase::I;
  double lambda_avg = 0;
};

inline BoundResult varying_bounds(double alpha, const DemandProfile& prof, double r, double T_R, double c_alpha) {
  detail::require(T_R > 0, "varying_bounds: T_R must be positive");
  const VaryingCase vc = varying_case(alpha, prof, r);
  const double T1 = prof.valley_length, T2 = prof.peak_length, c = prof.peak_multiplier;
  const double lam = prof.base_rate, lavg = prof.lambda_avg();
  BoundResult b;
  b.case_id = vc;
  b.lambda_avg = lavg;
  if (vc == VaryingCase::I) {
    const FirstOrderBounds fo = first_order_bounds(alpha, lavg, T_R, r);
    b.n_lb = b.n_lb_no_edge = fo.n_lb;
    b.m_lb = fo.m_lb;
    return b;
  }
  const Interval iv = c_alpha_interval(alpha, prof, r, T_R);
  if (!iv.contains(c_alpha))
    throw ValidationError("varying_bounds: c_alpha = " + std::to_string(c_alpha) + " outside [" +
                          std::to_string(iv.lo) + ", " + std::to_string(iv.hi) + "] for case " + to_string(vc));
  b.c_alpha = c_alpha;
  b.edge_term = c * T_R * T_R * lam / T2;
  const double base = (1 + r) * alpha * lavg * T_R + T1 / T2 * (alpha - (T1 + T2) / (T1 + c * T2) - c_alpha) * lavg * T_R;
  b.n_lb_no_edge = std::max(0.0, base);
  b.n_lb = std::max(0.0, base - b.edge_term);
  b.m_lb = r * alpha * lavg * T_R + c_alpha * lavg * T_R;
  return b;
}

// The fleet/charger tradeoff: c_alpha swept over its interval.
inline std::vector<BoundResult> varying_tradeoff(double alpha, const DemandProfile& prof, double r, double T_R,
                                                 int points) {
  detail::require(points >= 2, "varying_tradeoff: need at least 2 points");
  const Interval iv = c_alpha_interval(alpha, prof, r, T_R);
  std::vector<BoundResult> out;
  for (int i = 0; i < points; ++i) {
    const double ca = iv.lo + (iv.hi - iv.lo) * i / (points - 1);
    out.push_back(varying_bounds(alpha, prof, r, T_R, ca));
  }
  return out;
}

// Service levels overall, in valleys and in peaks.
struct ServiceStats {
  double alpha_eff = 0;
  double alpha_1 = 0;
  double alpha_2 = 0;
};

struct RelationCheck {
  std::string name;
  double lhs = 0;
  double rhs = 0;
  double slack = 0;  // relative; >= -tol passes (|slack| <= tol for the balance)
  bool holds = false;
};

// The four relations every policy satisfies under peaks and valleys. `tol` is relative slack.
inline std::array<RelationCheck, 4> peak_valley_relations_check(const ServiceStats& s, const DemandProfile& prof, double r,
                                                           double T_R, double n, double m, double tol) {
  prof.validate();
  detail::require(tol >= 0, "peak_valley_relations_check: tol must be non-negative");
  const double T1 = prof.valley_length, T2 = prof.peak_length, c = prof.peak_multiplier;
  const double lam = prof.base_rate, lavg = prof.lambda_avg();
  auto rel = [](double a, double b) { return (a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); };
  std::array<RelationCheck, 4> out;

  const double balance = (s.alpha_1 * lam * T1 + s.alpha_2 * c * lam * T2) / (T1 + T2);
  out[0] = {"service_balance", s.alpha_eff * lavg, balance, 0, false};
  out[0].slack = rel(out[0].lhs, out[0].rhs);
  out[0].holds = std::abs(out[0].slack) <= tol;

  out[1] = {"peak_fleet", n, s.alpha_2 * c * lam * T_R, 0, false};
  out[1].slack = rel(out[1].lhs, out[1].rhs);
  out[1].holds = out[1].slack >= -tol;

  const FirstOrderBounds fo = first_order_bounds(std::clamp(s.alpha_eff, 0.0, 1.0), lavg, T_R, r);
  out[2] = {"first_order", std::min(n - fo.n_lb, m - fo.m_lb), 0, 0, false};
  out[2].slack = std::min(rel(n, fo.n_lb), rel(m, fo.m_lb));
  out[2].holds = out[2].slack >= -tol;

  const double valley = T1 / (T1 + T2) * std::min(m, n - T_R * lam * s.alpha_1 + T_R * T_R * lam / T1);
  const double peak = T2 > 0 ? T2 / (T1 + T2) * std::min(m, n - T_R * c * lam * s.alpha_2 + T_R * T_R * lam / T2) : 0.0;
  out[3] = {"energy", r * s.alpha_eff * lavg * T_R, valley + peak, 0, false};
  out[3].slack = rel(out[3].rhs, out[3].lhs);
  out[3].holds = out[3].slack >= -tol;
  return out;
}

}  // namespace evfleet
