#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "model.hpp"

namespace evfleet {

struct FluidParams {
  double lambda_tilde = 0;
  double n = 0;
  double m = 0;
  double A = 0;
  int d = 2;
  double T_R = 0;
  double T_B = 0;
  double r = 0;
  double tau1 = 0;
  double tau2 = 0;
  int N_trips = 0;
  // Only needed for the equilibrium bound checks and the hat fixed point.
  double gamma = 0;
  double kappa1 = 0;

  double busy_cap() const { return T_R * lambda_tilde; }

  void validate() const {
    using detail::require;
    require(lambda_tilde >= 0, "fluid: lambda_tilde must be non-negative");
    require(n > 0 && m > 0, "fluid: n and m must be positive");
    require(A >= 0 && A < m, "fluid: need 0 <= A < m");
    require(d >= 1, "fluid: d must be at least 1");
    require(T_R > 0 && T_B >= T_R, "fluid: need 0 < T_R <= T_B");
    require(r > 0, "fluid: r must be positive");
    require(tau1 >= 0 && tau2 >= 0, "fluid: tau constants must be non-negative");
    require(N_trips >= 1, "fluid: N_trips must be at least 1");
  }

  static FluidParams from_plan(const CapacityPlan& plan, const SystemParams& p) {
    const DerivedQuantities q = derive_quantities(p, plan.inputs());
    FluidParams f;
    f.lambda_tilde = plan.lambda_tilde;
    f.n = double(plan.n);
    f.m = double(plan.m);
    f.A = double(plan.A);
    f.d = plan.d;
    f.T_R = p.trip_time_min;
    f.T_B = q.T_B;
    f.r = q.r;
    f.tau1 = p.tau1_min;
    f.tau2 = p.tau2_min;
    f.N_trips = q.N_trips;
    f.gamma = plan.gamma;
    f.kappa1 = plan.kappa1;
    return f;
  }
};

// Index j = 0..N_trips. XB[0] is carried for symmetry and stays 0.
// Both vectors are cumulative in j and XC.back() + XB.back() = n.
struct FluidState {
  std::vector<double> XC;
  std::vector<double> XB;

  static FluidState zeros(int N_trips) {
    return {std::vector<double>(std::size_t(N_trips) + 1, 0.0), std::vector<double>(std::size_t(N_trips) + 1, 0.0)};
  }
  // Every vehicle idle with a full pack.
  static FluidState all_full(const FluidParams& p) {
    FluidState s = zeros(p.N_trips);
    s.XC.back() = p.n;
    return s;
  }
  // Random sorted state with the busy share drawn in [0, busy_max) and random level masses.
  template <class Rng>
  static FluidState random_feasible(const FluidParams& p, Rng& rng, double busy_max = 0.95) {
    FluidState s = zeros(p.N_trips);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    std::exponential_distribution<double> E(1.0);
    const double busy = std::min(U(rng) * busy_max * p.n, p.n - p.d - 1.0);
    auto fill = [&](std::vector<double>& v, std::size_t first, double total) {
      std::vector<double> w(v.size(), 0.0);
      double sum = 0;
      for (std::size_t j = first; j < v.size(); ++j) sum += (w[j] = E(rng));
      double acc = 0;
      for (std::size_t j = first; j < v.size(); ++j) v[j] = total * ((acc += w[j]) / sum);
      v.back() = total;
    };
    fill(s.XC, 0, p.n - busy);
    fill(s.XB, 1, busy);
    return s;
  }
};

// How the dispatch probability treats XC_j < d. ZeroBelowD clamps p_j to 0.
// Enumeration continues the product with max(0, XC_j - i) factors, which matches
// sampling without replacement at integer counts (p_j = 1 when fewer than d
// vehicles sit at or below level j) and is continuous in XC_j.
enum class LowCountRule { ZeroBelowD, Enumeration };

inline double p_j(double XC_j, double XC_top, int d, LowCountRule rule = LowCountRule::ZeroBelowD) {
  if (XC_top < d) throw ModelError("p_j: XC_top (" + std::to_string(XC_top) + ") below d (" + std::to_string(d) + ")");
  detail::require(XC_j >= 0 && XC_j <= XC_top * (1 + 1e-12), "p_j: need 0 <= XC_j <= XC_top");
  XC_j = std::min(XC_j, XC_top);
  if (XC_j < d && rule == LowCountRule::ZeroBelowD) return 0.0;
  double prod = 1.0;
  for (int i = 0; i < d; ++i) {
    const double num = std::max(0.0, XC_j - i);
    if (num == 0.0) return 1.0;
    prod *= num / (XC_top - i);
  }
  return std::clamp(1.0 - prod, 0.0, 1.0);
}

struct PBounds {
  double lower = 0;
  double upper = 0;
};

// With- and without-replacement style bounds; both 0 when XC_j < d.
inline PBounds p_bounds(double XC_j, double XC_top, int d) {
  if (XC_top < d) throw ModelError("p_bounds: XC_top below d");
  detail::require(XC_j >= 0 && XC_j <= XC_top * (1 + 1e-12), "p_bounds: need 0 <= XC_j <= XC_top");
  if (XC_j < d) return {0.0, 0.0};
  const double ratio = XC_j / XC_top;
  const double lower = 1.0 - std::pow(ratio, d);
  const double shrink = (1.0 - d / XC_j) / (1.0 - d / XC_top);
  double upper = 1.0 - std::pow(ratio, d) * std::pow(shrink, d);
  if (XC_j >= XC_top) upper = 0.0;  // shrink is 0/0 at the top
  return {std::clamp(lower, 0.0, 1.0), std::clamp(upper, 0.0, 1.0)};
}

inline double mu_from(double XB_top, double XC_below_top, const FluidParams& p) {
  const double free_vehicles = p.n - XB_top;
  const double free_posts = p.m - std::min(XC_below_top, p.A);
  if (!(free_vehicles > 0) || !(free_posts > 0))
    throw ModelError("mu: non-positive denominator (n - XB_N=" + std::to_string(free_vehicles) +
                     ", m - min(XC_{N-1}, A)=" + std::to_string(free_posts) + ")");
  return 1.0 / (p.tau1 * std::sqrt(p.d / free_vehicles) + p.T_R + p.tau2 / std::sqrt(free_posts));
}

inline double mu(const FluidState& s, const FluidParams& p) {
  const std::size_t N = std::size_t(p.N_trips);
  return mu_from(s.XB[N], N >= 1 ? s.XC[N - 1] : 0.0, p);
}

inline void check_shape(const FluidState& s, const FluidParams& p) {
  const std::size_t len = std::size_t(p.N_trips) + 1;
  detail::require(s.XC.size() == len && s.XB.size() == len, "fluid state length must be N_trips + 1");
}

// How the admission indicator 1{XB_N <= T_R lambda_tilde} enters the right-hand side.
//  Indicator: the hard switch. At the cap the field is discontinuous and fixed-step
//  schemes chatter around XB_N = T_R lambda_tilde.
//  Sliding: admitted fraction clamp((XB_N mu + k (cap - XB_N)) / (lambda_tilde p0), 0, 1)
//  with gain k. Its rest points are exactly the Filippov rest points of the hard switch
//  (interior ones with I = 1, or sliding ones with XB_N = cap and I in [0, 1]).
enum class AdmissionRule { Indicator, Sliding };

struct RhsOptions {
  LowCountRule rule = LowCountRule::Enumeration;
  AdmissionRule admission = AdmissionRule::Sliding;
  double gain = 0;             // 0 selects 50 / T_R
  double forced_indicator = -1;  // in [0, 1] overrides the admission rule
};

inline double admission_gain(const FluidParams& p, const RhsOptions& o) {
  return o.gain > 0 ? o.gain : 50.0 / p.T_R;
}

// Admitted fraction I at state s given p0 and mu.
inline double admitted_fraction(const FluidState& s, const FluidParams& p, double p0, double u,
                                const RhsOptions& o = {}) {
  if (o.forced_indicator >= 0) return std::min(1.0, o.forced_indicator);
  const double XB = s.XB[std::size_t(p.N_trips)];
  if (o.admission == AdmissionRule::Indicator || p.lambda_tilde * p0 <= 0) return XB <= p.busy_cap() ? 1.0 : 0.0;
  const double want = XB * u + admission_gain(p, o) * (p.busy_cap() - XB);
  return std::clamp(want / (p.lambda_tilde * p0), 0.0, 1.0);
}

namespace detail {

// Writes the right-hand side into ds (same shape as s); pj is scratch of length N + 1.
inline void ode_rhs_into(const FluidState& s, const FluidParams& p, const RhsOptions& o, FluidState& ds,
                         std::vector<double>& pj) {
  const std::size_t N = std::size_t(p.N_trips);
  const double top = s.XC[N];
  const double u = mu(s, p);
  const double charge_rate = 1.0 / (p.r * p.T_B);
  pj.assign(N + 1, 0.0);
  for (std::size_t j = 0; j < N; ++j) pj[j] = p_j(std::max(0.0, s.XC[j]), top, p.d, o.rule);
  const double I = admitted_fraction(s, p, pj[0], u, o);
  auto clip = [&](std::size_t j) { return std::min(s.XC[j], p.A); };

  const double admitted = p.lambda_tilde * I;
  ds.XB[0] = 0;
  for (std::size_t j = 1; j <= N; ++j) ds.XB[j] = admitted * (pj[0] - pj[j]) - s.XB[j] * u;
  if (N == 0) {
    ds.XC[0] = 0;
    return;
  }
  ds.XC[0] = -clip(0) * charge_rate + s.XB[1] * u;
  for (std::size_t j = 1; j < N; ++j)
    ds.XC[j] = -admitted * (pj[0] - pj[j]) - (clip(j) - clip(j - 1)) * charge_rate + s.XB[j + 1] * u;
  ds.XC[N] = -admitted * pj[0] + s.XB[N] * u;
}

}  // namespace detail

inline FluidState ode_rhs(const FluidState& s, const FluidParams& p, const RhsOptions& o = {}) {
  check_shape(s, p);
  FluidState ds = FluidState::zeros(p.N_trips);
  std::vector<double> pj;
  detail::ode_rhs_into(s, p, o, ds, pj);
  return ds;
}

inline double max_abs(const FluidState& s) {
  double v = 0;
  for (double x : s.XC) v = std::max(v, std::abs(x));
  for (double x : s.XB) v = std::max(v, std::abs(x));
  return v;
}

inline double max_abs_diff(const FluidState& a, const FluidState& b) {
  double v = 0;
  for (std::size_t i = 0; i < a.XC.size(); ++i) v = std::max(v, std::abs(a.XC[i] - b.XC[i]));
  for (std::size_t i = 0; i < a.XB.size(); ++i) v = std::max(v, std::abs(a.XB[i] - b.XB[i]));
  return v;
}

struct Trajectory {
  std::vector<double> times;
  std::vector<FluidState> states;  // every `record_every` steps, plus the last
  FluidState final_state;
  double final_time = 0;
  double final_rhs_norm = 0;
  long steps = 0;
  bool converged = false;
  bool diverged = false;
  long offending_step = -1;
  std::string failure;
};

struct IntegrateOptions {
  double dt = 0;  // 0 selects T_R / 200
  long record_every = 0;  // 0 records only the endpoints
  bool stop_when_converged = true;
  double converge_tol = 1e-9;  // stop once max |rhs| < converge_tol * n
  RhsOptions rhs;
};

namespace detail {

inline void axpy(FluidState& out, const FluidState& base, const FluidState& k, double h) {
  for (std::size_t i = 0; i < base.XC.size(); ++i) out.XC[i] = base.XC[i] + h * k.XC[i];
  for (std::size_t i = 0; i < base.XB.size(); ++i) out.XB[i] = base.XB[i] + h * k.XB[i];
}

// Clamps tiny negatives and tiny order violations; returns a message for anything larger.
// Counts below 1e-150 are flushed to 0 so that emptied levels do not go subnormal.
inline std::string tidy(FluidState& s, double tol) {
  for (auto* v : {&s.XC, &s.XB}) {
    for (double& x : *v) {
      if (x < 1e-150) {
        if (x < -tol) return "negative count " + std::to_string(x);
        x = 0;
      }
    }
  }
  for (std::size_t j = 1; j < s.XC.size(); ++j) {
    if (s.XC[j] < s.XC[j - 1]) {
      if (s.XC[j - 1] - s.XC[j] > tol) return "XC not sorted at level " + std::to_string(j);
      s.XC[j] = s.XC[j - 1];
    }
  }
  for (std::size_t j = 2; j < s.XB.size(); ++j) {
    if (s.XB[j] < s.XB[j - 1]) {
      if (s.XB[j - 1] - s.XB[j] > tol) return "XB not sorted at level " + std::to_string(j);
      s.XB[j] = s.XB[j - 1];
    }
  }
  return {};
}

}  // namespace detail

// Classic RK4 with a fixed step. Under AdmissionRule::Indicator the indicator is frozen at
// its value at the start of each step.
inline Trajectory integrate(const FluidState& state0, const FluidParams& p, double t_end,
                            const IntegrateOptions& opt = {}) {
  p.validate();
  check_shape(state0, p);
  const double dt = opt.dt > 0 ? opt.dt : p.T_R / 200.0;
  if (dt > p.T_R / 100.0 * (1 + 1e-12)) throw ValidationError("integrate: dt must not exceed T_R/100");
  const double tol = 1e-10 * p.n;
  const double conv = opt.converge_tol * p.n;

  Trajectory tr;
  FluidState s = state0;
  FluidState k1 = s, k2 = s, k3 = s, k4 = s, tmp = s;
  std::vector<double> scratch;
  auto record = [&](double t) {
    tr.times.push_back(t);
    tr.states.push_back(s);
  };
  record(0.0);
  const long total = long(std::ceil(t_end / dt - 1e-9));
  double t = 0;
  for (long step = 0; step < total; ++step) {
    try {
      RhsOptions ro = opt.rhs;
      if (ro.admission == AdmissionRule::Indicator && ro.forced_indicator < 0)
        ro.forced_indicator = s.XB[std::size_t(p.N_trips)] <= p.busy_cap() ? 1.0 : 0.0;
      detail::ode_rhs_into(s, p, ro, k1, scratch);
      if (opt.stop_when_converged && max_abs(k1) < conv) {
        tr.converged = true;
        tr.final_rhs_norm = max_abs(k1);
        break;
      }
      detail::axpy(tmp, s, k1, dt / 2);
      detail::ode_rhs_into(tmp, p, ro, k2, scratch);
      detail::axpy(tmp, s, k2, dt / 2);
      detail::ode_rhs_into(tmp, p, ro, k3, scratch);
      detail::axpy(tmp, s, k3, dt);
      detail::ode_rhs_into(tmp, p, ro, k4, scratch);
    } catch (const ModelError& e) {
      tr.diverged = true;
      tr.offending_step = step;
      tr.failure = e.what();
      break;
    }
    for (std::size_t i = 0; i < s.XC.size(); ++i)
      s.XC[i] += dt / 6 * (k1.XC[i] + 2 * k2.XC[i] + 2 * k3.XC[i] + k4.XC[i]);
    for (std::size_t i = 0; i < s.XB.size(); ++i)
      s.XB[i] += dt / 6 * (k1.XB[i] + 2 * k2.XB[i] + 2 * k3.XB[i] + k4.XB[i]);
    t = double(step + 1) * dt;
    tr.steps = step + 1;
    if (const std::string msg = detail::tidy(s, tol); !msg.empty()) {
      tr.diverged = true;
      tr.offending_step = step;
      tr.failure = msg;
      break;
    }
    if (opt.record_every > 0 && (step + 1) % opt.record_every == 0) record(t);
  }
  if (tr.times.back() != t) record(t);
  tr.final_state = s;
  tr.final_time = t;
  if (!tr.diverged && !tr.converged) {
    tr.final_rhs_norm = max_abs(ode_rhs(s, p, opt.rhs));
    tr.converged = tr.final_rhs_norm < conv;
  }
  return tr;
}

// Which closure of the stationarity equations to solve.
//  Stationary: the exact rest point of ode_rhs, X~C_{N-1} = r T_B mu XB_N.
//  UnitBusyClosure: the same chain with mu T_B = 1 in the last relation, i.e.
//  XC_N + XC_{N-1}/r = n and p0 = (n - XC_N)/(T_B lambda_tilde).
enum class EquilibriumForm { Stationary, UnitBusyClosure };

struct EquilibriumReport {
  FluidState state;
  double p0 = 0;
  double mu = 0;
  double XC_top = 0;
  double XB_top = 0;
  // Admitted fraction at the rest point: 1 when interior, below 1 when sliding on the cap.
  double admitted_fraction = 1;
  // Second-order bounds evaluated at the solution (need gamma and kappa1).
  double XC_top_bound = 0;
  double XB_top_bound = 0;
  bool XC_top_bound_holds = false;
  bool XB_top_bound_holds = false;
  double service_rate = 0;     // lambda_tilde * I * p0
  double service_rate_lb = 0;  // lambda_tilde - kappa4 lambda_tilde^(1-gamma)
  double residual_norm = 0;    // max |ode_rhs| at the solution (sliding admission)
  bool charging_cap_binding = false;   // XC_{N-1} > A
  bool admission_cap_binding = false;  // rest point slides on XB_N = T_R lambda_tilde
  int outer_iterations = 0;
  bool residual_monotone = true;  // closing mismatch monotone across every bisection probe
  bool chain_monotone = true;     // every XC_j monotone in the bisection variable
};

namespace detail {

inline double mu_for_candidate(double x, const FluidParams& p, EquilibriumForm form) {
  if (form == EquilibriumForm::UnitBusyClosure) return 1.0 / p.T_B;
  // 1/mu = T_R + tau1 sqrt(d/x) + tau2 / sqrt(m - min(r T_B mu (n - x), A)); increasing in mu on the right.
  const double a = p.T_R + p.tau1 * std::sqrt(p.d / x);
  const double c = p.r * p.T_B * (p.n - x);
  auto h = [&](double u) { return u - 1.0 / (a + p.tau2 / std::sqrt(p.m - std::min(c * u, p.A))); };
  double lo = 1.0 / (a + p.tau2 / std::sqrt(p.m - p.A)), hi = 1.0 / a;
  if (h(lo) >= 0) return lo;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (h(mid) < 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Stationary levels for a candidate (XC_N = x, admitted rate lam), walked from the top:
// X~C_{N-1} = r T_B mu XB_N, then X~C_{j-1} = r T_B lam (p0 - p_j). The closing condition
// is p_0(XC_0) = p0; `mismatch` is p_0(XC_0) - p0. Walking down is well conditioned, whereas
// walking up from XC_0 has to resolve doubly exponentially small counts at the low levels.
struct Chain {
  std::vector<double> XC;
  double x = 0;
  double lam = 0;
  double p0 = 0;
  double mu = 0;
  double mismatch = 0;
  bool charging_cap_exceeded = false;
};

inline Chain down_chain(double x, double lam, const FluidParams& p, EquilibriumForm form) {
  const std::size_t N = std::size_t(p.N_trips);
  Chain c;
  c.x = x;
  c.lam = lam;
  c.mu = mu_for_candidate(x, p, form);
  c.p0 = (p.n - x) * c.mu / lam;
  c.XC.assign(N + 1, x);
  const double scale = p.r * p.T_B * lam;
  double level = p.r * p.T_B * c.mu * (p.n - x);
  for (std::size_t j = N; j-- > 0;) {
    if (level > p.A * (1 + 1e-12)) c.charging_cap_exceeded = true;
    level = std::clamp(level, 0.0, c.XC[j + 1]);
    c.XC[j] = level;
    if (j == 0) break;
    level = scale * (c.p0 - p_j(level, x, p.d, LowCountRule::Enumeration));
  }
  c.mismatch = p_j(c.XC[0], x, p.d, LowCountRule::Enumeration) - c.p0;
  return c;
}

// Checks that every level lies between the two bracketing chains.
inline bool between(const Chain& a, const Chain& m, const Chain& b, double tol) {
  for (std::size_t j = 0; j < m.XC.size(); ++j) {
    const double lo = std::min(a.XC[j], b.XC[j]), hi = std::max(a.XC[j], b.XC[j]);
    if (m.XC[j] < lo - tol || m.XC[j] > hi + tol) return false;
  }
  return true;
}

}  // namespace detail

// Rest point of ode_rhs (sliding admission; Filippov rest point of the hard indicator).
// Two regimes:
//  sliding: XB_N = T_R lambda_tilde and the admitted rate lam <= lambda_tilde is the unknown;
//  interior: every arrival admitted, XB_N < T_R lambda_tilde and XC_N is the unknown.
// The sliding branch is tried first; when even lam = lambda_tilde leaves p_0(XC_0) below p0
// the rest point is interior. Each branch is a monotone bisection on the closing mismatch.
inline EquilibriumReport equilibrium(const FluidParams& p, EquilibriumForm form = EquilibriumForm::Stationary) {
  p.validate();
  detail::require(p.lambda_tilde > 0, "equilibrium: lambda_tilde must be positive");
  detail::require(p.N_trips >= 1, "equilibrium: N_trips must be at least 1");
  const double tol = 1e-10 * p.n;
  const std::size_t N = std::size_t(p.N_trips);
  const double cap = p.busy_cap();
  const double lt = p.lambda_tilde;

  EquilibriumReport rep;
  auto bisect = [&](auto make, double lo, double hi, double width) {
    detail::Chain clo = make(lo), chi = make(hi);
    while (hi - lo > width && rep.outer_iterations < 2000) {
      const double mid = 0.5 * (lo + hi);
      detail::Chain cm = make(mid);
      const double mlo = std::min(clo.mismatch, chi.mismatch), mhi = std::max(clo.mismatch, chi.mismatch);
      if (cm.mismatch < mlo - 1e-12 || cm.mismatch > mhi + 1e-12) rep.residual_monotone = false;
      if (!detail::between(clo, cm, chi, tol)) rep.chain_monotone = false;
      if (cm.mismatch < 0) {
        lo = mid;
        clo = std::move(cm);
      } else {
        hi = mid;
        chi = std::move(cm);
      }
      ++rep.outer_iterations;
    }
    return std::abs(clo.mismatch) <= std::abs(chi.mismatch) ? clo : chi;
  };

  const double x_slide = p.n - cap;
  if (!(x_slide > p.d)) throw ModelError("equilibrium: n - T_R lambda_tilde must exceed d");
  detail::Chain sol;
  bool found = false;
  const double mu_slide = detail::mu_for_candidate(x_slide, p, form);
  const double lam_min = cap * mu_slide;  // p0 = 1
  if (lam_min <= lt) {
    auto at = [&](double lam) { return detail::down_chain(x_slide, lam, p, form); };
    detail::Chain c_min = at(lam_min), c_max = at(lt);
    if (c_min.mismatch >= 0) {
      sol = c_min;  // every dispatch succeeds; low levels are empty
      found = true;
    } else if (c_max.mismatch >= 0) {
      sol = bisect(at, lam_min, lt, 1e-15 * lt);
      found = true;
    }
    if (found) rep.admission_cap_binding = true;
  }
  if (!found) {
    auto at = [&](double x) { return detail::down_chain(x, lt, p, form); };
    // Lower end: the busy cap, or p0 = 1 if that comes first.
    double lo = x_slide;
    if (lam_min > lt) {
      double a = x_slide, b = p.n;
      for (int it = 0; it < 200 && b - a > tol; ++it) {
        const double mid = 0.5 * (a + b);
        ((p.n - mid) * detail::mu_for_candidate(mid, p, form) > lt ? a : b) = mid;
      }
      lo = b;
    }
    const double hi = p.n * (1 - 1e-12);
    detail::Chain c_lo = at(lo), c_hi = at(hi);
    if (c_lo.mismatch >= 0) {
      sol = c_lo;
    } else if (c_hi.mismatch > 0) {
      sol = bisect(at, lo, hi, tol);
    } else {
      throw ModelError("equilibrium: closing mismatch does not change sign on [" + std::to_string(lo) + ", " +
                       std::to_string(hi) + "] (mismatches " + std::to_string(c_lo.mismatch) + ", " +
                       std::to_string(c_hi.mismatch) + "); parameters are outside the interior regime");
    }
  }
  if (sol.charging_cap_exceeded)
    throw ModelError("equilibrium: stationary charging demand exceeds the charging cap A");

  const double x = sol.x;
  rep.state = FluidState::zeros(p.N_trips);
  rep.state.XC = sol.XC;
  rep.p0 = std::min(sol.p0, 1.0);
  for (std::size_t j = 1; j <= N; ++j) {
    const double pj = j == N ? 0.0 : p_j(rep.state.XC[j], x, p.d, LowCountRule::Enumeration);
    rep.state.XB[j] = sol.lam * (rep.p0 - pj) / sol.mu;
  }
  rep.mu = mu(rep.state, p);
  rep.XC_top = x;
  rep.XB_top = rep.state.XB[N];
  rep.admitted_fraction = sol.lam / lt;
  rep.service_rate = sol.lam * rep.p0;
  rep.charging_cap_binding = rep.state.XC[N - 1] > p.A;
  rep.residual_norm = max_abs(ode_rhs(rep.state, p));

  if (p.gamma > 0) {
    const double g = p.gamma;
    const double second = std::pow(lt, 1 - g);
    rep.XC_top_bound = p.r * p.T_R * lt + (p.r * p.T_R * N / g + 2 * p.kappa1) * second;
    rep.XB_top_bound = p.T_R * lt - (p.r * p.T_R * N / g + p.kappa1) * second;
    rep.XC_top_bound_holds = rep.XC_top <= rep.XC_top_bound;
    rep.XB_top_bound_holds = rep.XB_top >= rep.XB_top_bound;
    const double k4 = p.r * N / g + (p.kappa1 + 2 * p.tau2) / p.T_R;
    rep.service_rate_lb = lt - k4 * second;
  }
  return rep;
}

// Root of 1 - (n-x)/(T_B lt) = (r(n-x)/x)^(d^N) (r T_B / (r T_R + kappa1 lt^-gamma))^((d^N - d)/(d - 1)),
// compared in logs after dividing both exponents by d^N.
inline double hat_fixed_point(const FluidParams& p) {
  p.validate();
  detail::require(p.lambda_tilde > 0, "hat_fixed_point: lambda_tilde must be positive");
  const double lt = p.lambda_tilde;
  const double D = std::pow(double(p.d), double(p.N_trips));
  const double E = p.d == 1 ? double(p.N_trips - 1) : (D - p.d) / (p.d - 1.0);
  const double log_ratio = std::log(p.r * p.T_B / (p.r * p.T_R + p.kappa1 * std::pow(lt, -p.gamma)));
  // g(x) = log(RHS)/D - log(LHS)/D, decreasing in x.
  auto g = [&](double x) {
    const double lhs = 1.0 - (p.n - x) / (p.T_B * lt);
    return std::log(p.r * (p.n - x) / x) + (E / D) * log_ratio - std::log(lhs) / D;
  };
  double lo = std::max(0.0, p.n - p.T_B * lt), hi = p.n;
  // Open interval: nudge inside.
  const double span = hi - lo;
  lo += span * 1e-15 + std::numeric_limits<double>::min();
  hi -= span * 1e-15;
  for (int it = 0; it < 400 && hi - lo > 1e-12 * p.n; ++it) {
    const double mid = 0.5 * (lo + hi);
    (g(mid) > 0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// Policy-independent aggregate dynamics: customers in system q, vehicles charging c_C,
// aggregate stored energy s (kWh).
struct GenericControls {
  double lambda_eff = 0;            // admitted arrivals per minute
  double pickup_time = 0;           // T_P, minutes
  double reach_fraction = 0;        // p_dc
  double driving_to_charger = 0;    // c_D
  double drive_to_charger_time = 0; // T_DC, minutes
  double charge_time = 0;           // T_C, minutes
  double idle = 0;                  // c_I
};

struct GenericParams {
  double n = 0;
  double m = 0;
  double T_R = 0;
  double tau1 = 0;
  double tau2 = 0;
  double pack_kwh = 0;
  double charge_rate_kw = 0;
  double discharge_rate_kw = 0;
};

struct GenericDerivatives {
  double dq = 0;
  double dcC = 0;
  double ds = 0;  // kWh per minute
};

inline GenericDerivatives generic_ode_rhs(double q, double cC, double /*s*/, const GenericControls& c,
                                          const GenericParams& p) {
  using detail::require;
  require(q >= 0 && q < p.n, "generic_ode_rhs: need 0 <= q < n");
  require(cC >= 0 && cC < p.m && cC <= p.n, "generic_ode_rhs: need 0 <= c_C < m and c_C <= n");
  require(c.pickup_time >= p.tau1 / std::sqrt(p.n - q) * (1 - 1e-12),
          "generic_ode_rhs: pickup_time below tau1/sqrt(n - q)");
  require(c.drive_to_charger_time >= p.tau2 / std::sqrt(p.m - cC) * (1 - 1e-12) && c.drive_to_charger_time > 0,
          "generic_ode_rhs: drive_to_charger_time below tau2/sqrt(m - c_C)");
  require(c.charge_time > 0 && c.charge_time <= p.pack_kwh / p.charge_rate_kw * 60.0 * (1 + 1e-12),
          "generic_ode_rhs: charge_time above pack/r_c");
  require(c.reach_fraction >= 0 && c.reach_fraction <= 1, "generic_ode_rhs: p_dc outside [0, 1]");
  GenericDerivatives out;
  out.dq = c.lambda_eff - q / (p.T_R + c.pickup_time);
  out.dcC = c.reach_fraction * c.driving_to_charger / c.drive_to_charger_time - cC / c.charge_time;
  out.ds = (cC * p.charge_rate_kw - (p.n - cC - c.idle) * p.discharge_rate_kw) / 60.0;
  return out;
}

// The three equilibrium relations of the generic dynamics, with their slack
// (non-negative means satisfied; the balance is an equality).
struct GenericRelations {
  double littles_law_slack = 0;   // q - alpha_eff lambda (tau1/sqrt(n-q) + T_R)
  double charger_slack = 0;       // c_D/tau2 - c_C/sqrt(m - c_C) * r_c/(pack*60)
  double energy_balance = 0;      // c_C r_c - (n - c_C - c_I) r_d
};

inline GenericRelations generic_relations(double served_rate, double q, double cC, double cI, double cD,
                                          const GenericParams& p) {
  GenericRelations g;
  g.littles_law_slack = q - served_rate * (p.tau1 / std::sqrt(p.n - q) + p.T_R);
  g.charger_slack = cD / p.tau2 - cC / std::sqrt(p.m - cC) * p.charge_rate_kw / (p.pack_kwh * 60.0);
  g.energy_balance = cC * p.charge_rate_kw - (p.n - cC - cI) * p.discharge_rate_kw;
  return g;
}

}  // namespace evfleet
