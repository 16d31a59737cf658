#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bounds.hpp"
#include "error.hpp"
#include "model.hpp"
#include "random.hpp"
#include "regression.hpp"
#include "simulator.hpp"

namespace evfleet {

inline unsigned default_jobs() {
  const unsigned h = std::thread::hardware_concurrency();
  return h ? h : 1;
}

// Runs fn(i) for i in [0, count) on up to `jobs` threads. Results are stored by index, so
// the output does not depend on scheduling; the lowest-index failure is rethrown.
template <class T, class Fn>
std::vector<T> parallel_map(std::size_t count, unsigned jobs, Fn fn) {
  std::vector<T> out(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        out[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(std::max(1u, jobs), count);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

struct ExperimentOptions {
  unsigned jobs = 1;
  std::function<void(const std::string&)> progress;  // optional
  void note(const std::string& s) const {
    if (progress) progress(s);
  }
};

struct ReplicationSummary {
  std::vector<RunMetrics> runs;
  MeanStderr service;
  MeanStderr pickup;
  MeanStderr drive_to_charger;
  MeanStderr workload;
  MeanStderr fulfilled_trip_time;
};

inline ReplicationSummary summarize(std::vector<RunMetrics> runs) {
  ReplicationSummary s;
  std::vector<double> sv, pk, dc, wl, tt;
  for (const auto& r : runs) {
    sv.push_back(r.service_level);
    pk.push_back(r.avg_pickup);
    dc.push_back(r.avg_drive_to_charger);
    wl.push_back(r.workload_served);
    tt.push_back(r.mean_fulfilled_trip_time);
  }
  s.runs = std::move(runs);
  s.service = mean_stderr(sv);
  s.pickup = mean_stderr(pk);
  s.drive_to_charger = mean_stderr(dc);
  s.workload = mean_stderr(wl);
  s.fulfilled_trip_time = mean_stderr(tt);
  return s;
}

// Every config crossed with every seed, run in one pool; summaries in config order.
inline std::vector<ReplicationSummary> run_batch(const std::vector<SimConfig>& configs,
                                                 const std::vector<std::uint64_t>& seeds, unsigned jobs) {
  detail::require(!seeds.empty(), "run_batch: need at least one seed");
  for (const auto& c : configs) c.validate();
  const std::size_t S = seeds.size();
  auto runs = parallel_map<RunMetrics>(configs.size() * S, jobs, [&](std::size_t i) {
    SimConfig c = configs[i / S];
    c.seed = seeds[i % S];
    c.record_events = false;
    return run(c);
  });
  std::vector<ReplicationSummary> out;
  for (std::size_t k = 0; k < configs.size(); ++k)
    out.push_back(summarize(std::vector<RunMetrics>(runs.begin() + long(k * S), runs.begin() + long((k + 1) * S))));
  return out;
}

inline ReplicationSummary run_replications(const SimConfig& base, const std::vector<std::uint64_t>& seeds,
                                           unsigned jobs) {
  return run_batch({base}, seeds, jobs).front();
}

// ---- fleet size at a target service level ----

struct FleetPoint {
  long n = 0;
  double buffer = 0;  // n - (1+r) T~_R alpha lambda
  MeanStderr service;
  MeanStderr pickup;
  MeanStderr drive_to_charger;
};

struct FleetAtService {
  double target = 0;
  double origin = 0;  // (1+r) T~_R alpha lambda
  double n_at_target = 0;
  double buffer_at_target = 0;
  RegressionFit fit;  // service on buffer
  std::vector<FleetPoint> points;
};

inline double fleet_origin(const SystemParams& p, double alpha, double lambda, double T_R_tilde) {
  return (1 + p.ratio()) * T_R_tilde * alpha * lambda;
}

// OLS of seed-averaged service on buffer and the buffer where the line meets the target.
inline FleetAtService fit_fleet_at_service(std::vector<FleetPoint> points, double target, double origin) {
  detail::require(points.size() >= 2, "fleet_at_service: need at least two grid points");
  std::sort(points.begin(), points.end(), [](const FleetPoint& a, const FleetPoint& b) { return a.n < b.n; });
  double lo = points.front().service.mean, hi = lo;
  std::vector<double> xs, ys;
  for (const auto& p : points) {
    lo = std::min(lo, p.service.mean);
    hi = std::max(hi, p.service.mean);
    xs.push_back(p.buffer);
    ys.push_back(p.service.mean);
  }
  if (!(lo <= target && target <= hi))
    throw ModelError("fleet_at_service: grid does not bracket target " + std::to_string(target) +
                     "; observed service range [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  FleetAtService out;
  out.target = target;
  out.origin = origin;
  out.fit = fit_ols(xs, ys);
  if (!(out.fit.slope > 0)) throw ModelError("fleet_at_service: fitted service does not increase with fleet size");
  out.buffer_at_target = out.fit.solve_for(target);
  out.n_at_target = origin + out.buffer_at_target;
  out.points = std::move(points);
  return out;
}

// Evaluates the grid, seed-averaged, with lambda, m, policy and params taken from `base`.
inline std::vector<FleetPoint> evaluate_fleet_grid(const SimConfig& base, const std::vector<long>& grid, double origin,
                                                   const std::vector<std::uint64_t>& seeds, unsigned jobs) {
  std::vector<SimConfig> cfgs;
  for (long n : grid) {
    SimConfig c = base;
    c.n = n;
    cfgs.push_back(c);
  }
  const auto sums = run_batch(cfgs, seeds, jobs);
  std::vector<FleetPoint> pts;
  for (std::size_t i = 0; i < grid.size(); ++i)
    pts.push_back({grid[i], double(grid[i]) - origin, sums[i].service, sums[i].pickup, sums[i].drive_to_charger});
  return pts;
}

inline FleetAtService fleet_at_service(const SimConfig& base, double target, const std::vector<long>& grid,
                                       const std::vector<std::uint64_t>& seeds, double T_R_tilde, unsigned jobs) {
  detail::require(grid.size() >= 5, "fleet_at_service: need at least 5 fleet sizes");
  detail::require(target > 0 && target < 1, "fleet_at_service: target must be in (0, 1)");
  const double origin = fleet_origin(base.params, target, base.lambda, T_R_tilde);
  return fit_fleet_at_service(evaluate_fleet_grid(base, grid, origin, seeds, jobs), target, origin);
}

// Five sizes geometrically spread over [n0/(1+span), n0(1+span)] around the first-order n0.
inline std::vector<long> first_order_grid(double n0, double span = 0.15, int points = 5) {
  detail::require(n0 > 0 && span > 0 && points >= 2, "first_order_grid: need n0 > 0, span > 0, points >= 2");
  std::vector<long> g;
  for (int i = 0; i < points; ++i) {
    const double t = -1.0 + 2.0 * i / (points - 1);
    const long v = std::max(1L, std::lround(n0 * std::pow(1 + span, t)));
    if (g.empty() || v > g.back()) g.push_back(v);
  }
  return g;
}

struct GridRule {
  enum class Kind { Pilot, FirstOrder };
  Kind kind = Kind::Pilot;
  double span = 0.15;                                          // FirstOrder
  std::vector<double> buffer_factors{0.7, 0.85, 1.0, 1.15, 1.3};  // Pilot
  std::size_t pilot_seeds = 2;
  int max_extensions = 3;  // extra points added when the grid misses the target
};

// Smallest n (to a couple of vehicles) whose seed-averaged service reaches the target.
inline long pilot_fleet(const SimConfig& base, double target, double origin, const std::vector<std::uint64_t>& seeds,
                        unsigned jobs) {
  auto service = [&](long n) {
    SimConfig c = base;
    c.n = n;
    return run_replications(c, seeds, jobs).service.mean;
  };
  long lo = std::max(1L, std::lround(origin));
  int guard = 0;
  while (service(lo) >= target && lo > 1 && guard++ < 20) lo = std::max(1L, lo * 3 / 4);
  long hi = lo + std::max(8L, std::lround(2 * std::sqrt(std::max(origin, 1.0))));
  guard = 0;
  while (service(hi) < target) {
    if (++guard > 20) throw ModelError("pilot_fleet: target service not reached up to n = " + std::to_string(hi));
    const long step = hi - lo;
    lo = hi;
    hi += 2 * step;
  }
  while (hi - lo > std::max(2L, (hi - std::lround(origin)) / 50)) {
    const long mid = lo + (hi - lo) / 2;
    (service(mid) >= target ? hi : lo) = mid;
  }
  return hi;
}

inline FleetAtService fleet_at_service_auto(const SimConfig& base, double target,
                                            const std::vector<std::uint64_t>& seeds, double T_R_tilde,
                                            const GridRule& rule, const ExperimentOptions& opt) {
  const double origin = fleet_origin(base.params, target, base.lambda, T_R_tilde);
  std::vector<long> grid;
  if (rule.kind == GridRule::Kind::FirstOrder) {
    grid = first_order_grid(origin, rule.span);
  } else {
    const std::vector<std::uint64_t> pseeds(seeds.begin(),
                                            seeds.begin() + long(std::min(rule.pilot_seeds, seeds.size())));
    const long pilot = pilot_fleet(base, target, origin, pseeds, opt.jobs);
    const double buf = std::max(double(pilot) - origin, 5.0);
    for (double f : rule.buffer_factors) {
      const long v = std::max(1L, std::lround(origin + buf * f));
      if (std::find(grid.begin(), grid.end(), v) == grid.end()) grid.push_back(v);
    }
    std::sort(grid.begin(), grid.end());
  }
  std::vector<FleetPoint> pts = evaluate_fleet_grid(base, grid, origin, seeds, opt.jobs);
  for (int ext = 0; ext < rule.max_extensions; ++ext) {
    double lo = 1e9, hi = -1e9;
    for (const auto& p : pts) lo = std::min(lo, p.service.mean), hi = std::max(hi, p.service.mean);
    if (lo <= target && target <= hi) break;
    const long nmin = pts.front().n, nmax = pts.back().n;
    const long width = std::max(2L, nmax - nmin);
    const long extra = hi < target ? nmax + width / 2 : std::max(1L, nmin - width / 2);
    opt.note("fleet grid extended to n=" + std::to_string(extra) + " at lambda=" + std::to_string(base.lambda));
    auto more = evaluate_fleet_grid(base, {extra}, origin, seeds, opt.jobs);
    pts.push_back(more.front());
    std::sort(pts.begin(), pts.end(), [](const FleetPoint& a, const FleetPoint& b) { return a.n < b.n; });
  }
  return fit_fleet_at_service(std::move(pts), target, origin);
}

// ---- scaling series ----

struct ScalingSeriesConfig {
  std::string name = "A";
  double beta = 1.0;
  std::vector<double> lambdas{5, 10, 20, 40, 80, 160, 320};
  double c_coef = 4.0;
  double T_R_tilde = 15.14;
  double alpha = 0.9;
  std::vector<long> m_values;  // explicit charger counts, one per lambda; empty uses the formula
};

// r T~ alpha lambda + c (T~ lambda)^beta, rounded up to a multiple of the posts per site.
inline long series_chargers(const SystemParams& p, const ScalingSeriesConfig& s, double lambda) {
  const double raw = p.ratio() * s.T_R_tilde * s.alpha * lambda + s.c_coef * std::pow(s.T_R_tilde * lambda, s.beta);
  const long mp = p.posts_per_charger;
  return std::max(mp, long(std::ceil(raw / double(mp) - 1e-9)) * mp);
}

// Empirical 1 - gamma: slope of log(n - (1+r) T~ alpha lambda) on log(lambda).
inline RegressionFit fleet_exponent_fit(const std::vector<double>& lambdas, const std::vector<double>& n,
                                        double r, double T_R_tilde, double alpha) {
  detail::require(lambdas.size() == n.size(), "fleet_exponent_fit: length mismatch");
  std::vector<double> buf;
  for (std::size_t i = 0; i < n.size(); ++i) buf.push_back(n[i] - (1 + r) * T_R_tilde * alpha * lambdas[i]);
  return fit_loglog(lambdas, buf);
}

// Empirical beta: slope of log(m - r T~ alpha lambda) on log(lambda).
inline RegressionFit charger_exponent_fit(const std::vector<double>& lambdas, const std::vector<double>& m, double r,
                                          double T_R_tilde, double alpha) {
  detail::require(lambdas.size() == m.size(), "charger_exponent_fit: length mismatch");
  std::vector<double> buf;
  for (std::size_t i = 0; i < m.size(); ++i) buf.push_back(m[i] - r * T_R_tilde * alpha * lambdas[i]);
  return fit_loglog(lambdas, buf);
}

struct ScalingPoint {
  double lambda = 0;
  long m = 0;
  FleetAtService fleet;
  ReplicationSummary at_target;  // runs at round(n_at_target)
  double charger_buffer = 0;     // m - r T~ alpha lambda
};

struct ScalingResult {
  ScalingSeriesConfig config;
  std::vector<ScalingPoint> points;
  RegressionFit fleet_fit;   // slope = empirical 1 - gamma
  RegressionFit beta_fit;    // slope = recomputed beta
  RegressionFit pickup_fit;  // log pickup on log lambda
  RegressionFit dtc_fit;     // log drive-to-charger on log lambda
  double T_R_measured = 0;   // mean fulfilled trip time over the at-target runs
  int N_theory = 0;          // trips per charge behind the theoretical column
  double theoretical_1_minus_gamma = 0;
  double theoretical_pickup_slope = 0;
  double theoretical_dtc_slope = 0;
};

inline double error_pct(double fit, double theory) { return 100.0 * std::abs(fit - theory) / std::abs(theory); }

inline ScalingResult scaling_experiment(const ScalingSeriesConfig& cfg, const SimConfig& base,
                                        const std::vector<std::uint64_t>& seeds, const GridRule& rule,
                                        const ExperimentOptions& opt) {
  detail::require(cfg.lambdas.size() >= 2, "scaling_experiment: need at least two arrival rates");
  detail::require(cfg.m_values.empty() || cfg.m_values.size() == cfg.lambdas.size(),
                  "scaling_experiment: m_values must match lambdas in length");
  ScalingResult res;
  res.config = cfg;
  const double r = base.params.ratio();
  std::vector<double> ls, ns, ms, pks, dcs, tts;
  for (std::size_t i = 0; i < cfg.lambdas.size(); ++i) {
    const double lambda = cfg.lambdas[i];
    ScalingPoint pt;
    pt.lambda = lambda;
    pt.m = cfg.m_values.empty() ? series_chargers(base.params, cfg, lambda) : cfg.m_values[i];
    SimConfig c = base;
    c.lambda = lambda;
    c.m = pt.m;
    try {
      pt.fleet = fleet_at_service_auto(c, cfg.alpha, seeds, cfg.T_R_tilde, rule, opt);
      c.n = std::max(1L, std::lround(pt.fleet.n_at_target));
      pt.at_target = run_replications(c, seeds, opt.jobs);
    } catch (const ModelError& e) {
      throw ModelError("series " + cfg.name + " lambda=" + std::to_string(lambda) + ": " + e.what());
    }
    pt.charger_buffer = double(pt.m) - r * cfg.T_R_tilde * cfg.alpha * lambda;
    opt.note("series " + cfg.name + " lambda=" + std::to_string(lambda) + " m=" + std::to_string(pt.m) +
             " n90=" + std::to_string(pt.fleet.n_at_target));
    ls.push_back(lambda);
    ns.push_back(pt.fleet.n_at_target);
    ms.push_back(double(pt.m));
    pks.push_back(pt.at_target.pickup.mean);
    dcs.push_back(pt.at_target.drive_to_charger.mean);
    tts.push_back(pt.at_target.fulfilled_trip_time.mean);
    res.points.push_back(std::move(pt));
  }
  for (std::size_t i = 0; i < ns.size(); ++i)
    if (!(ns[i] > (1 + r) * cfg.T_R_tilde * cfg.alpha * ls[i]))
      throw ModelError("series " + cfg.name + " lambda=" + std::to_string(ls[i]) + ": fleet buffer is not positive");
  res.fleet_fit = fleet_exponent_fit(ls, ns, r, cfg.T_R_tilde, cfg.alpha);
  res.T_R_measured = mean_stderr(tts).mean;
  res.beta_fit = charger_exponent_fit(ls, ms, r, res.T_R_measured, cfg.alpha);
  res.pickup_fit = fit_loglog(ls, pks);
  res.dtc_fit = fit_loglog(ls, dcs);
  const SystemParams& p = base.params;
  res.N_theory = std::max(1, int(std::lround(p.pack_kwh / (p.discharge_rate_kw * p.trip_time_min / 60.0))));
  const double gamma = std::min(achievable_gamma_cap(res.N_theory), res.beta_fit.slope / 2);
  res.theoretical_1_minus_gamma = 1 - gamma;
  res.theoretical_pickup_slope = -gamma;
  res.theoretical_dtc_slope = -res.beta_fit.slope / 2;
  return res;
}

// ---- policy comparison, power-of-d sweep, calibration, service grid ----

struct FleetConfig {
  double lambda = 0;
  long n = 0;
  long m = 0;
};

struct CompareRow {
  std::string policy;
  FleetConfig config;
  ReplicationSummary summary;
};

inline std::vector<CompareRow> compare_policies(const std::vector<Policy>& policies,
                                                const std::vector<FleetConfig>& configs, const SimConfig& base,
                                                const std::vector<std::uint64_t>& seeds, unsigned jobs) {
  std::vector<SimConfig> cfgs;
  std::vector<CompareRow> rows;
  for (const auto& pol : policies) {
    for (const auto& fc : configs) {
      SimConfig c = base;
      c.policy = pol;
      c.lambda = fc.lambda;
      c.n = fc.n;
      c.m = fc.m;
      cfgs.push_back(c);
      rows.push_back({pol.name(), fc, {}});
    }
  }
  auto sums = run_batch(cfgs, seeds, jobs);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].summary = std::move(sums[i]);
  return rows;
}

struct PodSweep {
  std::vector<int> d_values;
  std::vector<double> packs;
  std::vector<std::vector<ReplicationSummary>> cells;  // [pack][d]
  std::vector<int> argmax_d;                           // per pack; ties go to the smaller d
};

inline PodSweep pod_sweep(const std::vector<int>& d_values, const std::vector<double>& packs, const SimConfig& base,
                          const std::vector<std::uint64_t>& seeds, unsigned jobs) {
  detail::require(!d_values.empty() && !packs.empty(), "pod_sweep: need d values and pack sizes");
  std::vector<SimConfig> cfgs;
  for (double pk : packs) {
    for (int d : d_values) {
      SimConfig c = base;
      c.params.pack_kwh = pk;
      c.policy = Policy::pod(d);
      cfgs.push_back(c);
    }
  }
  auto sums = run_batch(cfgs, seeds, jobs);
  PodSweep out;
  out.d_values = d_values;
  out.packs = packs;
  for (std::size_t i = 0; i < packs.size(); ++i) {
    std::vector<ReplicationSummary> row(sums.begin() + long(i * d_values.size()),
                                        sums.begin() + long((i + 1) * d_values.size()));
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k)
      if (row[k].service.mean > row[best].service.mean) best = k;
    out.argmax_d.push_back(d_values[best]);
    out.cells.push_back(std::move(row));
  }
  return out;
}

// Mean fulfilled trip time T~_R from a pilot configuration.
inline MeanStderr calibrate_tr(const SimConfig& base, const std::vector<std::uint64_t>& seeds, unsigned jobs) {
  return run_replications(base, seeds, jobs).fulfilled_trip_time;
}

// Applies a named numeric setting to a config; used by grids and sweeps.
inline void apply_setting(SimConfig& c, const std::string& name, double v) {
  if (name == "n") c.n = std::lround(v);
  else if (name == "m") c.m = std::lround(v);
  else if (name == "lambda") c.lambda = v;
  else if (name == "pack_kwh") c.params.pack_kwh = v;
  else if (name == "d") c.policy.d = int(std::lround(v));
  else throw ValidationError("unknown grid axis '" + name + "' (expected n, m, lambda, pack_kwh or d)");
}

struct GridAxis {
  std::string name;
  std::vector<double> values;
};

struct GridCell {
  double x = 0;
  double y = 0;
  ReplicationSummary summary;
};

inline std::vector<GridCell> service_grid(const GridAxis& xa, const GridAxis& ya, const SimConfig& base,
                                          const std::vector<std::uint64_t>& seeds, unsigned jobs) {
  detail::require(!xa.values.empty() && !ya.values.empty(), "service_grid: empty axis");
  detail::require(xa.name != ya.name, "service_grid: axes must differ");
  std::vector<SimConfig> cfgs;
  std::vector<GridCell> cells;
  for (double y : ya.values) {
    for (double x : xa.values) {
      SimConfig c = base;
      apply_setting(c, xa.name, x);
      apply_setting(c, ya.name, y);
      cfgs.push_back(c);
      cells.push_back({x, y, {}});
    }
  }
  auto sums = run_batch(cfgs, seeds, jobs);
  for (std::size_t i = 0; i < cells.size(); ++i) cells[i].summary = std::move(sums[i]);
  return cells;
}

}  // namespace evfleet
