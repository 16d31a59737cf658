#pragma once

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bounds.hpp"
#include "error.hpp"
#include "experiments.hpp"
#include "fluid.hpp"
#include "model.hpp"
#include "simulator.hpp"

namespace evfleet::io {

using json = nlohmann::ordered_json;

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}
inline std::string num(long long v) { return std::to_string(v); }
inline std::string num(long v) { return std::to_string(v); }
inline std::string num(int v) { return std::to_string(v); }
inline std::string num(std::uint64_t v) { return std::to_string(v); }

class Csv {
 public:
  explicit Csv(std::vector<std::string> header) : header_(std::move(header)) {}
  const std::vector<std::string>& header() const { return header_; }
  std::size_t rows() const { return rows_.size(); }

  void add(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw ModelError("csv row width does not match header");
    rows_.push_back(std::move(row));
  }
  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) line(r);
    return out;
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Writes to a sibling temp file, then renames over the target.
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ModelError("cannot open " + tmp.string() + " for writing");
    f << content;
    f.flush();
    if (!f) throw ModelError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw ModelError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ---- simulator ----

inline Csv metrics_csv(const std::vector<RunMetrics>& runs) {
  Csv c({"seed", "service_level", "avg_pickup_min", "avg_dtc_min", "workload_pct", "t_r_fulfilled_min", "arrivals",
         "served", "charger_trips", "soc_floor_hits", "mean_soc"});
  for (const auto& r : runs)
    c.add({num(r.seed), num(r.service_level), num(r.avg_pickup), num(r.avg_drive_to_charger),
           num(100 * r.workload_served), num(r.mean_fulfilled_trip_time), num(r.arrivals), num(r.effective_arrivals),
           num(r.charger_trips), num(r.soc_floor_hits), num(r.mean_soc)});
  return c;
}

inline Csv timeseries_csv(const RunMetrics& r) {
  std::vector<std::string> h{"t_min"};
  for (std::size_t a = 0; a < kActivityCount; ++a) h.push_back(to_string(Activity(a)));
  h.push_back("mean_soc");
  Csv c(h);
  for (const auto& s : r.timeseries) {
    std::vector<std::string> row{num(s.t)};
    for (int k : s.counts) row.push_back(num(k));
    row.push_back(num(s.mean_soc));
    c.add(std::move(row));
  }
  return c;
}

// ---- model and fluid ----

inline json plan_json(const CapacityPlan& p) {
  return json{{"lambda_tilde", p.lambda_tilde}, {"n", p.n},         {"m", p.m},
              {"A", p.A},                       {"d", p.d},         {"gamma", p.gamma},
              {"kappa1", p.kappa1},             {"kappa2", p.kappa2}, {"kappa3", p.kappa3}};
}

inline Csv trajectory_csv(const Trajectory& tr) {
  std::vector<std::string> h{"t"};
  const std::size_t N = tr.final_state.XC.size() - 1;
  for (std::size_t j = 0; j <= N; ++j) h.push_back("XC_" + std::to_string(j));
  for (std::size_t j = 1; j <= N; ++j) h.push_back("XB_" + std::to_string(j));
  Csv c(h);
  for (std::size_t i = 0; i < tr.states.size(); ++i) {
    std::vector<std::string> row{num(tr.times[i])};
    for (double v : tr.states[i].XC) row.push_back(num(v));
    for (std::size_t j = 1; j <= N; ++j) row.push_back(num(tr.states[i].XB[j]));
    c.add(std::move(row));
  }
  return c;
}

inline json fluid_params_json(const FluidParams& p) {
  return json{{"lambda_tilde", p.lambda_tilde}, {"n", p.n},       {"m", p.m},         {"A", p.A},
              {"d", p.d},                       {"T_R", p.T_R},   {"T_B", p.T_B},     {"r", p.r},
              {"tau1", p.tau1},                 {"tau2", p.tau2}, {"N_trips", p.N_trips}, {"gamma", p.gamma},
              {"kappa1", p.kappa1}};
}

inline json equilibrium_json(const EquilibriumReport& e, const FluidParams& p, double hat) {
  json j;
  j["params"] = fluid_params_json(p);
  j["p0"] = e.p0;
  j["mu"] = e.mu;
  j["admitted_fraction"] = e.admitted_fraction;
  j["XC_top"] = e.XC_top;
  j["XB_top"] = e.XB_top;
  j["XC_top_bound"] = e.XC_top_bound;
  j["XB_top_bound"] = e.XB_top_bound;
  j["XC_top_bound_holds"] = e.XC_top_bound_holds;
  j["XB_top_bound_holds"] = e.XB_top_bound_holds;
  j["hat_fixed_point"] = hat;
  j["hat_dominates_XC_top"] = hat >= e.XC_top;
  j["service_rate"] = e.service_rate;
  j["service_rate_lb"] = e.service_rate_lb;
  j["residual_norm"] = e.residual_norm;
  j["charging_cap_binding"] = e.charging_cap_binding;
  j["admission_cap_binding"] = e.admission_cap_binding;
  j["outer_iterations"] = e.outer_iterations;
  j["residual_monotone"] = e.residual_monotone;
  j["chain_monotone"] = e.chain_monotone;
  j["XC"] = e.state.XC;
  j["XB"] = e.state.XB;
  return j;
}

// ---- bounds ----

inline Csv first_order_csv(const std::vector<double>& alphas, const std::vector<double>& lambdas,
                           const std::vector<double>& gammas, double T_R, double r) {
  Csv c({"alpha", "lambda", "gamma", "n_lb", "m_lb", "fleet_exponent", "charger_exponent"});
  for (double a : alphas)
    for (double l : lambdas)
      for (double g : gammas) {
        const auto u = universal_scaling(a, l, g, T_R, r);
        c.add({num(a), num(l), num(g), num(u.fleet.leading), num(u.chargers.leading), num(u.fleet.exponent),
               num(u.chargers.exponent)});
      }
  return c;
}

// Case map over (c, alpha) at fixed r and T2/T1 plus the two thresholds per c.
inline Csv applicability_csv(const std::vector<double>& cs, const std::vector<double>& alphas,
                             const std::vector<double>& ratios, double r) {
  Csv c({"c", "T2_over_T1", "r", "alpha", "case", "alpha_I_II", "alpha_II_III", "alpha_star"});
  for (double k : ratios)
    for (double cc : cs) {
      const auto th = case_thresholds(cc, r, k);
      for (double a : alphas) {
        DemandProfile prof{1.0, cc, 1.0, k};
        c.add({num(cc), num(k), num(r), num(a), to_string(varying_case(a, prof, r)), num(th.I_II), num(th.II_III),
               num(phase_boundary(cc, r, k))});
      }
    }
  return c;
}

inline Csv varying_csv(const std::vector<BoundResult>& rows, double alpha, const DemandProfile& prof) {
  Csv c({"alpha", "c", "lambda", "T1", "T2", "case", "c_alpha", "n_lb", "n_lb_no_edge", "m_lb", "edge_term",
         "lambda_avg"});
  for (const auto& b : rows)
    c.add({num(alpha), num(prof.peak_multiplier), num(prof.base_rate), num(prof.valley_length),
           num(prof.peak_length), to_string(b.case_id), num(b.c_alpha), num(b.n_lb), num(b.n_lb_no_edge),
           num(b.m_lb), num(b.edge_term), num(b.lambda_avg)});
  return c;
}

// ---- experiments ----

inline Csv scaling_results_csv(const std::vector<ScalingResult>& series) {
  Csv c({"beta", "lambda", "m", "n_at_90", "fleet_buffer", "charger_buffer", "pickup_mean_min", "dtc_mean_min",
         "series", "T_R_tilde", "service_at_n90"});
  for (const auto& s : series)
    for (const auto& p : s.points)
      c.add({num(s.config.beta), num(p.lambda), num(p.m), num(p.fleet.n_at_target), num(p.fleet.buffer_at_target),
             num(p.charger_buffer), num(p.at_target.pickup.mean), num(p.at_target.drive_to_charger.mean),
             s.config.name, num(s.config.T_R_tilde), num(p.at_target.service.mean)});
  return c;
}

inline Csv exponents_csv(const std::vector<ScalingResult>& series) {
  Csv c({"series", "fitted_1_minus_gamma", "theoretical_1_minus_gamma", "error_pct", "fitted_beta",
         "fitted_pickup_slope", "theoretical_pickup_slope", "pickup_error_pct", "fitted_dtc_slope",
         "theoretical_dtc_slope", "dtc_error_pct", "fleet_fit_r_squared", "T_R_tilde", "T_R_measured", "N_trips"});
  for (const auto& s : series)
    c.add({s.config.name, num(s.fleet_fit.slope), num(s.theoretical_1_minus_gamma),
           num(error_pct(s.fleet_fit.slope, s.theoretical_1_minus_gamma)), num(s.beta_fit.slope),
           num(s.pickup_fit.slope), num(s.theoretical_pickup_slope),
           num(error_pct(s.pickup_fit.slope, s.theoretical_pickup_slope)), num(s.dtc_fit.slope),
           num(s.theoretical_dtc_slope), num(error_pct(s.dtc_fit.slope, s.theoretical_dtc_slope)),
           num(s.fleet_fit.r_squared), num(s.config.T_R_tilde), num(s.T_R_measured), num(s.N_theory)});
  return c;
}

// Every seed-averaged sweep point behind each fleet-at-90% fit.
inline Csv fleet90_csv(const std::vector<ScalingResult>& series) {
  Csv c({"series", "lambda", "m", "n", "fleet_buffer", "service_mean", "service_stderr", "fit_slope",
         "fit_intercept", "fit_r_squared", "n_at_90", "buffer_at_90"});
  for (const auto& s : series)
    for (const auto& p : s.points)
      for (const auto& q : p.fleet.points)
        c.add({s.config.name, num(p.lambda), num(p.m), num(q.n), num(q.buffer), num(q.service.mean),
               num(q.service.stderr_), num(p.fleet.fit.slope), num(p.fleet.fit.intercept), num(p.fleet.fit.r_squared),
               num(p.fleet.n_at_target), num(p.fleet.buffer_at_target)});
  return c;
}

inline Csv policy_compare_csv(const std::vector<CompareRow>& rows) {
  Csv c({"policy", "lambda", "n", "m", "service_mean", "service_stderr", "pickup_mean_min", "pickup_stderr",
         "dtc_mean_min", "dtc_stderr", "workload_pct_mean", "workload_pct_stderr"});
  for (const auto& r : rows) {
    const auto& s = r.summary;
    c.add({r.policy, num(r.config.lambda), num(r.config.n), num(r.config.m), num(s.service.mean),
           num(s.service.stderr_), num(s.pickup.mean), num(s.pickup.stderr_), num(s.drive_to_charger.mean),
           num(s.drive_to_charger.stderr_), num(100 * s.workload.mean), num(100 * s.workload.stderr_)});
  }
  return c;
}

inline Csv pod_sweep_csv(const PodSweep& sw) {
  Csv c({"pack_kwh", "d", "service_mean", "service_stderr", "pickup_mean_min", "dtc_mean_min", "is_argmax"});
  for (std::size_t i = 0; i < sw.packs.size(); ++i)
    for (std::size_t k = 0; k < sw.d_values.size(); ++k) {
      const auto& s = sw.cells[i][k];
      c.add({num(sw.packs[i]), num(sw.d_values[k]), num(s.service.mean), num(s.service.stderr_), num(s.pickup.mean),
             num(s.drive_to_charger.mean), sw.argmax_d[i] == sw.d_values[k] ? "1" : "0"});
    }
  return c;
}

inline Csv service_grid_csv(const std::string& x, const std::string& y, const std::vector<GridCell>& cells) {
  Csv c({x, y, "service_mean", "service_stderr", "pickup_mean_min", "dtc_mean_min"});
  for (const auto& g : cells)
    c.add({num(g.x), num(g.y), num(g.summary.service.mean), num(g.summary.service.stderr_),
           num(g.summary.pickup.mean), num(g.summary.drive_to_charger.mean)});
  return c;
}

}  // namespace evfleet::io
