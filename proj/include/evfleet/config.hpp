#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#define TOML_EXCEPTIONS 1
#include "toml.hpp"

#include "error.hpp"
#include "experiments.hpp"
#include "fluid.hpp"
#include "model.hpp"
#include "simulator.hpp"

namespace evfleet {

// "CD", "CAD", "PoD2", "PoD7" ...
inline Policy parse_policy_name(const std::string& s) {
  if (s.rfind("PoD", 0) == 0) {
    try {
      std::size_t used = 0;
      const int d = std::stoi(s.substr(3), &used);
      if (used == s.size() - 3) return parse_policy("PoD", d);
    } catch (const std::logic_error&) {
    }
    throw ValidationError("unknown policy '" + s + "' (expected CD, CAD or PoD<d>)");
  }
  return parse_policy(s, 1);
}

struct SimSection {
  double lambda = 160;
  long n = 3072;
  long m = 2600;
  std::string policy = "PoD2";
  double horizon = 1000;
  double warmup = 500;
  std::string claiming = "blind";
  double sample_interval = 1;
  double initial_soc_lo = 0.4;
  double initial_soc_hi = 0.6;
  bool events_log = false;
  std::optional<DemandProfile> profile;
};

struct PlanSection {
  double alpha = 0.9;
  double lambda = 160;
  double gamma = 1.0 / 3.0;
  std::optional<double> kappa1, kappa2, kappa3;
};

struct FluidSection {
  double gamma = 1.0 / 3.0;
  double lambda_tilde = 1e4;
  std::optional<double> kappa1, kappa2;
  double t_end = 2e4;
  double dt = 0;
  long record_every = 100;
  std::string start = "full";  // full | random
  std::string admission = "sliding";
  std::string low_count_rule = "enumeration";
  std::string form = "stationary";
};

struct BoundsSection {
  std::vector<double> alpha{0.9};
  std::vector<double> lambda{160};
  std::vector<double> gamma{1.0 / 3.0, 0.5};
  std::vector<double> peak_multiplier{1.5, 2, 3, 4};
  std::vector<double> T2_over_T1{0.5, 1};
  std::vector<double> alpha_grid{0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 0.99};
  double valley_length = 120;
  int c_alpha_points = 5;
};

struct SeriesSection {
  std::string name;
  double beta = 1;
  double c = 4;
  std::vector<double> lambdas;
  std::vector<long> m;
};

struct ScalingSection {
  double target = 0.9;
  double T_R_tilde = 15.14;
  std::string grid = "pilot";  // pilot | first_order
  long pilot_seeds = 2;
  std::vector<SeriesSection> series;
};

struct CompareSection {
  std::vector<std::string> policies{"CD", "CAD", "PoD2"};
  std::vector<FleetConfig> configs;
};

struct PodSweepSection {
  std::vector<long> d{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<double> pack_kwh{5, 10, 20, 40};
};

struct GridSection {
  std::string x = "n";
  std::vector<double> x_values;
  std::string y = "m";
  std::vector<double> y_values;
};

struct RunConfig {
  std::uint64_t seed = 42;
  long replications = 5;
  SystemParams params;
  SimSection sim;
  PlanSection plan;
  FluidSection fluid;
  BoundsSection bounds;
  ScalingSection scaling;
  CompareSection compare;
  PodSweepSection pod_sweep;
  GridSection grid;

  std::vector<std::uint64_t> seeds() const { return expand_seeds(seed, std::size_t(replications)); }

  SimConfig sim_config() const {
    SimConfig c;
    c.params = params;
    c.lambda = sim.lambda;
    c.n = sim.n;
    c.m = sim.m;
    c.policy = parse_policy_name(sim.policy);
    c.horizon = sim.horizon;
    c.warmup = sim.warmup;
    if (sim.claiming == "blind") c.claiming = ClaimMode::Blind;
    else if (sim.claiming == "claiming") c.claiming = ClaimMode::Claiming;
    else throw ValidationError("config key 'simulate.claiming' must be \"blind\" or \"claiming\"");
    c.sample_interval = sim.sample_interval;
    c.initial_soc_lo = sim.initial_soc_lo;
    c.initial_soc_hi = sim.initial_soc_hi;
    c.record_events = sim.events_log;
    c.profile = sim.profile;
    c.seed = seed;
    return c;
  }

  Kappas plan_kappas() const {
    const Kappas lo = minimum_kappas(params);
    return {plan.kappa1.value_or(lo.kappa1), plan.kappa2.value_or(lo.kappa2), plan.kappa3};
  }
  Kappas fluid_kappas() const {
    const Kappas lo = minimum_kappas(params);
    return {fluid.kappa1.value_or(lo.kappa1), fluid.kappa2.value_or(lo.kappa2), std::nullopt};
  }
};

// Fleet/charger rows of the two published series at 90% service.
inline std::vector<SeriesSection> default_series() {
  const std::vector<double> l{5, 10, 20, 40, 80, 160, 320};
  return {{"A", 1.0, 4.0, l, {320, 640, 1280, 2560, 5120, 10248, 20504}},
          {"C", 0.8, 4.0, l, {144, 256, 456, 808, 1448, 2600, 4672}}};
}
inline std::vector<FleetConfig> default_compare_configs() {
  const std::vector<double> l{5, 10, 20, 40, 80, 160, 320};
  const std::vector<long> nA{124, 228, 427, 806, 1532, 2958, 5769}, mA{320, 640, 1280, 2560, 5120, 10248, 20504};
  const std::vector<long> nC{133, 245, 451, 851, 1600, 3072, 5956}, mC{144, 256, 456, 808, 1448, 2600, 4672};
  std::vector<FleetConfig> out;
  for (std::size_t i = 0; i < l.size(); ++i) out.push_back({l[i], nA[i], mA[i]});
  for (std::size_t i = 0; i < l.size(); ++i) out.push_back({l[i], nC[i], mC[i]});
  return out;
}

inline void validate(const RunConfig& c);

namespace detail {

// Reads keys from one table, remembers which were consumed and rejects the rest.
class TableReader {
 public:
  TableReader(const toml::table& t, std::string prefix) : t_(t), prefix_(std::move(prefix)) {}

  std::string path(const std::string& key) const { return prefix_.empty() ? key : prefix_ + "." + key; }

  const toml::node* node(const std::string& key) {
    used_.insert(key);
    return t_.get(key);
  }

  void get(const std::string& key, double& out) {
    if (auto* n = node(key)) out = as_double(*n, key);
  }
  void get(const std::string& key, std::optional<double>& out) {
    if (auto* n = node(key)) out = as_double(*n, key);
  }
  void get(const std::string& key, long& out) {
    if (auto* n = node(key)) out = as_long(*n, key);
  }
  void get(const std::string& key, int& out) {
    if (auto* n = node(key)) out = int(as_long(*n, key));
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (auto* n = node(key)) {
      const long v = as_long(*n, key);
      if (v < 0) throw ValidationError("config key '" + path(key) + "' must be non-negative");
      out = std::uint64_t(v);
    }
  }
  void get(const std::string& key, bool& out) {
    if (auto* n = node(key)) {
      if (!n->is_boolean()) throw ValidationError("config key '" + path(key) + "' must be a boolean");
      out = n->as_boolean()->get();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (auto* n = node(key)) {
      if (!n->is_string()) throw ValidationError("config key '" + path(key) + "' must be a string");
      out = n->as_string()->get();
    }
  }
  void get(const std::string& key, std::vector<double>& out) {
    if (auto* n = node(key)) {
      out.clear();
      for (const auto& e : array(*n, key)) out.push_back(as_double(e, key));
    }
  }
  void get(const std::string& key, std::vector<long>& out) {
    if (auto* n = node(key)) {
      out.clear();
      for (const auto& e : array(*n, key)) out.push_back(as_long(e, key));
    }
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    if (auto* n = node(key)) {
      out.clear();
      for (const auto& e : array(*n, key)) {
        if (!e.is_string()) throw ValidationError("config key '" + path(key) + "' must hold strings");
        out.push_back(e.as_string()->get());
      }
    }
  }
  const toml::table* table(const std::string& key) {
    auto* n = node(key);
    if (!n) return nullptr;
    if (!n->is_table()) throw ValidationError("config key '" + path(key) + "' must be a table");
    return n->as_table();
  }
  const toml::array* table_array(const std::string& key) {
    auto* n = node(key);
    if (!n) return nullptr;
    if (!n->is_array_of_tables()) throw ValidationError("config key '" + path(key) + "' must be an array of tables");
    return n->as_array();
  }

  void finish() const {
    for (const auto& [k, v] : t_) {
      const std::string key(k.str());
      if (!used_.count(key)) throw ValidationError("unknown config key '" + path(key) + "'");
    }
  }

 private:
  double as_double(const toml::node& n, const std::string& key) const {
    if (n.is_floating_point()) return n.as_floating_point()->get();
    if (n.is_integer()) return double(n.as_integer()->get());
    throw ValidationError("config key '" + path(key) + "' must be a number");
  }
  long as_long(const toml::node& n, const std::string& key) const {
    if (n.is_integer()) return long(n.as_integer()->get());
    throw ValidationError("config key '" + path(key) + "' must be an integer");
  }
  const toml::array& array(const toml::node& n, const std::string& key) const {
    if (!n.is_array()) throw ValidationError("config key '" + path(key) + "' must be an array");
    return *n.as_array();
  }

  const toml::table& t_;
  std::string prefix_;
  std::set<std::string> used_;
};

}  // namespace detail

inline RunConfig parse_config(const toml::table& root) {
  RunConfig c;
  c.scaling.series = default_series();
  c.compare.configs = default_compare_configs();
  detail::TableReader top(root, "");
  top.get("seed", c.seed);
  top.get("replications", c.replications);

  if (auto* t = top.table("params")) {
    detail::TableReader r(*t, "params");
    auto& p = c.params;
    r.get("charge_rate_kw", p.charge_rate_kw);
    r.get("discharge_rate_kw", p.discharge_rate_kw);
    r.get("pack_kwh", p.pack_kwh);
    r.get("speed_mph", p.speed_mph);
    r.get("region_side_mi", p.region_side_mi);
    r.get("trip_time_min", p.trip_time_min);
    r.get("tau1_min", p.tau1_min);
    r.get("tau2_min", p.tau2_min);
    r.get("s_min", p.s_min);
    r.get("s_max", p.s_max);
    r.get("posts_per_charger", p.posts_per_charger);
    r.finish();
  }
  if (auto* t = top.table("simulate")) {
    detail::TableReader r(*t, "simulate");
    auto& s = c.sim;
    r.get("lambda", s.lambda);
    r.get("n", s.n);
    r.get("m", s.m);
    r.get("policy", s.policy);
    r.get("horizon_min", s.horizon);
    r.get("warmup_min", s.warmup);
    r.get("claiming", s.claiming);
    r.get("sample_interval_min", s.sample_interval);
    r.get("initial_soc_lo", s.initial_soc_lo);
    r.get("initial_soc_hi", s.initial_soc_hi);
    r.get("events_log", s.events_log);
    if (auto* pt = r.table("profile")) {
      detail::TableReader pr(*pt, "simulate.profile");
      DemandProfile prof;
      prof.base_rate = s.lambda;
      pr.get("peak_multiplier", prof.peak_multiplier);
      pr.get("valley_length_min", prof.valley_length);
      pr.get("peak_length_min", prof.peak_length);
      pr.finish();
      s.profile = prof;
    }
    r.finish();
    if (s.profile) s.profile->base_rate = s.lambda;
  }
  if (auto* t = top.table("plan")) {
    detail::TableReader r(*t, "plan");
    r.get("alpha", c.plan.alpha);
    r.get("lambda", c.plan.lambda);
    r.get("gamma", c.plan.gamma);
    r.get("kappa1", c.plan.kappa1);
    r.get("kappa2", c.plan.kappa2);
    r.get("kappa3", c.plan.kappa3);
    r.finish();
  }
  if (auto* t = top.table("fluid")) {
    detail::TableReader r(*t, "fluid");
    auto& f = c.fluid;
    r.get("gamma", f.gamma);
    r.get("lambda_tilde", f.lambda_tilde);
    r.get("kappa1", f.kappa1);
    r.get("kappa2", f.kappa2);
    r.get("t_end_min", f.t_end);
    r.get("dt_min", f.dt);
    r.get("record_every", f.record_every);
    r.get("start", f.start);
    r.get("admission", f.admission);
    r.get("low_count_rule", f.low_count_rule);
    r.get("form", f.form);
    r.finish();
  }
  if (auto* t = top.table("bounds")) {
    detail::TableReader r(*t, "bounds");
    auto& b = c.bounds;
    r.get("alpha", b.alpha);
    r.get("lambda", b.lambda);
    r.get("gamma", b.gamma);
    r.get("peak_multiplier", b.peak_multiplier);
    r.get("T2_over_T1", b.T2_over_T1);
    r.get("alpha_grid", b.alpha_grid);
    r.get("valley_length_min", b.valley_length);
    r.get("c_alpha_points", b.c_alpha_points);
    r.finish();
  }
  if (auto* t = top.table("scaling")) {
    detail::TableReader r(*t, "scaling");
    auto& s = c.scaling;
    r.get("target", s.target);
    r.get("T_R_tilde", s.T_R_tilde);
    r.get("grid", s.grid);
    r.get("pilot_seeds", s.pilot_seeds);
    if (auto* arr = r.table_array("series")) {
      s.series.clear();
      std::size_t i = 0;
      for (const auto& node : *arr) {
        detail::TableReader sr(*node.as_table(), "scaling.series[" + std::to_string(i++) + "]");
        SeriesSection ss;
        sr.get("name", ss.name);
        sr.get("beta", ss.beta);
        sr.get("c", ss.c);
        sr.get("lambdas", ss.lambdas);
        sr.get("m", ss.m);
        sr.finish();
        s.series.push_back(ss);
      }
    }
    r.finish();
  }
  if (auto* t = top.table("compare")) {
    detail::TableReader r(*t, "compare");
    r.get("policies", c.compare.policies);
    if (auto* arr = r.table_array("configs")) {
      c.compare.configs.clear();
      std::size_t i = 0;
      for (const auto& node : *arr) {
        detail::TableReader cr(*node.as_table(), "compare.configs[" + std::to_string(i++) + "]");
        FleetConfig fc;
        cr.get("lambda", fc.lambda);
        cr.get("n", fc.n);
        cr.get("m", fc.m);
        cr.finish();
        c.compare.configs.push_back(fc);
      }
    }
    r.finish();
  }
  if (auto* t = top.table("pod_sweep")) {
    detail::TableReader r(*t, "pod_sweep");
    r.get("d", c.pod_sweep.d);
    r.get("pack_kwh", c.pod_sweep.pack_kwh);
    r.finish();
  }
  if (auto* t = top.table("grid")) {
    detail::TableReader r(*t, "grid");
    r.get("x", c.grid.x);
    r.get("x_values", c.grid.x_values);
    r.get("y", c.grid.y);
    r.get("y_values", c.grid.y_values);
    r.finish();
  }
  top.finish();
  validate(c);
  return c;
}

inline RunConfig parse_config_text(const std::string& text, const std::string& source = "config") {
  try {
    return parse_config(toml::parse(text, source));
  } catch (const toml::parse_error& e) {
    std::ostringstream ss;
    ss << "cannot parse " << source << ": " << e.description() << " at line " << e.source().begin.line;
    throw ValidationError(ss.str());
  }
}

inline void validate(const RunConfig& c) {
  using detail::require;
  require(c.replications >= 1, "config key 'replications' must be at least 1");
  c.params.validate();
  c.sim_config().validate();
  for (const auto& p : c.compare.policies) parse_policy_name(p);
  require(c.scaling.grid == "pilot" || c.scaling.grid == "first_order",
          "config key 'scaling.grid' must be \"pilot\" or \"first_order\"");
  require(c.scaling.target > 0 && c.scaling.target < 1, "config key 'scaling.target' must be in (0, 1)");
  require(c.scaling.pilot_seeds >= 1, "config key 'scaling.pilot_seeds' must be at least 1");
  for (const auto& s : c.scaling.series)
    require(s.m.empty() || s.m.size() == s.lambdas.size(),
            "config key 'scaling.series.m' must match 'lambdas' in length (series " + s.name + ")");
  require(c.fluid.start == "full" || c.fluid.start == "random", "config key 'fluid.start' must be \"full\" or \"random\"");
  require(c.fluid.admission == "sliding" || c.fluid.admission == "indicator",
          "config key 'fluid.admission' must be \"sliding\" or \"indicator\"");
  require(c.fluid.low_count_rule == "enumeration" || c.fluid.low_count_rule == "zero_below_d",
          "config key 'fluid.low_count_rule' must be \"enumeration\" or \"zero_below_d\"");
  require(c.fluid.form == "stationary" || c.fluid.form == "unit_busy_closure",
          "config key 'fluid.form' must be \"stationary\" or \"unit_busy_closure\"");
  for (long d : c.pod_sweep.d) require(d >= 1, "config key 'pod_sweep.d' entries must be at least 1");
}

// ---- serialization of the resolved config ----

namespace detail {
template <class T>
toml::array to_array(const std::vector<T>& v) {
  toml::array a;
  for (const auto& x : v) {
    if constexpr (std::is_same_v<T, long>) a.push_back(std::int64_t(x));
    else a.push_back(x);
  }
  return a;
}
}  // namespace detail

inline std::string to_toml(const RunConfig& c) {
  using detail::to_array;
  toml::table root;
  root.insert("seed", std::int64_t(c.seed));
  root.insert("replications", std::int64_t(c.replications));
  const auto& p = c.params;
  root.insert("params", toml::table{{"charge_rate_kw", p.charge_rate_kw},
                                    {"discharge_rate_kw", p.discharge_rate_kw},
                                    {"pack_kwh", p.pack_kwh},
                                    {"speed_mph", p.speed_mph},
                                    {"region_side_mi", p.region_side_mi},
                                    {"trip_time_min", p.trip_time_min},
                                    {"tau1_min", p.tau1_min},
                                    {"tau2_min", p.tau2_min},
                                    {"s_min", p.s_min},
                                    {"s_max", p.s_max},
                                    {"posts_per_charger", p.posts_per_charger}});
  const auto& s = c.sim;
  toml::table sim{{"lambda", s.lambda},
                  {"n", std::int64_t(s.n)},
                  {"m", std::int64_t(s.m)},
                  {"policy", s.policy},
                  {"horizon_min", s.horizon},
                  {"warmup_min", s.warmup},
                  {"claiming", s.claiming},
                  {"sample_interval_min", s.sample_interval},
                  {"initial_soc_lo", s.initial_soc_lo},
                  {"initial_soc_hi", s.initial_soc_hi},
                  {"events_log", s.events_log}};
  if (s.profile)
    sim.insert("profile", toml::table{{"peak_multiplier", s.profile->peak_multiplier},
                                      {"valley_length_min", s.profile->valley_length},
                                      {"peak_length_min", s.profile->peak_length}});
  root.insert("simulate", std::move(sim));
  const Kappas pk = c.plan_kappas();
  toml::table plan{{"alpha", c.plan.alpha}, {"lambda", c.plan.lambda}, {"gamma", c.plan.gamma},
                   {"kappa1", pk.kappa1},   {"kappa2", pk.kappa2}};
  if (c.plan.kappa3) plan.insert("kappa3", *c.plan.kappa3);
  root.insert("plan", std::move(plan));
  const auto& f = c.fluid;
  const Kappas fk = c.fluid_kappas();
  root.insert("fluid", toml::table{{"gamma", f.gamma},
                                   {"lambda_tilde", f.lambda_tilde},
                                   {"kappa1", fk.kappa1},
                                   {"kappa2", fk.kappa2},
                                   {"t_end_min", f.t_end},
                                   {"dt_min", f.dt},
                                   {"record_every", std::int64_t(f.record_every)},
                                   {"start", f.start},
                                   {"admission", f.admission},
                                   {"low_count_rule", f.low_count_rule},
                                   {"form", f.form}});
  const auto& b = c.bounds;
  root.insert("bounds", toml::table{{"alpha", to_array(b.alpha)},
                                    {"lambda", to_array(b.lambda)},
                                    {"gamma", to_array(b.gamma)},
                                    {"peak_multiplier", to_array(b.peak_multiplier)},
                                    {"T2_over_T1", to_array(b.T2_over_T1)},
                                    {"alpha_grid", to_array(b.alpha_grid)},
                                    {"valley_length_min", b.valley_length},
                                    {"c_alpha_points", b.c_alpha_points}});
  toml::array series;
  for (const auto& ss : c.scaling.series) {
    toml::table t{{"name", ss.name}, {"beta", ss.beta}, {"c", ss.c}, {"lambdas", to_array(ss.lambdas)}};
    if (!ss.m.empty()) t.insert("m", to_array(ss.m));
    series.push_back(std::move(t));
  }
  root.insert("scaling", toml::table{{"target", c.scaling.target},
                                     {"T_R_tilde", c.scaling.T_R_tilde},
                                     {"grid", c.scaling.grid},
                                     {"pilot_seeds", std::int64_t(c.scaling.pilot_seeds)},
                                     {"series", std::move(series)}});
  toml::array configs;
  for (const auto& fc : c.compare.configs)
    configs.push_back(toml::table{{"lambda", fc.lambda}, {"n", std::int64_t(fc.n)}, {"m", std::int64_t(fc.m)}});
  root.insert("compare", toml::table{{"policies", to_array(c.compare.policies)}, {"configs", std::move(configs)}});
  root.insert("pod_sweep", toml::table{{"d", to_array(c.pod_sweep.d)}, {"pack_kwh", to_array(c.pod_sweep.pack_kwh)}});
  root.insert("grid", toml::table{{"x", c.grid.x},
                                  {"x_values", to_array(c.grid.x_values)},
                                  {"y", c.grid.y},
                                  {"y_values", to_array(c.grid.y_values)}});
  std::ostringstream ss;
  ss << root << '\n';
  return ss.str();
}

}  // namespace evfleet
