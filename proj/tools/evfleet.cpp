#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "evfleet/bounds.hpp"
#include "evfleet/config.hpp"
#include "evfleet/experiments.hpp"
#include "evfleet/fluid.hpp"
#include "evfleet/io.hpp"
#include "evfleet/model.hpp"
#include "evfleet/simulator.hpp"

namespace fs = std::filesystem;
using namespace evfleet;
using io::json;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<long> replications;
  unsigned jobs = default_jobs();
  std::string format = "csv";
  bool verbose = false;
};

struct Overrides {
  std::optional<double> alpha, lambda, gamma;
  std::vector<std::string> series;
};

class Run {
 public:
  Run(std::string command, const Common& common) : command_(std::move(command)), common_(common) {
    if (!common.config.empty()) {
      const fs::path path(common.config);
      const std::string text = io::read_file(path);
      if (path.extension() == ".json") {
        // A manifest from an earlier run: replay its resolved config.
        json m;
        try {
          m = json::parse(text);
        } catch (const json::exception& e) {
          throw ValidationError("cannot parse manifest " + path.string() + ": " + e.what());
        }
        if (!m.contains("config_toml") || !m["config_toml"].is_string())
          throw ValidationError("manifest " + path.string() + " lacks 'config_toml'");
        if (m.value("command", command_) != command_)
          throw ValidationError("manifest " + path.string() + " was written by '" + m.value("command", "") +
                                "', not '" + command_ + "'");
        cfg_ = parse_config_text(m["config_toml"].get<std::string>(), path.string());
      } else {
        cfg_ = parse_config_text(text, path.string());
      }
    } else {
      cfg_ = parse_config_text("", "defaults");
    }
    if (common.seed) cfg_.seed = *common.seed;
    if (common.replications) cfg_.replications = *common.replications;
    detail::require(common.format == "csv" || common.format == "json", "--format must be csv or json");
    detail::require(common.jobs >= 1, "--jobs must be at least 1");
    validate(cfg_);

    std::string dir = common.out;
    if (dir.empty())
      if (const char* env = std::getenv("EVFLEET_OUT")) dir = env;
    if (dir.empty()) dir = "out";
    out_ = dir;
    opt_.jobs = common.jobs;
    if (common.verbose) opt_.progress = [](const std::string& s) { std::cerr << s << '\n'; };
  }

  RunConfig& config() { return cfg_; }
  const ExperimentOptions& options() const { return opt_; }
  bool json_format() const { return common_.format == "json"; }

  void write(const std::string& name, const std::string& content) {
    io::atomic_write(out_ / name, content);
    outputs_.push_back(name);
  }
  void write_csv(const std::string& name, const io::Csv& csv) { write(name, csv.str()); }

  void finish() {
    json m;
    m["command"] = command_;
    m["master_seed"] = cfg_.seed;
    m["seeds"] = cfg_.seeds();
    m["outputs"] = outputs_;
    m["config_toml"] = to_toml(cfg_);
    io::atomic_write(out_ / "manifest.json", m.dump(2) + "\n");
    std::cerr << "wrote " << outputs_.size() + 1 << " file(s) to " << out_.string() << '\n';
  }

 private:
  std::string command_;
  Common common_;
  RunConfig cfg_;
  fs::path out_;
  ExperimentOptions opt_;
  std::vector<std::string> outputs_;
};

void print(const Run& run, const io::Csv& csv) {
  if (!run.json_format()) {
    std::cout << csv.str();
    return;
  }
  // Re-read our own CSV into records.
  json arr = json::array();
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    json rec;
    std::istringstream cells(line);
    std::string cell;
    for (const auto& h : csv.header()) {
      std::getline(cells, cell, ',');
      rec[h] = cell;
    }
    arr.push_back(rec);
  }
  std::cout << arr.dump(2) << '\n';
}

FluidParams fluid_params(const RunConfig& c) {
  const CapacityPlan plan = plan_at_lambda_tilde(c.fluid.lambda_tilde, c.fluid.gamma, c.params, c.fluid_kappas());
  return FluidParams::from_plan(plan, c.params);
}

RhsOptions rhs_options(const RunConfig& c) {
  RhsOptions o;
  o.admission = c.fluid.admission == "indicator" ? AdmissionRule::Indicator : AdmissionRule::Sliding;
  o.rule = c.fluid.low_count_rule == "zero_below_d" ? LowCountRule::ZeroBelowD : LowCountRule::Enumeration;
  return o;
}

void cmd_simulate(Run& run) {
  const RunConfig& c = run.config();
  SimConfig sc = c.sim_config();
  const auto seeds = c.seeds();
  const auto summary = run_replications(sc, seeds, run.options().jobs);
  run.write_csv("metrics.csv", io::metrics_csv(summary.runs));
  // The time series and event log come from the first replication, rerun with recording on.
  sc.seed = seeds.front();
  Simulator sim(sc);
  const RunMetrics first = sim.run();
  run.write_csv("timeseries.csv", io::timeseries_csv(first));
  if (sc.record_events) {
    std::string log;
    for (const auto& e : sim.events()) log += format_event(e) + '\n';
    run.write("events.log", log);
  }
  io::Csv s({"service_mean", "service_stderr", "pickup_mean_min", "dtc_mean_min", "workload_pct"});
  s.add({io::num(summary.service.mean), io::num(summary.service.stderr_), io::num(summary.pickup.mean),
         io::num(summary.drive_to_charger.mean), io::num(100 * summary.workload.mean)});
  print(run, s);
  run.finish();
}

void cmd_ode(Run& run) {
  const RunConfig& c = run.config();
  const FluidParams p = fluid_params(c);
  FluidState s0 = FluidState::all_full(p);
  if (c.fluid.start == "random") {
    std::mt19937_64 rng(c.seed);
    s0 = FluidState::random_feasible(p, rng);
  }
  IntegrateOptions o;
  o.dt = c.fluid.dt;
  o.record_every = c.fluid.record_every;
  o.rhs = rhs_options(c);
  const Trajectory tr = integrate(s0, p, c.fluid.t_end, o);
  run.write_csv("trajectory.csv", io::trajectory_csv(tr));
  json j{{"params", io::fluid_params_json(p)},
         {"final_time", tr.final_time},
         {"steps", tr.steps},
         {"converged", tr.converged},
         {"diverged", tr.diverged},
         {"final_rhs_norm", tr.final_rhs_norm},
         {"failure", tr.failure},
         {"XC", tr.final_state.XC},
         {"XB", tr.final_state.XB}};
  run.write("ode_summary.json", j.dump(2) + "\n");
  std::cout << "t=" << tr.final_time << " steps=" << tr.steps << " converged=" << tr.converged
            << " max|rhs|=" << tr.final_rhs_norm << '\n';
  run.finish();
  if (tr.diverged) throw ModelError("integration diverged: " + tr.failure);
}

void cmd_equilibrium(Run& run) {
  const RunConfig& c = run.config();
  const FluidParams p = fluid_params(c);
  const auto form = c.fluid.form == "unit_busy_closure" ? EquilibriumForm::UnitBusyClosure : EquilibriumForm::Stationary;
  const EquilibriumReport e = equilibrium(p, form);
  const double hat = hat_fixed_point(p);
  const json j = io::equilibrium_json(e, p, hat);
  run.write("equilibrium.json", j.dump(2) + "\n");
  std::cout << "p0=" << e.p0 << " I=" << e.admitted_fraction << " XC_N=" << e.XC_top << " XB_N=" << e.XB_top
            << " residual=" << e.residual_norm << " hat=" << hat << '\n';
  run.finish();
}

void cmd_bounds(Run& run, const Overrides& ov) {
  RunConfig& c = run.config();
  if (ov.alpha) c.bounds.alpha = {*ov.alpha};
  if (ov.lambda) c.bounds.lambda = {*ov.lambda};
  if (ov.gamma) c.bounds.gamma = {*ov.gamma};
  const double r = c.params.ratio(), T_R = c.params.trip_time_min;
  const io::Csv fo = io::first_order_csv(c.bounds.alpha, c.bounds.lambda, c.bounds.gamma, T_R, r);
  run.write_csv("bounds.csv", fo);
  run.write_csv("applicability.csv",
                io::applicability_csv(c.bounds.peak_multiplier, c.bounds.alpha_grid, c.bounds.T2_over_T1, r));
  std::string varying;
  for (double a : c.bounds.alpha)
    for (double k : c.bounds.T2_over_T1)
      for (double cc : c.bounds.peak_multiplier)
        for (double l : c.bounds.lambda) {
          if (!(a > 0 && a < 1)) continue;
          const DemandProfile prof{l, cc, c.bounds.valley_length, k * c.bounds.valley_length};
          const io::Csv v = io::varying_csv(varying_tradeoff(a, prof, r, T_R, c.bounds.c_alpha_points), a, prof);
          const std::string body = v.str();
          varying += varying.empty() ? body : body.substr(body.find('\n') + 1);
        }
  run.write("varying_bounds.csv", varying);
  print(run, fo);
  run.finish();
}

void cmd_plan(Run& run, const Overrides& ov) {
  RunConfig& c = run.config();
  if (ov.alpha) c.plan.alpha = *ov.alpha;
  if (ov.lambda) c.plan.lambda = *ov.lambda;
  if (ov.gamma) c.plan.gamma = *ov.gamma;
  const CapacityPlan plan = capacity_plan(c.plan.alpha, c.plan.lambda, c.plan.gamma, c.params, c.plan_kappas());
  const json j = io::plan_json(plan);
  run.write("plan.json", j.dump(2) + "\n");
  if (plan.lambda_tilde_exceeds_lambda)
    std::cerr << "warning: lambda_tilde exceeds lambda; lambda is below the plan's validity threshold\n";
  if (run.json_format()) {
    std::cout << j.dump(2) << '\n';
  } else {
    io::Csv t({"lambda_tilde", "n", "m", "A", "d", "gamma", "kappa1", "kappa2", "kappa3"});
    t.add({io::num(plan.lambda_tilde), io::num(plan.n), io::num(plan.m), io::num(plan.A), io::num(plan.d),
           io::num(plan.gamma), io::num(plan.kappa1), io::num(plan.kappa2), io::num(plan.kappa3)});
    std::cout << t.str();
  }
  run.finish();
}

void cmd_scaling(Run& run, const Overrides& ov) {
  RunConfig& c = run.config();
  if (!ov.series.empty()) {
    std::vector<SeriesSection> keep;
    for (const auto& name : ov.series) {
      bool found = false;
      for (const auto& s : c.scaling.series)
        if (s.name == name) keep.push_back(s), found = true;
      if (!found) throw ValidationError("--series " + name + " is not in the config");
    }
    c.scaling.series = keep;
  }
  GridRule rule;
  rule.kind = c.scaling.grid == "first_order" ? GridRule::Kind::FirstOrder : GridRule::Kind::Pilot;
  rule.pilot_seeds = std::size_t(c.scaling.pilot_seeds);
  const SimConfig base = c.sim_config();
  std::vector<ScalingResult> results;
  for (const auto& s : c.scaling.series) {
    ScalingSeriesConfig sc;
    sc.name = s.name;
    sc.beta = s.beta;
    sc.lambdas = s.lambdas;
    sc.c_coef = s.c;
    sc.T_R_tilde = c.scaling.T_R_tilde;
    sc.alpha = c.scaling.target;
    sc.m_values = s.m;
    results.push_back(scaling_experiment(sc, base, c.seeds(), rule, run.options()));
  }
  run.write_csv("scaling_results.csv", io::scaling_results_csv(results));
  run.write_csv("fleet90.csv", io::fleet90_csv(results));
  const io::Csv ex = io::exponents_csv(results);
  run.write_csv("exponents.csv", ex);
  print(run, ex);
  run.finish();
}

void cmd_compare(Run& run) {
  const RunConfig& c = run.config();
  std::vector<Policy> pols;
  for (const auto& p : c.compare.policies) pols.push_back(parse_policy_name(p));
  const auto rows = compare_policies(pols, c.compare.configs, c.sim_config(), c.seeds(), run.options().jobs);
  const io::Csv t = io::policy_compare_csv(rows);
  run.write_csv("policy_compare.csv", t);
  print(run, t);
  run.finish();
}

void cmd_pod_sweep(Run& run) {
  const RunConfig& c = run.config();
  std::vector<int> ds(c.pod_sweep.d.begin(), c.pod_sweep.d.end());
  const PodSweep sw = pod_sweep(ds, c.pod_sweep.pack_kwh, c.sim_config(), c.seeds(), run.options().jobs);
  const io::Csv t = io::pod_sweep_csv(sw);
  run.write_csv("pod_sweep.csv", t);
  print(run, t);
  run.finish();
}

void cmd_calibrate_tr(Run& run) {
  RunConfig& c = run.config();
  const MeanStderr t = calibrate_tr(c.sim_config(), c.seeds(), run.options().jobs);
  c.scaling.T_R_tilde = t.mean;
  run.write("calibrate_tr.json", json{{"T_R_tilde", t.mean}, {"stderr", t.stderr_}}.dump(2) + "\n");
  // The pilot estimate written into a config the scaling step can consume.
  run.write("calibrated.toml", to_toml(c));
  std::cout << "T_R_tilde=" << io::num(t.mean) << " stderr=" << io::num(t.stderr_) << '\n';
  run.finish();
}

void cmd_grid(Run& run) {
  const RunConfig& c = run.config();
  detail::require(!c.grid.x_values.empty() && !c.grid.y_values.empty(),
                  "config keys 'grid.x_values' and 'grid.y_values' must be non-empty");
  const auto cells = service_grid({c.grid.x, c.grid.x_values}, {c.grid.y, c.grid.y_values}, c.sim_config(),
                                  c.seeds(), run.options().jobs);
  const io::Csv t = io::service_grid_csv(c.grid.x, c.grid.y, cells);
  run.write_csv("service_grid.csv", t);
  print(run, t);
  run.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fleet and charger planning for electric ride-hailing"};
  app.require_subcommand(1);
  Common common;
  Overrides ov;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "TOML config, or a manifest.json to replay");
    sub->add_option("--out", common.out, "output directory (default: $EVFLEET_OUT, then ./out)");
    sub->add_option("--seed", common.seed, "master seed");
    sub->add_option("--replications", common.replications, "seeds per configuration");
    sub->add_option("--jobs", common.jobs, "worker threads");
    sub->add_option("--format", common.format, "stdout format")->check(CLI::IsMember({"csv", "json"}));
    sub->add_flag("-v,--verbose", common.verbose, "progress on stderr");
  };
  struct Entry {
    const char* name;
    const char* help;
  };
  const std::vector<Entry> entries{
      {"simulate", "run seeded replications of one configuration"},
      {"ode", "integrate the fluid model"},
      {"equilibrium", "solve for the fluid rest point"},
      {"bounds", "lower bounds, scaling terms and peak/valley cases"},
      {"plan", "capacity plan (lambda_tilde, n, m, A, d)"},
      {"scaling", "fleet-at-target sweeps and scaling exponents"},
      {"compare", "compare dispatch policies"},
      {"pod-sweep", "service level over d and pack size"},
      {"calibrate-tr", "estimate the fulfilled trip time from a pilot"},
      {"grid", "service level over a 2-D grid of settings"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& e : entries) {
    auto* s = app.add_subcommand(e.name, e.help);
    add_common(s);
    subs[e.name] = s;
  }
  for (const char* name : {"bounds", "plan"}) {
    subs[name]->add_option("--alpha", ov.alpha, "target service level");
    subs[name]->add_option("--lambda", ov.lambda, "arrival rate per minute");
    subs[name]->add_option("--gamma", ov.gamma, "second-order exponent");
  }
  subs["scaling"]->add_option("--series", ov.series, "series names to run (default: all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    for (const auto& [name, sub] : subs) {
      if (!sub->parsed()) continue;
      Run run(name, common);
      if (name == "simulate") cmd_simulate(run);
      else if (name == "ode") cmd_ode(run);
      else if (name == "equilibrium") cmd_equilibrium(run);
      else if (name == "bounds") cmd_bounds(run, ov);
      else if (name == "plan") cmd_plan(run, ov);
      else if (name == "scaling") cmd_scaling(run, ov);
      else if (name == "compare") cmd_compare(run);
      else if (name == "pod-sweep") cmd_pod_sweep(run);
      else if (name == "calibrate-tr") cmd_calibrate_tr(run);
      else if (name == "grid") cmd_grid(run);
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
