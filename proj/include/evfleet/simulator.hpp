#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <optional>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "error.hpp"
#include "model.hpp"
#include "spatial.hpp"

namespace evfleet {

enum class Activity : std::uint8_t { Idle, PickingUp, DrivingWithCustomer, DrivingToCharger, WaitingAtCharger, Charging };
constexpr std::size_t kActivityCount = 6;

inline const char* to_string(Activity a) {
  switch (a) {
    case Activity::Idle: return "idle";
    case Activity::PickingUp: return "picking_up";
    case Activity::DrivingWithCustomer: return "driving_with_customer";
    case Activity::DrivingToCharger: return "driving_to_charger";
    case Activity::WaitingAtCharger: return "waiting_at_charger";
    case Activity::Charging: return "charging";
  }
  return "?";
}

inline bool is_dispatchable(Activity a) {
  return a == Activity::Idle || a == Activity::Charging || a == Activity::WaitingAtCharger;
}

// Order among dispatchable vehicles at exactly the same distance (typically parked
// at the same charger): prefer not to interrupt a charge.
inline int tie_rank(Activity a) {
  switch (a) {
    case Activity::Idle: return 0;
    case Activity::Charging: return 1;
    case Activity::WaitingAtCharger: return 2;
    default: return 3;
  }
}

struct Policy {
  enum class Kind { CD, CAD, PoD };
  Kind kind = Kind::CD;
  int d = 1;

  static Policy cd() { return {Kind::CD, 1}; }
  static Policy cad() { return {Kind::CAD, 1}; }
  static Policy pod(int d) { return {Kind::PoD, d}; }

  std::string name() const {
    switch (kind) {
      case Kind::CD: return "CD";
      case Kind::CAD: return "CAD";
      case Kind::PoD: return "PoD" + std::to_string(d);
    }
    return "?";
  }
};

inline Policy parse_policy(const std::string& name, int d) {
  if (name == "CD") return Policy::cd();
  if (name == "CAD") return Policy::cad();
  if (name == "PoD") {
    detail::require(d >= 1, "policy PoD needs d >= 1");
    return Policy::pod(d);
  }
  throw ValidationError("unknown policy '" + name + "' (expected CD, CAD or PoD)");
}

struct TripRequest {
  double arrival_time = 0;
  Point origin;
  Point destination;
};

struct SimConfig {
  SystemParams params;
  long n = 0;
  long m = 0;
  Policy policy = Policy::pod(2);
  double lambda = 0;
  double horizon = 1000;
  double warmup = 500;
  std::uint64_t seed = 0;
  ClaimMode claiming = ClaimMode::Blind;
  std::optional<DemandProfile> profile;  // overrides lambda when set
  bool record_events = false;
  double sample_interval = 1.0;
  double initial_soc_lo = 0.4;
  double initial_soc_hi = 0.6;

  void validate() const {
    params.validate();
    detail::require(n >= 1, "n must be at least 1");
    detail::require(m >= params.posts_per_charger, "m must be at least posts_per_charger");
    detail::require(lambda >= 0, "lambda must be non-negative");
    detail::require(horizon > warmup && warmup >= 0, "need 0 <= warmup < horizon");
    detail::require(sample_interval > 0, "sample_interval must be positive");
    detail::require(0 <= initial_soc_lo && initial_soc_lo <= initial_soc_hi && initial_soc_hi <= 1,
                    "initial SoC range must lie in [0, 1]");
    if (policy.kind == Policy::Kind::PoD) detail::require(policy.d >= 1, "PoD needs d >= 1");
    if (profile) profile->validate();
  }
};

// Explicit starting layout. Vehicles start Idle. When `requests` is non-empty it
// replaces the Poisson arrival stream.
struct Scenario {
  struct VehicleSpec {
    Point position;
    double soc = 1.0;
  };
  std::vector<VehicleSpec> vehicles;
  std::vector<Point> charger_sites;
  std::vector<TripRequest> requests;
};

struct Vehicle {
  std::uint32_t id = 0;
  Point position;
  double soc = 1.0;  // while Charging: the value at activity_since
  Activity activity = Activity::Idle;
  std::optional<std::uint32_t> claimed_charger;  // target while DrivingToCharger
  double activity_since = 0;

  std::int32_t site = -1;  // charger site while waiting or charging
  std::uint32_t version = 0;
  Point trip_origin;
  Point trip_destination;
  double trip_pickup_min = 0;
  double trip_ride_min = 0;
  double charger_drive_min = 0;
};

struct TimeSample {
  double t = 0;
  std::array<int, kActivityCount> counts{};
  double mean_soc = 0;
};

enum class EventKind : std::uint8_t {
  Arrival,
  Dispatch,
  Drop,
  PickupDone,
  DropOff,
  ToCharger,
  ChargerArrival,
  ChargeStart,
  Wait,
  ChargeFull,
  Idle,
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::Arrival: return "arrival";
    case EventKind::Dispatch: return "dispatch";
    case EventKind::Drop: return "drop";
    case EventKind::PickupDone: return "pickup_done";
    case EventKind::DropOff: return "drop_off";
    case EventKind::ToCharger: return "to_charger";
    case EventKind::ChargerArrival: return "charger_arrival";
    case EventKind::ChargeStart: return "charge_start";
    case EventKind::Wait: return "wait";
    case EventKind::ChargeFull: return "charge_full";
    case EventKind::Idle: return "idle";
  }
  return "?";
}

struct EventRecord {
  double time = 0;
  EventKind kind = EventKind::Arrival;
  std::int64_t vehicle = -1;
  std::int64_t site = -1;
  double soc = 0;
};

inline std::string format_event(const EventRecord& e) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%.9f %s vehicle=%lld site=%lld soc=%.9f", e.time, to_string(e.kind),
                (long long)e.vehicle, (long long)e.site, e.soc);
  return buf;
}

struct RunMetrics {
  std::uint64_t seed = 0;
  double service_level = 1.0;
  double avg_pickup = 0;
  double avg_drive_to_charger = 0;
  double workload_served = 1.0;
  double mean_fulfilled_trip_time = 0;
  double mean_requested_trip_time = 0;
  long long arrivals = 0;
  long long effective_arrivals = 0;  // served requests in the window
  long long charger_trips = 0;
  long long soc_floor_hits = 0;
  double window_length = 0;
  // Window averages: activity counts are time-weighted, SoC averages the samples.
  std::array<double, kActivityCount> mean_counts{};
  double mean_soc = 0;
  // Split by demand phase; all requests count as valley without a profile.
  long long valley_arrivals = 0;
  long long valley_served = 0;
  long long peak_arrivals = 0;
  long long peak_served = 0;
  std::vector<TimeSample> timeseries;

  double customers_in_system() const {
    return mean_counts[std::size_t(Activity::PickingUp)] + mean_counts[std::size_t(Activity::DrivingWithCustomer)];
  }
  double valley_service() const { return valley_arrivals ? double(valley_served) / double(valley_arrivals) : 1.0; }
  double peak_service() const { return peak_arrivals ? double(peak_served) / double(peak_arrivals) : 1.0; }
};

class Simulator {
 public:
  // Protocol start: uniform positions, SoC uniform on the configured range,
  // floor(m / posts) charger sites at uniform locations.
  explicit Simulator(const SimConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    Scenario sc;
    const double side = cfg_.params.region_side_mi;
    std::uniform_real_distribution<double> soc(cfg_.initial_soc_lo, cfg_.initial_soc_hi);
    sc.vehicles.resize(std::size_t(cfg_.n));
    for (auto& v : sc.vehicles) {
      v.position = uniform_point(rng_, side);
      v.soc = soc(rng_);
    }
    const long sites = cfg_.m / cfg_.params.posts_per_charger;
    sc.charger_sites.resize(std::size_t(sites));
    for (auto& p : sc.charger_sites) p = uniform_point(rng_, side);
    setup(std::move(sc));
  }

  // Explicit layout; cfg.n and cfg.m are overwritten to match it.
  Simulator(const SimConfig& cfg, Scenario sc) : cfg_(cfg), rng_(cfg.seed) {
    cfg_.n = long(sc.vehicles.size());
    cfg_.m = long(sc.charger_sites.size()) * cfg_.params.posts_per_charger;
    cfg_.validate();
    setup(std::move(sc));
  }

  const SimConfig& config() const { return cfg_; }
  const std::vector<Vehicle>& vehicles() const { return vehicles_; }
  const std::vector<ChargerSite>& chargers() const { return sites_; }
  const std::deque<std::uint32_t>& queue_at(std::size_t site) const { return queues_[site]; }
  const std::vector<EventRecord>& events() const { return log_; }
  const std::array<int, kActivityCount>& activity_counts() const { return counts_; }
  double now() const { return now_; }

  double soc_now(const Vehicle& v) const {
    if (v.activity != Activity::Charging) return v.soc;
    return std::min(1.0, v.soc + charge_per_min_ * (now_ - v.activity_since));
  }

  // Matching decision for a request at the current time. Does not mutate state.
  std::optional<std::uint32_t> select_vehicle(const TripRequest& req) const {
    const double ride_min = distance(req.origin, req.destination) / speed_;
    auto feasible = [&](std::uint32_t id, double dist) {
      const double need = cfg_.params.discharge_rate_kw * (dist / speed_ + ride_min) / 60.0 +
                          cfg_.params.s_min * cfg_.params.pack_kwh;
      return soc_now(vehicles_[id]) * cfg_.params.pack_kwh >= need;
    };
    auto rank = [&](std::uint32_t id) { return tie_rank(vehicles_[id].activity); };
    switch (cfg_.policy.kind) {
      case Policy::Kind::CAD: {
        auto hit = dispatchable_.nearest(req.origin, feasible, rank);
        if (!hit) return std::nullopt;
        return hit->id;
      }
      case Policy::Kind::CD:
      case Policy::Kind::PoD: {
        const std::size_t d = cfg_.policy.kind == Policy::Kind::CD ? 1 : std::size_t(cfg_.policy.d);
        const auto pool = dispatchable_.k_nearest(req.origin, d, AcceptAll{}, rank);
        if (pool.empty()) return std::nullopt;
        const Neighbor* best = &pool.front();
        double best_soc = soc_now(vehicles_[best->id]);
        for (const auto& nb : pool) {
          const double s = soc_now(vehicles_[nb.id]);
          if (s > best_soc || (s == best_soc && nb.id < best->id)) {
            best = &nb;
            best_soc = s;
          }
        }
        if (!feasible(best->id, best->dist)) return std::nullopt;
        return best->id;
      }
    }
    return std::nullopt;
  }

  RunMetrics run() {
    detail::require(!ran_, "Simulator::run may only be called once");
    ran_ = true;
    for (auto& v : vehicles_) route_after_trip(v);
    schedule_next_arrival(0.0);
    push(0.0, Kind::Sample, 0);
    while (!heap_.empty()) {
      const Event e = heap_.top();
      if (e.t > cfg_.horizon) break;
      heap_.pop();
      advance(e.t);
      handle(e);
    }
    advance(cfg_.horizon);
    return finish();
  }

 private:
  enum class Kind : std::uint8_t { Arrival, PickupDone, DropOff, ChargerArrival, ChargeFull, Sample };
  struct Event {
    double t;
    std::uint64_t seq;
    Kind kind;
    std::uint32_t subject;
    std::uint32_t version;
    bool operator>(const Event& o) const { return t > o.t || (t == o.t && seq > o.seq); }
  };

  void setup(Scenario sc) {
    const auto& p = cfg_.params;
    speed_ = p.speed_mi_per_min();
    charge_per_min_ = p.charge_rate_kw / (p.pack_kwh * 60.0);
    drain_per_min_ = p.discharge_rate_kw / (p.pack_kwh * 60.0);
    script_ = std::move(sc.requests);
    std::sort(script_.begin(), script_.end(),
              [](const TripRequest& a, const TripRequest& b) { return a.arrival_time < b.arrival_time; });

    vehicles_.resize(sc.vehicles.size());
    dispatchable_ = GridIndex(p.region_side_mi, sc.vehicles.size());
    for (std::size_t i = 0; i < sc.vehicles.size(); ++i) {
      auto& v = vehicles_[i];
      v.id = std::uint32_t(i);
      v.position = sc.vehicles[i].position;
      v.soc = sc.vehicles[i].soc;
      detail::require(v.soc >= 0 && v.soc <= 1, "initial SoC outside [0, 1]");
      v.activity = Activity::Idle;
      ++counts_[std::size_t(Activity::Idle)];
    }
    sites_.resize(sc.charger_sites.size());
    queues_.resize(sc.charger_sites.size());
    charger_index_ = GridIndex(p.region_side_mi, sc.charger_sites.size());
    for (std::size_t i = 0; i < sc.charger_sites.size(); ++i) {
      sites_[i].position = sc.charger_sites[i];
      sites_[i].posts = p.posts_per_charger;
      charger_index_.insert(std::uint32_t(i), sc.charger_sites[i]);
    }
  }

  void push(double t, Kind k, std::uint32_t subject, std::uint32_t version = 0) {
    heap_.push({t, seq_++, k, subject, version});
  }

  void log(EventKind k, std::int64_t vehicle, std::int64_t site, double soc) {
    if (cfg_.record_events) log_.push_back({now_, k, vehicle, site, soc});
  }

  bool in_window(double t) const { return t >= cfg_.warmup && t < cfg_.horizon; }

  void advance(double t) {
    const double a = std::max(now_, cfg_.warmup), b = std::min(t, cfg_.horizon);
    if (b > a) {
      for (std::size_t i = 0; i < kActivityCount; ++i) count_integral_[i] += counts_[i] * (b - a);
    }
    now_ = t;
  }

  void set_activity(Vehicle& v, Activity a) {
    --counts_[std::size_t(v.activity)];
    ++counts_[std::size_t(a)];
    v.activity = a;
    v.activity_since = now_;
  }

  void make_dispatchable(Vehicle& v) {
    if (!dispatchable_.contains(v.id)) dispatchable_.insert(v.id, v.position);
  }

  void handle(const Event& e) {
    switch (e.kind) {
      case Kind::Arrival: on_arrival(); break;
      case Kind::PickupDone: on_pickup_done(vehicles_[e.subject]); break;
      case Kind::DropOff: on_drop_off(vehicles_[e.subject]); break;
      case Kind::ChargerArrival: on_charger_arrival(vehicles_[e.subject]); break;
      case Kind::ChargeFull:
        if (vehicles_[e.subject].version == e.version) on_charge_full(vehicles_[e.subject]);
        break;
      case Kind::Sample: on_sample(); break;
    }
  }

  void schedule_next_arrival(double from) {
    if (!script_.empty()) {
      if (script_pos_ < script_.size()) push(script_[script_pos_].arrival_time, Kind::Arrival, 0);
      return;
    }
    if (cfg_.profile) {
      // Thinning against the peak rate.
      const double peak = cfg_.profile->peak_multiplier * cfg_.profile->base_rate;
      if (peak <= 0) return;
      std::exponential_distribution<double> gap(peak);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      double t = from;
      for (;;) {
        t += gap(rng_);
        if (t > cfg_.horizon) return;
        if (u(rng_) * peak <= cfg_.profile->rate_at(t)) break;
      }
      push(t, Kind::Arrival, 0);
      return;
    }
    if (cfg_.lambda <= 0) return;
    std::exponential_distribution<double> gap(cfg_.lambda);
    const double t = from + gap(rng_);
    if (t <= cfg_.horizon) push(t, Kind::Arrival, 0);
  }

  void on_arrival() {
    TripRequest req;
    if (!script_.empty()) {
      req = script_[script_pos_++];
    } else {
      req.arrival_time = now_;
      req.origin = uniform_point(rng_, cfg_.params.region_side_mi);
      req.destination = uniform_point(rng_, cfg_.params.region_side_mi);
    }
    const double miles = distance(req.origin, req.destination);
    const bool window = in_window(now_);
    const bool peak = cfg_.profile && cfg_.profile->in_peak(now_);
    if (window) {
      ++m_.arrivals;
      requested_miles_ += miles;
      requested_ride_sum_ += miles / speed_;
      ++(peak ? m_.peak_arrivals : m_.valley_arrivals);
    }
    log(EventKind::Arrival, -1, -1, 0);
    const auto chosen = select_vehicle(req);
    if (!chosen) {
      log(EventKind::Drop, -1, -1, 0);
    } else {
      Vehicle& v = vehicles_[*chosen];
      const double pickup_min = distance(v.position, req.origin) / speed_;
      dispatch(v, req, pickup_min, miles / speed_);
      if (window) {
        ++m_.effective_arrivals;
        ++(peak ? m_.peak_served : m_.valley_served);
        pickup_sum_ += pickup_min;
        ride_sum_ += miles / speed_;
        served_miles_ += miles;
      }
    }
    schedule_next_arrival(now_);
  }

  void dispatch(Vehicle& v, const TripRequest& req, double pickup_min, double ride_min) {
    v.soc = soc_now(v);
    const std::int32_t site = v.site;
    if (v.activity == Activity::Charging) {
      --sites_[std::size_t(site)].occupied;
    } else if (v.activity == Activity::WaitingAtCharger) {
      auto& q = queues_[std::size_t(site)];
      q.erase(std::find(q.begin(), q.end(), v.id));
    }
    ++v.version;
    v.site = -1;
    dispatchable_.remove(v.id);
    set_activity(v, Activity::PickingUp);
    v.trip_origin = req.origin;
    v.trip_destination = req.destination;
    v.trip_pickup_min = pickup_min;
    v.trip_ride_min = ride_min;
    log(EventKind::Dispatch, v.id, site, v.soc);
    if (site >= 0) promote(std::size_t(site));
    push(now_ + pickup_min, Kind::PickupDone, v.id);
  }

  void on_pickup_done(Vehicle& v) {
    v.position = v.trip_origin;
    set_activity(v, Activity::DrivingWithCustomer);
    log(EventKind::PickupDone, v.id, -1, v.soc);
    push(now_ + v.trip_ride_min, Kind::DropOff, v.id);
  }

  void debit(Vehicle& v, double minutes) {
    v.soc -= drain_per_min_ * minutes;
    if (v.soc < 0) {
      v.soc = 0;
      if (in_window(now_)) ++m_.soc_floor_hits;
    }
  }

  void on_drop_off(Vehicle& v) {
    v.position = v.trip_destination;
    debit(v, v.trip_pickup_min + v.trip_ride_min);
    log(EventKind::DropOff, v.id, -1, v.soc);
    route_after_trip(v);
  }

  // Becomes Idle, or heads to the closest charger with a free post when SoC < s_max.
  void route_after_trip(Vehicle& v) {
    set_activity(v, Activity::Idle);
    if (v.soc < cfg_.params.s_max) {
      const auto site = nearest_available_charger(charger_index_, sites_, v.position, cfg_.claiming);
      if (site) {
        auto& s = sites_[*site];
        ++s.claims;
        v.claimed_charger = *site;
        v.charger_drive_min = distance(v.position, s.position) / speed_;
        set_activity(v, Activity::DrivingToCharger);
        if (in_window(now_)) {
          ++m_.charger_trips;
          dtc_sum_ += v.charger_drive_min;
        }
        log(EventKind::ToCharger, v.id, *site, v.soc);
        push(now_ + v.charger_drive_min, Kind::ChargerArrival, v.id);
        return;
      }
    }
    make_dispatchable(v);
    log(EventKind::Idle, v.id, -1, v.soc);
  }

  void on_charger_arrival(Vehicle& v) {
    const std::uint32_t site = *v.claimed_charger;
    auto& s = sites_[site];
    --s.claims;
    v.claimed_charger.reset();
    v.position = s.position;
    debit(v, v.charger_drive_min);
    v.site = std::int32_t(site);
    log(EventKind::ChargerArrival, v.id, site, v.soc);
    if (s.occupied < s.posts) {
      start_charging(v);
    } else {
      set_activity(v, Activity::WaitingAtCharger);
      queues_[site].push_back(v.id);
      log(EventKind::Wait, v.id, site, v.soc);
    }
    make_dispatchable(v);
  }

  void start_charging(Vehicle& v) {
    ++sites_[std::size_t(v.site)].occupied;
    set_activity(v, Activity::Charging);
    ++v.version;
    log(EventKind::ChargeStart, v.id, v.site, v.soc);
    push(now_ + (1.0 - v.soc) / charge_per_min_, Kind::ChargeFull, v.id, v.version);
  }

  void on_charge_full(Vehicle& v) {
    v.soc = 1.0;
    const std::int32_t site = v.site;
    --sites_[std::size_t(site)].occupied;
    v.site = -1;
    ++v.version;
    set_activity(v, Activity::Idle);
    log(EventKind::ChargeFull, v.id, site, v.soc);
    promote(std::size_t(site));
  }

  void promote(std::size_t site) {
    auto& q = queues_[site];
    while (!q.empty() && sites_[site].occupied < sites_[site].posts) {
      Vehicle& head = vehicles_[q.front()];
      q.pop_front();
      start_charging(head);
    }
  }

  void on_sample() {
    TimeSample s;
    s.t = now_;
    s.counts = counts_;
    double total = 0;
    for (const auto& v : vehicles_) total += soc_now(v);
    s.mean_soc = vehicles_.empty() ? 0 : total / double(vehicles_.size());
    m_.timeseries.push_back(s);
    const double next = now_ + cfg_.sample_interval;
    if (next <= cfg_.horizon + 1e-9) push(next, Kind::Sample, 0);
  }

  RunMetrics finish() {
    RunMetrics out = std::move(m_);
    out.seed = cfg_.seed;
    out.window_length = cfg_.horizon - cfg_.warmup;
    if (out.arrivals > 0) {
      out.service_level = double(out.effective_arrivals) / double(out.arrivals);
      out.mean_requested_trip_time = requested_ride_sum_ / double(out.arrivals);
    }
    if (out.effective_arrivals > 0) {
      out.avg_pickup = pickup_sum_ / double(out.effective_arrivals);
      out.mean_fulfilled_trip_time = ride_sum_ / double(out.effective_arrivals);
    }
    if (requested_miles_ > 0) out.workload_served = served_miles_ / requested_miles_;
    if (out.charger_trips > 0) out.avg_drive_to_charger = dtc_sum_ / double(out.charger_trips);
    for (std::size_t i = 0; i < kActivityCount; ++i) out.mean_counts[i] = count_integral_[i] / out.window_length;
    double soc_total = 0;
    std::size_t soc_samples = 0;
    for (const auto& s : out.timeseries)
      if (s.t >= cfg_.warmup) {
        soc_total += s.mean_soc;
        ++soc_samples;
      }
    if (soc_samples) out.mean_soc = soc_total / double(soc_samples);
    return out;
  }

  SimConfig cfg_;
  std::mt19937_64 rng_;
  double speed_ = 1;
  double charge_per_min_ = 0;
  double drain_per_min_ = 0;

  std::vector<Vehicle> vehicles_;
  std::vector<ChargerSite> sites_;
  std::vector<std::deque<std::uint32_t>> queues_;
  GridIndex dispatchable_{1.0, 1};
  GridIndex charger_index_{1.0, 1};
  std::array<int, kActivityCount> counts_{};

  std::vector<TripRequest> script_;
  std::size_t script_pos_ = 0;

  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> heap_;
  std::uint64_t seq_ = 0;
  double now_ = 0;
  bool ran_ = false;

  RunMetrics m_;
  double pickup_sum_ = 0, ride_sum_ = 0, dtc_sum_ = 0;
  double served_miles_ = 0, requested_miles_ = 0, requested_ride_sum_ = 0;
  std::array<double, kActivityCount> count_integral_{};
  std::vector<EventRecord> log_;
};

inline RunMetrics run(const SimConfig& cfg) { return Simulator(cfg).run(); }

}  // namespace evfleet
