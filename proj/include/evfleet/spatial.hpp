#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "error.hpp"
#include "regression.hpp"

namespace evfleet {

struct Point {
  double x = 0;
  double y = 0;
};

inline double distance(Point a, Point b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return std::sqrt(dx * dx + dy * dy);
}

inline Point uniform_point(std::mt19937_64& rng, double side) {
  std::uniform_real_distribution<double> u(0.0, side);
  const double x = u(rng);
  return {x, u(rng)};
}

// `rank` breaks exact distance ties before the id does (lower first).
struct Neighbor {
  std::uint32_t id = 0;
  double dist = 0;
  int rank = 0;
};

inline bool closer(const Neighbor& a, const Neighbor& b) {
  if (a.dist != b.dist) return a.dist < b.dist;
  if (a.rank != b.rank) return a.rank < b.rank;
  return a.id < b.id;
}

struct AcceptAll {
  bool operator()(std::uint32_t, double) const { return true; }
};

struct NoRank {
  int operator()(std::uint32_t) const { return 0; }
};

// Uniform bucket grid over [0, side]^2 holding (id, point) entries with dense ids.
class GridIndex {
 public:
  GridIndex(double side, std::size_t expected_population) : side_(side) {
    detail::require(side > 0, "GridIndex: side must be positive");
    cells_per_side_ = std::max<std::size_t>(1, std::size_t(std::sqrt(double(expected_population))));
    cell_ = side_ / double(cells_per_side_);
    cells_.resize(cells_per_side_ * cells_per_side_);
  }

  std::size_t size() const { return size_; }
  bool contains(std::uint32_t id) const { return id < slots_.size() && slots_[id].cell != kNone; }
  Point position(std::uint32_t id) const { return cells_[slots_[id].cell][slots_[id].index].p; }

  void insert(std::uint32_t id, Point p) {
    detail::require(!contains(id), "GridIndex: id already present");
    if (id >= slots_.size()) slots_.resize(std::size_t(id) + 1);
    const std::size_t c = cell_of(p);
    slots_[id] = {c, cells_[c].size()};
    cells_[c].push_back({id, p});
    ++size_;
  }

  void remove(std::uint32_t id) {
    detail::require(contains(id), "GridIndex: id not present");
    auto& bucket = cells_[slots_[id].cell];
    const std::size_t idx = slots_[id].index;
    if (idx + 1 != bucket.size()) {
      bucket[idx] = bucket.back();
      slots_[bucket[idx].id].index = idx;
    }
    bucket.pop_back();
    slots_[id].cell = kNone;
    --size_;
  }

  void move(std::uint32_t id, Point p) {
    remove(id);
    insert(id, p);
  }

  // Up to k entries passing filter(id, dist), ordered by (dist, rank(id), id).
  template <typename Filter = AcceptAll, typename Rank = NoRank>
  std::vector<Neighbor> k_nearest(Point q, std::size_t k, Filter&& filter = {}, Rank&& rank = {}) const {
    detail::require(k >= 1, "k_nearest: k must be at least 1");
    std::vector<Neighbor> best;  // max-heap on `closer`
    best.reserve(k + 1);
    const long cx = clamp_cell(q.x), cy = clamp_cell(q.y);
    const long n = long(cells_per_side_);
    for (long ring = 0; ring < n; ++ring) {
      visit_ring(cx, cy, ring, [&](const Entry& e) {
        const double d = distance(q, e.p);
        const Neighbor cand{e.id, d, rank(e.id)};
        if (best.size() == k && !closer(cand, best.front())) return;
        if (!filter(e.id, d)) return;
        best.push_back(cand);
        std::push_heap(best.begin(), best.end(), closer);
        if (best.size() > k) {
          std::pop_heap(best.begin(), best.end(), closer);
          best.pop_back();
        }
      });
      // Anything outside rings 0..ring is at least ring * cell_ away.
      if (best.size() == k && best.front().dist < double(ring) * cell_) break;
    }
    std::sort_heap(best.begin(), best.end(), closer);
    return best;
  }

  template <typename Filter = AcceptAll, typename Rank = NoRank>
  std::optional<Neighbor> nearest(Point q, Filter&& filter = {}, Rank&& rank = {}) const {
    auto v = k_nearest(q, 1, std::forward<Filter>(filter), std::forward<Rank>(rank));
    if (v.empty()) return std::nullopt;
    return v.front();
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& bucket : cells_)
      for (const auto& e : bucket) fn(e.id, e.p);
  }

 private:
  struct Entry {
    std::uint32_t id;
    Point p;
  };
  struct Slot {
    std::size_t cell = kNone;
    std::size_t index = 0;
  };
  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  long clamp_cell(double v) const {
    const long c = long(std::floor(v / cell_));
    return std::clamp(c, 0L, long(cells_per_side_) - 1);
  }
  std::size_t cell_of(Point p) const {
    return std::size_t(clamp_cell(p.y)) * cells_per_side_ + std::size_t(clamp_cell(p.x));
  }

  template <typename Fn>
  void visit_ring(long cx, long cy, long ring, Fn&& fn) const {
    const long n = long(cells_per_side_);
    auto visit = [&](long x, long y) {
      if (x < 0 || y < 0 || x >= n || y >= n) return;
      for (const Entry& e : cells_[std::size_t(y * n + x)]) fn(e);
    };
    if (ring == 0) {
      visit(cx, cy);
      return;
    }
    for (long x = cx - ring; x <= cx + ring; ++x) {
      visit(x, cy - ring);
      visit(x, cy + ring);
    }
    for (long y = cy - ring + 1; y <= cy + ring - 1; ++y) {
      visit(cx - ring, y);
      visit(cx + ring, y);
    }
  }

  double side_;
  std::size_t cells_per_side_ = 1;
  double cell_ = 1;
  std::vector<std::vector<Entry>> cells_;
  std::vector<Slot> slots_;
  std::size_t size_ = 0;
};

// Free-post accounting. In `Claiming` mode a post already targeted by a vehicle
// on its way counts as taken; `Blind` only looks at posts in use.
enum class ClaimMode { Blind, Claiming };

struct ChargerSite {
  Point position;
  int posts = 0;
  int occupied = 0;
  int claims = 0;

  int free_posts(ClaimMode mode) const {
    return posts - occupied - (mode == ClaimMode::Claiming ? claims : 0);
  }
};

// `index` holds the charger sites keyed by their position in `sites`.
inline std::optional<std::uint32_t> nearest_available_charger(const GridIndex& index,
                                                              const std::vector<ChargerSite>& sites,
                                                              Point from, ClaimMode mode) {
  auto hit = index.nearest(from, [&](std::uint32_t id, double) { return sites[id].free_posts(mode) > 0; });
  if (!hit) return std::nullopt;
  return hit->id;
}

struct NearestScaling {
  std::vector<double> k_values;
  std::vector<double> mean_distance;
  std::optional<RegressionFit> fit;  // absent when fewer than two usable k values
};

// Monte-Carlo mean of the d-th nearest of k uniform points to the region centre.
inline NearestScaling estimate_nearest_scaling(std::uint64_t seed, const std::vector<std::size_t>& k_values,
                                               std::size_t d, std::size_t trials, double side = 10.0) {
  detail::require(d >= 1, "estimate_nearest_scaling: d must be at least 1");
  detail::require(trials >= 1000, "estimate_nearest_scaling: need at least 1000 trials");
  std::mt19937_64 rng(seed);
  const Point centre{side / 2, side / 2};
  NearestScaling out;
  std::vector<double> dists;
  std::vector<double> fit_k, fit_mean;
  for (std::size_t k : k_values) {
    detail::require(k >= d, "estimate_nearest_scaling: each k must be at least d");
    dists.resize(k);
    double total = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      for (std::size_t i = 0; i < k; ++i) dists[i] = distance(centre, uniform_point(rng, side));
      std::nth_element(dists.begin(), dists.begin() + std::ptrdiff_t(d - 1), dists.end());
      total += dists[d - 1];
    }
    out.k_values.push_back(double(k));
    out.mean_distance.push_back(total / double(trials));
    // d == k is the maximum distance, which does not follow the sqrt(d/k) law.
    if (k > d) {
      fit_k.push_back(double(k));
      fit_mean.push_back(out.mean_distance.back());
    }
  }
  if (fit_k.size() >= 2) out.fit = fit_loglog(fit_k, fit_mean);
  return out;
}

}  // namespace evfleet
