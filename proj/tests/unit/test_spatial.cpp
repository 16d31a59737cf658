#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "evfleet/spatial.hpp"

using namespace evfleet;

namespace {

std::vector<std::uint32_t> brute_force(const std::vector<Point>& pts, Point q, std::size_t k,
                                       const std::vector<bool>& present) {
  std::vector<std::uint32_t> ids;
  for (std::uint32_t i = 0; i < pts.size(); ++i)
    if (present[i]) ids.push_back(i);
  std::sort(ids.begin(), ids.end(), [&](std::uint32_t a, std::uint32_t b) {
    const double da = distance(q, pts[a]), db = distance(q, pts[b]);
    return da != db ? da < db : a < b;
  });
  if (ids.size() > k) ids.resize(k);
  return ids;
}

std::vector<std::uint32_t> ids_of(const std::vector<Neighbor>& v) {
  std::vector<std::uint32_t> out;
  for (const auto& n : v) out.push_back(n.id);
  return out;
}

}  // namespace

TEST(GridIndex, HandExample) {
  GridIndex idx(10, 3);
  idx.insert(0, {3, 4});  // a
  idx.insert(1, {6, 8});  // b
  idx.insert(2, {0, 1});  // c
  const auto got = idx.k_nearest({0, 0}, 2);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].id, 2u);
  EXPECT_DOUBLE_EQ(got[0].dist, 1.0);
  EXPECT_EQ(got[1].id, 0u);
  EXPECT_DOUBLE_EQ(got[1].dist, 5.0);
}

TEST(GridIndex, KLargerThanPopulationReturnsAllSorted) {
  GridIndex idx(10, 3);
  idx.insert(0, {3, 4});
  idx.insert(1, {6, 8});
  idx.insert(2, {0, 1});
  EXPECT_EQ(ids_of(idx.k_nearest({0, 0}, 10)), (std::vector<std::uint32_t>{2, 0, 1}));
}

TEST(GridIndex, TiesBrokenByAscendingId) {
  GridIndex idx(10, 4);
  idx.insert(3, {5, 6});
  idx.insert(1, {5, 4});
  idx.insert(2, {6, 5});
  EXPECT_EQ(ids_of(idx.k_nearest({5, 5}, 3)), (std::vector<std::uint32_t>{1, 2, 3}));
}

TEST(GridIndex, MatchesBruteForceOnRandomInstances) {
  std::mt19937_64 rng(7);
  const std::size_t n = 1000;
  std::vector<Point> pts(n);
  std::vector<bool> present(n, true);
  GridIndex idx(10, n);
  for (std::uint32_t i = 0; i < n; ++i) {
    pts[i] = uniform_point(rng, 10);
    idx.insert(i, pts[i]);
  }
  for (int trial = 0; trial < 200; ++trial) {
    const Point q = uniform_point(rng, 10);
    EXPECT_EQ(ids_of(idx.k_nearest(q, 7)), brute_force(pts, q, 7, present));
  }
  // Mutations keep the index consistent.
  for (std::uint32_t i = 0; i < n; i += 3) {
    idx.remove(i);
    present[i] = false;
  }
  for (std::uint32_t i = 1; i < n; i += 5) {
    if (!present[i]) continue;
    pts[i] = uniform_point(rng, 10);
    idx.move(i, pts[i]);
  }
  for (int trial = 0; trial < 200; ++trial) {
    const Point q = uniform_point(rng, 10);
    EXPECT_EQ(ids_of(idx.k_nearest(q, 7)), brute_force(pts, q, 7, present));
  }
}

TEST(GridIndex, FullPopulationIsPermutation) {
  std::mt19937_64 rng(3);
  GridIndex idx(10, 300);
  for (std::uint32_t i = 0; i < 300; ++i) idx.insert(i, uniform_point(rng, 10));
  auto got = idx.k_nearest({1, 9}, 300);
  ASSERT_EQ(got.size(), 300u);
  EXPECT_TRUE(std::is_sorted(got.begin(), got.end(), closer));
  auto ids = ids_of(got);
  std::sort(ids.begin(), ids.end());
  std::vector<std::uint32_t> all(300);
  std::iota(all.begin(), all.end(), 0u);
  EXPECT_EQ(ids, all);
}

TEST(GridIndex, RemovingNearestPromotesSecond) {
  std::mt19937_64 rng(11);
  GridIndex idx(10, 500);
  for (std::uint32_t i = 0; i < 500; ++i) idx.insert(i, uniform_point(rng, 10));
  for (int t = 0; t < 50; ++t) {
    const Point q = uniform_point(rng, 10);
    const auto two = idx.k_nearest(q, 2);
    idx.remove(two[0].id);
    EXPECT_EQ(idx.nearest(q)->id, two[1].id);
  }
}

TEST(GridIndex, FilterRestrictsCandidates) {
  GridIndex idx(10, 10);
  for (std::uint32_t i = 0; i < 10; ++i) idx.insert(i, {double(i), 0});
  const auto got = idx.k_nearest({0, 0}, 3, [](std::uint32_t id, double) { return id % 2 == 1; });
  EXPECT_EQ(ids_of(got), (std::vector<std::uint32_t>{1, 3, 5}));
}

TEST(NearestCharger, FreePostsAndClaims) {
  std::vector<ChargerSite> sites(1);
  sites[0].position = {5, 5};
  sites[0].posts = 8;
  GridIndex idx(10, 1);
  idx.insert(0, sites[0].position);
  EXPECT_EQ(nearest_available_charger(idx, sites, {1, 1}, ClaimMode::Claiming), 0u);
  sites[0].occupied = 5;
  sites[0].claims = 3;
  EXPECT_FALSE(nearest_available_charger(idx, sites, {1, 1}, ClaimMode::Claiming).has_value());
  // Blind routing ignores inbound claims.
  EXPECT_EQ(nearest_available_charger(idx, sites, {1, 1}, ClaimMode::Blind), 0u);
  sites[0].occupied = 8;
  sites[0].claims = 0;
  EXPECT_FALSE(nearest_available_charger(idx, sites, {1, 1}, ClaimMode::Blind).has_value());
}

TEST(NearestCharger, MatchesBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> occ(0, 8);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ChargerSite> sites(60);
    GridIndex idx(10, sites.size());
    for (std::uint32_t i = 0; i < sites.size(); ++i) {
      sites[i].position = uniform_point(rng, 10);
      sites[i].posts = 8;
      sites[i].occupied = occ(rng);
      sites[i].claims = std::min(occ(rng), 8 - sites[i].occupied);
      idx.insert(i, sites[i].position);
    }
    const Point q = uniform_point(rng, 10);
    for (ClaimMode mode : {ClaimMode::Blind, ClaimMode::Claiming}) {
      std::optional<std::uint32_t> best;
      for (std::uint32_t i = 0; i < sites.size(); ++i) {
        if (sites[i].free_posts(mode) <= 0) continue;
        if (!best || distance(q, sites[i].position) < distance(q, sites[*best].position)) best = i;
      }
      EXPECT_EQ(nearest_available_charger(idx, sites, q, mode), best);
    }
  }
}

TEST(NearestScaling, SlopeNearMinusHalf) {
  const auto s = estimate_nearest_scaling(1, {100, 1000, 10000}, 1, 1000);
  ASSERT_TRUE(s.fit.has_value());
  EXPECT_NEAR(s.fit->slope, -0.5, 0.05);
}

TEST(NearestScaling, DoublingRankScalesBySqrtTwo) {
  const auto s1 = estimate_nearest_scaling(2, {2000}, 2, 2000);
  const auto s2 = estimate_nearest_scaling(3, {2000}, 4, 2000);
  EXPECT_NEAR(s2.mean_distance[0] / s1.mean_distance[0], std::sqrt(2.0), 0.1 * std::sqrt(2.0));
}

TEST(NearestScaling, RankEqualToPopulationIsNotFitted) {
  const auto s = estimate_nearest_scaling(4, {3}, 3, 1000);
  EXPECT_FALSE(s.fit.has_value());
  EXPECT_EQ(s.mean_distance.size(), 1u);
  EXPECT_THROW(estimate_nearest_scaling(4, {2}, 3, 1000), ValidationError);
  EXPECT_THROW(estimate_nearest_scaling(4, {100}, 1, 10), ValidationError);
}
