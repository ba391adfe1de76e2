#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "micurate/neighbors.hpp"
#include "support.hpp"

using namespace micurate;
namespace ts = testing_support;

namespace {

NeighborIndex kd(FeatureMatrix m) { return NeighborIndex(std::move(m), {IndexStructure::kd_tree, 16, std::nullopt}); }
NeighborIndex brute(FeatureMatrix m) { return NeighborIndex(std::move(m), {IndexStructure::brute_force, 16, std::nullopt}); }

// Linear-scan oracle: sort all other points by (distance, index).
NeighborResult oracle_knn(const FeatureMatrix& x, std::size_t q, std::size_t k,
                          const std::vector<bool>* mask = nullptr) {
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (i == q || (mask && !(*mask)[i])) continue;
    double d = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) d = std::max(d, std::abs(x(q, j) - x(i, j)));
    all.emplace_back(d, i);
  }
  std::ranges::sort(all);
  NeighborResult r;
  for (std::size_t t = 0; t < k; ++t) {
    r.indices.push_back(all[t].second);
    r.distances.push_back(all[t].first);
  }
  return r;
}

std::size_t oracle_count(const FeatureMatrix& x, std::size_t q, double radius, bool strict) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    if (i == q) continue;
    double d = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) d = std::max(d, std::abs(x(q, j) - x(i, j)));
    n += strict ? d < radius : d <= radius;
  }
  return n;
}

const FeatureMatrix kLine = ts::from_rows({{0}, {1}, {3}});

}  // namespace

TEST(Neighbors, HandGeometry) {
  for (auto idx : {kd(kLine), brute(kLine)}) {
    const auto r = idx.knn(1, 1);
    EXPECT_EQ(r.indices, (std::vector<std::size_t>{0}));
    EXPECT_EQ(r.distances, (std::vector<double>{1}));
    const auto r2 = idx.knn(2, 2);
    EXPECT_EQ(r2.indices, (std::vector<std::size_t>{1, 0}));
    EXPECT_EQ(r2.distances, (std::vector<double>{2, 3}));
    EXPECT_EQ(idx.count_within(0, 1.0, true), 0u);
    EXPECT_EQ(idx.count_within(0, 1.0, false), 1u);
    EXPECT_EQ(idx.count_within(0, 100.0, true), 2u);
  }
}

TEST(Neighbors, DuplicatesRetrievable) {
  const auto m = ts::from_rows({{2, 2}, {2, 2}, {5, 5}});
  for (auto idx : {kd(m), brute(m)}) {
    EXPECT_EQ(idx.knn(0, 1).indices, (std::vector<std::size_t>{1}));
    EXPECT_EQ(idx.knn(1, 1).indices, (std::vector<std::size_t>{0}));
    EXPECT_EQ(idx.knn(2, 2).indices, (std::vector<std::size_t>{0, 1}));
  }
}

TEST(Neighbors, ExhaustiveK) {
  const auto m = ts::random_matrix(20, 3, 1);
  const auto r = kd(m).knn(7, 19);
  auto sorted = r.indices;
  std::ranges::sort(sorted);
  std::vector<std::size_t> expect;
  for (std::size_t i = 0; i < 20; ++i)
    if (i != 7) expect.push_back(i);
  EXPECT_EQ(sorted, expect);
}

TEST(Neighbors, TreeEqualsBruteForceAndOracle) {
  const auto m = ts::random_matrix(500, 5, 77);
  const auto tree = kd(m);
  const auto flat = brute(m);
  std::mt19937_64 rng(5);
  for (int t = 0; t < 100; ++t) {
    const std::size_t q = rng() % 500;
    const std::size_t k = 1 + rng() % 20;
    const auto a = tree.knn(q, k);
    EXPECT_EQ(a, flat.knn(q, k));
    EXPECT_EQ(a, oracle_knn(m, q, k));
    const double r = std::uniform_real_distribution<double>(0.0, 0.5)(rng);
    EXPECT_EQ(tree.count_within(q, r), oracle_count(m, q, r, true));
    EXPECT_EQ(tree.count_within(q, r, false), flat.count_within(q, r, false));
  }
}

TEST(Neighbors, TiesResolvedByIndexOnGridData) {
  // Integer coordinates force many equal distances.
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto m = ts::grid_matrix(200, 3, seed, 4);
    const auto tree = kd(m);
    for (std::size_t q = 0; q < 200; q += 7) {
      EXPECT_EQ(tree.knn(q, 10), oracle_knn(m, q, 10));
      for (double r : {0.0, 1.0, 2.0}) {
        EXPECT_EQ(tree.count_within(q, r, false), oracle_count(m, q, r, false));
        EXPECT_EQ(tree.count_within(q, r, true), oracle_count(m, q, r, true));
      }
    }
  }
}

TEST(Neighbors, OracleEquivalenceAcrossShapes) {
  std::mt19937_64 rng(1234);
  for (int inst = 0; inst < 30; ++inst) {
    const std::size_t n = 2 + rng() % 1000;
    const std::size_t d = 1 + rng() % 10;
    const auto m = ts::random_matrix(n, d, rng());
    const auto tree = kd(m);
    const auto flat = brute(m);
    for (int t = 0; t < 5; ++t) {
      const std::size_t q = rng() % n;
      const std::size_t k = 1 + rng() % std::min<std::size_t>(n - 1, 15);
      ASSERT_EQ(tree.knn(q, k), flat.knn(q, k));
      const double r = tree.knn(q, k).distances.back();
      ASSERT_EQ(tree.count_within(q, r), flat.count_within(q, r));
    }
  }
}

TEST(Neighbors, KnnAmong) {
  const auto m = ts::random_matrix(300, 4, 9);
  const auto tree = kd(m);
  std::vector<bool> one(300, false);
  one[42] = true;
  EXPECT_EQ(tree.knn_among(0, 1, one).indices, (std::vector<std::size_t>{42}));
  const std::vector<bool> all(300, true);
  EXPECT_EQ(tree.knn_among(5, 6, all), tree.knn(5, 6));
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    std::vector<bool> mask(300);
    for (std::size_t i = 0; i < 300; ++i) mask[i] = rng() % 3 == 0;
    const std::size_t q = rng() % 300;
    EXPECT_EQ(tree.knn_among(q, 5, mask), oracle_knn(m, q, 5, &mask));
    EXPECT_EQ(brute(m).knn_among(q, 5, mask), oracle_knn(m, q, 5, &mask));
  }
  EXPECT_THROW(tree.knn_among(0, 2, one), InsufficientNeighborsError);
}

TEST(Neighbors, Errors) {
  EXPECT_THROW(build_index(FeatureMatrix(0, 2)), ConfigError);
  auto bad = ts::random_matrix(4, 2, 1);
  bad(2, 1) = std::nan("");
  EXPECT_THROW(build_index(bad), ConfigError);
  const auto idx = build_index(kLine);
  EXPECT_THROW(idx.knn(0, 3), ConfigError);
  EXPECT_THROW(idx.knn(0, 0), ConfigError);
}

TEST(Neighbors, MetricAxioms) {
  const auto m = ts::random_matrix(60, 4, 2, -3, 3);
  for (std::size_t a = 0; a < 60; a += 3) {
    for (std::size_t b = 1; b < 60; b += 5) {
      EXPECT_EQ(chebyshev(m.row(a), m.row(b)), chebyshev(m.row(b), m.row(a)));
      for (std::size_t c = 2; c < 60; c += 11) {
        EXPECT_LE(chebyshev(m.row(a), m.row(c)),
                  chebyshev(m.row(a), m.row(b)) + chebyshev(m.row(b), m.row(c)) + 1e-15);
      }
    }
  }
}

TEST(Neighbors, Monotonicity) {
  const auto m = ts::random_matrix(200, 3, 4);
  const auto idx = kd(m);
  for (std::size_t q = 0; q < 200; q += 13) {
    std::size_t prev = 0;
    for (double r = 0.0; r < 1.2; r += 0.05) {
      const auto c = idx.count_within(q, r);
      EXPECT_GE(c, prev);
      prev = c;
    }
    const auto big = idx.knn(q, 12);
    for (std::size_t k = 1; k < 12; ++k) {
      const auto small = idx.knn(q, k);
      EXPECT_TRUE(std::equal(small.indices.begin(), small.indices.end(), big.indices.begin()));
    }
  }
}

TEST(Neighbors, JitterSeparatesDuplicatesDeterministically) {
  const auto m = ts::from_rows({{1, 1}, {1, 1}, {1, 1}, {4, 4}});
  const NeighborIndex a(m, {IndexStructure::kd_tree, 16, 7});
  const NeighborIndex b(m, {IndexStructure::kd_tree, 16, 7});
  EXPECT_EQ(a.points(), b.points());
  EXPECT_GT(a.distance(0, 1), 0.0);
  EXPECT_LE(a.distance(0, 1), 2 * kJitterAmplitude);
}
