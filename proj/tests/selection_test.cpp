#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <vector>

#include "micurate/selection.hpp"

using namespace micurate;

namespace {

const std::vector<double> kFive = {5, 4, 3, 2, 1};
const std::vector<Label> kZeros(5, 0);

std::vector<std::size_t> pick(const std::vector<double>& s, const std::vector<Label>& l, int c,
                              SelectionScope scope, SelectionBand band, double ratio,
                              std::uint64_t seed = 0) {
  return select(s, l, c, {scope, band, ratio, seed}).retained_indices;
}

struct Case {
  std::vector<double> scores;
  std::vector<Label> labels;
  int classes;
};

// Scores often collide (quantized) and sometimes carry the degenerate sentinel.
Case random_case(std::mt19937_64& rng) {
  Case c;
  c.classes = 1 + static_cast<int>(rng() % 5);
  const std::size_t n = 1 + rng() % 120;
  std::normal_distribution<double> z(0, 1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = z(rng);
    if (rng() % 3 == 0) s = std::round(s * 2) / 2;
    if (rng() % 40 == 0) s = -std::numeric_limits<double>::infinity();
    c.scores.push_back(s);
    c.labels.push_back(static_cast<Label>(rng() % static_cast<unsigned>(c.classes)));
  }
  return c;
}

double random_ratio(std::mt19937_64& rng, std::size_t n) {
  // Keep m >= 1.
  for (;;) {
    const double r = static_cast<double>(1 + rng() % 1000) / 1000.0;
    if (std::nearbyint(r * static_cast<double>(n)) >= 1) return r;
  }
}

}  // namespace

TEST(Select, HandWindows) {
  EXPECT_EQ(pick(kFive, kZeros, 1, SelectionScope::global, SelectionBand::top, 0.4),
            (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(pick(kFive, kZeros, 1, SelectionScope::global, SelectionBand::bottom, 0.4),
            (std::vector<std::size_t>{3, 4}));
  // floor((5 - 2) / 2) = 1 -> ranks 1 and 2.
  EXPECT_EQ(pick(kFive, kZeros, 1, SelectionScope::global, SelectionBand::middle, 0.4),
            (std::vector<std::size_t>{1, 2}));
}

TEST(Select, FullRetentionKeepsEverything) {
  for (auto band : {SelectionBand::top, SelectionBand::middle, SelectionBand::bottom, SelectionBand::random}) {
    for (auto scope : {SelectionScope::global, SelectionScope::class_wise}) {
      EXPECT_EQ(pick(kFive, {0, 1, 0, 1, 1}, 2, scope, band, 1.0), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
    }
  }
}

TEST(Select, ClassWiseQuota) {
  std::vector<double> s(100);
  std::vector<Label> l(100);
  for (std::size_t i = 0; i < 100; ++i) {
    s[i] = std::sin(static_cast<double>(i));
    l[i] = i < 60 ? 0 : 1;
  }
  const auto r = select(s, l, 2, {SelectionScope::class_wise, SelectionBand::top, 0.5, 0});
  EXPECT_EQ(r.per_class_counts, (std::vector<std::size_t>{30, 20}));
}

TEST(Select, TiesGoToLowerIndex) {
  const std::vector<double> s = {1, 2, 2, 2, 0};
  EXPECT_EQ(pick(s, kZeros, 1, SelectionScope::global, SelectionBand::top, 0.4), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(pick(s, kZeros, 1, SelectionScope::global, SelectionBand::bottom, 0.4), (std::vector<std::size_t>{0, 4}));
}

TEST(Select, DegenerateSortsLast) {
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::vector<double> s = {ninf, -100, 3, 2, 1};
  EXPECT_EQ(pick(s, kZeros, 1, SelectionScope::global, SelectionBand::bottom, 0.2), (std::vector<std::size_t>{0}));
  EXPECT_EQ(pick(s, kZeros, 1, SelectionScope::global, SelectionBand::top, 0.8),
            (std::vector<std::size_t>{1, 2, 3, 4}));
}

TEST(Select, RandomBandSeeded) {
  std::vector<double> s(200, 0.0);
  std::vector<Label> l(200, 0);
  const auto a = pick(s, l, 1, SelectionScope::global, SelectionBand::random, 0.3, 5);
  EXPECT_EQ(a, pick(s, l, 1, SelectionScope::global, SelectionBand::random, 0.3, 5));
  EXPECT_NE(a, pick(s, l, 1, SelectionScope::global, SelectionBand::random, 0.3, 6));
  EXPECT_EQ(a.size(), 60u);
}

TEST(Select, Errors) {
  EXPECT_THROW(select(kFive, kZeros, 1, {SelectionScope::global, SelectionBand::top, 0.05, 0}), ConfigError);
  EXPECT_THROW(select(kFive, kZeros, 1, {SelectionScope::global, SelectionBand::top, 0.0, 0}), ConfigError);
  EXPECT_THROW(select(kFive, kZeros, 1, {SelectionScope::global, SelectionBand::top, 1.5, 0}), ConfigError);
  EXPECT_THROW(select(kFive, std::vector<Label>{0, 0}, 1, {SelectionScope::global, SelectionBand::top, 0.5, 0}), ConsistencyError);
  EXPECT_THROW(parse_band("upper"), ConfigError);
  EXPECT_THROW(parse_scope("local"), ConfigError);
}

TEST(Apportion, LargestRemainder) {
  EXPECT_EQ(apportion(std::vector<std::size_t>{60, 40}, 50), (std::vector<std::size_t>{30, 20}));
  // Quotas 3.33, 3.33, 3.33 -> one extra seat to the lowest index.
  EXPECT_EQ(apportion(std::vector<std::size_t>{5, 5, 5}, 10), (std::vector<std::size_t>{4, 3, 3}));
  EXPECT_EQ(apportion(std::vector<std::size_t>{1, 0, 8}, 3), (std::vector<std::size_t>{0, 0, 3}));
}

// 1000 randomized cases checked against the selection invariants.
TEST(SelectProperties, RandomizedInvariants) {
  std::mt19937_64 rng(20240611);
  const SelectionBand bands[] = {SelectionBand::top, SelectionBand::middle, SelectionBand::bottom,
                                 SelectionBand::random};
  for (int t = 0; t < 1000; ++t) {
    const Case c = random_case(rng);
    const std::size_t n = c.scores.size();
    const double ratio = random_ratio(rng, n);
    const auto m = static_cast<std::size_t>(std::nearbyint(ratio * static_cast<double>(n)));
    const std::uint64_t seed = rng();
    std::vector<std::size_t> class_size(static_cast<std::size_t>(c.classes), 0);
    for (Label y : c.labels) ++class_size[static_cast<std::size_t>(y)];

    for (auto scope : {SelectionScope::global, SelectionScope::class_wise}) {
      for (auto band : bands) {
        const auto r = select(c.scores, c.labels, c.classes, {scope, band, ratio, seed});
        // Cardinality, validity, distinctness, sorted order.
        ASSERT_EQ(r.retained_indices.size(), m);
        ASSERT_TRUE(std::ranges::is_sorted(r.retained_indices));
        ASSERT_EQ(std::set<std::size_t>(r.retained_indices.begin(), r.retained_indices.end()).size(), m);
        ASSERT_LT(r.retained_indices.back(), n);
        // Class balance: within one sample of the proportional share.
        if (scope == SelectionScope::class_wise) {
          for (std::size_t k = 0; k < class_size.size(); ++k) {
            const double share = static_cast<double>(m) * static_cast<double>(class_size[k]) / static_cast<double>(n);
            ASSERT_LE(std::abs(static_cast<double>(r.per_class_counts[k]) - share), 1.0);
          }
        }
        // Affine score invariance.
        std::vector<double> shifted = c.scores;
        for (double& s : shifted) s = 2.5 * s + 7.0;
        ASSERT_EQ(select(shifted, c.labels, c.classes, {scope, band, ratio, seed}).retained_indices,
                  r.retained_indices);
      }
    }

    // Dominance for global/top: every kept score >= every excluded score,
    // with equal scores kept in index order.
    const auto top = pick(c.scores, c.labels, c.classes, SelectionScope::global, SelectionBand::top, ratio);
    std::vector<bool> kept(n, false);
    for (auto i : top) kept[i] = true;
    for (std::size_t a = 0; a < n; ++a) {
      if (!kept[a]) continue;
      for (std::size_t b = 0; b < n; ++b) {
        if (kept[b]) continue;
        ASSERT_GE(c.scores[a], c.scores[b]);
        if (c.scores[a] == c.scores[b]) { ASSERT_LT(a, b); }
      }
    }

    // Nesting for global/top.
    const double r2 = random_ratio(rng, n);
    const double lo = std::min(ratio, r2), hi = std::max(ratio, r2);
    const auto small = pick(c.scores, c.labels, c.classes, SelectionScope::global, SelectionBand::top, lo);
    const auto large = pick(c.scores, c.labels, c.classes, SelectionScope::global, SelectionBand::top, hi);
    ASSERT_TRUE(std::ranges::includes(large, small));
  }
}

TEST(SelectExport, IndexFileAndJson) {
  const auto r = select(kFive, kZeros, 1, {SelectionScope::global, SelectionBand::top, 0.4, 0});
  EXPECT_EQ(to_index_file(r), "0\n1\n");
  const auto j = to_json(r);
  EXPECT_EQ(j.at("strategy"), "global/top");
  EXPECT_EQ(j.at("retained_count"), 2);
}
