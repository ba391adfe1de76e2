#pragma once

// Quota-based subset selection from per-sample MI scores.
//
// Samples are ranked by (score descending, index ascending); -inf sorts last.
// Bands are windows of that ranking: top takes the first m, bottom the last m,
// middle the m ranks starting at floor((N - m) / 2). Class-wise scope splits m
// across classes by largest-remainder apportionment and applies the band rule
// inside each class.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "micurate/dataset.hpp"
#include "micurate/error.hpp"
#include "micurate/random.hpp"

namespace micurate {

enum class SelectionScope : std::uint8_t { global, class_wise };
enum class SelectionBand : std::uint8_t { top, middle, bottom, random };

inline std::string_view to_string(SelectionScope s) {
  return s == SelectionScope::global ? "global" : "class_wise";
}

inline std::string_view to_string(SelectionBand b) {
  switch (b) {
    case SelectionBand::top: return "top";
    case SelectionBand::middle: return "middle";
    case SelectionBand::bottom: return "bottom";
    case SelectionBand::random: return "random";
  }
  return "top";
}

inline SelectionScope parse_scope(std::string_view s) {
  if (s == "global") return SelectionScope::global;
  if (s == "class_wise") return SelectionScope::class_wise;
  throw ConfigError("unknown selection scope '" + std::string(s) + "'");
}

inline SelectionBand parse_band(std::string_view s) {
  if (s == "top") return SelectionBand::top;
  if (s == "middle") return SelectionBand::middle;
  if (s == "bottom") return SelectionBand::bottom;
  if (s == "random") return SelectionBand::random;
  throw ConfigError("unknown selection band '" + std::string(s) + "'");
}

struct SelectionPlan {
  SelectionScope scope = SelectionScope::global;
  SelectionBand band = SelectionBand::top;
  double retention_ratio = 1.0;
  std::uint64_t seed = 0;  // random band only

  // "global/top", "class_wise/random", ...
  std::string strategy() const {
    return std::string(to_string(scope)) + "/" + std::string(to_string(band));
  }
  bool operator==(const SelectionPlan&) const = default;
};

struct SelectionResult {
  std::vector<std::size_t> retained_indices;  // sorted, distinct
  SelectionPlan plan;
  std::vector<std::size_t> per_class_counts;
};

/// Largest-remainder apportionment of `total` seats proportional to `sizes`.
/// Remainder ties go to the lower class index.
inline std::vector<std::size_t> apportion(std::span<const std::size_t> sizes, std::size_t total) {
  const std::size_t n = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  std::vector<std::size_t> quota(sizes.size(), 0);
  if (n == 0) return quota;
  std::vector<std::pair<std::uint64_t, std::size_t>> remainders;  // (remainder numerator, class)
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    // Exact integer arithmetic: total*size = q*n + r.
    const unsigned __int128 prod = static_cast<unsigned __int128>(total) * sizes[c];
    quota[c] = static_cast<std::size_t>(prod / n);
    remainders.emplace_back(static_cast<std::uint64_t>(prod % n), c);
    assigned += quota[c];
  }
  std::ranges::stable_sort(remainders, [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) ++quota[remainders[r].second];
  return quota;
}

namespace detail {

// Indices ordered best-first: higher score, then lower index.
inline std::vector<std::size_t> rank_order(std::span<const double> scores,
                                           std::vector<std::size_t> indices) {
  std::ranges::sort(indices, [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  return indices;
}

inline void take_band(std::span<const double> scores, std::vector<std::size_t> pool,
                      std::size_t m, SelectionBand band, std::uint64_t seed,
                      std::vector<std::size_t>& out) {
  const std::size_t n = pool.size();
  if (m == 0) return;
  if (band == SelectionBand::random) {
    for (std::size_t j : sample_without_replacement(n, m, seed)) out.push_back(pool[j]);
    return;
  }
  const auto ranked = rank_order(scores, std::move(pool));
  std::size_t start = 0;
  if (band == SelectionBand::bottom) start = n - m;
  if (band == SelectionBand::middle) start = (n - m) / 2;
  out.insert(out.end(), ranked.begin() + static_cast<std::ptrdiff_t>(start),
             ranked.begin() + static_cast<std::ptrdiff_t>(start + m));
}

}  // namespace detail

inline SelectionResult select(std::span<const double> scores, std::span<const Label> labels,
                              int num_classes, const SelectionPlan& plan) {
  const std::size_t n = scores.size();
  if (labels.size() != n) throw ConsistencyError("select: scores and labels differ in length");
  if (n == 0) throw ConfigError("select: no samples");
  if (!(plan.retention_ratio > 0.0 && plan.retention_ratio <= 1.0)) {
    throw ConfigError("select: retention_ratio must lie in (0,1]");
  }
  for (double s : scores) {
    if (std::isnan(s)) throw ConsistencyError("select: NaN score");
  }
  const std::size_t m = std::min(n, round_count(plan.retention_ratio * static_cast<double>(n)));
  if (m == 0) {
    throw ConfigError("select: retention_ratio " + std::to_string(plan.retention_ratio) +
                      " keeps no samples out of " + std::to_string(n));
  }

  const auto classes = static_cast<std::size_t>(std::max(num_classes, 1));
  std::vector<std::vector<std::size_t>> members(classes);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ConsistencyError("select: label out of range");
    }
    members[static_cast<std::size_t>(labels[i])].push_back(i);
  }

  SelectionResult result;
  result.plan = plan;
  result.retained_indices.reserve(m);
  if (plan.scope == SelectionScope::global) {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    detail::take_band(scores, std::move(all), m, plan.band, plan.seed, result.retained_indices);
  } else {
    std::vector<std::size_t> sizes(classes);
    for (std::size_t c = 0; c < classes; ++c) sizes[c] = members[c].size();
    const auto quota = apportion(sizes, m);
    for (std::size_t c = 0; c < classes; ++c) {
      detail::take_band(scores, members[c], quota[c], plan.band, derive_seed(plan.seed, c),
                        result.retained_indices);
    }
  }
  std::ranges::sort(result.retained_indices);
  result.per_class_counts.assign(classes, 0);
  for (std::size_t i : result.retained_indices) {
    ++result.per_class_counts[static_cast<std::size_t>(labels[i])];
  }
  return result;
}

// Newline-delimited retained indices.
inline std::string to_index_file(const SelectionResult& r) {
  std::string out;
  for (std::size_t i : r.retained_indices) {
    out += std::to_string(i);
    out += '\n';
  }
  return out;
}

inline nlohmann::json to_json(const SelectionResult& r) {
  return {{"kind", "selection"},
          {"schema_version", 1},
          {"strategy", r.plan.strategy()},
          {"scope", to_string(r.plan.scope)},
          {"band", to_string(r.plan.band)},
          {"retention_ratio", r.plan.retention_ratio},
          {"seed", r.plan.seed},
          {"retained_count", r.retained_indices.size()},
          {"per_class_counts", r.per_class_counts},
          {"retained_indices", r.retained_indices}};
}

}  // namespace micurate
