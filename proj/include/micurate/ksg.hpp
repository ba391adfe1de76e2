#pragma once

// Per-sample mutual-information attribution with the Kraskov-Stoegbauer-
// Grassberger k-NN estimator. Each sample i receives
//
//   I_i = psi(k) + psi(N) - psi(n_x(i) + 1) - psi(n_y(i) + 1)
//
// and the global estimate is the mean of the finite I_i, in nats.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "micurate/digamma.hpp"
#include "micurate/error.hpp"
#include "micurate/neighbors.hpp"
#include "micurate/parallel.hpp"
#include "micurate/pca.hpp"
#include "micurate/random.hpp"

namespace micurate {

enum class EstimatorVariant : std::uint8_t { discrete_label, onehot_continuous, continuous_pair };

inline std::string_view to_string(EstimatorVariant v) {
  switch (v) {
    case EstimatorVariant::discrete_label: return "discrete_label";
    case EstimatorVariant::onehot_continuous: return "onehot_continuous";
    case EstimatorVariant::continuous_pair: return "continuous_pair";
  }
  return "discrete_label";
}

inline EstimatorVariant parse_variant(std::string_view s) {
  if (s == "discrete_label") return EstimatorVariant::discrete_label;
  if (s == "onehot_continuous") return EstimatorVariant::onehot_continuous;
  if (s == "continuous_pair") return EstimatorVariant::continuous_pair;
  throw ConfigError("unknown estimator variant '" + std::string(s) + "'");
}

// Marks a sample whose class has a single member; excluded from the global mean.
inline constexpr double kDegenerateScore = -std::numeric_limits<double>::infinity();

struct EstimatorOptions {
  std::size_t k = 3;
  bool strict = true;  // marginal counts use d < eps (false: d <= eps)
  unsigned threads = 1;
  IndexStructure structure = IndexStructure::kd_tree;
  std::optional<std::uint64_t> jitter_seed;
};

struct KSubstitution {
  std::size_t index = 0;
  std::size_t k_used = 0;
  bool operator==(const KSubstitution&) const = default;
};

struct MIScoreSet {
  std::vector<double> local_scores;  // nats; kDegenerateScore for degenerate samples
  double global_mi = 0.0;
  std::size_t k = 0;
  std::size_t n = 0;
  EstimatorVariant variant = EstimatorVariant::discrete_label;
  bool strict = true;
  bool jittered = false;
  std::vector<std::size_t> per_sample_n_x;
  std::vector<std::size_t> per_sample_n_y;
  std::vector<KSubstitution> k_substitutions;  // samples scored with a reduced k
  std::vector<std::size_t> degenerate;         // samples carrying kDegenerateScore

  bool operator==(const MIScoreSet&) const = default;
};

namespace detail {

// Mean of the finite scores, summed in index order.
inline double finite_mean(const std::vector<double>& scores) {
  double sum = 0.0;
  std::size_t count = 0;
  for (double s : scores) {
    if (std::isfinite(s)) {
      sum += s;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

inline FeatureMatrix prepared(const FeatureMatrix& points, const std::optional<std::uint64_t>& jitter) {
  FeatureMatrix out = points;
  if (jitter) apply_jitter(out, *jitter);
  return out;
}

inline double ksg_term(std::size_t k, std::size_t n, std::size_t n_x, std::size_t n_y) {
  return digamma(static_cast<double>(k)) + digamma(static_cast<double>(n)) -
         digamma(static_cast<double>(n_x) + 1.0) - digamma(static_cast<double>(n_y) + 1.0);
}

}  // namespace detail

/// Discrete-label KSG. For sample i with label y_i, r_i is the Chebyshev
/// distance to its k-th nearest same-label neighbor, n_x(i) counts points of
/// any label within r_i, and n_y(i) is the size of class y_i minus one.
///
/// Classes with at most k members score their samples with k reduced to
/// (class size - 1); singleton classes get kDegenerateScore.
inline MIScoreSet score_discrete(const EmbeddedDataset& data, const EstimatorOptions& opt = {}) {
  const std::size_t n = data.size();
  if (opt.k < 1) throw ConfigError("score_discrete: k must be positive");
  if (n < opt.k + 2) {
    throw ConfigError("score_discrete: need N >= k+2 (N=" + std::to_string(n) +
                      ", k=" + std::to_string(opt.k) + ")");
  }
  if (data.points.rows() != n) throw ConsistencyError("score_discrete: points/labels mismatch");

  const FeatureMatrix points = detail::prepared(data.points, opt.jitter_seed);
  const IndexOptions index_opts{opt.structure, 16, std::nullopt};
  const NeighborIndex full(points, index_opts);

  // Per-class sub-indexes: the k-th same-label neighbor is a plain knn there.
  const std::size_t num_classes = static_cast<std::size_t>(std::max(data.num_classes, 1));
  std::vector<std::vector<std::size_t>> members(num_classes);
  std::vector<std::size_t> local_pos(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(data.labels[i]);
    if (c >= num_classes) throw ConsistencyError("score_discrete: label out of range");
    local_pos[i] = members[c].size();
    members[c].push_back(i);
  }
  std::vector<std::optional<NeighborIndex>> class_index(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (members[c].size() < 2) continue;
    FeatureMatrix sub(members[c].size(), points.cols());
    for (std::size_t r = 0; r < members[c].size(); ++r) {
      std::ranges::copy(points.row(members[c][r]), sub.row(r).begin());
    }
    class_index[c].emplace(std::move(sub), index_opts);
  }

  MIScoreSet out;
  out.k = opt.k;
  out.n = n;
  out.variant = EstimatorVariant::discrete_label;
  out.strict = opt.strict;
  out.jittered = opt.jitter_seed.has_value();
  out.local_scores.assign(n, 0.0);
  out.per_sample_n_x.assign(n, 0);
  out.per_sample_n_y.assign(n, 0);
  std::vector<std::size_t> k_used(n, opt.k);

  parallel_for(n, opt.threads, [&](std::size_t i) {
    const auto c = static_cast<std::size_t>(data.labels[i]);
    const std::size_t class_size = members[c].size();
    if (class_size == 1) {
      out.local_scores[i] = kDegenerateScore;
      k_used[i] = 0;
      return;
    }
    const std::size_t k = std::min(opt.k, class_size - 1);
    k_used[i] = k;
    const double radius = class_index[c]->knn(local_pos[i], k).distances.back();
    const std::size_t n_x = full.count_within(i, radius, opt.strict);
    const std::size_t n_y = class_size - 1;
    out.per_sample_n_x[i] = n_x;
    out.per_sample_n_y[i] = n_y;
    out.local_scores[i] = detail::ksg_term(k, n, n_x, n_y);
  });

  for (std::size_t i = 0; i < n; ++i) {
    if (k_used[i] == 0) {
      out.degenerate.push_back(i);
    } else if (k_used[i] != opt.k) {
      out.k_substitutions.push_back({i, k_used[i]});
    }
  }
  out.global_mi = detail::finite_mean(out.local_scores);
  return out;
}

/// KSG between two continuous variables observed jointly. The joint metric is
/// the max of the marginal Chebyshev distances; eps_i is the distance to the
/// k-th joint neighbor and n_x, n_y count marginal neighbors within eps_i.
inline MIScoreSet score_continuous(const FeatureMatrix& x, const FeatureMatrix& y,
                                   const EstimatorOptions& opt = {}) {
  const std::size_t n = x.rows();
  if (y.rows() != n) throw ConsistencyError("score_continuous: x and y row counts differ");
  if (opt.k < 1) throw ConfigError("score_continuous: k must be positive");
  if (n < opt.k + 2) throw ConfigError("score_continuous: need N >= k+2");

  std::optional<std::uint64_t> jx, jy;
  if (opt.jitter_seed) {
    jx = derive_seed(*opt.jitter_seed, 1);
    jy = derive_seed(*opt.jitter_seed, 2);
  }
  const FeatureMatrix px = detail::prepared(x, jx);
  const FeatureMatrix py = detail::prepared(y, jy);
  FeatureMatrix joint(n, px.cols() + py.cols());
  for (std::size_t i = 0; i < n; ++i) {
    auto row = joint.row(i);
    std::ranges::copy(px.row(i), row.begin());
    std::ranges::copy(py.row(i), row.begin() + static_cast<std::ptrdiff_t>(px.cols()));
  }
  const IndexOptions index_opts{opt.structure, 16, std::nullopt};
  const NeighborIndex joint_index(std::move(joint), index_opts);
  const NeighborIndex x_index(px, index_opts);
  const NeighborIndex y_index(py, index_opts);

  MIScoreSet out;
  out.k = opt.k;
  out.n = n;
  out.variant = EstimatorVariant::continuous_pair;
  out.strict = opt.strict;
  out.jittered = opt.jitter_seed.has_value();
  out.local_scores.assign(n, 0.0);
  out.per_sample_n_x.assign(n, 0);
  out.per_sample_n_y.assign(n, 0);

  parallel_for(n, opt.threads, [&](std::size_t i) {
    const double eps = joint_index.knn(i, opt.k).distances.back();
    const std::size_t n_x = x_index.count_within(i, eps, opt.strict);
    const std::size_t n_y = y_index.count_within(i, eps, opt.strict);
    out.per_sample_n_x[i] = n_x;
    out.per_sample_n_y[i] = n_y;
    out.local_scores[i] = detail::ksg_term(opt.k, n, n_x, n_y);
  });
  out.global_mi = detail::finite_mean(out.local_scores);
  return out;
}

/// Twice the widest coordinate extent: at least twice the largest pairwise
/// Chebyshev distance, so one-hot label distances dominate every x-distance.
inline double default_label_scale(const FeatureMatrix& points) {
  double extent = 0.0;
  for (std::size_t j = 0; j < points.cols(); ++j) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      lo = std::min(lo, points(i, j));
      hi = std::max(hi, points(i, j));
    }
    extent = std::max(extent, hi - lo);
  }
  return extent > 0 ? 2.0 * extent : 1.0;
}

/// Labels embedded as label_scale * one_hot(y) and scored with the continuous
/// estimator on the joint space (x, y_onehot).
inline MIScoreSet score_onehot(const EmbeddedDataset& data, std::optional<double> label_scale,
                               const EstimatorOptions& opt = {}) {
  const double scale = label_scale ? *label_scale : default_label_scale(data.points);
  if (!(scale > 0.0) || !std::isfinite(scale)) throw ConfigError("score_onehot: label_scale must be positive");
  const std::size_t c = static_cast<std::size_t>(std::max(data.num_classes, 1));
  FeatureMatrix y(data.size(), c);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto label = static_cast<std::size_t>(data.labels[i]);
    if (label >= c) throw ConsistencyError("score_onehot: label out of range");
    y(i, label) = scale;
  }
  MIScoreSet out = score_continuous(data.points, y, opt);
  out.variant = EstimatorVariant::onehot_continuous;
  return out;
}

inline MIScoreSet score(const EmbeddedDataset& data, EstimatorVariant variant,
                        const EstimatorOptions& opt = {},
                        std::optional<double> label_scale = std::nullopt) {
  switch (variant) {
    case EstimatorVariant::discrete_label: return score_discrete(data, opt);
    case EstimatorVariant::onehot_continuous: return score_onehot(data, label_scale, opt);
    case EstimatorVariant::continuous_pair: break;
  }
  throw ConfigError("score: continuous_pair needs two continuous variables");
}

struct ScoreSummary {
  std::size_t count = 0;  // finite scores
  std::size_t degenerate = 0;
  double mean = 0.0;
  double stddev = 0.0;  // population
  double min = 0.0;
  double max = 0.0;
};

struct ClassSummaries {
  std::vector<ScoreSummary> per_class;  // indexed by class id
  ScoreSummary overall;
};

inline ClassSummaries per_class_summary(const std::vector<double>& scores,
                                        const std::vector<Label>& labels, int num_classes) {
  if (scores.size() != labels.size()) {
    throw ConsistencyError("per_class_summary: scores and labels differ in length");
  }
  // Welford accumulators.
  struct Acc {
    std::size_t n = 0, degenerate = 0;
    double mean = 0, m2 = 0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void add(double x) {
      if (!std::isfinite(x)) {
        ++degenerate;
        return;
      }
      ++n;
      const double delta = x - mean;
      mean += delta / static_cast<double>(n);
      m2 += delta * (x - mean);
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    ScoreSummary finish() const {
      if (n == 0) return {0, degenerate, 0, 0, 0, 0};
      return {n, degenerate, mean, std::sqrt(std::max(0.0, m2 / static_cast<double>(n))), lo, hi};
    }
  };
  std::vector<Acc> acc(static_cast<std::size_t>(std::max(num_classes, 0)));
  Acc all;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    if (labels[i] < 0 || c >= acc.size()) throw ConsistencyError("per_class_summary: bad label");
    acc[c].add(scores[i]);
    all.add(scores[i]);
  }
  ClassSummaries out;
  for (const auto& a : acc) out.per_class.push_back(a.finish());
  out.overall = all.finish();
  return out;
}

inline ClassSummaries per_class_summary(const MIScoreSet& scores, const std::vector<Label>& labels,
                                        int num_classes) {
  return per_class_summary(scores.local_scores, labels, num_classes);
}

// Content hash of an embedded dataset (coordinates and labels).
inline std::uint64_t content_hash(const EmbeddedDataset& data) {
  std::uint64_t h = kFnvOffset;
  const std::uint64_t dims[2] = {data.points.rows(), data.points.cols()};
  h = fnv1a(dims, sizeof(dims), h);
  h = fnv1a(data.points.data().data(), data.points.data().size() * sizeof(double), h);
  h = fnv1a(data.labels.data(), data.labels.size() * sizeof(Label), h);
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = kDigits[v & 0xf];
  return s;
}

inline constexpr int kScoreArtifactVersion = 1;

/// Score artifact. Doubles are written in shortest round-trip form, so a
/// reload is bit-identical; degenerate scores are written as null.
inline nlohmann::json to_json(const MIScoreSet& s, std::uint64_t data_hash) {
  nlohmann::json scores = nlohmann::json::array();
  for (double v : s.local_scores) {
    scores.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
  }
  nlohmann::json subs = nlohmann::json::array();
  for (const auto& sub : s.k_substitutions) subs.push_back({{"index", sub.index}, {"k_used", sub.k_used}});
  return {{"kind", "mi_scores"},
          {"schema_version", kScoreArtifactVersion},
          {"variant", to_string(s.variant)},
          {"k", s.k},
          {"n", s.n},
          {"strict", s.strict},
          {"jittered", s.jittered},
          {"units", "nats"},
          {"data_hash", hex64(data_hash)},
          {"global_mi", s.global_mi},
          {"local_scores", scores},
          {"n_x", s.per_sample_n_x},
          {"n_y", s.per_sample_n_y},
          {"k_substitutions", subs},
          {"degenerate", s.degenerate}};
}

inline MIScoreSet scores_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "mi_scores" || j.value("schema_version", 0) != kScoreArtifactVersion) {
    throw FormatError("score artifact: unsupported kind or schema version");
  }
  MIScoreSet s;
  s.variant = parse_variant(j.at("variant").get<std::string>());
  s.k = j.at("k").get<std::size_t>();
  s.n = j.at("n").get<std::size_t>();
  s.strict = j.at("strict").get<bool>();
  s.jittered = j.at("jittered").get<bool>();
  s.global_mi = j.at("global_mi").get<double>();
  for (const auto& v : j.at("local_scores")) {
    s.local_scores.push_back(v.is_null() ? kDegenerateScore : v.get<double>());
  }
  s.per_sample_n_x = j.at("n_x").get<std::vector<std::size_t>>();
  s.per_sample_n_y = j.at("n_y").get<std::vector<std::size_t>>();
  for (const auto& sub : j.at("k_substitutions")) {
    s.k_substitutions.push_back({sub.at("index").get<std::size_t>(), sub.at("k_used").get<std::size_t>()});
  }
  s.degenerate = j.at("degenerate").get<std::vector<std::size_t>>();
  if (s.local_scores.size() != s.n || s.per_sample_n_x.size() != s.n || s.per_sample_n_y.size() != s.n) {
    throw FormatError("score artifact: per-sample arrays do not match n");
  }
  return s;
}

}  // namespace micurate
