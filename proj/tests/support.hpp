#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "micurate/dataset.hpp"
#include "micurate/pca.hpp"

namespace testing_support {

using micurate::FeatureMatrix;
using micurate::Label;

inline FeatureMatrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                                   double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  FeatureMatrix m(rows, cols);
  for (double& v : m.data()) v = u(rng);
  return m;
}

// Integer-grid coordinates: plenty of exact distance ties.
inline FeatureMatrix grid_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, int span) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, span);
  FeatureMatrix m(rows, cols);
  for (double& v : m.data()) v = u(rng);
  return m;
}

inline FeatureMatrix from_rows(const std::vector<std::vector<double>>& rows) {
  FeatureMatrix m(rows.size(), rows.empty() ? 0 : rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::ranges::copy(rows[i], m.row(i).begin());
  return m;
}

inline micurate::EmbeddedDataset embedded(FeatureMatrix points, std::vector<Label> labels,
                                          int num_classes) {
  const std::size_t n = labels.size();
  return {std::move(points), labels, num_classes, std::vector<micurate::Provenance>(n), labels};
}

// Four well-separated clusters at the corners of a square of side `side`.
inline micurate::LabeledDataset square_blobs(std::size_t per_class, double side, double stddev,
                                             std::uint64_t seed) {
  micurate::SyntheticSpec spec;
  spec.num_classes = 4;
  spec.per_class_count = per_class;
  spec.dim = 2;
  spec.class_means = {{0, 0}, {side, 0}, {0, side}, {side, side}};
  spec.class_stddev = stddev;
  spec.seed = seed;
  return micurate::generate_synthetic(spec);
}

inline std::filesystem::path scratch_dir(const std::string& name) {
#ifdef MICURATE_TEST_TMP
  const std::filesystem::path root = MICURATE_TEST_TMP;
#else
  const std::filesystem::path root = std::filesystem::temp_directory_path() / "micurate_tests";
#endif
  const auto dir = root / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing_support
