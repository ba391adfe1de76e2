#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "micurate/error.hpp"
#include "micurate/random.hpp"

namespace micurate {

using Label = int;

// Dense row-major N x dim matrix of doubles.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  FeatureMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ConsistencyError("FeatureMatrix: data size does not match rows*cols");
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }

  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  bool operator==(const FeatureMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class InputCorruption : std::uint8_t { none, gaussian, affine_strong, affine_mild };

inline std::string_view to_string(InputCorruption kind) {
  switch (kind) {
    case InputCorruption::none: return "none";
    case InputCorruption::gaussian: return "gaussian";
    case InputCorruption::affine_strong: return "affine_strong";
    case InputCorruption::affine_mild: return "affine_mild";
  }
  return "none";
}

// Per-sample corruption record. Label and input corruption may co-occur.
struct Provenance {
  bool label_flipped = false;
  InputCorruption input = InputCorruption::none;

  bool clean() const noexcept { return !label_flipped && input == InputCorruption::none; }
  bool operator==(const Provenance&) const = default;
};

// "clean", "label_flipped", "input_corrupted(<kind>)", or both joined by '+'.
inline std::string to_string(const Provenance& p) {
  if (p.clean()) return "clean";
  std::string out;
  if (p.label_flipped) out = "label_flipped";
  if (p.input != InputCorruption::none) {
    if (!out.empty()) out += '+';
    out += "input_corrupted(";
    out += to_string(p.input);
    out += ')';
  }
  return out;
}

struct ImageShape {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t pixels() const noexcept { return width * height; }
  bool operator==(const ImageShape&) const = default;
};

/// Samples with integer labels in [0, num_classes) plus corruption provenance.
///
/// All per-sample vectors have length N = features.rows(). A sample is marked
/// label_flipped exactly when its label differs from original_labels.
struct LabeledDataset {
  FeatureMatrix features;
  std::vector<Label> labels;
  int num_classes = 0;
  std::vector<Provenance> provenance;
  std::vector<Label> original_labels;
  std::optional<ImageShape> image_shape;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  bool operator==(const LabeledDataset&) const = default;

  // Throws ConsistencyError when any invariant is broken.
  void validate() const {
    const std::size_t n = features.rows();
    if (labels.size() != n || provenance.size() != n || original_labels.size() != n) {
      throw ConsistencyError("dataset: per-sample vectors have mismatched lengths");
    }
    if (num_classes < 1) throw ConsistencyError("dataset: num_classes must be positive");
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0 || labels[i] >= num_classes || original_labels[i] < 0 ||
          original_labels[i] >= num_classes) {
        throw ConsistencyError("dataset: label out of range at index " + std::to_string(i));
      }
      if (provenance[i].label_flipped != (labels[i] != original_labels[i])) {
        throw ConsistencyError("dataset: label_flipped flag disagrees with labels at index " +
                               std::to_string(i));
      }
    }
    for (double v : features.data()) {
      if (!std::isfinite(v)) throw ConsistencyError("dataset: non-finite feature value");
    }
    if (image_shape) {
      if (image_shape->pixels() != features.cols()) {
        throw ConsistencyError("dataset: image shape does not match feature dimension");
      }
      for (double v : features.data()) {
        if (v < 0.0 || v > 1.0) throw ConsistencyError("dataset: pixel value outside [0,1]");
      }
    }
  }

  // Rows `indices` in the given order, with all per-sample metadata.
  LabeledDataset subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.features = FeatureMatrix(indices.size(), dim());
    out.num_classes = num_classes;
    out.image_shape = image_shape;
    out.labels.reserve(indices.size());
    out.provenance.reserve(indices.size());
    out.original_labels.reserve(indices.size());
    for (std::size_t r = 0; r < indices.size(); ++r) {
      const std::size_t i = indices[r];
      std::ranges::copy(features.row(i), out.features.row(r).begin());
      out.labels.push_back(labels[i]);
      out.provenance.push_back(provenance[i]);
      out.original_labels.push_back(original_labels[i]);
    }
    return out;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (Label y : labels) ++counts[static_cast<std::size_t>(y)];
    return counts;
  }
};

// Builds a clean dataset: provenance all clean and original_labels = labels.
inline LabeledDataset make_dataset(FeatureMatrix features, std::vector<Label> labels,
                                   int num_classes,
                                   std::optional<ImageShape> shape = std::nullopt) {
  LabeledDataset ds;
  ds.features = std::move(features);
  ds.original_labels = labels;
  ds.labels = std::move(labels);
  ds.num_classes = num_classes;
  ds.provenance.assign(ds.labels.size(), Provenance{});
  ds.image_shape = shape;
  ds.validate();
  return ds;
}

// Isotropic Gaussian blobs, one per class.
struct SyntheticSpec {
  int num_classes = 2;
  std::size_t per_class_count = 100;
  std::size_t dim = 2;
  std::vector<std::vector<double>> class_means;
  double class_stddev = 1.0;
  std::uint64_t seed = 0;
};

/// Draws per_class_count samples for each class in class order. Each class
/// uses its own RNG stream derived from the seed.
inline LabeledDataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 1) throw ConfigError("synthetic: num_classes must be positive");
  if (spec.per_class_count < 1) throw ConfigError("synthetic: per_class_count must be positive");
  if (spec.dim < 1) throw ConfigError("synthetic: dim must be positive");
  if (!(spec.class_stddev > 0.0) || !std::isfinite(spec.class_stddev)) {
    throw ConfigError("synthetic: class_stddev must be finite and positive");
  }
  if (spec.class_means.size() != static_cast<std::size_t>(spec.num_classes)) {
    throw ConfigError("synthetic: need one mean per class");
  }
  for (const auto& m : spec.class_means) {
    if (m.size() != spec.dim) throw ConfigError("synthetic: class mean has wrong dimension");
  }
  for (std::size_t a = 0; a < spec.class_means.size(); ++a) {
    for (std::size_t b = a + 1; b < spec.class_means.size(); ++b) {
      if (spec.class_means[a] == spec.class_means[b]) {
        throw ConfigError("synthetic: class means must be pairwise distinct");
      }
    }
  }

  const std::size_t n = spec.per_class_count * static_cast<std::size_t>(spec.num_classes);
  FeatureMatrix x(n, spec.dim);
  std::vector<Label> y(n);
  std::size_t row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(c)));
    std::normal_distribution<double> z(0.0, 1.0);
    const auto& mean = spec.class_means[static_cast<std::size_t>(c)];
    for (std::size_t s = 0; s < spec.per_class_count; ++s, ++row) {
      auto out = x.row(row);
      for (std::size_t j = 0; j < spec.dim; ++j) out[j] = mean[j] + spec.class_stddev * z(rng);
      y[row] = c;
    }
  }
  return make_dataset(std::move(x), std::move(y), spec.num_classes);
}

// Class means drawn uniformly from the cube [0, scale]^dim.
inline std::vector<std::vector<double>> random_class_means(int num_classes, std::size_t dim,
                                                           double scale, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> means(static_cast<std::size_t>(num_classes),
                                         std::vector<double>(dim));
  for (auto& m : means) {
    for (auto& v : m) v = uniform(rng, 0.0, scale);
  }
  return means;
}

// Seven-segment digit glyphs rendered to grayscale images; a small,
// MNIST-shaped stand-in when real IDX files are not available.
struct GlyphSpec {
  int num_classes = 10;
  std::size_t per_class_count = 100;
  ImageShape shape{28, 28};
  double max_shift = 2.0;        // pixels, uniform per axis
  double max_slant = 0.2;        // horizontal shear factor
  double scale_jitter = 0.15;    // relative glyph size variation
  double thickness_min = 2.0;
  double thickness_max = 4.0;
  double endpoint_jitter = 2.5;  // pixels, per segment endpoint
  double pixel_noise = 0.05;     // stddev of clamped per-pixel noise
  double glyph_width = 0.5;      // fraction of image width
  double glyph_height = 0.75;    // fraction of image height
  std::uint64_t seed = 0;
};

namespace detail {

// Segment bitmasks for digits 0-9; bit order a,b,c,d,e,f,g.
inline constexpr std::uint8_t kSevenSegment[10] = {0x3f, 0x06, 0x5b, 0x4f, 0x66,
                                                   0x6d, 0x7d, 0x07, 0x7f, 0x6f};

inline double segment_distance(double px, double py, double ax, double ay, double bx,
                               double by) {
  const double dx = bx - ax, dy = by - ay;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((px - ax) * dx + (py - ay) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double cx = ax + t * dx - px, cy = ay + t * dy - py;
  return std::sqrt(cx * cx + cy * cy);
}

}  // namespace detail

inline LabeledDataset generate_glyphs(const GlyphSpec& spec) {
  if (spec.num_classes < 2 || spec.num_classes > 10) {
    throw ConfigError("glyphs: num_classes must be in [2, 10]");
  }
  if (spec.per_class_count < 1) throw ConfigError("glyphs: per_class_count must be positive");
  if (spec.shape.width < 8 || spec.shape.height < 8) {
    throw ConfigError("glyphs: image must be at least 8x8");
  }
  if (!(spec.thickness_min > 0) || spec.thickness_max < spec.thickness_min) {
    throw ConfigError("glyphs: invalid thickness range");
  }
  const double w = static_cast<double>(spec.shape.width);
  const double h = static_cast<double>(spec.shape.height);
  // Glyph box relative to the image center.
  const double half_w = spec.glyph_width * w / 2, half_h = spec.glyph_height * h / 2;
  // Segment endpoints as (x0,y0,x1,y1) in units of the half box.
  constexpr double kSeg[7][4] = {
      {-1, -1, 1, -1},  // a top
      {1, -1, 1, 0},    // b upper right
      {1, 0, 1, 1},     // c lower right
      {-1, 1, 1, 1},    // d bottom
      {-1, 0, -1, 1},   // e lower left
      {-1, -1, -1, 0},  // f upper left
      {-1, 0, 1, 0},    // g middle
  };

  const std::size_t n = spec.per_class_count * static_cast<std::size_t>(spec.num_classes);
  FeatureMatrix x(n, spec.shape.pixels());
  std::vector<Label> y(n);
  std::size_t row = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (std::size_t s = 0; s < spec.per_class_count; ++s, ++row) {
      Rng rng(derive_seed(spec.seed, row));
      std::normal_distribution<double> z(0.0, 1.0);
      const double sx = uniform(rng, -spec.max_shift, spec.max_shift);
      const double sy = uniform(rng, -spec.max_shift, spec.max_shift);
      const double slant = uniform(rng, -spec.max_slant, spec.max_slant);
      const double scale = 1.0 + uniform(rng, -spec.scale_jitter, spec.scale_jitter);
      const double thick = uniform(rng, spec.thickness_min, spec.thickness_max);
      const double cx = (w - 1) / 2 + sx, cy = (h - 1) / 2 + sy;

      double seg[7][4];
      int nseg = 0;
      for (int k = 0; k < 7; ++k) {
        if (!(detail::kSevenSegment[c] & (1u << k))) continue;
        for (int e = 0; e < 2; ++e) {
          const double gx = kSeg[k][2 * e] * half_w * scale;
          const double gy = kSeg[k][2 * e + 1] * half_h * scale;
          seg[nseg][2 * e] = cx + gx - slant * gy;
          seg[nseg][2 * e + 1] = cy + gy;
        }
        for (int e = 0; e < 4 && spec.endpoint_jitter > 0; ++e) {
          seg[nseg][e] += uniform(rng, -spec.endpoint_jitter, spec.endpoint_jitter);
        }
        ++nseg;
      }

      auto out = x.row(row);
      for (std::size_t py = 0; py < spec.shape.height; ++py) {
        for (std::size_t px = 0; px < spec.shape.width; ++px) {
          double d = 1e300;
          for (int k = 0; k < nseg; ++k) {
            d = std::min(d, detail::segment_distance(static_cast<double>(px),
                                                     static_cast<double>(py), seg[k][0],
                                                     seg[k][1], seg[k][2], seg[k][3]));
          }
          double v = std::clamp(thick / 2 + 0.5 - d, 0.0, 1.0);
          if (spec.pixel_noise > 0) v = std::clamp(v + spec.pixel_noise * z(rng), 0.0, 1.0);
          out[py * spec.shape.width + px] = v;
        }
      }
      y[row] = c;
    }
  }
  return make_dataset(std::move(x), std::move(y), spec.num_classes, spec.shape);
}

/// Stratified split: each class contributes round(test_fraction * count) test
/// samples, clamped so both parts stay non-empty. Both parts keep the original
/// index order.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline SplitIndices train_test_split_indices(const LabeledDataset& ds, double test_fraction,
                                             std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw ConfigError("train_test_split: test_fraction must lie in (0,1)");
  }
  const std::size_t n = ds.size();
  if (n < 2) throw ConfigError("train_test_split: need at least 2 samples");

  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < n; ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);

  std::vector<bool> is_test(n, false);
  std::size_t n_test = 0;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& members = by_class[c];
    if (members.empty()) continue;
    const std::size_t take =
        std::min(round_count(test_fraction * static_cast<double>(members.size())), members.size());
    for (std::size_t j : sample_without_replacement(members.size(), take, derive_seed(seed, c))) {
      is_test[members[j]] = true;
    }
    n_test += take;
  }
  // Tiny classes can round every class to zero or to everything.
  Rng rng(derive_seed(seed, 0xffffffffULL));
  while (n_test == 0 || n_test == n) {
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    const std::size_t i = pick(rng);
    if (n_test == 0 && !is_test[i]) {
      is_test[i] = true;
      ++n_test;
    } else if (n_test == n && is_test[i]) {
      is_test[i] = false;
      --n_test;
    }
  }

  SplitIndices out;
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? out.test : out.train).push_back(i);
  return out;
}

inline std::pair<LabeledDataset, LabeledDataset> train_test_split(const LabeledDataset& ds,
                                                                  double test_fraction,
                                                                  std::uint64_t seed) {
  const auto idx = train_test_split_indices(ds, test_fraction, seed);
  return {ds.subset(idx.train), ds.subset(idx.test)};
}

}  // namespace micurate
