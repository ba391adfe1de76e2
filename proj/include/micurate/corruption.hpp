#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "micurate/dataset.hpp"
#include "micurate/error.hpp"
#include "micurate/random.hpp"

namespace micurate {

/// Ranges for a random affine map; every parameter is drawn uniformly.
struct AffineParams {
  double rotation_deg = 0.0;  // rotation in [-r, r]
  double scale_min = 1.0;
  double scale_max = 1.0;
  double shear_deg = 0.0;        // horizontal shear angle in [-s, s]
  double translate_frac = 0.0;   // shift in [-t, t] * width (x) and * height (y)

  void validate() const {
    if (!(rotation_deg >= 0) || !(shear_deg >= 0) || !(translate_frac >= 0)) {
      throw ConfigError("affine: ranges must be non-negative");
    }
    if (!(scale_min > 0) || scale_max < scale_min) {
      throw ConfigError("affine: need 0 < scale_min <= scale_max");
    }
    if (!(shear_deg < 90)) throw ConfigError("affine: shear must be below 90 degrees");
  }

  static AffineParams strong() { return {75.0, 0.5, 1.6, 30.0, 0.20}; }
  static AffineParams mild() { return {15.0, 0.9, 1.1, 5.0, 0.07}; }
  static AffineParams identity() { return {}; }
};

struct LabelFlip {
  double rate = 0.0;
};
struct GaussianNoise {
  double noise_factor = 0.9;
  double fraction = 0.3;
};
struct AffineWarp {
  AffineParams params;
  double fraction = 0.3;
  InputCorruption kind = InputCorruption::affine_strong;
};

struct CorruptionSpec {
  std::variant<LabelFlip, GaussianNoise, AffineWarp> kind;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0,1]");
}

// Stream for the choice of which samples get corrupted.
inline constexpr std::uint64_t kChoiceStream = 0xc401ceULL;

inline std::vector<std::size_t> choose(std::size_t n, double fraction, std::uint64_t seed) {
  auto chosen = sample_without_replacement(n, round_count(fraction * static_cast<double>(n)),
                                           splitmix64(seed ^ kChoiceStream));
  std::ranges::sort(chosen);
  return chosen;
}

}  // namespace detail

/// Replaces exactly round(rate*N) labels, chosen uniformly without
/// replacement, by a uniformly drawn different class.
inline LabeledDataset flip_labels(const LabeledDataset& ds, double rate, std::uint64_t seed) {
  detail::check_unit(rate, "flip rate");
  const auto chosen = detail::choose(ds.size(), rate, seed);
  if (!chosen.empty() && ds.num_classes < 2) {
    throw ConfigError("flip_labels: need at least 2 classes");
  }
  LabeledDataset out = ds;
  for (std::size_t i : chosen) {
    Rng rng(derive_seed(seed, i));
    std::uniform_int_distribution<int> pick(0, ds.num_classes - 2);
    const int u = pick(rng);
    const Label old = ds.labels[i];
    out.labels[i] = u < old ? u : u + 1;
    out.provenance[i].label_flipped = out.labels[i] != out.original_labels[i];
  }
  return out;
}

/// x' = clamp(x + noise_factor * z, 0, 1) with z ~ N(0,1) per pixel, on
/// round(fraction*N) chosen samples.
inline LabeledDataset add_gaussian(const LabeledDataset& ds, double noise_factor, double fraction,
                                   std::uint64_t seed) {
  if (!(noise_factor >= 0.0) || !std::isfinite(noise_factor)) {
    throw ConfigError("add_gaussian: noise_factor must be finite and non-negative");
  }
  detail::check_unit(fraction, "gaussian fraction");
  for (double v : ds.features.data()) {
    if (v < 0.0 || v > 1.0) throw ConfigError("add_gaussian: dataset is not image-valued");
  }
  LabeledDataset out = ds;
  for (std::size_t i : detail::choose(ds.size(), fraction, seed)) {
    Rng rng(derive_seed(seed, i));
    std::normal_distribution<double> z(0.0, 1.0);
    for (double& v : out.features.row(i)) v = std::clamp(v + noise_factor * z(rng), 0.0, 1.0);
    out.provenance[i].input = InputCorruption::gaussian;
  }
  return out;
}

/// Forward map about the image center: p' = A (p - c) + c + t with
/// A = Rotation(theta) * Shear(phi) * Scale(s).
struct AffineTransform {
  double a00 = 1, a01 = 0, a10 = 0, a11 = 1;
  double tx = 0, ty = 0;
};

inline AffineTransform make_affine(double rotation_deg, double scale, double shear_deg, double tx,
                                   double ty) {
  const double th = rotation_deg * std::numbers::pi / 180.0;
  const double sh = std::tan(shear_deg * std::numbers::pi / 180.0);
  const double c = std::cos(th), s = std::sin(th);
  // R * [[1, sh], [0, 1]] * diag(scale)
  return {scale * c, scale * (c * sh - s), scale * s, scale * (s * sh + c), tx, ty};
}

/// Resamples one image through the inverse of `t` with bilinear
/// interpolation; reads outside the image are 0.
inline void warp_image(std::span<const double> src, std::span<double> dst, ImageShape shape,
                       const AffineTransform& t) {
  const double det = t.a00 * t.a11 - t.a01 * t.a10;
  const double i00 = t.a11 / det, i01 = -t.a01 / det, i10 = -t.a10 / det, i11 = t.a00 / det;
  const double cx = (static_cast<double>(shape.width) - 1) / 2;
  const double cy = (static_cast<double>(shape.height) - 1) / 2;
  const auto w = static_cast<long>(shape.width), h = static_cast<long>(shape.height);
  auto at = [&](long x, long y) -> double {
    if (x < 0 || y < 0 || x >= w || y >= h) return 0.0;
    return src[static_cast<std::size_t>(y * w + x)];
  };
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const double dx = static_cast<double>(x) - cx - t.tx;
      const double dy = static_cast<double>(y) - cy - t.ty;
      const double sx = i00 * dx + i01 * dy + cx;
      const double sy = i10 * dx + i11 * dy + cy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double ax = sx - fx, ay = sy - fy;
      const auto x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      double v = 0.0;
      // Skip zero-weight taps so exact grid hits copy the source value.
      if ((1 - ax) * (1 - ay) != 0) v += (1 - ax) * (1 - ay) * at(x0, y0);
      if (ax * (1 - ay) != 0) v += ax * (1 - ay) * at(x0 + 1, y0);
      if ((1 - ax) * ay != 0) v += (1 - ax) * ay * at(x0, y0 + 1);
      if (ax * ay != 0) v += ax * ay * at(x0 + 1, y0 + 1);
      dst[static_cast<std::size_t>(y * w + x)] = std::clamp(v, 0.0, 1.0);
    }
  }
}

inline AffineTransform sample_affine(const AffineParams& p, ImageShape shape, Rng& rng) {
  const double rot = uniform(rng, -p.rotation_deg, p.rotation_deg);
  const double scale = uniform(rng, p.scale_min, p.scale_max);
  const double shear = uniform(rng, -p.shear_deg, p.shear_deg);
  const double tx = uniform(rng, -p.translate_frac, p.translate_frac) * static_cast<double>(shape.width);
  const double ty = uniform(rng, -p.translate_frac, p.translate_frac) * static_cast<double>(shape.height);
  return make_affine(rot, scale, shear, tx, ty);
}

inline LabeledDataset affine_warp(const LabeledDataset& ds, const AffineParams& params,
                                  double fraction, std::uint64_t seed, ImageShape shape,
                                  InputCorruption kind = InputCorruption::affine_strong) {
  params.validate();
  detail::check_unit(fraction, "affine fraction");
  if (shape.pixels() != ds.dim() || shape.pixels() == 0) {
    throw ConfigError("affine_warp: image shape " + std::to_string(shape.width) + "x" +
                      std::to_string(shape.height) + " does not match dim " + std::to_string(ds.dim()));
  }
  if (kind != InputCorruption::affine_strong && kind != InputCorruption::affine_mild) {
    throw ConfigError("affine_warp: kind must be affine_strong or affine_mild");
  }
  LabeledDataset out = ds;
  std::vector<double> buffer(ds.dim());
  for (std::size_t i : detail::choose(ds.size(), fraction, seed)) {
    Rng rng(derive_seed(seed, i));
    warp_image(ds.features.row(i), buffer, shape, sample_affine(params, shape, rng));
    std::ranges::copy(buffer, out.features.row(i).begin());
    out.provenance[i].input = kind;
  }
  return out;
}

inline LabeledDataset affine_warp(const LabeledDataset& ds, const AffineParams& params,
                                  double fraction, std::uint64_t seed,
                                  InputCorruption kind = InputCorruption::affine_strong) {
  if (!ds.image_shape) throw ConfigError("affine_warp: dataset has no image shape");
  return affine_warp(ds, params, fraction, seed, *ds.image_shape, kind);
}

inline LabeledDataset apply(const LabeledDataset& ds, const CorruptionSpec& spec) {
  return std::visit(
      [&](const auto& k) -> LabeledDataset {
        using T = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<T, LabelFlip>) {
          return flip_labels(ds, k.rate, spec.seed);
        } else if constexpr (std::is_same_v<T, GaussianNoise>) {
          return add_gaussian(ds, k.noise_factor, k.fraction, spec.seed);
        } else {
          return affine_warp(ds, k.params, k.fraction, spec.seed, k.kind);
        }
      },
      spec.kind);
}

}  // namespace micurate
