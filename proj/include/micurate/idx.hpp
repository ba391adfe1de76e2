#pragma once

// IDX reader/writer (MNIST's native format). All header integers are
// big-endian u32: images carry magic 0x00000803, count, rows, cols followed by
// row-major u8 pixels; labels carry magic 0x00000801, count, then u8 labels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "micurate/dataset.hpp"
#include "micurate/error.hpp"

namespace micurate::idx {

inline constexpr std::uint32_t kImagesMagic = 0x00000803;
inline constexpr std::uint32_t kLabelsMagic = 0x00000801;

struct ImageFile {
  std::uint32_t count = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};

struct LabelFile {
  std::vector<std::uint8_t> labels;
};

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset,
                               const std::string& what) {
  if (bytes.size() < offset + 4) throw IoError(what + ": truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace detail

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline ImageFile decode_images(std::span<const std::uint8_t> bytes,
                               const std::string& what = "images") {
  const std::uint32_t magic = detail::read_be32(bytes, 0, what);
  if (magic != kImagesMagic) throw FormatError(what + ": bad magic number");
  ImageFile f;
  f.count = detail::read_be32(bytes, 4, what);
  f.rows = detail::read_be32(bytes, 8, what);
  f.cols = detail::read_be32(bytes, 12, what);
  const std::size_t payload = std::size_t{f.count} * f.rows * f.cols;
  if (bytes.size() < 16 + payload) throw IoError(what + ": truncated pixel data");
  f.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
  return f;
}

inline LabelFile decode_labels(std::span<const std::uint8_t> bytes,
                               const std::string& what = "labels") {
  const std::uint32_t magic = detail::read_be32(bytes, 0, what);
  if (magic != kLabelsMagic) throw FormatError(what + ": bad magic number");
  const std::uint32_t count = detail::read_be32(bytes, 4, what);
  if (bytes.size() < 8 + std::size_t{count}) throw IoError(what + ": truncated label data");
  LabelFile f;
  f.labels.assign(bytes.begin() + 8, bytes.begin() + 8 + count);
  return f;
}

inline std::vector<std::uint8_t> encode_images(const ImageFile& f) {
  std::vector<std::uint8_t> out;
  out.reserve(16 + f.pixels.size());
  detail::write_be32(out, kImagesMagic);
  detail::write_be32(out, f.count);
  detail::write_be32(out, f.rows);
  detail::write_be32(out, f.cols);
  out.insert(out.end(), f.pixels.begin(), f.pixels.end());
  return out;
}

inline std::vector<std::uint8_t> encode_labels(const LabelFile& f) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + f.labels.size());
  detail::write_be32(out, kLabelsMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(f.labels.size()));
  out.insert(out.end(), f.labels.begin(), f.labels.end());
  return out;
}

/// Pairs decoded images with labels. Pixels are scaled by 1/255.
/// num_classes is max(label)+1 unless a larger value is given.
inline LabeledDataset to_dataset(const ImageFile& images, const LabelFile& labels,
                                 int num_classes = 0) {
  if (images.count != labels.labels.size()) {
    throw ConsistencyError("idx: image count " + std::to_string(images.count) +
                           " does not match label count " + std::to_string(labels.labels.size()));
  }
  const std::size_t dim = std::size_t{images.rows} * images.cols;
  if (images.count > 0 && dim == 0) throw FormatError("idx: zero-sized images");
  FeatureMatrix x(images.count, dim);
  std::ranges::transform(images.pixels, x.data().begin(),
                         [](std::uint8_t b) { return static_cast<double>(b) / 255.0; });
  std::vector<Label> y(labels.labels.begin(), labels.labels.end());
  int max_label = -1;
  for (Label v : y) max_label = std::max(max_label, v);
  const int c = std::max(num_classes, max_label + 1);
  return make_dataset(std::move(x), std::move(y), std::max(c, 1), ImageShape{images.cols, images.rows});
}

inline LabeledDataset load_idx(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path, int num_classes = 0) {
  const auto img_bytes = read_file(images_path);
  const auto lbl_bytes = read_file(labels_path);
  return to_dataset(decode_images(img_bytes, images_path.string()),
                    decode_labels(lbl_bytes, labels_path.string()), num_classes);
}

// Inverse of to_dataset for image datasets (pixels rounded to the nearest byte).
inline std::pair<ImageFile, LabelFile> from_dataset(const LabeledDataset& ds) {
  if (!ds.image_shape) throw ConfigError("idx: dataset is not image-valued");
  ImageFile img;
  img.count = static_cast<std::uint32_t>(ds.size());
  img.rows = static_cast<std::uint32_t>(ds.image_shape->height);
  img.cols = static_cast<std::uint32_t>(ds.image_shape->width);
  img.pixels.resize(ds.features.data().size());
  std::ranges::transform(ds.features.data(), img.pixels.begin(), [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  });
  LabelFile lbl;
  lbl.labels.reserve(ds.size());
  for (Label y : ds.labels) lbl.labels.push_back(static_cast<std::uint8_t>(y));
  return {std::move(img), std::move(lbl)};
}

}  // namespace micurate::idx
