#pragma once

// Exact k-nearest-neighbor search and fixed-radius counting under the
// Chebyshev (max-norm) metric. A brute-force scan and a kd-tree share one
// interface and return identical results: neighbors are ordered by
// (distance, index), so ties at the k-th distance go to the smaller index.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <queue>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "micurate/dataset.hpp"
#include "micurate/error.hpp"
#include "micurate/random.hpp"

namespace micurate {

inline double chebyshev(std::span<const double> a, std::span<const double> b) noexcept {
  double d = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) d = std::max(d, std::abs(a[j] - b[j]));
  return d;
}

struct NeighborResult {
  std::vector<std::size_t> indices;
  std::vector<double> distances;  // non-decreasing

  bool operator==(const NeighborResult&) const = default;
};

enum class IndexStructure : std::uint8_t { brute_force, kd_tree };

struct IndexOptions {
  IndexStructure structure = IndexStructure::kd_tree;
  std::size_t leaf_size = 16;
  // When set, every coordinate is perturbed once by U[-1e-10, 1e-10] drawn from
  // this seed, which separates exact duplicates.
  std::optional<std::uint64_t> jitter_seed;
};

inline constexpr double kJitterAmplitude = 1e-10;

inline void apply_jitter(FeatureMatrix& points, std::uint64_t seed) {
  Rng rng(seed);
  for (double& v : points.data()) v += uniform(rng, -kJitterAmplitude, kJitterAmplitude);
}

class NeighborIndex {
 public:
  explicit NeighborIndex(FeatureMatrix points, IndexOptions options = {})
      : points_(std::move(points)), options_(options) {
    if (points_.rows() == 0) throw ConfigError("build_index: no points");
    if (points_.cols() == 0) throw ConfigError("build_index: zero-dimensional points");
    for (double v : points_.data()) {
      if (!std::isfinite(v)) throw ConfigError("build_index: non-finite coordinate");
    }
    if (options_.leaf_size == 0) throw ConfigError("build_index: leaf_size must be positive");
    if (options_.jitter_seed) apply_jitter(points_, *options_.jitter_seed);
    if (options_.structure == IndexStructure::kd_tree) build_tree();
  }

  std::size_t size() const noexcept { return points_.rows(); }
  std::size_t dim() const noexcept { return points_.cols(); }
  const FeatureMatrix& points() const noexcept { return points_; }
  IndexStructure structure() const noexcept { return options_.structure; }

  double distance(std::size_t a, std::size_t b) const {
    return chebyshev(points_.row(a), points_.row(b));
  }

  /// The k nearest other points to point `q`.
  NeighborResult knn(std::size_t q, std::size_t k) const {
    check_query(q);
    if (k == 0) throw ConfigError("knn: k must be positive");
    if (k >= size()) {
      throw ConfigError("knn: k=" + std::to_string(k) + " requires more than " +
                        std::to_string(size()) + " points");
    }
    return search(q, k, {});
  }

  /// knn restricted to points whose mask entry is true (self always excluded).
  NeighborResult knn_among(std::size_t q, std::size_t k, const std::vector<bool>& mask) const {
    check_query(q);
    if (k == 0) throw ConfigError("knn_among: k must be positive");
    if (mask.size() != size()) throw ConsistencyError("knn_among: mask length mismatch");
    std::size_t candidates = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) candidates += (mask[i] && i != q) ? 1 : 0;
    if (candidates < k) {
      throw InsufficientNeighborsError("knn_among: " + std::to_string(candidates) +
                                       " candidates for k=" + std::to_string(k));
    }
    return search(q, k, mask);
  }

  /// Number of other points with distance < radius (strict) or <= radius.
  std::size_t count_within(std::size_t q, double radius, bool strict = true) const {
    check_query(q);
    if (!(radius >= 0.0)) throw ConfigError("count_within: radius must be non-negative");
    const auto query = points_.row(q);
    std::size_t total = 0;
    if (options_.structure == IndexStructure::brute_force) {
      for (std::size_t i = 0; i < size(); ++i) {
        if (inside(chebyshev(query, points_.row(i)), radius, strict)) ++total;
      }
    } else {
      total = count_node(0, query, radius, strict);
    }
    // The query itself sits at distance 0.
    if (inside(0.0, radius, strict)) --total;
    return total;
  }

 private:
  struct Node {
    std::size_t begin = 0, end = 0;  // range in order_
    std::size_t left = 0, right = 0;  // 0 means leaf (root is never a child)
    bool leaf() const noexcept { return left == 0; }
  };

  using Entry = std::pair<double, std::size_t>;  // (distance, index), lexicographic

  static bool inside(double d, double radius, bool strict) noexcept {
    return strict ? d < radius : d <= radius;
  }

  void check_query(std::size_t q) const {
    if (q >= size()) throw ConfigError("query index " + std::to_string(q) + " out of range");
  }

  std::span<const double> lo(std::size_t node) const { return {box_lo_.data() + node * dim(), dim()}; }
  std::span<const double> hi(std::size_t node) const { return {box_hi_.data() + node * dim(), dim()}; }

  double box_min_distance(std::size_t node, std::span<const double> q) const noexcept {
    const auto l = lo(node), h = hi(node);
    double d = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) d = std::max({d, l[j] - q[j], q[j] - h[j]});
    return d;
  }

  double box_max_distance(std::size_t node, std::span<const double> q) const noexcept {
    const auto l = lo(node), h = hi(node);
    double d = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) {
      d = std::max({d, std::abs(q[j] - l[j]), std::abs(h[j] - q[j])});
    }
    return d;
  }

  void build_tree() {
    order_.resize(size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    nodes_.clear();
    box_lo_.clear();
    box_hi_.clear();
    build_node(0, size());
  }

  std::size_t build_node(std::size_t begin, std::size_t end) {
    const std::size_t id = nodes_.size();
    nodes_.push_back({begin, end, 0, 0});
    const std::size_t d = dim();
    box_lo_.resize((id + 1) * d);
    box_hi_.resize((id + 1) * d);
    for (std::size_t j = 0; j < d; ++j) {
      double l = points_(order_[begin], j), h = l;
      for (std::size_t r = begin + 1; r < end; ++r) {
        const double v = points_(order_[r], j);
        l = std::min(l, v);
        h = std::max(h, v);
      }
      box_lo_[id * d + j] = l;
      box_hi_[id * d + j] = h;
    }
    if (end - begin <= options_.leaf_size) return id;

    std::size_t axis = 0;
    double spread = -1.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double s = box_hi_[id * d + j] - box_lo_[id * d + j];
      if (s > spread) {
        spread = s;
        axis = j;
      }
    }
    if (spread <= 0.0) return id;  // all points identical

    const std::size_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                     order_.begin() + static_cast<std::ptrdiff_t>(mid),
                     order_.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) {
                       const double va = points_(a, axis), vb = points_(b, axis);
                       return va < vb || (va == vb && a < b);
                     });
    const std::size_t left = build_node(begin, mid);
    const std::size_t right = build_node(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  NeighborResult search(std::size_t q, std::size_t k, const std::vector<bool>& mask) const {
    const auto query = points_.row(q);
    std::priority_queue<Entry> heap;  // max-heap on (distance, index)
    auto offer = [&](std::size_t i) {
      if (i == q || (!mask.empty() && !mask[i])) return;
      const Entry e{chebyshev(query, points_.row(i)), i};
      if (heap.size() < k) {
        heap.push(e);
      } else if (e < heap.top()) {
        heap.pop();
        heap.push(e);
      }
    };

    if (options_.structure == IndexStructure::brute_force) {
      for (std::size_t i = 0; i < size(); ++i) offer(i);
    } else {
      search_node(0, query, k, heap, offer);
    }

    NeighborResult out;
    out.indices.resize(heap.size());
    out.distances.resize(heap.size());
    for (std::size_t r = heap.size(); r-- > 0;) {
      out.distances[r] = heap.top().first;
      out.indices[r] = heap.top().second;
      heap.pop();
    }
    return out;
  }

  template <typename Offer>
  void search_node(std::size_t node, std::span<const double> query, std::size_t k,
                   const std::priority_queue<Entry>& heap, Offer& offer) const {
    const Node& n = nodes_[node];
    if (n.leaf()) {
      for (std::size_t r = n.begin; r < n.end; ++r) offer(order_[r]);
      return;
    }
    std::size_t first = n.left, second = n.right;
    double d_first = box_min_distance(first, query), d_second = box_min_distance(second, query);
    if (d_second < d_first) {
      std::swap(first, second);
      std::swap(d_first, d_second);
    }
    // Equal distance can still hold a smaller-index tie, so prune only on '>'.
    if (heap.size() < k || d_first <= heap.top().first) search_node(first, query, k, heap, offer);
    if (heap.size() < k || d_second <= heap.top().first) search_node(second, query, k, heap, offer);
  }

  std::size_t count_node(std::size_t node, std::span<const double> query, double radius,
                         bool strict) const {
    if (!inside(box_min_distance(node, query), radius, strict)) return 0;
    const Node& n = nodes_[node];
    if (inside(box_max_distance(node, query), radius, strict)) return n.end - n.begin;
    if (n.leaf()) {
      std::size_t c = 0;
      for (std::size_t r = n.begin; r < n.end; ++r) {
        if (inside(chebyshev(query, points_.row(order_[r])), radius, strict)) ++c;
      }
      return c;
    }
    return count_node(n.left, query, radius, strict) + count_node(n.right, query, radius, strict);
  }

  FeatureMatrix points_;
  IndexOptions options_;
  std::vector<std::size_t> order_;
  std::vector<Node> nodes_;
  std::vector<double> box_lo_, box_hi_;
};

inline NeighborIndex build_index(FeatureMatrix points, IndexOptions options = {}) {
  return NeighborIndex(std::move(points), options);
}

}  // namespace micurate
