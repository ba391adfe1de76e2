#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "micurate/dataset.hpp"
#include "micurate/error.hpp"

namespace micurate {

/// Fitted principal-component projection.
///
/// `components` holds d orthonormal rows of length source_dim, ordered by
/// non-increasing explained variance. Each component is sign-normalized so its
/// largest-magnitude coordinate is positive (first such coordinate on ties).
struct PcaModel {
  std::vector<double> mean;
  FeatureMatrix components;  // d x source_dim
  std::vector<double> explained_variance;
  bool whiten = false;

  std::size_t source_dim() const noexcept { return mean.size(); }
  std::size_t latent_dim() const noexcept { return components.rows(); }
  bool operator==(const PcaModel&) const = default;
};

/// Low-dimensional points aligned 1:1 with labels; the space where MI is scored.
struct EmbeddedDataset {
  FeatureMatrix points;
  std::vector<Label> labels;
  int num_classes = 0;
  std::vector<Provenance> provenance;
  std::vector<Label> original_labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return points.cols(); }
  bool operator==(const EmbeddedDataset&) const = default;
};

// Identity embedding: the raw features used directly as points.
inline EmbeddedDataset as_embedded(const LabeledDataset& ds) {
  return {ds.features, ds.labels, ds.num_classes, ds.provenance, ds.original_labels};
}

// Above this source dimension the N x N Gram matrix is decomposed instead of
// the covariance when N is smaller.
inline constexpr std::size_t kExplicitCovarianceMaxDim = 1024;

inline PcaModel fit_pca(const LabeledDataset& ds, std::size_t d, bool whiten = false) {
  const std::size_t n = ds.size();
  const std::size_t dim = ds.dim();
  if (n < 2) throw ConfigError("fit_pca: need at least 2 samples");
  if (d < 1 || d > std::min(n, dim)) {
    throw ConfigError("fit_pca: latent dimension " + std::to_string(d) + " must lie in [1, " +
                      std::to_string(std::min(n, dim)) + "]");
  }

  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMatrix> x(ds.features.data().data(), static_cast<Eigen::Index>(n),
                                static_cast<Eigen::Index>(dim));
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mu;
  const double denom = static_cast<double>(n - 1);

  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // columns, source_dim long
  if (dim <= kExplicitCovarianceMaxDim || n >= dim) {
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    if (solver.info() != Eigen::Success) throw DegenerateInputError("fit_pca: eigensolver failed");
    values = solver.eigenvalues();
    vectors = solver.eigenvectors();
  } else {
    const Eigen::MatrixXd gram = (centered * centered.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
    if (solver.info() != Eigen::Success) throw DegenerateInputError("fit_pca: eigensolver failed");
    values = solver.eigenvalues();
    vectors = centered.transpose() * solver.eigenvectors();
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
      const double norm = vectors.col(j).norm();
      if (norm > 0) vectors.col(j) /= norm;
    }
  }

  const double total = std::max(0.0, values.sum());
  if (!(total > 0.0)) throw DegenerateInputError("fit_pca: dataset has zero variance");

  PcaModel model;
  model.whiten = whiten;
  model.mean.assign(mu.data(), mu.data() + dim);
  model.components = FeatureMatrix(d, dim);
  model.explained_variance.resize(d);
  const Eigen::Index m = values.size();
  for (std::size_t c = 0; c < d; ++c) {
    const Eigen::Index col = m - 1 - static_cast<Eigen::Index>(c);
    Eigen::VectorXd v = vectors.col(col);
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      if (std::abs(v[j]) > best) {
        best = std::abs(v[j]);
        arg = j;
      }
    }
    if (v[arg] < 0) v = -v;
    std::copy(v.data(), v.data() + dim, model.components.row(c).begin());
    model.explained_variance[c] = std::max(0.0, values[col]);
  }
  return model;
}

inline void project(const PcaModel& model, std::span<const double> x, std::span<double> out) {
  const std::size_t dim = model.source_dim();
  for (std::size_t c = 0; c < model.latent_dim(); ++c) {
    const auto comp = model.components.row(c);
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) acc += comp[j] * (x[j] - model.mean[j]);
    if (model.whiten && model.explained_variance[c] > 0) {
      acc /= std::sqrt(model.explained_variance[c]);
    }
    out[c] = acc;
  }
}

inline EmbeddedDataset transform(const PcaModel& model, const LabeledDataset& ds) {
  if (ds.dim() != model.source_dim()) {
    throw ConsistencyError("transform: dataset dim " + std::to_string(ds.dim()) +
                           " does not match model dim " + std::to_string(model.source_dim()));
  }
  EmbeddedDataset out{FeatureMatrix(ds.size(), model.latent_dim()), ds.labels, ds.num_classes,
                      ds.provenance, ds.original_labels};
  for (std::size_t i = 0; i < ds.size(); ++i) project(model, ds.features.row(i), out.points.row(i));
  return out;
}

// Mean squared reconstruction error of `ds` through the (unwhitened) model.
inline double reconstruction_error(const PcaModel& model, const LabeledDataset& ds) {
  const std::size_t dim = model.source_dim();
  std::vector<double> z(model.latent_dim());
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto x = ds.features.row(i);
    for (std::size_t c = 0; c < model.latent_dim(); ++c) {
      const auto comp = model.components.row(c);
      double acc = 0.0;
      for (std::size_t j = 0; j < dim; ++j) acc += comp[j] * (x[j] - model.mean[j]);
      z[c] = acc;
    }
    for (std::size_t j = 0; j < dim; ++j) {
      double r = model.mean[j];
      for (std::size_t c = 0; c < model.latent_dim(); ++c) r += z[c] * model.components(c, j);
      total += (x[j] - r) * (x[j] - r);
    }
  }
  return total / static_cast<double>(ds.size());
}

inline constexpr int kPcaSchemaVersion = 1;

inline nlohmann::json to_json(const PcaModel& m) {
  nlohmann::json comps = nlohmann::json::array();
  for (std::size_t c = 0; c < m.latent_dim(); ++c) {
    const auto row = m.components.row(c);
    comps.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"kind", "pca_model"},
          {"schema_version", kPcaSchemaVersion},
          {"whiten", m.whiten},
          {"mean", m.mean},
          {"components", comps},
          {"explained_variance", m.explained_variance}};
}

inline PcaModel pca_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "pca_model" || j.value("schema_version", 0) != kPcaSchemaVersion) {
    throw FormatError("pca model: unsupported artifact kind or schema version");
  }
  PcaModel m;
  m.whiten = j.at("whiten").get<bool>();
  m.mean = j.at("mean").get<std::vector<double>>();
  m.explained_variance = j.at("explained_variance").get<std::vector<double>>();
  const auto rows = j.at("components").get<std::vector<std::vector<double>>>();
  m.components = FeatureMatrix(rows.size(), m.mean.size());
  for (std::size_t c = 0; c < rows.size(); ++c) {
    if (rows[c].size() != m.mean.size()) throw FormatError("pca model: component length mismatch");
    std::ranges::copy(rows[c], m.components.row(c).begin());
  }
  if (m.explained_variance.size() != rows.size()) {
    throw FormatError("pca model: variance count mismatch");
  }
  return m;
}

}  // namespace micurate
