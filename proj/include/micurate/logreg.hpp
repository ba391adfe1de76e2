#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "micurate/dataset.hpp"
#include "micurate/error.hpp"
#include "micurate/random.hpp"

namespace micurate {

/// Multinomial logistic regression. weights is C x (d+1) row-major with the
/// bias in the last column.
struct LogRegModel {
  std::vector<double> weights;
  int num_classes = 0;
  std::size_t input_dim = 0;

  std::size_t stride() const noexcept { return input_dim + 1; }
  bool operator==(const LogRegModel&) const = default;

  static LogRegModel zeros(int num_classes, std::size_t input_dim) {
    return {std::vector<double>(static_cast<std::size_t>(num_classes) * (input_dim + 1), 0.0),
            num_classes, input_dim};
  }
};

struct TrainConfig {
  double learning_rate = 0.1;
  int epochs = 300;
  double l2 = 1e-4;
  std::size_t batch_size = 0;  // 0 = full batch
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
      throw ConfigError("train: learning_rate must be positive");
    }
    if (epochs < 1) throw ConfigError("train: epochs must be positive");
    if (!(l2 >= 0) || !std::isfinite(l2)) throw ConfigError("train: l2 must be non-negative");
  }
};

// Softmax of the logits of x, max-subtracted.
inline std::vector<double> predict_proba(const LogRegModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim) {
    throw ConsistencyError("predict: input dim " + std::to_string(x.size()) + " != model dim " +
                           std::to_string(model.input_dim));
  }
  const auto c = static_cast<std::size_t>(model.num_classes);
  std::vector<double> p(c);
  for (std::size_t k = 0; k < c; ++k) {
    const double* w = model.weights.data() + k * model.stride();
    double z = w[model.input_dim];
    for (std::size_t j = 0; j < model.input_dim; ++j) z += w[j] * x[j];
    p[k] = z;
  }
  const double mx = *std::ranges::max_element(p);
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

struct Prediction {
  Label label = 0;
  std::vector<double> probabilities;
};

// Argmax with ties to the lower class id.
inline Prediction predict(const LogRegModel& model, std::span<const double> x) {
  Prediction out{0, predict_proba(model, x)};
  for (std::size_t k = 1; k < out.probabilities.size(); ++k) {
    if (out.probabilities[k] > out.probabilities[static_cast<std::size_t>(out.label)]) {
      out.label = static_cast<Label>(k);
    }
  }
  return out;
}

/// Mean cross-entropy over `rows` plus (l2/2)*||W||^2 (bias excluded).
/// Writes d(loss)/d(weights) into `grad` when it is non-empty.
inline double loss_and_gradient(const LogRegModel& model, const FeatureMatrix& x,
                                std::span<const Label> labels, std::span<const std::size_t> rows,
                                double l2, std::span<double> grad = {}) {
  const auto c = static_cast<std::size_t>(model.num_classes);
  const std::size_t stride = model.stride();
  const bool want_grad = !grad.empty();
  if (want_grad) std::ranges::fill(grad, 0.0);
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (std::size_t i : rows) {
    const auto xi = x.row(i);
    const auto p = predict_proba(model, xi);
    const auto y = static_cast<std::size_t>(labels[i]);
    loss -= std::log(std::max(p[y], 1e-300));
    if (!want_grad) continue;
    for (std::size_t k = 0; k < c; ++k) {
      const double g = (p[k] - (k == y ? 1.0 : 0.0)) * inv;
      double* gk = grad.data() + k * stride;
      for (std::size_t j = 0; j < model.input_dim; ++j) gk[j] += g * xi[j];
      gk[model.input_dim] += g;
    }
  }
  loss *= inv;
  double penalty = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t j = 0; j < model.input_dim; ++j) {
      const double w = model.weights[k * stride + j];
      penalty += w * w;
      if (want_grad) grad[k * stride + j] += l2 * w;
    }
  }
  return loss + 0.5 * l2 * penalty;
}

/// Mini-batch gradient descent from zero weights. Batches follow a per-epoch
/// shuffle seeded by cfg.seed; full-batch mode does not shuffle.
/// `loss_trace`, when given, receives the full objective before each epoch's
/// updates and once more after the last one.
inline LogRegModel train(const FeatureMatrix& x, std::span<const Label> labels, int num_classes,
                         std::span<const std::size_t> retained, const TrainConfig& cfg,
                         std::vector<double>* loss_trace = nullptr) {
  cfg.validate();
  if (retained.empty()) throw ConfigError("train: retained set is empty");
  if (labels.size() != x.rows()) throw ConsistencyError("train: features and labels differ in length");
  if (num_classes < 1) throw ConfigError("train: num_classes must be positive");
  for (std::size_t i : retained) {
    if (i >= x.rows()) throw ConsistencyError("train: retained index out of range");
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw ConsistencyError("train: label outside [0, num_classes)");
    }
  }

  LogRegModel model = LogRegModel::zeros(num_classes, x.cols());
  std::vector<double> grad(model.weights.size());
  std::vector<std::size_t> order(retained.begin(), retained.end());
  const std::size_t batch = cfg.batch_size == 0 ? order.size() : std::min(cfg.batch_size, order.size());
  Rng rng(cfg.seed);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < order.size()) std::ranges::shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      const double loss = loss_and_gradient(model, x, labels, rows, cfg.l2, grad);
      if (!std::isfinite(loss)) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch), epoch);
      }
      if (loss_trace && start == 0 && batch == order.size()) loss_trace->push_back(loss);
      for (std::size_t w = 0; w < grad.size(); ++w) model.weights[w] -= cfg.learning_rate * grad[w];
    }
  }
  for (double w : model.weights) {
    if (!std::isfinite(w)) throw DivergenceError("train: non-finite weights", cfg.epochs);
  }
  if (loss_trace && batch == order.size()) {
    loss_trace->push_back(loss_and_gradient(model, x, labels, order, cfg.l2));
  }
  return model;
}

struct Evaluation {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // NaN for classes absent from the test set
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

inline Evaluation evaluate(const LogRegModel& model, const FeatureMatrix& x,
                           std::span<const Label> labels) {
  if (labels.empty()) throw ConfigError("evaluate: empty test set");
  if (labels.size() != x.rows()) throw ConsistencyError("evaluate: features and labels differ in length");
  const auto c = static_cast<std::size_t>(model.num_classes);
  Evaluation ev;
  ev.confusion.assign(c, std::vector<std::size_t>(c, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto pred = static_cast<std::size_t>(predict(model, x.row(i)).label);
    const auto truth = static_cast<std::size_t>(labels[i]);
    if (truth >= c) throw ConsistencyError("evaluate: label outside model classes");
    ++ev.confusion[truth][pred];
    if (pred == truth) ++correct;
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  for (std::size_t k = 0; k < c; ++k) {
    const std::size_t total = std::accumulate(ev.confusion[k].begin(), ev.confusion[k].end(), std::size_t{0});
    ev.per_class_accuracy.push_back(total ? static_cast<double>(ev.confusion[k][k]) / static_cast<double>(total)
                                          : std::nan(""));
  }
  return ev;
}

inline nlohmann::json to_json(const LogRegModel& m) {
  return {{"kind", "logreg_model"},
          {"schema_version", 1},
          {"num_classes", m.num_classes},
          {"input_dim", m.input_dim},
          {"weights", m.weights}};
}

inline LogRegModel logreg_from_json(const nlohmann::json& j) {
  if (j.value("kind", "") != "logreg_model" || j.value("schema_version", 0) != 1) {
    throw FormatError("logreg model: unsupported artifact kind or schema version");
  }
  LogRegModel m{j.at("weights").get<std::vector<double>>(), j.at("num_classes").get<int>(),
                j.at("input_dim").get<std::size_t>()};
  if (m.weights.size() != static_cast<std::size_t>(m.num_classes) * m.stride()) {
    throw FormatError("logreg model: weight count does not match dims");
  }
  return m;
}

}  // namespace micurate
