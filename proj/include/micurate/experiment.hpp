#pragma once

// Declarative experiment pipeline: dataset -> split -> corruption -> embedding
// -> MI scoring -> selection grid -> classifier -> report.
//
// Every stage draws its seed from the master seed as
// splitmix64(master ^ fnv1a(stage_name)); see stage_seed().

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "micurate/corruption.hpp"
#include "micurate/dataset.hpp"
#include "micurate/error.hpp"
#include "micurate/idx.hpp"
#include "micurate/ksg.hpp"
#include "micurate/logreg.hpp"
#include "micurate/parallel.hpp"
#include "micurate/pca.hpp"
#include "micurate/random.hpp"
#include "micurate/selection.hpp"

namespace micurate::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;
inline constexpr const char* kToolVersion = "1.0.0";

// ---------------------------------------------------------------------------
// Configuration

enum class DataSource : std::uint8_t { synthetic, glyphs, idx };

struct DatasetConfig {
  DataSource source = DataSource::synthetic;
  int num_classes = 4;
  std::size_t per_class_count = 200;
  double test_fraction = 0.25;
  // synthetic
  std::size_t dim = 2;
  double class_stddev = 1.0;
  double mean_scale = 10.0;  // means drawn from [0, mean_scale]^dim unless given
  std::vector<std::vector<double>> class_means;
  // glyphs
  std::size_t width = 28;
  std::size_t height = 28;
  // idx; test files optional (split from train when absent)
  fs::path train_images, train_labels, test_images, test_labels;
  std::size_t limit_train = 0;  // 0 = all
  std::size_t limit_test = 0;
};

struct EmbeddingConfig {
  bool pca = true;  // false: score raw features
  std::size_t dim = 16;
  bool whiten = false;
};

enum class CorruptionKind : std::uint8_t { label_flip, gaussian, affine_strong, affine_mild };

struct CorruptionConfig {
  CorruptionKind kind = CorruptionKind::label_flip;
  double rate = 0.0;  // label_flip
  double noise_factor = 0.9;
  double fraction = 0.3;
  AffineParams params;

  std::string name() const {
    std::ostringstream os;
    switch (kind) {
      case CorruptionKind::label_flip: os << "label_flip(" << rate << ")"; break;
      case CorruptionKind::gaussian: os << "gaussian(" << noise_factor << "," << fraction << ")"; break;
      case CorruptionKind::affine_strong: os << "affine_strong(" << fraction << ")"; break;
      case CorruptionKind::affine_mild: os << "affine_mild(" << fraction << ")"; break;
    }
    return os.str();
  }
};

struct EstimatorConfig {
  EstimatorVariant variant = EstimatorVariant::discrete_label;
  std::size_t k = 3;
  bool strict = true;
  std::optional<double> label_scale;
  bool jitter = false;
};

struct StrategyConfig {
  SelectionScope scope = SelectionScope::global;
  SelectionBand band = SelectionBand::top;
};

struct ClassifierConfig {
  TrainConfig train;
  std::optional<std::uint64_t> seed;  // overrides the derived stage seed
  bool raw_features = false;          // train on raw features instead of embedded ones
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  fs::path output_dir = "out";
  DatasetConfig dataset;
  EmbeddingConfig embedding;
  std::vector<CorruptionConfig> corruptions;
  EstimatorConfig estimator;
  std::vector<StrategyConfig> strategies;
  std::vector<double> ratios;
  ClassifierConfig classifier;
  json echo;  // normalized config, without output_dir
};

struct Violation {
  std::string field;  // JSON pointer-like path, e.g. selection.ratios[2]
  std::string message;
};

inline std::string format(const std::vector<Violation>& v) {
  std::string out;
  for (const auto& x : v) out += x.field + ": " + x.message + "\n";
  return out;
}

namespace detail {

// Reads typed fields while collecting violations instead of throwing.
class Reader {
 public:
  explicit Reader(std::vector<Violation>& out) : out_(out) {}

  void fail(const std::string& field, const std::string& msg) { out_.push_back({field, msg}); }

  template <typename T>
  T get(const json& obj, const std::string& key, const std::string& path, T fallback) {
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    try {
      return obj.at(key).get<T>();
    } catch (const json::exception&) {
      fail(path + key, "has the wrong type");
      return fallback;
    }
  }

  bool require(const json& obj, const std::string& key, const std::string& path) {
    if (obj.is_object() && obj.contains(key)) return true;
    fail(path + key, "is required");
    return false;
  }

 private:
  std::vector<Violation>& out_;
};

inline fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

/// Parses a config document and reports every violation found. `base_dir`
/// resolves relative file paths. When `check_files` is set, referenced input
/// files must exist.
inline std::pair<ExperimentConfig, std::vector<Violation>> parse_config(const json& doc,
                                                                       const fs::path& base_dir,
                                                                       bool check_files = true) {
  std::vector<Violation> errs;
  detail::Reader rd(errs);
  ExperimentConfig cfg;
  if (!doc.is_object()) {
    errs.push_back({"$", "config must be a JSON object"});
    return {cfg, errs};
  }

  cfg.schema_version = rd.get<int>(doc, "schema_version", "", -1);
  if (cfg.schema_version != kConfigSchemaVersion) {
    rd.fail("schema_version", "must be " + std::to_string(kConfigSchemaVersion));
  }
  cfg.seed = rd.get<std::uint64_t>(doc, "seed", "", 0);
  cfg.output_dir = detail::resolve(base_dir, rd.get<std::string>(doc, "output_dir", "", "out"));

  // dataset
  const json ds = doc.value("dataset", json::object());
  {
    auto& d = cfg.dataset;
    const std::string p = "dataset.";
    const auto src = rd.get<std::string>(ds, "source", p, "synthetic");
    if (src == "synthetic") d.source = DataSource::synthetic;
    else if (src == "glyphs") d.source = DataSource::glyphs;
    else if (src == "idx") d.source = DataSource::idx;
    else rd.fail(p + "source", "must be synthetic, glyphs or idx");
    d.num_classes = rd.get<int>(ds, "num_classes", p, d.num_classes);
    d.per_class_count = rd.get<std::size_t>(ds, "per_class_count", p, d.per_class_count);
    d.test_fraction = rd.get<double>(ds, "test_fraction", p, d.test_fraction);
    d.dim = rd.get<std::size_t>(ds, "dim", p, d.dim);
    d.class_stddev = rd.get<double>(ds, "class_stddev", p, d.class_stddev);
    d.mean_scale = rd.get<double>(ds, "mean_scale", p, d.mean_scale);
    d.class_means = rd.get<std::vector<std::vector<double>>>(ds, "class_means", p, {});
    d.width = rd.get<std::size_t>(ds, "width", p, d.width);
    d.height = rd.get<std::size_t>(ds, "height", p, d.height);
    d.limit_train = rd.get<std::size_t>(ds, "limit_train", p, 0);
    d.limit_test = rd.get<std::size_t>(ds, "limit_test", p, 0);
    if (!(d.test_fraction > 0 && d.test_fraction < 1)) rd.fail(p + "test_fraction", "must lie in (0,1)");
    if (d.source == DataSource::synthetic || d.source == DataSource::glyphs) {
      if (d.num_classes < 2) rd.fail(p + "num_classes", "must be at least 2");
      if (d.per_class_count < 1) rd.fail(p + "per_class_count", "must be positive");
    }
    if (d.source == DataSource::glyphs && d.num_classes > 10) {
      rd.fail(p + "num_classes", "glyphs support at most 10 classes");
    }
    if (d.source == DataSource::synthetic) {
      if (d.dim < 1) rd.fail(p + "dim", "must be positive");
      if (!(d.class_stddev > 0)) rd.fail(p + "class_stddev", "must be positive");
      if (!d.class_means.empty()) {
        if (d.class_means.size() != static_cast<std::size_t>(d.num_classes)) {
          rd.fail(p + "class_means", "needs one mean per class");
        }
        for (std::size_t c = 0; c < d.class_means.size(); ++c) {
          if (d.class_means[c].size() != d.dim) {
            rd.fail(p + "class_means[" + std::to_string(c) + "]", "must have dim entries");
          }
        }
      } else if (!(d.mean_scale > 0)) {
        rd.fail(p + "mean_scale", "must be positive");
      }
    }
    if (d.source == DataSource::idx) {
      auto file = [&](const char* key, fs::path& target, bool required) {
        if (required && !rd.require(ds, key, p)) return;
        const auto s = rd.get<std::string>(ds, key, p, "");
        if (s.empty()) return;
        target = detail::resolve(base_dir, s);
        if (check_files && !fs::exists(target)) {
          rd.fail(p + key, "file not found: " + target.string());
        }
      };
      file("train_images", d.train_images, true);
      file("train_labels", d.train_labels, true);
      file("test_images", d.test_images, false);
      file("test_labels", d.test_labels, false);
      if (d.test_images.empty() != d.test_labels.empty()) {
        rd.fail(p + "test_images", "test_images and test_labels must be given together");
      }
    }
  }

  // embedding
  const json em = doc.value("embedding", json::object());
  {
    const std::string p = "embedding.";
    const auto method = rd.get<std::string>(em, "method", p, "pca");
    if (method == "pca") cfg.embedding.pca = true;
    else if (method == "none") cfg.embedding.pca = false;
    else rd.fail(p + "method", "must be pca or none");
    cfg.embedding.dim = rd.get<std::size_t>(em, "dim", p, cfg.embedding.dim);
    cfg.embedding.whiten = rd.get<bool>(em, "whiten", p, false);
    if (cfg.embedding.pca && cfg.embedding.dim < 1) rd.fail(p + "dim", "must be positive");
  }

  // corruptions
  const json cs = doc.value("corruptions", json::array());
  if (!cs.is_array()) rd.fail("corruptions", "must be an array");
  for (std::size_t i = 0; cs.is_array() && i < cs.size(); ++i) {
    const std::string p = "corruptions[" + std::to_string(i) + "].";
    const json& c = cs[i];
    CorruptionConfig cc;
    const auto kind = rd.get<std::string>(c, "kind", p, "");
    if (kind == "label_flip") {
      cc.kind = CorruptionKind::label_flip;
      cc.rate = rd.get<double>(c, "rate", p, 0.0);
      if (!(cc.rate >= 0 && cc.rate <= 1)) rd.fail(p + "rate", "must lie in [0,1]");
    } else if (kind == "gaussian") {
      cc.kind = CorruptionKind::gaussian;
      cc.noise_factor = rd.get<double>(c, "noise_factor", p, 0.9);
      cc.fraction = rd.get<double>(c, "fraction", p, 0.3);
      if (!(cc.noise_factor >= 0)) rd.fail(p + "noise_factor", "must be non-negative");
    } else if (kind == "affine_strong" || kind == "affine_mild") {
      cc.kind = kind == "affine_strong" ? CorruptionKind::affine_strong : CorruptionKind::affine_mild;
      cc.fraction = rd.get<double>(c, "fraction", p, 0.3);
      cc.params = kind == "affine_strong" ? AffineParams::strong() : AffineParams::mild();
      const json pr = c.value("params", json::object());
      const std::string pp = p + "params.";
      cc.params.rotation_deg = rd.get<double>(pr, "rotation_deg", pp, cc.params.rotation_deg);
      cc.params.scale_min = rd.get<double>(pr, "scale_min", pp, cc.params.scale_min);
      cc.params.scale_max = rd.get<double>(pr, "scale_max", pp, cc.params.scale_max);
      cc.params.shear_deg = rd.get<double>(pr, "shear_deg", pp, cc.params.shear_deg);
      cc.params.translate_frac = rd.get<double>(pr, "translate_frac", pp, cc.params.translate_frac);
      try {
        cc.params.validate();
      } catch (const ConfigError& e) {
        rd.fail(p + "params", e.what());
      }
    } else {
      rd.fail(p + "kind", "must be label_flip, gaussian, affine_strong or affine_mild");
    }
    if (cc.kind != CorruptionKind::label_flip) {
      if (!(cc.fraction >= 0 && cc.fraction <= 1)) rd.fail(p + "fraction", "must lie in [0,1]");
      if (cfg.dataset.source == DataSource::synthetic) {
        rd.fail(p + "kind", "input corruption needs an image dataset (glyphs or idx)");
      }
    }
    cfg.corruptions.push_back(cc);
  }

  // estimator
  const json es = doc.value("estimator", json::object());
  {
    const std::string p = "estimator.";
    try {
      cfg.estimator.variant = parse_variant(rd.get<std::string>(es, "variant", p, "discrete_label"));
      if (cfg.estimator.variant == EstimatorVariant::continuous_pair) {
        rd.fail(p + "variant", "continuous_pair is not available for labeled data");
      }
    } catch (const ConfigError& e) {
      rd.fail(p + "variant", e.what());
    }
    cfg.estimator.k = rd.get<std::size_t>(es, "k", p, 3);
    cfg.estimator.strict = rd.get<bool>(es, "strict", p, true);
    cfg.estimator.jitter = rd.get<bool>(es, "jitter", p, false);
    if (es.contains("label_scale")) {
      cfg.estimator.label_scale = rd.get<double>(es, "label_scale", p, 1.0);
      if (!(*cfg.estimator.label_scale > 0)) rd.fail(p + "label_scale", "must be positive");
    }
    if (cfg.estimator.k < 1) rd.fail(p + "k", "must be positive");
  }

  // selection
  const json se = doc.value("selection", json::object());
  {
    const std::string p = "selection.";
    const json plans = se.value("strategies", json::array());
    if (!plans.is_array() || plans.empty()) rd.fail(p + "strategies", "needs at least one strategy");
    for (std::size_t i = 0; plans.is_array() && i < plans.size(); ++i) {
      const std::string pp = p + "strategies[" + std::to_string(i) + "]";
      if (!plans[i].is_string()) {
        rd.fail(pp, "must be a string like \"global/top\"");
        continue;
      }
      const auto s = plans[i].get<std::string>();
      const auto slash = s.find('/');
      try {
        if (slash == std::string::npos) throw ConfigError("expected <scope>/<band>");
        cfg.strategies.push_back({parse_scope(s.substr(0, slash)), parse_band(s.substr(slash + 1))});
      } catch (const ConfigError& e) {
        rd.fail(pp, e.what());
      }
    }
    cfg.ratios = rd.get<std::vector<double>>(se, "ratios", p, {});
    if (cfg.ratios.empty()) rd.fail(p + "ratios", "needs at least one retention ratio");
    for (std::size_t i = 0; i < cfg.ratios.size(); ++i) {
      if (!(cfg.ratios[i] > 0 && cfg.ratios[i] <= 1)) {
        rd.fail(p + "ratios[" + std::to_string(i) + "]", "must lie in (0,1]");
      }
    }
  }

  // classifier
  const json cl = doc.value("classifier", json::object());
  {
    const std::string p = "classifier.";
    auto& t = cfg.classifier.train;
    t.learning_rate = rd.get<double>(cl, "learning_rate", p, t.learning_rate);
    t.epochs = rd.get<int>(cl, "epochs", p, t.epochs);
    t.l2 = rd.get<double>(cl, "l2", p, t.l2);
    t.batch_size = rd.get<std::size_t>(cl, "batch_size", p, 0);
    if (cl.contains("seed")) cfg.classifier.seed = rd.get<std::uint64_t>(cl, "seed", p, 0);
    const auto input = rd.get<std::string>(cl, "input", p, "embedded");
    if (input == "raw") cfg.classifier.raw_features = true;
    else if (input != "embedded") rd.fail(p + "input", "must be embedded or raw");
    if (!(t.learning_rate > 0)) rd.fail(p + "learning_rate", "must be positive");
    if (t.epochs < 1) rd.fail(p + "epochs", "must be positive");
    if (!(t.l2 >= 0)) rd.fail(p + "l2", "must be non-negative");
  }

  cfg.echo = doc;
  cfg.echo.erase("output_dir");
  return {cfg, errs};
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline std::vector<Violation> validate_config(const fs::path& path) {
  const json doc = read_json_file(path);
  return parse_config(doc, path.parent_path()).second;
}

inline ExperimentConfig load_config(const fs::path& path) {
  const json doc = read_json_file(path);
  auto [cfg, errs] = parse_config(doc, path.parent_path());
  if (!errs.empty()) throw ConfigError(path.string() + ": invalid config\n" + format(errs));
  return cfg;
}

// ---------------------------------------------------------------------------
// Outputs

/// Output files buffered in memory and written by one writer. On failure the
/// partial set goes to <out>/quarantine instead.
class OutputSink {
 public:
  void put(const std::string& relative, std::string content) { files_[relative] = std::move(content); }
  const std::map<std::string, std::string>& files() const noexcept { return files_; }

  void flush(const fs::path& dir) const {
    for (const auto& [name, content] : files_) {
      const fs::path target = dir / name;
      fs::create_directories(target.parent_path());
      std::ofstream out(target, std::ios::binary);
      if (!out) throw IoError("cannot write " + target.string());
      out << content;
    }
  }

 private:
  std::map<std::string, std::string> files_;
};

/// Error raised by a pipeline stage, tagged with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error("[" + stage + "] " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

// Shortest round-trip decimal form.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

// ---------------------------------------------------------------------------
// Pipeline

struct StageSeeds {
  std::uint64_t dataset, split, selection, classifier, jitter;
  std::vector<std::uint64_t> corruption;
};

inline StageSeeds derive_stage_seeds(const ExperimentConfig& cfg) {
  StageSeeds s{stage_seed(cfg.seed, "dataset"), stage_seed(cfg.seed, "split"),
               stage_seed(cfg.seed, "selection"),
               cfg.classifier.seed ? *cfg.classifier.seed : stage_seed(cfg.seed, "classifier"),
               stage_seed(cfg.seed, "jitter"), {}};
  for (std::size_t i = 0; i < cfg.corruptions.size(); ++i) {
    s.corruption.push_back(stage_seed(cfg.seed, "corruption/" + std::to_string(i)));
  }
  return s;
}

struct RunOptions {
  unsigned threads = 1;
  fs::path cache_dir;  // empty: no score cache
};

struct CorruptionStage {
  std::string name;
  LabeledDataset data;
};

struct PreparedData {
  std::vector<CorruptionStage> stages;  // stages[0] = clean train, last = fully corrupted
  LabeledDataset test;
  const LabeledDataset& train() const { return stages.back().data; }
};

struct EmbeddedData {
  std::optional<PcaModel> model;
  EmbeddedDataset train;
  EmbeddedDataset test;
};

struct GridCell {
  SelectionPlan plan;
  SelectionResult selection;
  std::optional<LogRegModel> model;
  double accuracy = std::nan("");
};

template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

inline LabeledDataset truncate(const LabeledDataset& ds, std::size_t limit) {
  if (limit == 0 || limit >= ds.size()) return ds;
  std::vector<std::size_t> idx(limit);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return ds.subset(idx);
}

inline PreparedData prepare_data(const ExperimentConfig& cfg, const StageSeeds& seeds) {
  PreparedData out;
  LabeledDataset train;
  run_stage("dataset", [&] {
    const auto& d = cfg.dataset;
    LabeledDataset full;
    if (d.source == DataSource::synthetic) {
      SyntheticSpec spec;
      spec.num_classes = d.num_classes;
      spec.per_class_count = d.per_class_count;
      spec.dim = d.dim;
      spec.class_stddev = d.class_stddev;
      spec.class_means = d.class_means.empty()
                             ? random_class_means(d.num_classes, d.dim, d.mean_scale,
                                                  derive_seed(seeds.dataset, 1))
                             : d.class_means;
      spec.seed = seeds.dataset;
      full = generate_synthetic(spec);
    } else if (d.source == DataSource::glyphs) {
      GlyphSpec spec;
      spec.num_classes = d.num_classes;
      spec.per_class_count = d.per_class_count;
      spec.shape = {d.width, d.height};
      spec.seed = seeds.dataset;
      full = generate_glyphs(spec);
    } else {
      full = truncate(idx::load_idx(d.train_images, d.train_labels), d.limit_train);
      if (!d.test_images.empty()) {
        out.test = truncate(idx::load_idx(d.test_images, d.test_labels), d.limit_test);
        const int c = std::max(full.num_classes, out.test.num_classes);
        full.num_classes = out.test.num_classes = c;
        train = std::move(full);
        return 0;
      }
    }
    auto split = run_stage("split", [&] { return train_test_split(full, d.test_fraction, seeds.split); });
    train = std::move(split.first);
    out.test = std::move(split.second);
    return 0;
  });

  out.stages.push_back({"clean", train});
  for (std::size_t i = 0; i < cfg.corruptions.size(); ++i) {
    const auto& c = cfg.corruptions[i];
    const std::string stage = "corruption/" + std::to_string(i);
    LabeledDataset next = run_stage(stage, [&] {
      const LabeledDataset& prev = out.stages.back().data;
      const std::uint64_t seed = seeds.corruption[i];
      switch (c.kind) {
        case CorruptionKind::label_flip: return flip_labels(prev, c.rate, seed);
        case CorruptionKind::gaussian: return add_gaussian(prev, c.noise_factor, c.fraction, seed);
        case CorruptionKind::affine_strong:
          return affine_warp(prev, c.params, c.fraction, seed, InputCorruption::affine_strong);
        case CorruptionKind::affine_mild:
          return affine_warp(prev, c.params, c.fraction, seed, InputCorruption::affine_mild);
      }
      throw ConfigError("unknown corruption kind");
    });
    out.stages.push_back({c.name(), std::move(next)});
  }
  return out;
}

inline EmbeddedData embed(const ExperimentConfig& cfg, const LabeledDataset& train,
                          const LabeledDataset& test) {
  return run_stage("embedding", [&] {
    EmbeddedData out;
    if (!cfg.embedding.pca) {
      out.train = as_embedded(train);
      out.test = as_embedded(test);
      return out;
    }
    out.model = fit_pca(train, cfg.embedding.dim, cfg.embedding.whiten);
    out.train = transform(*out.model, train);
    out.test = transform(*out.model, test);
    return out;
  });
}

inline EstimatorOptions estimator_options(const ExperimentConfig& cfg, const StageSeeds& seeds,
                                          unsigned threads) {
  EstimatorOptions opt;
  opt.k = cfg.estimator.k;
  opt.strict = cfg.estimator.strict;
  opt.threads = threads;
  if (cfg.estimator.jitter) opt.jitter_seed = seeds.jitter;
  return opt;
}

inline std::uint64_t estimator_key(const ExperimentConfig& cfg, std::uint64_t data_hash) {
  std::string key = hex64(data_hash) + "|" + std::string(to_string(cfg.estimator.variant)) + "|k=" +
                    std::to_string(cfg.estimator.k) + "|strict=" + (cfg.estimator.strict ? "1" : "0") +
                    "|jitter=" + (cfg.estimator.jitter ? "1" : "0") + "|scale=" +
                    (cfg.estimator.label_scale ? fmt_double(*cfg.estimator.label_scale) : "auto");
  return fnv1a(key);
}

/// Scores `data`, reusing a cached artifact keyed by the content hash of the
/// embedded data and the estimator settings when one exists.
inline MIScoreSet score_embedded(const ExperimentConfig& cfg, const StageSeeds& seeds,
                                 const EmbeddedDataset& data, const RunOptions& opts) {
  return run_stage("scoring", [&] {
    const std::uint64_t data_hash = content_hash(data);
    fs::path cache_file;
    if (!opts.cache_dir.empty()) {
      cache_file = opts.cache_dir / ("scores-" + hex64(estimator_key(cfg, data_hash)) + ".json");
      if (fs::exists(cache_file)) {
        try {
          auto cached = scores_from_json(read_json_file(cache_file));
          if (cached.n == data.size()) return cached;
        } catch (const Error&) {
          // stale or corrupt cache entry; recompute
        }
      }
    }
    auto scores = score(data, cfg.estimator.variant, estimator_options(cfg, seeds, opts.threads),
                        cfg.estimator.label_scale);
    if (!cache_file.empty()) {
      fs::create_directories(cache_file.parent_path());
      std::ofstream(cache_file) << to_json(scores, data_hash).dump() << "\n";
    }
    return scores;
  });
}

inline std::vector<GridCell> run_selection(const ExperimentConfig& cfg, const StageSeeds& seeds,
                                           const MIScoreSet& scores, const EmbeddedDataset& train) {
  return run_stage("selection", [&] {
    std::vector<GridCell> cells;
    for (const auto& s : cfg.strategies) {
      for (double r : cfg.ratios) {
        GridCell cell;
        cell.plan = {s.scope, s.band, r, seeds.selection};
        cell.selection = select(scores.local_scores, train.labels, train.num_classes, cell.plan);
        cells.push_back(std::move(cell));
      }
    }
    return cells;
  });
}

inline void run_training(const ExperimentConfig& cfg, const StageSeeds& seeds,
                         const FeatureMatrix& train_x, const std::vector<Label>& train_y,
                         const FeatureMatrix& test_x, const std::vector<Label>& test_y,
                         int num_classes, std::vector<GridCell>& cells, unsigned threads) {
  run_stage("classifier", [&] {
    TrainConfig tc = cfg.classifier.train;
    tc.seed = seeds.classifier;
    parallel_for(cells.size(), threads, [&](std::size_t i) {
      auto& cell = cells[i];
      cell.model = train(train_x, train_y, num_classes, cell.selection.retained_indices, tc);
      cell.accuracy = evaluate(*cell.model, test_x, test_y).accuracy;
    });
    return 0;
  });
}

// ---------------------------------------------------------------------------
// Writers

inline std::string scores_csv(const EmbeddedDataset& train, const MIScoreSet& s) {
  std::vector<std::size_t> k_used(s.n, s.k);
  for (const auto& sub : s.k_substitutions) k_used[sub.index] = sub.k_used;
  for (std::size_t i : s.degenerate) k_used[i] = 0;
  std::string out = "index,label,original_label,provenance,local_mi,n_x,n_y,k_used\n";
  for (std::size_t i = 0; i < s.n; ++i) {
    out += std::to_string(i) + "," + std::to_string(train.labels[i]) + "," +
           std::to_string(train.original_labels[i]) + "," + to_string(train.provenance[i]) + "," +
           fmt_double(s.local_scores[i]) + "," + std::to_string(s.per_sample_n_x[i]) + "," +
           std::to_string(s.per_sample_n_y[i]) + "," + std::to_string(k_used[i]) + "\n";
  }
  return out;
}

inline std::string accuracy_csv(const std::vector<GridCell>& cells) {
  std::string out = "strategy,ratio,accuracy\n";
  for (const auto& c : cells) {
    out += c.plan.strategy() + "," + fmt_double(c.plan.retention_ratio) + "," + fmt_double(c.accuracy) + "\n";
  }
  return out;
}

inline std::string cell_name(const SelectionPlan& p) {
  return std::string(to_string(p.scope)) + "_" + std::string(to_string(p.band)) + "_" +
         fmt_double(p.retention_ratio);
}

inline json summary_json(const ScoreSummary& s) {
  return {{"count", s.count}, {"degenerate", s.degenerate}, {"mean", s.mean},
          {"stddev", s.stddev}, {"min", s.min},           {"max", s.max}};
}

// Probability that a random clean sample outscores a random flagged one.
inline double ranking_auc(const std::vector<double>& clean, const std::vector<double>& flagged) {
  if (clean.empty() || flagged.empty()) return std::nan("");
  std::vector<double> f = flagged;
  std::ranges::sort(f);
  double wins = 0.0;
  for (double c : clean) {
    const auto lo = std::ranges::lower_bound(f, c);
    const auto hi = std::ranges::upper_bound(f, c);
    wins += static_cast<double>(lo - f.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(clean.size()) * static_cast<double>(f.size()));
}

// ---------------------------------------------------------------------------
// Commands

enum class Command : std::uint8_t { score, select, train, run };

struct ExperimentResult {
  StageSeeds seeds;
  PreparedData data;
  EmbeddedData embedded;
  MIScoreSet scores;
  std::vector<std::pair<std::string, double>> stage_mi;  // global MI per corruption stage
  std::vector<GridCell> cells;
  json report;
};

inline json build_report(const ExperimentConfig& cfg, const ExperimentResult& r) {
  const auto& train = r.embedded.train;
  const auto summaries = per_class_summary(r.scores, train.labels, train.num_classes);
  json per_class = json::array();
  for (std::size_t c = 0; c < summaries.per_class.size(); ++c) {
    json j = summary_json(summaries.per_class[c]);
    j["class"] = c;
    per_class.push_back(j);
  }
  json stages = json::array();
  for (const auto& [name, mi] : r.stage_mi) {
    stages.push_back({{"stage", name}, {"global_mi", mi}, {"global_mi_bits", mi / std::log(2.0)}});
  }
  std::map<std::string, std::size_t> prov_counts;
  std::vector<double> clean, flipped, input_bad;
  for (std::size_t i = 0; i < train.size(); ++i) {
    ++prov_counts[to_string(train.provenance[i])];
    const double s = r.scores.local_scores[i];
    if (train.provenance[i].clean()) clean.push_back(s);
    if (train.provenance[i].label_flipped) flipped.push_back(s);
    if (train.provenance[i].input != InputCorruption::none) input_bad.push_back(s);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    std::size_t n = 0;
    for (double x : v) {
      if (std::isfinite(x)) {
        s += x;
        ++n;
      }
    }
    return n ? s / static_cast<double>(n) : std::nan("");
  };
  auto nullable = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };

  json accuracy = json::array();
  for (const auto& c : r.cells) {
    accuracy.push_back({{"strategy", c.plan.strategy()},
                        {"ratio", c.plan.retention_ratio},
                        {"retained", c.selection.retained_indices.size()},
                        {"accuracy", nullable(c.accuracy)}});
  }
  json explained = json::array();
  if (r.embedded.model) explained = r.embedded.model->explained_variance;

  json seeds = {{"dataset", r.seeds.dataset},       {"split", r.seeds.split},
                {"selection", r.seeds.selection},   {"classifier", r.seeds.classifier},
                {"jitter", r.seeds.jitter},         {"corruption", r.seeds.corruption}};
  return {
      {"kind", "experiment_report"},
      {"schema_version", kReportSchemaVersion},
      {"config", cfg.echo},
      {"config_hash", hex64(fnv1a(cfg.echo.dump()))},
      {"stage_seeds", seeds},
      {"dataset",
       {{"n_train", train.size()},
        {"n_test", r.embedded.test.size()},
        {"source_dim", r.data.train().dim()},
        {"num_classes", train.num_classes}}},
      {"embedding",
       {{"method", cfg.embedding.pca ? "pca" : "none"},
        {"dim", train.dim()},
        {"whiten", cfg.embedding.whiten},
        {"explained_variance", explained}}},
      {"estimator",
       {{"variant", to_string(r.scores.variant)},
        {"k", r.scores.k},
        {"strict", r.scores.strict},
        {"jitter", r.scores.jittered},
        {"units", "nats"},
        {"k_substitutions", r.scores.k_substitutions.size()},
        {"degenerate", r.scores.degenerate.size()}}},
      {"global_mi", r.scores.global_mi},
      {"global_mi_bits", r.scores.global_mi / std::log(2.0)},
      {"global_mi_by_stage", stages},
      {"per_class", per_class},
      {"overall", summary_json(summaries.overall)},
      {"provenance_counts", prov_counts},
      {"separation",
       {{"clean_mean", nullable(mean(clean))},
        {"label_flipped_mean", nullable(mean(flipped))},
        {"input_corrupted_mean", nullable(mean(input_bad))},
        {"label_flipped_auc", nullable(ranking_auc(clean, flipped))},
        {"input_corrupted_auc", nullable(ranking_auc(clean, input_bad))}}},
      {"accuracy", accuracy},
      {"content_hashes",
       {{"embedded_train", hex64(content_hash(train))},
        {"embedded_test", hex64(content_hash(r.embedded.test))}}},
      {"runtime", {{"tool_version", kToolVersion}}},
  };
}

/// Runs the pipeline up to `command` and fills `sink` with its outputs.
inline ExperimentResult execute(const ExperimentConfig& cfg, Command command, const RunOptions& opts,
                                OutputSink& sink) {
  ExperimentResult r;
  r.seeds = derive_stage_seeds(cfg);
  r.data = prepare_data(cfg, r.seeds);

  // Global MI for every corruption stage before the last one.
  for (std::size_t s = 0; s + 1 < r.data.stages.size(); ++s) {
    const auto& stage = r.data.stages[s];
    const auto emb = embed(cfg, stage.data, r.data.test);
    r.stage_mi.emplace_back(stage.name, score_embedded(cfg, r.seeds, emb.train, opts).global_mi);
  }
  r.embedded = embed(cfg, r.data.train(), r.data.test);
  r.scores = score_embedded(cfg, r.seeds, r.embedded.train, opts);
  r.stage_mi.emplace_back(r.data.stages.back().name, r.scores.global_mi);

  sink.put("scores.csv", scores_csv(r.embedded.train, r.scores));
  sink.put("scores.json", to_json(r.scores, content_hash(r.embedded.train)).dump(1) + "\n");
  if (r.embedded.model) sink.put("pca_model.json", to_json(*r.embedded.model).dump() + "\n");
  if (command == Command::score) return r;

  r.cells = run_selection(cfg, r.seeds, r.scores, r.embedded.train);
  for (const auto& c : r.cells) {
    sink.put("selections/" + cell_name(c.plan) + ".txt", to_index_file(c.selection));
    sink.put("selections/" + cell_name(c.plan) + ".json", to_json(c.selection).dump(1) + "\n");
  }
  if (command == Command::select) return r;

  const bool raw = cfg.classifier.raw_features;
  run_training(cfg, r.seeds, raw ? r.data.train().features : r.embedded.train.points,
               r.embedded.train.labels, raw ? r.data.test.features : r.embedded.test.points,
               r.embedded.test.labels, r.embedded.train.num_classes, r.cells, opts.threads);
  for (const auto& c : r.cells) sink.put("models/" + cell_name(c.plan) + ".json", to_json(*c.model).dump() + "\n");
  sink.put("accuracy.csv", accuracy_csv(r.cells));
  if (command == Command::train) return r;

  r.report = build_report(cfg, r);
  sink.put("report.json", r.report.dump(2) + "\n");
  return r;
}

/// Runs `command`, writing outputs to `out_dir` on success. On failure the
/// outputs produced so far and an error note go to out_dir/quarantine and the
/// error is rethrown.
inline ExperimentResult run_command(const ExperimentConfig& cfg, Command command,
                                    const fs::path& out_dir, RunOptions opts = {}) {
  OutputSink sink;
  if (opts.cache_dir.empty()) opts.cache_dir = out_dir / "cache";
  try {
    auto r = execute(cfg, command, opts, sink);
    sink.flush(out_dir);
    return r;
  } catch (const std::exception& e) {
    sink.put("error.txt", std::string(e.what()) + "\n");
    try {
      sink.flush(out_dir / "quarantine");
    } catch (const std::exception&) {
      // nothing more to salvage
    }
    throw;
  }
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir,
                                       RunOptions opts = {}) {
  return run_command(cfg, Command::run, out_dir, opts);
}

}  // namespace micurate::experiment
