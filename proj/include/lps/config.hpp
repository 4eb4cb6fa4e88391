#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lps/dataset.hpp"
#include "lps/model.hpp"
#include "lps/selection.hpp"
#include "lps/trigger.hpp"

namespace lps {

using json = nlohmann::json;

class ConfigError : public Error {
 public:
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Experiment configuration. Every section is optional in the file; missing
// keys keep the defaults below.

struct DatasetConfig {
  std::string kind = "blobs";  // blobs | idx | cifar | csv
  std::size_t classes = 4;
  std::size_t per_class = 200;
  std::size_t dim = 16;
  double spread = 0.1;
  std::uint64_t seed = 7;
  std::string images, labels;      // idx
  std::vector<std::string> files;  // cifar
  std::string train_csv, test_csv; // csv (test_csv empty: split train_csv)
  double test_fraction = 0.2;
  std::uint64_t split_seed = 11;
};

/// How to build the trigger. An explicit `pattern` wins over generated ones.
struct TriggerConfig {
  std::string kind = "blend";
  ImageShape shape{};             // all-ones means "infer from the data"
  bool shape_given = false;
  double blend_alpha = 0.1;
  std::uint64_t pattern_seed = 1234;
  std::vector<double> pattern;
  std::size_t patch_size = 3;
  double patch_value = 1.0;
  std::string patch_csv;
  double signal_amplitude = 0.1;
  int signal_frequency = 3;
};

struct SweepConfig {
  std::vector<std::string> strategies = {"random", "lps"};
  std::vector<double> alphas;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::size_t workers = 1;
  std::string csv = "results.csv";
  std::string report = "results.json";
  std::string trace = "trace.jsonl";
};

struct ExperimentConfig {
  DatasetConfig dataset;
  TriggerConfig trigger;
  LabelMode mode;
  LpsConfig lps;
  FusConfig fus;
  std::vector<std::size_t> target_hidden = kDefaultTargetHidden;
  TrainConfig target_train;
  SweepConfig sweep;
};

// --- json glue -------------------------------------------------------------

inline void to_json(json& j, const ImageShape& s) {
  j = json{{"height", s.height}, {"width", s.width}, {"channels", s.channels}};
}
inline void from_json(const json& j, ImageShape& s) {
  s.height = j.value("height", s.height);
  s.width = j.value("width", s.width);
  s.channels = j.value("channels", s.channels);
}

inline void to_json(json& j, const TrainConfig& c) {
  j = json{{"epochs", c.epochs},           {"batch_size", c.batch_size},
           {"lr", c.lr},                   {"lr_decay_epochs", c.lr_decay_epochs},
           {"lr_decay_factor", c.lr_decay_factor}, {"weight_decay", c.weight_decay}};
}
inline void from_json(const json& j, TrainConfig& c) {
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.lr_decay_epochs = j.value("lr_decay_epochs", c.lr_decay_epochs);
  c.lr_decay_factor = j.value("lr_decay_factor", c.lr_decay_factor);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
}

inline void to_json(json& j, const LabelMode& m) {
  j = json{{"kind", std::string(to_string(m.kind))}, {"target", m.target}};
}
inline void from_json(const json& j, LabelMode& m) {
  if (j.contains("kind")) m.kind = parse_label_mode(j.at("kind").get<std::string>());
  m.target = j.value("target", m.target);
}

/// Concrete trigger spec, pattern included.
inline void to_json(json& j, const TriggerSpec& t) {
  j = json{{"kind", std::string(to_string(t.kind))},
           {"shape", t.shape},
           {"pattern", t.pattern},
           {"blend_alpha", t.blend_alpha},
           {"patch_row", t.patch_row},
           {"patch_col", t.patch_col},
           {"patch_height", t.patch_height},
           {"patch_width", t.patch_width},
           {"signal_amplitude", t.signal_amplitude},
           {"signal_frequency", t.signal_frequency}};
}
inline void from_json(const json& j, TriggerSpec& t) {
  t.kind = parse_trigger_kind(j.at("kind").get<std::string>());
  t.shape = j.at("shape").get<ImageShape>();
  t.pattern = j.value("pattern", t.pattern);
  t.blend_alpha = j.value("blend_alpha", t.blend_alpha);
  t.patch_row = j.value("patch_row", t.patch_row);
  t.patch_col = j.value("patch_col", t.patch_col);
  t.patch_height = j.value("patch_height", t.patch_height);
  t.patch_width = j.value("patch_width", t.patch_width);
  t.signal_amplitude = j.value("signal_amplitude", t.signal_amplitude);
  t.signal_frequency = j.value("signal_frequency", t.signal_frequency);
}

inline void to_json(json& j, const DatasetConfig& c) {
  j = json{{"kind", c.kind},     {"classes", c.classes},       {"per_class", c.per_class},
           {"dim", c.dim},       {"spread", c.spread},         {"seed", c.seed},
           {"images", c.images}, {"labels", c.labels},         {"files", c.files},
           {"train_csv", c.train_csv}, {"test_csv", c.test_csv}, {"test_fraction", c.test_fraction},
           {"split_seed", c.split_seed}};
}
inline void from_json(const json& j, DatasetConfig& c) {
  c.kind = j.value("kind", c.kind);
  c.classes = j.value("classes", c.classes);
  c.per_class = j.value("per_class", c.per_class);
  c.dim = j.value("dim", c.dim);
  c.spread = j.value("spread", c.spread);
  c.seed = j.value("seed", c.seed);
  c.images = j.value("images", c.images);
  c.labels = j.value("labels", c.labels);
  c.files = j.value("files", c.files);
  c.train_csv = j.value("train_csv", c.train_csv);
  c.test_csv = j.value("test_csv", c.test_csv);
  c.test_fraction = j.value("test_fraction", c.test_fraction);
  c.split_seed = j.value("split_seed", c.split_seed);
}

inline void to_json(json& j, const TriggerConfig& c) {
  j = json{{"kind", c.kind},
           {"blend_alpha", c.blend_alpha},
           {"pattern_seed", c.pattern_seed},
           {"pattern", c.pattern},
           {"patch_size", c.patch_size},
           {"patch_value", c.patch_value},
           {"patch_csv", c.patch_csv},
           {"signal_amplitude", c.signal_amplitude},
           {"signal_frequency", c.signal_frequency}};
  if (c.shape_given) j["shape"] = c.shape;
}
inline void from_json(const json& j, TriggerConfig& c) {
  c.kind = j.value("kind", c.kind);
  if (j.contains("shape")) {
    c.shape = j.at("shape").get<ImageShape>();
    c.shape_given = true;
  }
  c.blend_alpha = j.value("blend_alpha", c.blend_alpha);
  c.pattern_seed = j.value("pattern_seed", c.pattern_seed);
  c.pattern = j.value("pattern", c.pattern);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.patch_value = j.value("patch_value", c.patch_value);
  c.patch_csv = j.value("patch_csv", c.patch_csv);
  c.signal_amplitude = j.value("signal_amplitude", c.signal_amplitude);
  c.signal_frequency = j.value("signal_frequency", c.signal_frequency);
}

inline void to_json(json& j, const LpsConfig& c) {
  j = json{{"iterations", c.iterations},
           {"inner_epochs", c.inner_epochs},
           {"surrogate_hidden", c.surrogate_hidden},
           {"train", c.train}};
}
inline void from_json(const json& j, LpsConfig& c) {
  c.iterations = j.value("iterations", c.iterations);
  c.inner_epochs = j.value("inner_epochs", c.inner_epochs);
  c.surrogate_hidden = j.value("surrogate_hidden", c.surrogate_hidden);
  if (j.contains("train")) j.at("train").get_to(c.train);
}

inline void to_json(json& j, const FusConfig& c) {
  j = json{{"iterations", c.iterations},
           {"epochs_per_iteration", c.epochs_per_iteration},
           {"filter_ratio", c.filter_ratio},
           {"surrogate_hidden", c.surrogate_hidden},
           {"train", c.train}};
}
inline void from_json(const json& j, FusConfig& c) {
  c.iterations = j.value("iterations", c.iterations);
  c.epochs_per_iteration = j.value("epochs_per_iteration", c.epochs_per_iteration);
  c.filter_ratio = j.value("filter_ratio", c.filter_ratio);
  c.surrogate_hidden = j.value("surrogate_hidden", c.surrogate_hidden);
  if (j.contains("train")) j.at("train").get_to(c.train);
}

inline void to_json(json& j, const SweepConfig& c) {
  j = json{{"strategies", c.strategies}, {"alphas", c.alphas}, {"seeds", c.seeds}, {"workers", c.workers},
           {"csv", c.csv},               {"report", c.report}, {"trace", c.trace}};
}
inline void from_json(const json& j, SweepConfig& c) {
  c.strategies = j.value("strategies", c.strategies);
  c.alphas = j.value("alphas", c.alphas);
  c.seeds = j.value("seeds", c.seeds);
  c.workers = j.value("workers", c.workers);
  c.csv = j.value("csv", c.csv);
  c.report = j.value("report", c.report);
  c.trace = j.value("trace", c.trace);
}

inline void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"dataset", c.dataset},
           {"trigger", c.trigger},
           {"mode", c.mode},
           {"lps", c.lps},
           {"fus", c.fus},
           {"target", json{{"hidden", c.target_hidden}, {"train", c.target_train}}},
           {"sweep", c.sweep}};
}
inline void from_json(const json& j, ExperimentConfig& c) {
  if (j.contains("dataset")) j.at("dataset").get_to(c.dataset);
  if (j.contains("trigger")) j.at("trigger").get_to(c.trigger);
  if (j.contains("mode")) j.at("mode").get_to(c.mode);
  if (j.contains("lps")) j.at("lps").get_to(c.lps);
  if (j.contains("fus")) j.at("fus").get_to(c.fus);
  if (j.contains("target")) {
    const auto& t = j.at("target");
    c.target_hidden = t.value("hidden", c.target_hidden);
    if (t.contains("train")) t.at("train").get_to(c.target_train);
  }
  if (j.contains("sweep")) j.at("sweep").get_to(c.sweep);
}

/// Parses a config file (JSON). Unknown top-level sections are rejected so
/// typos do not silently fall back to defaults.
inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
    static const std::vector<std::string> known = {"dataset", "trigger", "mode", "lps", "fus", "target", "sweep"};
    for (const auto& [key, _] : j.items())
      if (std::find(known.begin(), known.end(), key) == known.end())
        throw ConfigError(path.string() + ": unknown section '" + key + "'");
    return j.get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

/// Applies a dotted-path override such as `lps.iterations=5`. The value is
/// parsed as JSON when possible, otherwise taken as a string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' needs key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json::json_pointer ptr("/" + [&] {
    std::string p = key;
    for (char& c : p)
      if (c == '.') c = '/';
    return p;
  }());
  j[ptr] = std::move(value);
}

// --- building runtime objects from the config ------------------------------

inline std::pair<LabeledDataset, LabeledDataset> load_dataset(const DatasetConfig& c) {
  LabeledDataset full;
  if (c.kind == "blobs") {
    full = synth_blobs(c.classes, c.per_class, c.dim, c.spread, c.seed);
  } else if (c.kind == "idx") {
    full = load_idx(c.images, c.labels);
  } else if (c.kind == "cifar") {
    std::vector<std::filesystem::path> paths(c.files.begin(), c.files.end());
    full = load_cifar_binary(paths);
  } else if (c.kind == "csv") {
    auto train = LabeledDataset::from_samples(read_csv(c.train_csv));
    if (!c.test_csv.empty()) {
      auto test = LabeledDataset::from_samples(read_csv(c.test_csv, train.num_classes()));
      return {std::move(train), std::move(test)};
    }
    full = std::move(train);
  } else {
    throw ConfigError("unknown dataset kind '" + c.kind + "'");
  }
  return split(full, c.test_fraction, c.split_seed);
}

inline TriggerSpec build_trigger(const TriggerConfig& c, std::size_t dim) {
  const ImageShape shape = c.shape_given ? c.shape : ImageShape::infer(dim);
  TriggerSpec t;
  const TriggerKind kind = parse_trigger_kind(c.kind);
  if (kind == TriggerKind::blend) {
    t = make_blend_trigger(shape, c.pattern.empty() ? make_noise_pattern(dim, c.pattern_seed) : c.pattern,
                           c.blend_alpha);
  } else if (kind == TriggerKind::patch) {
    if (!c.patch_csv.empty()) {
      std::size_t h = 0, w = 0;
      auto grid = load_patch_csv(c.patch_csv, h, w);
      require(h <= shape.height && w <= shape.width, "patch grid larger than image");
      t.kind = TriggerKind::patch;
      t.shape = shape;
      t.patch_height = h;
      t.patch_width = w;
      t.patch_row = shape.height - h;
      t.patch_col = shape.width - w;
      t.pattern = std::move(grid);
    } else {
      t = make_patch_trigger(shape, c.patch_size, c.patch_value);
    }
  } else {
    t = make_signal_trigger(shape, c.signal_amplitude, c.signal_frequency);
  }
  t.validate(dim);
  return t;
}

}  // namespace lps
