#pragma once

// Flat key=value configuration with presets and command-line overrides.
// Precedence: built-in defaults < preset < config file < flags.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mvsc/backbone.hpp"
#include "mvsc/errors.hpp"
#include "mvsc/io.hpp"
#include "mvsc/network.hpp"
#include "mvsc/slice_select.hpp"
#include "mvsc/train.hpp"
#include "mvsc/volume.hpp"

namespace mvsc {

enum class ExtractorKind { kStub, kSidecar };
enum class TextMode { kFiles, kSynth, kLabel, kZero };
enum class BaselineKind { kNone, kMean, kMax };

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;

  // Selection.
  double zeta0 = 0.2;
  double zeta1 = 0.8;
  std::size_t top_k = 4;
  std::size_t bins = 64;
  double epsilon = 1e-12;

  // Network.
  std::size_t dim = 32;
  std::size_t global_tokens = 4;
  std::size_t patch = 16;
  std::size_t text_dim = 32;
  std::size_t heads = 0;  // 0 = derive as max(1, dim / 32)

  // Extraction / classification.
  ExtractorKind extractor = ExtractorKind::kStub;
  std::size_t feature_dim = 128;
  std::size_t stub_channels = 32;
  std::size_t classes = 2;

  // Training.
  double lr = 1e-4;
  double weight_decay = 1e-4;
  std::size_t warmup_epochs = 2;
  std::size_t cosine_epochs = 30;
  std::size_t epochs = 0;  // 0 = warmup + cosine
  std::size_t batch_size = 8;

  // Synthetic data.
  std::size_t synth_classes = 2;
  std::size_t per_class_train = 40;
  std::size_t per_class_val = 20;
  std::size_t vol_depth = 32;
  std::size_t vol_height = 64;
  std::size_t vol_width = 64;
  double noise_sigma = 0.05;
  double cavity_r0 = 0.22;
  double cavity_step = 0.10;  // 0 removes the geometric class signal

  // Modes.
  TextMode text_mode = TextMode::kSynth;
  BaselineKind baseline = BaselineKind::kNone;

  // Paths.
  std::string manifest;
  std::string val_manifest;
  std::string embeddings_dir;
  std::string checkpoint;
  std::string features_file;      // sidecar for the train/eval split
  std::string val_features_file;  // sidecar for the held-out split
  std::string out_dir = "out";

  NetworkConfig network() const {
    NetworkConfig n;
    n.dim = dim;
    n.global_tokens = global_tokens;
    n.patch = patch;
    n.text_dim = text_dim;
    n.heads = heads == 0 ? NetworkConfig::default_heads(dim) : heads;
    return n;
  }

  SelectionConfig selection() const {
    SelectionConfig s;
    s.crop_lo = zeta0;
    s.crop_hi = zeta1;
    s.top_k = top_k;
    s.bins = bins;
    s.epsilon = epsilon;
    return s;
  }

  SynthSpec synth_spec() const {
    SynthSpec s;
    s.classes = synth_classes;
    s.per_class = per_class_train + per_class_val;
    s.depth = vol_depth;
    s.height = vol_height;
    s.width = vol_width;
    s.noise_sigma = noise_sigma;
    return s;
  }

  TrainOptions train_options() const {
    TrainOptions t;
    t.optim.lr_max = lr;
    t.optim.weight_decay = weight_decay;
    t.schedule.lr_max = lr;
    t.schedule.warmup_epochs = warmup_epochs;
    t.schedule.cosine_epochs = cosine_epochs;
    t.epochs = epochs == 0 ? warmup_epochs + cosine_epochs : epochs;
    t.batch_size = batch_size;
    t.seed = seed;
    return t;
  }
};

namespace detail {

inline std::uint64_t parse_u64(const std::string& key,
                               const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" +
                      value + "'");
  }
}

inline double parse_f64(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" +
                      value + "'");
  }
}

}  // namespace detail

// Applies Table-of-presets defaults. "adni" is the high-capacity setting;
// "aibl" and "oasis" share the lightweight one; "desk" is the small fast
// configuration used by the synthetic pipeline.
inline void apply_preset(RunConfig& cfg, const std::string& name) {
  if (name == "desk") {
    cfg.dim = 32;
    cfg.global_tokens = 4;
    cfg.patch = 16;
    cfg.text_dim = 32;
    cfg.top_k = 4;
  } else if (name == "adni") {
    cfg.dim = 512;
    cfg.global_tokens = 128;
    cfg.patch = 32;
    cfg.text_dim = 768;
    cfg.top_k = 50;
  } else if (name == "aibl" || name == "oasis") {
    cfg.dim = 128;
    cfg.global_tokens = 32;
    cfg.patch = 16;
    cfg.text_dim = 768;
    cfg.top_k = 50;
  } else {
    throw ConfigError("unknown preset '" + name +
                      "' (expected adni|aibl|oasis|desk)");
  }
  cfg.preset = name;
}

// Applies one key=value pair. Unknown keys are rejected.
inline void apply_key(RunConfig& cfg, const std::string& key,
                      const std::string& value) {
  using detail::parse_f64;
  using detail::parse_u64;
  if (key == "preset") {
    apply_preset(cfg, value);
  } else if (key == "seed") {
    cfg.seed = parse_u64(key, value);
  } else if (key == "zeta0") {
    cfg.zeta0 = parse_f64(key, value);
  } else if (key == "zeta1") {
    cfg.zeta1 = parse_f64(key, value);
  } else if (key == "top_k") {
    cfg.top_k = parse_u64(key, value);
  } else if (key == "bins") {
    cfg.bins = parse_u64(key, value);
  } else if (key == "epsilon") {
    cfg.epsilon = parse_f64(key, value);
  } else if (key == "dim") {
    cfg.dim = parse_u64(key, value);
  } else if (key == "global_tokens") {
    cfg.global_tokens = parse_u64(key, value);
  } else if (key == "patch") {
    cfg.patch = parse_u64(key, value);
  } else if (key == "text_dim") {
    cfg.text_dim = parse_u64(key, value);
  } else if (key == "heads") {
    cfg.heads = parse_u64(key, value);
  } else if (key == "extractor") {
    if (value == "stub") {
      cfg.extractor = ExtractorKind::kStub;
    } else if (value == "sidecar") {
      cfg.extractor = ExtractorKind::kSidecar;
    } else {
      throw ConfigError("extractor must be stub|sidecar, got '" + value + "'");
    }
  } else if (key == "feature_dim") {
    cfg.feature_dim = parse_u64(key, value);
  } else if (key == "stub_channels") {
    cfg.stub_channels = parse_u64(key, value);
  } else if (key == "classes") {
    cfg.classes = parse_u64(key, value);
  } else if (key == "lr") {
    cfg.lr = parse_f64(key, value);
  } else if (key == "weight_decay") {
    cfg.weight_decay = parse_f64(key, value);
  } else if (key == "warmup_epochs") {
    cfg.warmup_epochs = parse_u64(key, value);
  } else if (key == "cosine_epochs") {
    cfg.cosine_epochs = parse_u64(key, value);
  } else if (key == "epochs") {
    cfg.epochs = parse_u64(key, value);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_u64(key, value);
  } else if (key == "synth_classes") {
    cfg.synth_classes = parse_u64(key, value);
  } else if (key == "per_class_train") {
    cfg.per_class_train = parse_u64(key, value);
  } else if (key == "per_class_val") {
    cfg.per_class_val = parse_u64(key, value);
  } else if (key == "vol_depth") {
    cfg.vol_depth = parse_u64(key, value);
  } else if (key == "vol_height") {
    cfg.vol_height = parse_u64(key, value);
  } else if (key == "vol_width") {
    cfg.vol_width = parse_u64(key, value);
  } else if (key == "noise_sigma") {
    cfg.noise_sigma = parse_f64(key, value);
  } else if (key == "text_mode") {
    if (value == "files") {
      cfg.text_mode = TextMode::kFiles;
    } else if (value == "synth") {
      cfg.text_mode = TextMode::kSynth;
    } else if (value == "label") {
      cfg.text_mode = TextMode::kLabel;
    } else if (value == "zero") {
      cfg.text_mode = TextMode::kZero;
    } else {
      throw ConfigError("text_mode must be files|synth|label|zero, got '" +
                        value + "'");
    }
  } else if (key == "baseline") {
    if (value == "none") {
      cfg.baseline = BaselineKind::kNone;
    } else if (value == "mean") {
      cfg.baseline = BaselineKind::kMean;
    } else if (value == "max") {
      cfg.baseline = BaselineKind::kMax;
    } else {
      throw ConfigError("baseline must be none|mean|max, got '" + value + "'");
    }
  } else if (key == "manifest") {
    cfg.manifest = value;
  } else if (key == "val_manifest") {
    cfg.val_manifest = value;
  } else if (key == "embeddings_dir") {
    cfg.embeddings_dir = value;
  } else if (key == "checkpoint") {
    cfg.checkpoint = value;
  } else if (key == "features_file") {
    cfg.features_file = value;
  } else if (key == "val_features_file") {
    cfg.val_features_file = value;
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

// Parses key=value lines into ordered pairs; '#' starts a comment, blank
// lines are ignored.
inline std::vector<std::pair<std::string, std::string>> parse_config_file(
    const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  std::vector<std::pair<std::string, std::string>> pairs;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  const auto trim = [](std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r");
    const std::size_t b = s.find_last_not_of(" \t\r");
    s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
  };
  while (std::getline(lines, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": expected key=value");
    }
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    trim(key);
    trim(value);
    pairs.emplace_back(std::move(key), std::move(value));
  }
  return pairs;
}

// Cross-field validation; throws ValidationError naming the failing field.
inline void validate(const RunConfig& cfg) {
  if (!(cfg.zeta0 >= 0.0 && cfg.zeta0 < cfg.zeta1 && cfg.zeta1 <= 1.0)) {
    throw ValidationError("zeta0/zeta1: need 0 <= zeta0 < zeta1 <= 1");
  }
  if (cfg.top_k == 0) throw ValidationError("top_k: must be positive");
  if (cfg.bins == 0) throw ValidationError("bins: must be positive");
  if (cfg.epsilon <= 0.0) throw ValidationError("epsilon: must be positive");
  if (cfg.dim == 0) throw ValidationError("dim: must be positive");
  const std::size_t heads =
      cfg.heads == 0 ? NetworkConfig::default_heads(cfg.dim) : cfg.heads;
  if (cfg.dim % heads != 0) {
    throw ValidationError("heads: dim must be divisible by head count");
  }
  if (cfg.patch == 0) throw ValidationError("patch: must be positive");
  if (cfg.text_dim < 2) throw ValidationError("text_dim: must be >= 2");
  if (cfg.classes < 2) throw ValidationError("classes: must be >= 2");
  if (cfg.feature_dim == 0) {
    throw ValidationError("feature_dim: must be positive");
  }
  if (cfg.batch_size == 0) {
    throw ValidationError("batch_size: must be positive");
  }
  if (cfg.lr <= 0.0) throw ValidationError("lr: must be positive");
  if (cfg.cosine_epochs == 0) {
    throw ValidationError("cosine_epochs: must be positive");
  }
  const std::size_t total = cfg.warmup_epochs + cfg.cosine_epochs;
  const std::size_t run = cfg.epochs == 0 ? total : cfg.epochs;
  if (cfg.warmup_epochs > run) {
    throw ValidationError("warmup_epochs: exceeds the epochs actually run");
  }
  if (cfg.vol_height % cfg.patch != 0 || cfg.vol_width % cfg.patch != 0 ||
      cfg.vol_height / cfg.patch != cfg.vol_width / cfg.patch) {
    throw ValidationError(
        "vol_height/vol_width: must be divisible by patch with a square "
        "patch grid");
  }
}

// Resolves a full config from an optional file plus --key value flag pairs.
// The preset (wherever stated, flags beating the file) applies first, then
// file keys, then flags. MVSC_SEED supplies the seed when nothing else does.
inline RunConfig parse_config(
    const std::optional<std::filesystem::path>& config_path,
    const std::vector<std::pair<std::string, std::string>>& flags) {
  std::vector<std::pair<std::string, std::string>> file_pairs;
  if (config_path) file_pairs = parse_config_file(*config_path);

  RunConfig cfg;
  std::string preset;
  bool seed_given = false;
  for (const auto& [key, value] : file_pairs) {
    if (key == "preset") preset = value;
    if (key == "seed") seed_given = true;
  }
  for (const auto& [key, value] : flags) {
    if (key == "preset") preset = value;
    if (key == "seed") seed_given = true;
  }
  if (!preset.empty()) apply_preset(cfg, preset);
  for (const auto& [key, value] : file_pairs) {
    if (key != "preset") apply_key(cfg, key, value);
  }
  for (const auto& [key, value] : flags) {
    if (key != "preset") apply_key(cfg, key, value);
  }
  if (!seed_given) {
    if (const char* env = std::getenv("MVSC_SEED")) {
      cfg.seed = detail::parse_u64("MVSC_SEED", env);
    }
  }
  validate(cfg);
  return cfg;
}

// Total trainable scalars across compressor and head; the frozen extractor
// contributes nothing.
inline std::size_t count_parameters(const RunConfig& cfg) {
  validate(cfg);
  Rng rng(0);
  SurrogateModel model = SurrogateModel::init(cfg.network(), rng);
  ClassifierHead head(cfg.feature_dim, cfg.classes, rng);
  return model.parameter_count() + head.parameter_count();
}

}  // namespace mvsc
