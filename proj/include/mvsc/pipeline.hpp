#pragma once

// End-to-end commands behind the CLI: synthetic data generation, slice
// scoring, training, evaluation, surrogate export, and the pooling-baseline
// comparison. Every command writes byte-reproducible artifacts for a given
// config and seed.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mvsc/backbone.hpp"
#include "mvsc/config.hpp"
#include "mvsc/errors.hpp"
#include "mvsc/io.hpp"
#include "mvsc/metrics.hpp"
#include "mvsc/network.hpp"
#include "mvsc/slice_select.hpp"
#include "mvsc/text_embed.hpp"
#include "mvsc/train.hpp"
#include "mvsc/volume.hpp"

namespace mvsc {

namespace fs = std::filesystem;

namespace detail {

// Per-volume embedding seed; depends on the run seed and the subject only.
inline std::uint64_t subject_seed(std::uint64_t run_seed,
                                  const std::string& subject_id) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : subject_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return derive_seed(run_seed, h);
}

inline TextEmbeddings make_embeddings(const RunConfig& cfg,
                                      const ManifestEntry& entry,
                                      const std::vector<std::size_t>& indices) {
  TextEmbeddings e;
  switch (cfg.text_mode) {
    case TextMode::kFiles: {
      if (cfg.embeddings_dir.empty()) {
        throw ConfigError("text_mode=files requires embeddings_dir");
      }
      const fs::path path =
          fs::path(cfg.embeddings_dir) / (entry.subject_id + ".mvstxt");
      e = load_embeddings(path, cfg.top_k);
      if (e.slice_indices != indices) {
        throw PairingError("stored slice indices in " + path.string() +
                           " do not match the current selection");
      }
      return e;
    }
    case TextMode::kSynth:
      e = synth_embeddings(subject_seed(cfg.seed, entry.subject_id),
                           cfg.top_k, cfg.text_dim);
      break;
    case TextMode::kLabel:
      e = label_conditioned_embeddings(
          subject_seed(cfg.seed, entry.subject_id), cfg.top_k, cfg.text_dim,
          entry.label);
      break;
    case TextMode::kZero:
      e = zero_embeddings(cfg.top_k, cfg.text_dim);
      break;
  }
  e.slice_indices = indices;
  return e;
}

inline std::vector<TrainSample> load_samples(const RunConfig& cfg,
                                             const fs::path& manifest_path) {
  const std::vector<ManifestEntry> entries = load_manifest(manifest_path);
  if (entries.empty()) {
    throw ContractError("manifest " + manifest_path.string() + " is empty");
  }
  std::vector<TrainSample> samples;
  samples.reserve(entries.size());
  const SelectionConfig sel = cfg.selection();
  for (const ManifestEntry& entry : entries) {
    Volume v = load_volume(entry.path);
    const std::vector<std::size_t> indices = select_topk(v, sel);
    TextEmbeddings e = make_embeddings(cfg, entry, indices);
    TrainSample s;
    s.inputs = ScanInputs::prepare(v, e);
    s.label = entry.label;
    s.subject_id = entry.subject_id;
    if (s.label >= cfg.classes) {
      throw ContractError("label " + std::to_string(s.label) + " of " +
                          entry.subject_id + " exceeds configured classes");
    }
    if (cfg.baseline != BaselineKind::kNone) {
      const BaselineMode mode = cfg.baseline == BaselineKind::kMean
                                    ? BaselineMode::kMean
                                    : BaselineMode::kMax;
      s.fixed_surrogate =
          baseline_compress(v, mode, indices, v.height, v.width);
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

inline std::unique_ptr<FrozenExtractor> make_extractor(
    const RunConfig& cfg, bool held_out_split = false) {
  if (cfg.extractor == ExtractorKind::kStub) {
    return std::make_unique<StubExtractor>(
        derive_seed(cfg.seed, SeedStream::kStubExtractor), cfg.feature_dim,
        cfg.stub_channels);
  }
  const std::string& path =
      held_out_split ? cfg.val_features_file : cfg.features_file;
  if (path.empty()) {
    throw ConfigError(
        "extractor=sidecar requires features_file/val_features_file");
  }
  return std::make_unique<SidecarExtractor>(path);
}

inline std::string report_text(
    const std::vector<std::pair<std::string, std::string>>& fields) {
  std::string out;
  for (const auto& [key, value] : fields) {
    out += key;
    out += '=';
    out += value;
    out += '\n';
  }
  return out;
}

}  // namespace detail

// --------------------------------------------------------------------------
// synth: volumes + manifests + per-volume embedding files
// --------------------------------------------------------------------------

inline int cmd_synth(const RunConfig& cfg) {
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir / "volumes");
  fs::create_directories(out_dir / "embeddings");

  const SynthSpec spec = cfg.synth_spec();
  const SelectionConfig sel = cfg.selection();
  // Generating the files *is* this command, so "files" mode falls back to
  // the plain synthetic provider here.
  RunConfig gen_cfg = cfg;
  if (gen_cfg.text_mode == TextMode::kFiles) {
    gen_cfg.text_mode = TextMode::kSynth;
  }
  const std::vector<LabeledVolume> dataset =
      synth_dataset(spec, derive_seed(cfg.seed, SeedStream::kDataSynth));
  std::vector<ManifestEntry> train_entries, val_entries;
  std::size_t within_class = 0;
  std::size_t current_class = 0;
  for (const LabeledVolume& lv : dataset) {
    if (lv.label != current_class) {
      current_class = lv.label;
      within_class = 0;
    }
    const bool is_val = within_class >= cfg.per_class_train;
    ++within_class;
    const std::string subject =
        lv.subject_id + (is_val ? "_val" : "_train");
    const std::string rel = "volumes/" + subject + ".mvsvol";
    save_volume(lv.volume, out_dir / rel);

    const std::vector<std::size_t> indices = select_topk(lv.volume, sel);
    ManifestEntry entry;
    entry.path = rel;  // manifest-relative
    entry.label = lv.label;
    entry.subject_id = subject;
    TextEmbeddings e = detail::make_embeddings(gen_cfg, entry, indices);
    save_embeddings(e, out_dir / "embeddings" / (subject + ".mvstxt"));
    (is_val ? val_entries : train_entries).push_back(std::move(entry));
  }
  save_manifest(train_entries, out_dir / "train_manifest.csv");
  save_manifest(val_entries, out_dir / "val_manifest.csv");
  return 0;
}

// --------------------------------------------------------------------------
// select: one score table per manifest row
// --------------------------------------------------------------------------

inline int cmd_select(const RunConfig& cfg) {
  if (cfg.manifest.empty()) {
    throw ConfigError("select requires manifest");
  }
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  const std::vector<ManifestEntry> entries = load_manifest(cfg.manifest);
  const SelectionConfig sel = cfg.selection();
  for (const ManifestEntry& entry : entries) {
    Volume v = load_volume(entry.path);
    write_text_file(out_dir / (entry.subject_id + ".scores.csv"),
                    score_table(v, sel));
  }
  return 0;
}

// --------------------------------------------------------------------------
// train / eval
// --------------------------------------------------------------------------

struct TrainArtifacts {
  TrainResult result;
  EvalResult final_val;
  fs::path checkpoint_path;
};

inline TrainArtifacts run_training(const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw ConfigError("train requires manifest");
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);

  std::vector<TrainSample> train_samples =
      detail::load_samples(cfg, cfg.manifest);
  std::vector<TrainSample> val_samples;
  if (!cfg.val_manifest.empty()) {
    val_samples = detail::load_samples(cfg, cfg.val_manifest);
  }

  Rng model_rng(derive_seed(cfg.seed, SeedStream::kModelInit));
  SurrogateModel model = SurrogateModel::init(cfg.network(), model_rng);
  Rng head_rng(derive_seed(cfg.seed, SeedStream::kHeadInit));
  ClassifierHead head(cfg.feature_dim, cfg.classes, head_rng);
  auto extractor = detail::make_extractor(cfg);

  TrainOptions opts = cfg.train_options();
  opts.head_only = cfg.baseline != BaselineKind::kNone ||
                   cfg.extractor == ExtractorKind::kSidecar;

  TrainArtifacts art;
  art.result =
      train(train_samples, val_samples, model, head, *extractor, opts);
  if (art.result.extractor_checksum_before !=
      art.result.extractor_checksum_after) {
    throw Error("frozen extractor was mutated during training");
  }
  if (!val_samples.empty()) {
    art.final_val =
        evaluate(val_samples, model, head, *extractor, opts.head_only);
  }

  art.checkpoint_path = cfg.checkpoint.empty()
                            ? out_dir / "model.mvsmdl"
                            : fs::path(cfg.checkpoint);
  CheckpointMeta meta;
  meta.net = cfg.network();
  meta.feature_dim = cfg.feature_dim;
  meta.classes = cfg.classes;
  meta.top_k = cfg.top_k;
  meta.extractor_seed = derive_seed(cfg.seed, SeedStream::kStubExtractor);
  CheckpointExtra extra;
  for (auto& [name, t] : head.named_parameters()) {
    extra.add(name, t.shape(), t.values());
  }
  for (auto& buf : head.buffers()) {
    extra.add(buf.name, buf.shape, buf.data);
  }
  save_checkpoint(art.checkpoint_path, meta, model, extra);

  write_text_file(out_dir / "metrics.log", metrics_log(art.result.history));
  return art;
}

inline int cmd_train(const RunConfig& cfg) {
  TrainArtifacts art = run_training(cfg);
  const EpochMetrics& last = art.result.history.back();
  std::vector<std::pair<std::string, std::string>> fields = {
      {"steps", std::to_string(art.result.steps)},
      {"final_train_loss", format_double(last.train_loss)},
      {"final_train_acc", format_double(last.train_acc)},
      {"extractor_checksum",
       std::to_string(art.result.extractor_checksum_after)},
      {"checkpoint", art.checkpoint_path.filename().string()},
  };
  if (!cfg.val_manifest.empty()) {
    fields.emplace_back("val_auc", format_double(art.final_val.auc_positive));
    fields.emplace_back("val_macro_auc", format_double(art.final_val.macro));
    fields.emplace_back("val_acc", format_double(art.final_val.acc));
  }
  write_text_file(fs::path(cfg.out_dir) / "train_report.txt",
                  detail::report_text(fields));
  return 0;
}

// Restores a checkpointed model + head for evaluation or export.
inline std::pair<SurrogateModel, ClassifierHead> load_model_and_head(
    const fs::path& checkpoint_path) {
  LoadedCheckpoint ckpt = load_checkpoint(checkpoint_path);
  SurrogateModel model = restore_model(ckpt);
  Rng rng(0);
  ClassifierHead head(ckpt.meta.feature_dim, ckpt.meta.classes, rng);
  for (auto& [name, t] : head.named_parameters()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      throw CorruptionError("checkpoint missing tensor " + name);
    }
    Tensor mutable_t = t;
    mutable_t.mutable_values() = it->second.second;
  }
  for (const char* buf :
       {"head.bn1.running_mean", "head.bn1.running_var",
        "head.bn2.running_mean", "head.bn2.running_var"}) {
    auto it = ckpt.tensors.find(buf);
    if (it == ckpt.tensors.end()) {
      throw CorruptionError(std::string("checkpoint missing buffer ") + buf);
    }
    head.restore_buffer(buf, it->second.second);
  }
  return {std::move(model), std::move(head)};
}

inline int cmd_eval(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("eval requires checkpoint");
  const fs::path manifest =
      cfg.val_manifest.empty() ? fs::path(cfg.manifest)
                               : fs::path(cfg.val_manifest);
  if (manifest.empty()) {
    throw ConfigError("eval requires manifest or val_manifest");
  }
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);

  auto [model, head] = load_model_and_head(cfg.checkpoint);
  std::vector<TrainSample> samples = detail::load_samples(cfg, manifest);
  auto extractor = detail::make_extractor(cfg, /*held_out_split=*/true);
  const bool head_only = cfg.baseline != BaselineKind::kNone ||
                         cfg.extractor == ExtractorKind::kSidecar;
  EvalResult r = evaluate(samples, model, head, *extractor, head_only);

  std::vector<std::pair<std::string, std::string>> fields = {
      {"samples", std::to_string(samples.size())},
      {"acc", format_double(r.acc)},
      {"auc", format_double(r.auc_positive)},
      {"macro_auc", format_double(r.macro)},
  };
  for (std::size_t i = 0; i < r.warnings.size(); ++i) {
    fields.emplace_back("warning" + std::to_string(i), r.warnings[i]);
  }
  write_text_file(out_dir / "metrics_report.txt",
                  detail::report_text(fields));
  return 0;
}

// --------------------------------------------------------------------------
// export-surrogate: one three-channel image file per manifest row.
// Format: magic "MVSCVOL2", u32 C, u32 H, u32 W, C*H*W f32 [c][i][j].
// --------------------------------------------------------------------------

inline void save_surrogate(const Tensor& surrogate, const fs::path& path) {
  if (surrogate.rank() != 3) {
    throw ShapeError("save_surrogate: expected [C x H x W]");
  }
  BinaryWriter out(path);
  out.magic("MVSCVOL2");
  out.u32(static_cast<std::uint32_t>(surrogate.shape()[0]));
  out.u32(static_cast<std::uint32_t>(surrogate.shape()[1]));
  out.u32(static_cast<std::uint32_t>(surrogate.shape()[2]));
  out.f32_array(surrogate.values());
  out.close();
}

inline Tensor load_surrogate(const fs::path& path) {
  BinaryReader in(path);
  in.expect_magic("MVSCVOL2");
  const std::size_t c = in.u32();
  const std::size_t h = in.u32();
  const std::size_t w = in.u32();
  const std::vector<float> raw = in.f32_array(c * h * w);
  if (!in.at_eof()) {
    throw CorruptionError("payload longer than header in " + in.path());
  }
  return Tensor::constant({c, h, w},
                          std::vector<double>(raw.begin(), raw.end()));
}

inline int cmd_export_surrogate(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) {
    throw ConfigError("export-surrogate requires checkpoint");
  }
  if (cfg.manifest.empty()) {
    throw ConfigError("export-surrogate requires manifest");
  }
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);
  auto [model, head] = load_model_and_head(cfg.checkpoint);
  std::vector<TrainSample> samples = detail::load_samples(cfg, cfg.manifest);
  for (const TrainSample& s : samples) {
    Tensor surrogate = cfg.baseline != BaselineKind::kNone
                           ? s.fixed_surrogate
                           : mvsc_forward_prepared(s.inputs, model);
    save_surrogate(surrogate, out_dir / (s.subject_id + ".surrogate.mvsvol"));
  }
  return 0;
}

// --------------------------------------------------------------------------
// bench-baselines: learned surrogate vs mean/max pooling, one AUC row each
// --------------------------------------------------------------------------

inline int cmd_bench_baselines(const RunConfig& cfg) {
  if (cfg.manifest.empty() || cfg.val_manifest.empty()) {
    throw ConfigError("bench-baselines requires manifest and val_manifest");
  }
  const fs::path out_dir(cfg.out_dir);
  fs::create_directories(out_dir);

  struct Row {
    std::string name;
    double auc = 0.0;
    double acc = 0.0;
  };
  std::vector<Row> rows;

  for (const BaselineKind mode : {BaselineKind::kMean, BaselineKind::kMax}) {
    RunConfig sub = cfg;
    sub.baseline = mode;
    sub.out_dir =
        (out_dir / (mode == BaselineKind::kMean ? "mean" : "max")).string();
    sub.checkpoint.clear();
    TrainArtifacts art = run_training(sub);
    rows.push_back({mode == BaselineKind::kMean ? "mean" : "max",
                    art.final_val.auc_positive, art.final_val.acc});
  }
  {
    RunConfig sub = cfg;
    sub.baseline = BaselineKind::kNone;
    sub.out_dir = (out_dir / "mvsc").string();
    sub.checkpoint.clear();
    TrainArtifacts art = run_training(sub);
    rows.push_back({"mvsc", art.final_val.auc_positive, art.final_val.acc});
  }

  std::string table = "method,val_auc,val_acc\n";
  for (const Row& r : rows) {
    table += r.name;
    table += ',';
    table += format_double(r.auc);
    table += ',';
    table += format_double(r.acc);
    table += '\n';
  }
  write_text_file(out_dir / "baselines.csv", table);
  return 0;
}

// --------------------------------------------------------------------------
// Dispatch
// --------------------------------------------------------------------------

inline int run_pipeline(const std::string& command, const RunConfig& cfg) {
  if (command == "synth") return cmd_synth(cfg);
  if (command == "select") return cmd_select(cfg);
  if (command == "train") return cmd_train(cfg);
  if (command == "eval") return cmd_eval(cfg);
  if (command == "export-surrogate") return cmd_export_surrogate(cfg);
  if (command == "bench-baselines") return cmd_bench_baselines(cfg);
  throw ConfigError(
      "unknown command '" + command +
      "' (expected select|synth|train|eval|export-surrogate|bench-baselines)");
}

}  // namespace mvsc
