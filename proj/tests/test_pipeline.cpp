#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>

#include "mvsc/pipeline.hpp"

using namespace mvsc;
namespace fs = std::filesystem;

namespace {

// Small config that runs the whole pipeline in a couple of seconds.
RunConfig tiny_run(const fs::path& dir) {
  RunConfig cfg;
  cfg.seed = 21;
  cfg.top_k = 2;
  cfg.dim = 8;
  cfg.global_tokens = 2;
  cfg.patch = 8;
  cfg.text_dim = 8;
  cfg.heads = 1;
  cfg.feature_dim = 16;
  cfg.classes = 2;
  cfg.synth_classes = 2;
  cfg.per_class_train = 4;
  cfg.per_class_val = 2;
  cfg.vol_depth = 8;
  cfg.vol_height = 16;
  cfg.vol_width = 16;
  cfg.warmup_epochs = 1;
  cfg.cosine_epochs = 2;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.lr = 1e-3;
  cfg.out_dir = dir.string();
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "mvsc_pipeline_tests" /
                       name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) { return read_text_file(path); }

}  // namespace

TEST_CASE("synth then train then eval completes with exit 0") {
  const fs::path dir = fresh_dir("smoke");
  RunConfig cfg = tiny_run(dir);
  REQUIRE(run_pipeline("synth", cfg) == 0);
  REQUIRE(fs::exists(dir / "train_manifest.csv"));
  REQUIRE(fs::exists(dir / "val_manifest.csv"));

  cfg.manifest = (dir / "train_manifest.csv").string();
  cfg.val_manifest = (dir / "val_manifest.csv").string();
  REQUIRE(run_pipeline("train", cfg) == 0);
  REQUIRE(fs::exists(dir / "model.mvsmdl"));
  REQUIRE(fs::exists(dir / "metrics.log"));
  REQUIRE(fs::exists(dir / "train_report.txt"));

  cfg.checkpoint = (dir / "model.mvsmdl").string();
  REQUIRE(run_pipeline("eval", cfg) == 0);
  const std::string report = slurp(dir / "metrics_report.txt");
  REQUIRE(report.find("auc=") != std::string::npos);
  REQUIRE(report.find("acc=") != std::string::npos);
}

TEST_CASE("synth honors the text_mode=files round trip") {
  const fs::path dir = fresh_dir("files_mode");
  RunConfig cfg = tiny_run(dir);
  REQUIRE(run_pipeline("synth", cfg) == 0);
  // Re-reading the generated embeddings must reproduce the same pairing.
  cfg.manifest = (dir / "train_manifest.csv").string();
  cfg.val_manifest = (dir / "val_manifest.csv").string();
  cfg.text_mode = TextMode::kFiles;
  cfg.embeddings_dir = (dir / "embeddings").string();
  REQUIRE(run_pipeline("train", cfg) == 0);
}

TEST_CASE("select writes one score table per manifest row") {
  const fs::path dir = fresh_dir("select");
  RunConfig cfg = tiny_run(dir);
  REQUIRE(run_pipeline("synth", cfg) == 0);
  cfg.manifest = (dir / "train_manifest.csv").string();
  cfg.out_dir = (dir / "scores").string();
  REQUIRE(run_pipeline("select", cfg) == 0);
  std::size_t tables = 0;
  for (const auto& entry : fs::directory_iterator(dir / "scores")) {
    if (entry.path().extension() == ".csv") ++tables;
  }
  REQUIRE(tables == 8);  // 2 classes x 4 train volumes
}

TEST_CASE("export-surrogate emits exactly one file per manifest row") {
  const fs::path dir = fresh_dir("export");
  RunConfig cfg = tiny_run(dir);
  REQUIRE(run_pipeline("synth", cfg) == 0);
  cfg.manifest = (dir / "train_manifest.csv").string();
  cfg.val_manifest = (dir / "val_manifest.csv").string();
  REQUIRE(run_pipeline("train", cfg) == 0);

  cfg.checkpoint = (dir / "model.mvsmdl").string();
  cfg.out_dir = (dir / "surrogates").string();
  REQUIRE(run_pipeline("export-surrogate", cfg) == 0);
  std::size_t exported = 0;
  for (const auto& entry : fs::directory_iterator(dir / "surrogates")) {
    if (entry.path().string().ends_with(".surrogate.mvsvol")) ++exported;
  }
  REQUIRE(exported == 8);

  // Exported files parse back with three channels at the slice resolution.
  Tensor s = load_surrogate(dir / "surrogates" /
                            "c0_v0_train.surrogate.mvsvol");
  REQUIRE(s.shape() == Shape{3, 16, 16});
}

TEST_CASE("bench-baselines reports mean, max, and learned rows") {
  const fs::path dir = fresh_dir("bench");
  RunConfig cfg = tiny_run(dir);
  REQUIRE(run_pipeline("synth", cfg) == 0);
  cfg.manifest = (dir / "train_manifest.csv").string();
  cfg.val_manifest = (dir / "val_manifest.csv").string();
  REQUIRE(run_pipeline("bench-baselines", cfg) == 0);
  const std::string table = slurp(dir / "baselines.csv");
  REQUIRE(table.find("mean,") != std::string::npos);
  REQUIRE(table.find("max,") != std::string::npos);
  REQUIRE(table.find("mvsc,") != std::string::npos);
}

TEST_CASE("reruns with the same config produce byte-identical artifacts") {
  const fs::path dir_a = fresh_dir("repro_a");
  const fs::path dir_b = fresh_dir("repro_b");
  for (const fs::path& dir : {dir_a, dir_b}) {
    RunConfig cfg = tiny_run(dir);
    REQUIRE(run_pipeline("synth", cfg) == 0);
    cfg.manifest = (dir / "train_manifest.csv").string();
    cfg.val_manifest = (dir / "val_manifest.csv").string();
    REQUIRE(run_pipeline("train", cfg) == 0);
  }
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
  };
  REQUIRE(bytes(dir_a / "model.mvsmdl") == bytes(dir_b / "model.mvsmdl"));
  REQUIRE(bytes(dir_a / "metrics.log") == bytes(dir_b / "metrics.log"));
  REQUIRE(bytes(dir_a / "train_manifest.csv") ==
          bytes(dir_b / "train_manifest.csv"));
  REQUIRE(bytes(dir_a / "volumes" / "c0_v0_train.mvsvol") ==
          bytes(dir_b / "volumes" / "c0_v0_train.mvsvol"));
}

TEST_CASE("missing inputs exit nonzero through the dispatcher") {
  RunConfig cfg = tiny_run(fresh_dir("missing"));
  REQUIRE_THROWS_AS(run_pipeline("train", cfg), ConfigError);  // no manifest
  REQUIRE_THROWS_AS(run_pipeline("no-such-command", cfg), ConfigError);
}

TEST_CASE("stored embeddings that mismatch the selection are rejected") {
  const fs::path dir = fresh_dir("pairing");
  RunConfig cfg = tiny_run(dir);
  REQUIRE(run_pipeline("synth", cfg) == 0);
  // Corrupt one embedding file's stored indices.
  const fs::path victim = dir / "embeddings" / "c0_v0_train.mvstxt";
  TextEmbeddings e = load_embeddings(victim, cfg.top_k);
  for (std::size_t& z : e.slice_indices) z = (z + 1) % cfg.vol_depth;
  save_embeddings(e, victim);

  cfg.manifest = (dir / "train_manifest.csv").string();
  cfg.val_manifest = (dir / "val_manifest.csv").string();
  cfg.text_mode = TextMode::kFiles;
  cfg.embeddings_dir = (dir / "embeddings").string();
  REQUIRE_THROWS_AS(run_pipeline("train", cfg), PairingError);
}
