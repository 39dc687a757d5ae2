#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mvsc/rng.hpp"
#include "mvsc/volume.hpp"

using namespace mvsc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "mvsc_volume_tests";
  fs::create_directories(dir);
  return dir;
}

Volume random_volume(std::size_t z, std::size_t h, std::size_t w,
                     std::uint64_t seed) {
  Rng rng(seed);
  Volume v;
  v.depth = z;
  v.height = h;
  v.width = w;
  v.voxels.resize(v.size());
  for (float& x : v.voxels) x = static_cast<float>(rng.uniform());
  return v;
}

}  // namespace

TEST_CASE("volume save/load round-trips bit-exactly") {
  Volume v = random_volume(4, 6, 5, 42);
  const fs::path path = temp_dir() / "roundtrip.mvsvol";
  save_volume(v, path);
  Volume loaded = load_volume(path);
  REQUIRE(loaded.depth == v.depth);
  REQUIRE(loaded.height == v.height);
  REQUIRE(loaded.width == v.width);
  REQUIRE(loaded.voxels == v.voxels);
}

TEST_CASE("load_volume rejects a bad magic") {
  const fs::path path = temp_dir() / "badmagic.mvsvol";
  std::ofstream out(path, std::ios::binary);
  out.write("XXXXXXXX", 8);
  const std::uint32_t dims[3] = {1, 1, 1};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  const float x = 0.0f;
  out.write(reinterpret_cast<const char*>(&x), sizeof(x));
  out.close();
  REQUIRE_THROWS_AS(load_volume(path), FormatError);
}

TEST_CASE("load_volume rejects header/payload mismatch") {
  const fs::path path = temp_dir() / "short.mvsvol";
  {
    std::ofstream out(path, std::ios::binary);
    out.write("MVSCVOL1", 8);
    const std::uint32_t dims[3] = {2, 2, 2};  // claims 8 voxels
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    const float x = 0.5f;
    for (int i = 0; i < 5; ++i) {  // writes only 5
      out.write(reinterpret_cast<const char*>(&x), sizeof(x));
    }
  }
  REQUIRE_THROWS_AS(load_volume(path), CorruptionError);

  const fs::path long_path = temp_dir() / "long.mvsvol";
  {
    std::ofstream out(long_path, std::ios::binary);
    out.write("MVSCVOL1", 8);
    const std::uint32_t dims[3] = {1, 1, 2};
    out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    const float x = 0.5f;
    for (int i = 0; i < 5; ++i) {
      out.write(reinterpret_cast<const char*>(&x), sizeof(x));
    }
  }
  REQUIRE_THROWS_AS(load_volume(long_path), CorruptionError);
}

TEST_CASE("normalize_intensity maps the range onto [0,1]") {
  Volume v;
  v.depth = 1;
  v.height = 1;
  v.width = 3;
  v.voxels = {2.0f, 4.0f, 6.0f};
  Volume n = normalize_intensity(v);
  REQUIRE(n.voxels[0] == 0.0f);
  REQUIRE(n.voxels[1] == 0.5f);
  REQUIRE(n.voxels[2] == 1.0f);
}

TEST_CASE("normalize_intensity maps constant volumes to zero") {
  Volume v;
  v.depth = 2;
  v.height = 2;
  v.width = 2;
  v.voxels.assign(8, 3.25f);
  Volume n = normalize_intensity(v);
  for (float x : n.voxels) REQUIRE(x == 0.0f);
}

TEST_CASE("normalize_intensity is idempotent") {
  Volume v = random_volume(3, 4, 4, 7);
  v.voxels[0] = 0.0f;  // pin the range so the first pass is the identity map
  v.voxels[1] = 1.0f;
  Volume once = normalize_intensity(v);
  Volume twice = normalize_intensity(once);
  REQUIRE(once.voxels == twice.voxels);
  // And in general: normalizing an already-normalized volume changes nothing.
  Volume w = random_volume(3, 4, 4, 8);
  Volume n1 = normalize_intensity(w);
  Volume n2 = normalize_intensity(n1);
  REQUIRE(n1.voxels == n2.voxels);
}

TEST_CASE("stack_channels on an all-zero slice") {
  Volume v;
  v.depth = 1;
  v.height = 4;
  v.width = 4;
  v.voxels.assign(16, 0.0f);
  auto stacks = stack_channels(v, {0});
  REQUIRE(stacks.size() == 1);
  for (double x : stacks[0].data) REQUIRE(x == 0.0);
}

TEST_CASE("stack_channels mask is binary and idempotent") {
  Volume v = random_volume(2, 8, 8, 21);
  auto stacks = stack_channels(v, {0, 1});
  for (const ChannelStack& s : stacks) {
    const std::size_t hw = s.height * s.width;
    for (std::size_t i = 0; i < hw; ++i) {
      const double m = s.data[hw + i];
      REQUIRE((m == 0.0 || m == 1.0));
      // Re-thresholding the mask reproduces the mask.
      const double again = m > kMaskThreshold ? 1.0 : 0.0;
      REQUIRE(again == m);
    }
  }
}

TEST_CASE("stack_channels tissue channel takes at most four values") {
  Volume v = random_volume(1, 16, 16, 33);
  auto stacks = stack_channels(v, {0});
  std::set<double> seen;
  const std::size_t hw = 256;
  for (std::size_t i = 0; i < hw; ++i) seen.insert(stacks[0].data[2 * hw + i]);
  REQUIRE(seen.size() <= 4);
  for (double x : seen) {
    REQUIRE((x == 0.0 || x == 1.0 / 3.0 || x == 2.0 / 3.0 || x == 1.0));
  }
}

TEST_CASE("stack_channels quartile levels match a sort-based reference") {
  Volume v = random_volume(1, 12, 12, 55);
  auto stacks = stack_channels(v, {0});
  const ChannelStack& s = stacks[0];
  const std::size_t hw = 144;

  // Reference: full sort of the masked values, thresholds at r*M/4.
  std::vector<double> masked;
  for (std::size_t i = 0; i < hw; ++i) {
    if (s.data[i] > kMaskThreshold) masked.push_back(s.data[i]);
  }
  std::vector<double> sorted = masked;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  REQUIRE(m > 0);
  const double t1 = sorted[std::min(m - 1, 1 * m / 4)];
  const double t2 = sorted[std::min(m - 1, 2 * m / 4)];
  const double t3 = sorted[std::min(m - 1, 3 * m / 4)];
  for (std::size_t i = 0; i < hw; ++i) {
    double expected = 0.0;
    if (s.data[hw + i] == 1.0) {
      const double x = s.data[i];
      const int level = (x > t1) + (x > t2) + (x > t3);
      expected = level / 3.0;
    }
    REQUIRE(s.data[2 * hw + i] == expected);
  }
}

TEST_CASE("stack_channels rejects out-of-range slices") {
  Volume v = random_volume(3, 4, 4, 1);
  REQUIRE_THROWS_AS(stack_channels(v, {3}), ContractError);
}

TEST_CASE("synth_dataset is deterministic and balanced") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 40;
  spec.depth = 8;
  spec.height = 16;
  spec.width = 16;
  auto d1 = synth_dataset(spec, 99);
  auto d2 = synth_dataset(spec, 99);
  REQUIRE(d1.size() == 80);
  std::size_t per_label[2] = {0, 0};
  for (std::size_t i = 0; i < d1.size(); ++i) {
    REQUIRE(d1[i].volume.voxels == d2[i].volume.voxels);
    REQUIRE(d1[i].label == d2[i].label);
    per_label[d1[i].label]++;
  }
  REQUIRE(per_label[0] == 40);
  REQUIRE(per_label[1] == 40);

  auto d3 = synth_dataset(spec, 100);
  REQUIRE(d3[0].volume.voxels != d1[0].volume.voxels);
}

TEST_CASE("synth classes are not separable by global mean intensity") {
  SynthSpec spec;
  spec.classes = 2;
  spec.per_class = 10;
  auto dataset = synth_dataset(spec, 7);
  double mean[2] = {0.0, 0.0};
  std::size_t count[2] = {0, 0};
  for (const LabeledVolume& lv : dataset) {
    double m = 0.0;
    for (float x : lv.volume.voxels) m += x;
    mean[lv.label] += m / static_cast<double>(lv.volume.size());
    count[lv.label]++;
  }
  mean[0] /= static_cast<double>(count[0]);
  mean[1] /= static_cast<double>(count[1]);
  REQUIRE(std::abs(mean[0] - mean[1]) < spec.noise_sigma);
}

TEST_CASE("synth_dataset rejects non-positive counts") {
  SynthSpec spec;
  spec.per_class = 0;
  REQUIRE_THROWS_AS(synth_dataset(spec, 1), ContractError);
}

TEST_CASE("channel_summary averages the stack channels") {
  Volume v = random_volume(3, 8, 8, 77);
  const std::array<double, 3> summary = channel_summary(v);
  // Reference: stack every slice and average each channel directly.
  auto stacks = stack_channels(v, {0, 1, 2});
  double expected[3] = {0, 0, 0};
  const std::size_t hw = 64;
  for (const ChannelStack& s : stacks) {
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < hw; ++i) expected[c] += s.data[c * hw + i];
    }
  }
  for (std::size_t c = 0; c < 3; ++c) {
    expected[c] /= static_cast<double>(v.size());
    REQUIRE(summary[c] == Catch::Approx(expected[c]).margin(1e-15));
  }
}

TEST_CASE("manifest round-trip") {
  const fs::path dir = temp_dir();
  std::vector<ManifestEntry> entries;
  ManifestEntry a;
  a.path = "volumes/s1.mvsvol";
  a.label = 0;
  a.subject_id = "s1";
  ManifestEntry b;
  b.path = "volumes/s2.mvsvol";
  b.label = 2;
  b.subject_id = "s2";
  entries.push_back(a);
  entries.push_back(b);
  save_manifest(entries, dir / "manifest.csv");
  auto loaded = load_manifest(dir / "manifest.csv");
  REQUIRE(loaded.size() == 2);
  REQUIRE(loaded[0].path == dir / "volumes/s1.mvsvol");
  REQUIRE(loaded[0].label == 0);
  REQUIRE(loaded[1].subject_id == "s2");
  REQUIRE(loaded[1].label == 2);
}
