#pragma once

// 3D scan representation: normalization, the three derived channels
// (intensity / brain mask / tissue code), synthetic class-conditional
// volumes, and the on-disk container.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "mvsc/errors.hpp"
#include "mvsc/io.hpp"
#include "mvsc/rng.hpp"
#include "mvsc/tensor.hpp"

namespace mvsc {

// Intensity threshold separating tissue from background on normalized
// volumes; the desk-scale stand-in for skull stripping.
inline constexpr double kMaskThreshold = 0.05;

// Scalar field indexed [z][i][j]. Voxels are stored as f32 to match the file
// format exactly, so save/load round-trips are bit-exact; all derived math
// runs in f64.
struct Volume {
  std::size_t depth = 0, height = 0, width = 0;
  std::vector<float> voxels;

  std::size_t slice_size() const { return height * width; }
  std::size_t size() const { return depth * height * width; }

  float at(std::size_t z, std::size_t i, std::size_t j) const {
    return voxels[(z * height + i) * width + j];
  }
  float& at(std::size_t z, std::size_t i, std::size_t j) {
    return voxels[(z * height + i) * width + j];
  }
  const float* slice(std::size_t z) const {
    return voxels.data() + z * slice_size();
  }
};

struct LabeledVolume {
  Volume volume;
  std::size_t label = 0;
  std::string subject_id;
};

// One selected slice expanded to its three input channels, fixed order:
// 0 = intensity, 1 = binary mask, 2 = quartile-coded tissue surrogate.
struct ChannelStack {
  std::size_t height = 0, width = 0;
  std::vector<double> data;  // [3 x H x W]

  double at(std::size_t channel, std::size_t i, std::size_t j) const {
    return data[(channel * height + i) * width + j];
  }

  Tensor to_tensor() const {
    return Tensor::constant({3, height, width}, data);
  }
};

// --------------------------------------------------------------------------
// File format: magic "MVSCVOL1", u32 Z, u32 H, u32 W, Z*H*W f32 [z][i][j].
// --------------------------------------------------------------------------

inline void save_volume(const Volume& v, const std::filesystem::path& path) {
  BinaryWriter out(path);
  out.magic("MVSCVOL1");
  out.u32(static_cast<std::uint32_t>(v.depth));
  out.u32(static_cast<std::uint32_t>(v.height));
  out.u32(static_cast<std::uint32_t>(v.width));
  out.f32_array(v.voxels);
  out.close();
}

inline Volume load_volume(const std::filesystem::path& path) {
  BinaryReader in(path);
  in.expect_magic("MVSCVOL1");
  Volume v;
  v.depth = in.u32();
  v.height = in.u32();
  v.width = in.u32();
  if (v.depth == 0 || v.height == 0 || v.width == 0) {
    throw CorruptionError("volume with zero dimension in " + in.path());
  }
  v.voxels = in.f32_array(v.size());
  if (!in.at_eof()) {
    throw CorruptionError("payload longer than header dimensions in " +
                          in.path());
  }
  for (float x : v.voxels) {
    if (!std::isfinite(x)) {
      throw CorruptionError("non-finite voxel in " + in.path());
    }
  }
  return v;
}

// --------------------------------------------------------------------------
// Normalization and channels
// --------------------------------------------------------------------------

// Affine map of [min, max] onto [0, 1]. A constant volume maps to all zeros
// (the 0/0 scale is defined as 0) so nothing downstream sees NaN.
inline Volume normalize_intensity(const Volume& v) {
  require(!v.voxels.empty(), "normalize_intensity: empty volume");
  double lo = v.voxels[0], hi = v.voxels[0];
  for (float x : v.voxels) {
    lo = std::min(lo, static_cast<double>(x));
    hi = std::max(hi, static_cast<double>(x));
  }
  Volume out = v;
  if (hi == lo) {
    std::fill(out.voxels.begin(), out.voxels.end(), 0.0f);
    return out;
  }
  const double scale = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < out.voxels.size(); ++i) {
    out.voxels[i] =
        static_cast<float>((static_cast<double>(v.voxels[i]) - lo) * scale);
  }
  return out;
}

namespace detail {

// Quartile thresholds of the masked intensities of one slice. Levels are
// assigned as the count of thresholds strictly below the value.
inline std::array<double, 3> quartile_thresholds(std::vector<double> masked) {
  std::array<double, 3> t{0.0, 0.0, 0.0};
  const std::size_t m = masked.size();
  for (std::size_t r = 1; r <= 3; ++r) {
    const std::size_t pos = std::min(m - 1, r * m / 4);
    std::nth_element(masked.begin(), masked.begin() + static_cast<long>(pos),
                     masked.end());
    t[r - 1] = masked[pos];
  }
  return t;
}

inline ChannelStack make_stack(const float* slice, std::size_t height,
                               std::size_t width) {
  ChannelStack s;
  s.height = height;
  s.width = width;
  s.data.assign(3 * height * width, 0.0);
  const std::size_t hw = height * width;
  std::vector<double> masked;
  masked.reserve(hw);
  for (std::size_t i = 0; i < hw; ++i) {
    const double v = static_cast<double>(slice[i]);
    s.data[i] = v;
    const bool in_mask = v > kMaskThreshold;
    s.data[hw + i] = in_mask ? 1.0 : 0.0;
    if (in_mask) masked.push_back(v);
  }
  if (masked.empty()) return s;  // mask and tissue channels stay zero
  const std::array<double, 3> t = quartile_thresholds(std::move(masked));
  for (std::size_t i = 0; i < hw; ++i) {
    if (s.data[hw + i] == 0.0) continue;
    const double v = s.data[i];
    const int level = (v > t[0]) + (v > t[1]) + (v > t[2]);
    s.data[2 * hw + i] = static_cast<double>(level) / 3.0;
  }
  return s;
}

}  // namespace detail

// Expands the given axial slices of a normalized volume into channel stacks.
inline std::vector<ChannelStack> stack_channels(
    const Volume& v, const std::vector<std::size_t>& slice_indices) {
  std::vector<ChannelStack> stacks;
  stacks.reserve(slice_indices.size());
  for (std::size_t z : slice_indices) {
    if (z >= v.depth) {
      throw ContractError("stack_channels: slice " + std::to_string(z) +
                          " out of range " + std::to_string(v.depth));
    }
    stacks.push_back(detail::make_stack(v.slice(z), v.height, v.width));
  }
  return stacks;
}

// Per-channel mean over the whole volume: (intensity, mask fraction, tissue
// code). Feeds the learnable residual augmentation of the patch grid.
inline std::array<double, 3> channel_summary(const Volume& v) {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  const std::size_t hw = v.slice_size();
  for (std::size_t z = 0; z < v.depth; ++z) {
    ChannelStack s = detail::make_stack(v.slice(z), v.height, v.width);
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < hw; ++i) sum[c] += s.data[c * hw + i];
    }
  }
  const double inv = 1.0 / static_cast<double>(v.size());
  return {sum[0] * inv, sum[1] * inv, sum[2] * inv};
}

// --------------------------------------------------------------------------
// Synthetic class-conditional data
// --------------------------------------------------------------------------

struct SynthSpec {
  std::size_t classes = 2;
  std::size_t per_class = 40;
  std::size_t depth = 32, height = 64, width = 64;
  // Geometry: a bright ellipsoidal shell with a central cavity whose radius
  // grows with the class index, so classes differ by shape rather than by
  // global mean intensity.
  double cavity_radius0 = 0.22;
  double cavity_radius_step = 0.10;
  double shell_intensity = 0.75;
  double cavity_intensity = 0.15;
  double background_intensity = 0.05;
  double noise_sigma = 0.05;
};

// One volume of class `label`, fully determined by `seed`.
inline Volume synth_volume(const SynthSpec& spec, std::size_t label,
                           std::uint64_t seed) {
  Rng rng(seed);
  Volume v;
  v.depth = spec.depth;
  v.height = spec.height;
  v.width = spec.width;
  v.voxels.resize(v.size());
  // Small per-volume jitter so the class is not decidable from one voxel.
  const double cz = 0.5 * spec.depth + rng.uniform(-1.0, 1.0);
  const double ci = 0.5 * spec.height + rng.uniform(-1.0, 1.0);
  const double cj = 0.5 * spec.width + rng.uniform(-1.0, 1.0);
  const double shell = spec.shell_intensity + rng.uniform(-0.02, 0.02);
  const double az = 0.42 * spec.depth;
  const double ai = 0.42 * spec.height;
  const double aj = 0.42 * spec.width;
  const double cavity_r =
      spec.cavity_radius0 + static_cast<double>(label) * spec.cavity_radius_step;
  std::size_t idx = 0;
  for (std::size_t z = 0; z < spec.depth; ++z) {
    for (std::size_t i = 0; i < spec.height; ++i) {
      for (std::size_t j = 0; j < spec.width; ++j, ++idx) {
        const double dz = (static_cast<double>(z) - cz) / az;
        const double di = (static_cast<double>(i) - ci) / ai;
        const double dj = (static_cast<double>(j) - cj) / aj;
        const double rho = std::sqrt(dz * dz + di * di + dj * dj);
        double base = spec.background_intensity;
        if (rho <= 1.0) base = shell;
        if (rho <= cavity_r) base = spec.cavity_intensity;
        const double noisy = base + rng.normal(0.0, spec.noise_sigma);
        v.voxels[idx] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
      }
    }
  }
  return v;
}

// Deterministic dataset: spec.classes * spec.per_class volumes, grouped by
// class, each volume drawn from its own derived seed.
inline std::vector<LabeledVolume> synth_dataset(const SynthSpec& spec,
                                                std::uint64_t seed) {
  require(spec.classes >= 1 && spec.per_class >= 1,
          "synth_dataset: class count and volumes per class must be positive");
  require(spec.depth >= 1 && spec.height >= 2 && spec.width >= 2,
          "synth_dataset: degenerate volume dimensions");
  std::vector<LabeledVolume> dataset;
  dataset.reserve(spec.classes * spec.per_class);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    for (std::size_t k = 0; k < spec.per_class; ++k) {
      LabeledVolume lv;
      lv.label = c;
      std::ostringstream id;
      id << "c" << c << "_v" << k;
      lv.subject_id = id.str();
      lv.volume =
          synth_volume(spec, c, derive_seed(seed, c * 1000003ULL + k));
      dataset.push_back(std::move(lv));
    }
  }
  return dataset;
}

// --------------------------------------------------------------------------
// Dataset manifest: one record per line, "<path>,<label>,<subject_id>".
// Paths are resolved relative to the manifest's directory.
// --------------------------------------------------------------------------

struct ManifestEntry {
  std::filesystem::path path;
  std::size_t label = 0;
  std::string subject_id;
};

inline std::vector<ManifestEntry> load_manifest(
    const std::filesystem::path& manifest_path) {
  const std::string text = read_text_file(manifest_path);
  const std::filesystem::path base = manifest_path.parent_path();
  std::vector<ManifestEntry> entries;
  std::istringstream lines(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::size_t p1 = line.find(',');
    const std::size_t p2 = line.find(',', p1 + 1);
    if (p1 == std::string::npos || p2 == std::string::npos) {
      throw FormatError("manifest line " + std::to_string(lineno) +
                        " is not <path>,<label>,<subject_id>");
    }
    ManifestEntry e;
    e.path = base / line.substr(0, p1);
    e.label = static_cast<std::size_t>(
        std::stoul(line.substr(p1 + 1, p2 - p1 - 1)));
    e.subject_id = line.substr(p2 + 1);
    entries.push_back(std::move(e));
  }
  return entries;
}

inline void save_manifest(const std::vector<ManifestEntry>& entries,
                          const std::filesystem::path& manifest_path) {
  std::string text;
  for (const ManifestEntry& e : entries) {
    text += e.path.generic_string();
    text += ',';
    text += std::to_string(e.label);
    text += ',';
    text += e.subject_id;
    text += '\n';
  }
  write_text_file(manifest_path, text);
}

}  // namespace mvsc
