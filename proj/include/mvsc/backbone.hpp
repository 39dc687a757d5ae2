#pragma once

// Frozen 2D feature extraction behind an interface, the MLP classification
// head, and the deterministic mean/max pooling baselines.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "mvsc/errors.hpp"
#include "mvsc/io.hpp"
#include "mvsc/network.hpp"
#include "mvsc/rng.hpp"
#include "mvsc/tensor.hpp"
#include "mvsc/volume.hpp"

namespace mvsc {

// A feature extractor whose parameters never change. Gradients still flow
// through extract() to the surrogate, which is what lets the compressor
// train against a fixed backbone.
class FrozenExtractor {
 public:
  virtual ~FrozenExtractor() = default;

  // surrogate: [3 x H x W]. sample_index identifies the scan for extractors
  // backed by precomputed features.
  virtual Tensor extract(const Tensor& surrogate,
                         std::size_t sample_index) const = 0;

  virtual std::size_t feature_dim() const = 0;

  // FNV-1a over the raw parameter bytes; equal before and after training.
  virtual std::uint64_t checksum() const = 0;
};

namespace detail {

inline std::uint64_t fnv1a(std::uint64_t hash, const double* data,
                           std::size_t count) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < count * sizeof(double); ++i) {
    hash ^= bytes[i];
    hash *= 1099511628211ULL;
  }
  return hash;
}

}  // namespace detail

// Fixed-seed differentiable pipeline:
// conv(3 -> c, kernel = stride = 8) -> GELU -> global mean pool -> linear.
// Parameters are constants drawn once from the seed; they are invisible to
// the optimizer but transparent to gradient flow.
class StubExtractor : public FrozenExtractor {
 public:
  StubExtractor(std::uint64_t seed, std::size_t feature_dim,
                std::size_t channels = 32)
      : seed_(seed), feature_dim_(feature_dim), channels_(channels) {
    Rng rng(derive_seed(seed, SeedStream::kStubExtractor));
    conv_weight_ = fan_in_uniform({channels, 3, 8, 8}, 3 * 8 * 8, rng,
                                  /*requires_grad=*/false);
    conv_bias_ = fan_in_uniform({channels}, 3 * 8 * 8, rng, false);
    linear_weight_ = fan_in_uniform({channels, feature_dim}, channels, rng,
                                    false);
    linear_bias_ = fan_in_uniform({feature_dim}, channels, rng, false);
  }

  Tensor extract(const Tensor& surrogate,
                 std::size_t /*sample_index*/) const override {
    if (surrogate.rank() != 3 || surrogate.shape()[0] != 3) {
      throw ShapeError("StubExtractor: expected a [3 x H x W] surrogate");
    }
    Tensor activ = gelu(conv2d(surrogate, conv_weight_, conv_bias_, 8));
    const std::size_t c = activ.shape()[0];
    const std::size_t hw = activ.shape()[1] * activ.shape()[2];
    // Global mean pool per channel.
    Tensor pooled = scale(
        matmul(reshape(activ, {c, hw}), Tensor::full({hw, 1}, 1.0)),
        1.0 / static_cast<double>(hw));
    Tensor features = add_rowvec(matmul(transpose(pooled), linear_weight_),
                                 linear_bias_);
    return reshape(features, {feature_dim_});
  }

  std::size_t feature_dim() const override { return feature_dim_; }

  std::uint64_t checksum() const override {
    std::uint64_t h = 1469598103934665603ULL;
    for (const Tensor* t :
         {&conv_weight_, &conv_bias_, &linear_weight_, &linear_bias_}) {
      h = detail::fnv1a(h, t->values().data(), t->size());
    }
    return h;
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::size_t feature_dim_;
  std::size_t channels_;
  Tensor conv_weight_, conv_bias_, linear_weight_, linear_bias_;
};

// --------------------------------------------------------------------------
// Feature sidecar: magic "MVSCFTR1", u32 count, u32 feature_dim, then
// count * feature_dim f32 row-major, paired to a manifest by row order.
// --------------------------------------------------------------------------

inline void save_features(const std::vector<std::vector<double>>& rows,
                          std::size_t feature_dim,
                          const std::filesystem::path& path) {
  BinaryWriter out(path);
  out.magic("MVSCFTR1");
  out.u32(static_cast<std::uint32_t>(rows.size()));
  out.u32(static_cast<std::uint32_t>(feature_dim));
  for (const auto& row : rows) {
    require(row.size() == feature_dim, "save_features: ragged feature rows");
    out.f32_array(row);
  }
  out.close();
}

// Serves rows of a precomputed feature file. The surrogate argument is
// ignored: features produced offline cannot depend on it, so no gradient
// reaches the compressor in this mode.
class SidecarExtractor : public FrozenExtractor {
 public:
  explicit SidecarExtractor(const std::filesystem::path& path) {
    BinaryReader in(path);
    in.expect_magic("MVSCFTR1");
    count_ = in.u32();
    feature_dim_ = in.u32();
    const std::vector<float> raw = in.f32_array(count_ * feature_dim_);
    if (!in.at_eof()) {
      throw CorruptionError("payload longer than header in " + in.path());
    }
    data_.assign(raw.begin(), raw.end());
  }

  Tensor extract(const Tensor& /*surrogate*/,
                 std::size_t sample_index) const override {
    if (sample_index >= count_) {
      throw PairingError("feature sidecar has " + std::to_string(count_) +
                         " rows; sample " + std::to_string(sample_index) +
                         " requested");
    }
    const double* row = data_.data() + sample_index * feature_dim_;
    return Tensor::constant({feature_dim_},
                            std::vector<double>(row, row + feature_dim_));
  }

  std::size_t feature_dim() const override { return feature_dim_; }
  std::size_t count() const { return count_; }

  std::uint64_t checksum() const override {
    return detail::fnv1a(1469598103934665603ULL, data_.data(), data_.size());
  }

 private:
  std::size_t count_ = 0;
  std::size_t feature_dim_ = 0;
  std::vector<double> data_;
};

// --------------------------------------------------------------------------
// Classification head: feature -> 512 -> 256 -> classes, batch
// normalization after the first two linear layers, GELU nonlinearity, no
// normalization after the final layer.
// --------------------------------------------------------------------------

class ClassifierHead {
 public:
  ClassifierHead() = default;

  ClassifierHead(std::size_t in_dim, std::size_t classes, Rng& rng)
      : in_dim_(in_dim), classes_(classes) {
    w1_ = fan_in_uniform({in_dim, 512}, in_dim, rng);
    b1_ = fan_in_uniform({512}, in_dim, rng);
    bn1_gain_ = Tensor::param({512}, std::vector<double>(512, 1.0));
    bn1_bias_ = Tensor::param({512}, std::vector<double>(512, 0.0));
    rm1_.assign(512, 0.0);
    rv1_.assign(512, 1.0);
    w2_ = fan_in_uniform({512, 256}, 512, rng);
    b2_ = fan_in_uniform({256}, 512, rng);
    bn2_gain_ = Tensor::param({256}, std::vector<double>(256, 1.0));
    bn2_bias_ = Tensor::param({256}, std::vector<double>(256, 0.0));
    rm2_.assign(256, 0.0);
    rv2_.assign(256, 1.0);
    w3_ = fan_in_uniform({256, classes}, 256, rng);
    b3_ = fan_in_uniform({classes}, 256, rng);
  }

  // features: [B x in_dim] -> logits [B x classes]. Training mode uses batch
  // statistics and updates the running buffers; evaluation mode uses the
  // running buffers, making each row independent of the batch.
  Tensor forward(const Tensor& features, bool training) {
    check_matrix("ClassifierHead", features);
    if (features.shape()[1] != in_dim_) {
      throw ShapeError("ClassifierHead: feature dim " +
                       std::to_string(features.shape()[1]) + ", expected " +
                       std::to_string(in_dim_));
    }
    Tensor h = add_rowvec(matmul(features, w1_), b1_);
    h = training
            ? batch_norm_train(h, bn1_gain_, bn1_bias_, rm1_, rv1_, momentum_)
            : batch_norm_eval(h, bn1_gain_, bn1_bias_, rm1_, rv1_);
    h = gelu(h);
    h = add_rowvec(matmul(h, w2_), b2_);
    h = training
            ? batch_norm_train(h, bn2_gain_, bn2_bias_, rm2_, rv2_, momentum_)
            : batch_norm_eval(h, bn2_gain_, bn2_bias_, rm2_, rv2_);
    h = gelu(h);
    return add_rowvec(matmul(h, w3_), b3_);
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    return {{"head.fc1.weight", w1_},   {"head.fc1.bias", b1_},
            {"head.bn1.gain", bn1_gain_}, {"head.bn1.bias", bn1_bias_},
            {"head.fc2.weight", w2_},   {"head.fc2.bias", b2_},
            {"head.bn2.gain", bn2_gain_}, {"head.bn2.bias", bn2_bias_},
            {"head.fc3.weight", w3_},   {"head.fc3.bias", b3_}};
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (auto& [name, t] : named_parameters()) total += t.size();
    return total;
  }

  // Running statistics participate in checkpoints but not in optimization.
  std::vector<CheckpointExtra::Entry> buffers() const {
    return {{"head.bn1.running_mean", {rm1_.size()}, rm1_},
            {"head.bn1.running_var", {rv1_.size()}, rv1_},
            {"head.bn2.running_mean", {rm2_.size()}, rm2_},
            {"head.bn2.running_var", {rv2_.size()}, rv2_}};
  }

  void restore_buffer(const std::string& name,
                      const std::vector<double>& data) {
    if (name == "head.bn1.running_mean") {
      rm1_ = data;
    } else if (name == "head.bn1.running_var") {
      rv1_ = data;
    } else if (name == "head.bn2.running_mean") {
      rm2_ = data;
    } else if (name == "head.bn2.running_var") {
      rv2_ = data;
    } else {
      throw CorruptionError("unknown head buffer " + name);
    }
  }

  std::size_t in_dim() const { return in_dim_; }
  std::size_t classes() const { return classes_; }

  // Test hook: zeroing the final layer makes class probabilities uniform.
  void zero_final_layer() {
    Tensor w = w3_, b = b3_;
    std::fill(w.mutable_values().begin(), w.mutable_values().end(), 0.0);
    std::fill(b.mutable_values().begin(), b.mutable_values().end(), 0.0);
  }

 private:
  std::size_t in_dim_ = 0, classes_ = 0;
  double momentum_ = 0.1;
  Tensor w1_, b1_, bn1_gain_, bn1_bias_;
  Tensor w2_, b2_, bn2_gain_, bn2_bias_;
  Tensor w3_, b3_;
  std::vector<double> rm1_, rv1_, rm2_, rv2_;
};

// Logits for a single feature vector in evaluation mode.
inline Tensor classify(const Tensor& feature, ClassifierHead& head) {
  Tensor row = feature.rank() == 1
                   ? reshape(feature, {1, feature.size()})
                   : feature;
  return reshape(head.forward(row, /*training=*/false),
                 {head.classes()});
}

// --------------------------------------------------------------------------
// Deterministic pooling baselines
// --------------------------------------------------------------------------

enum class BaselineMode { kMean, kMax };

// Voxel-wise mean or max across the selected slices, replicated to three
// channels and bilinearly resized to the requested surrogate resolution.
inline Tensor baseline_compress(const Volume& v, BaselineMode mode,
                                const std::vector<std::size_t>& slice_indices,
                                std::size_t out_h, std::size_t out_w) {
  require(!slice_indices.empty(), "baseline_compress: no slices selected");
  const std::size_t h = v.height, w = v.width;
  std::vector<double> reduced(h * w);
  for (std::size_t i = 0; i < h * w; ++i) {
    double acc = (mode == BaselineMode::kMax)
                     ? -std::numeric_limits<double>::infinity()
                     : 0.0;
    for (std::size_t z : slice_indices) {
      if (z >= v.depth) {
        throw ContractError("baseline_compress: slice index out of range");
      }
      const double val = static_cast<double>(v.slice(z)[i]);
      if (mode == BaselineMode::kMax) {
        acc = std::max(acc, val);
      } else {
        acc += val;
      }
    }
    reduced[i] = (mode == BaselineMode::kMax)
                     ? acc
                     : acc / static_cast<double>(slice_indices.size());
  }
  // Bilinear resize (pixel-center alignment); identity when sizes match.
  std::vector<double> resized(out_h * out_w);
  if (out_h == h && out_w == w) {
    resized = reduced;
  } else {
    const double sy = static_cast<double>(h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(w) / static_cast<double>(out_w);
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0,
                                   static_cast<double>(h - 1));
      const auto y0 = static_cast<std::size_t>(fy);
      const std::size_t y1 = std::min(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0,
                                     static_cast<double>(w - 1));
        const auto x0 = static_cast<std::size_t>(fx);
        const std::size_t x1 = std::min(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        const double top = reduced[y0 * w + x0] * (1.0 - wx) +
                           reduced[y0 * w + x1] * wx;
        const double bot = reduced[y1 * w + x0] * (1.0 - wx) +
                           reduced[y1 * w + x1] * wx;
        resized[oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  std::vector<double> stacked(3 * out_h * out_w);
  for (std::size_t c = 0; c < 3; ++c) {
    std::copy(resized.begin(), resized.end(),
              stacked.begin() + static_cast<long>(c * out_h * out_w));
  }
  return Tensor::constant({3, out_h, out_w}, std::move(stacked));
}

}  // namespace mvsc
