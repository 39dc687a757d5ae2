#pragma once

// The surrogate compressor. A scan's selected slices are patch-encoded,
// augmented with a learnable volume-summary residual, contextualized per
// slice, tied to their text rows, fused across slices patch by patch under
// the guidance of learned global-context tokens, and decoded back to a
// three-channel 2D image that a frozen 2D feature extractor can consume.

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mvsc/errors.hpp"
#include "mvsc/io.hpp"
#include "mvsc/rng.hpp"
#include "mvsc/tensor.hpp"
#include "mvsc/text_embed.hpp"
#include "mvsc/volume.hpp"

namespace mvsc {

struct NetworkConfig {
  std::size_t dim = 32;        // token width d
  std::size_t global_tokens = 4;  // K; 0 disables the global context path
  std::size_t patch = 16;      // patch size == conv kernel == stride
  std::size_t text_dim = 32;   // d_t
  std::size_t heads = 1;       // attention heads; d % heads == 0

  static std::size_t default_heads(std::size_t dim) {
    return dim >= 32 ? dim / 32 : 1;
  }
};

// Captures attention weights for inspection; rows of each captured matrix
// are softmax outputs and must sum to 1.
struct AttentionProbe {
  std::vector<Tensor> weights;
};

// --------------------------------------------------------------------------
// Attention blocks
// --------------------------------------------------------------------------

namespace detail {

struct LinearMap {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]; undefined when the map is bias-free

  Tensor apply(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_rowvec(y, bias) : y;
  }
};

inline LinearMap make_linear(std::size_t in, std::size_t out, Rng& rng,
                             bool with_bias = true) {
  LinearMap m;
  m.weight = fan_in_uniform({in, out}, in, rng);
  if (with_bias) m.bias = fan_in_uniform({out}, in, rng);
  return m;
}

// Zero-initialized, bias-free map. Used for every path that injects text or
// volume-summary signal: at initialization those paths contribute exactly
// nothing, so the surrogate is independent of the conditioning inputs until
// training turns them on.
inline LinearMap make_zero_linear(std::size_t in, std::size_t out) {
  LinearMap m;
  m.weight = Tensor::param({in, out}, std::vector<double>(in * out, 0.0));
  return m;
}

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

inline LayerNormParams make_layer_norm(std::size_t dim) {
  LayerNormParams p;
  p.gain = Tensor::param({dim}, std::vector<double>(dim, 1.0));
  p.bias = Tensor::param({dim}, std::vector<double>(dim, 0.0));
  return p;
}

// Multi-head scaled dot-product attention. queries: [Q x d], context:
// [M x d]; returns [Q x d]. Projections are full-width; heads are column
// slices of the projected tensors.
struct AttentionParams {
  LinearMap q, k, v, out;
  std::size_t heads = 1;

  Tensor attend(const Tensor& queries, const Tensor& context,
                AttentionProbe* probe = nullptr) const {
    const std::size_t d = q.weight.shape()[1];
    const std::size_t head_dim = d / heads;
    Tensor qp = q.apply(queries);
    Tensor kp = k.apply(context);
    Tensor vp = v.apply(context);
    std::vector<Tensor> head_outputs;
    head_outputs.reserve(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (std::size_t h = 0; h < heads; ++h) {
      Tensor qh = slice_cols(qp, h * head_dim, (h + 1) * head_dim);
      Tensor kh = slice_cols(kp, h * head_dim, (h + 1) * head_dim);
      Tensor vh = slice_cols(vp, h * head_dim, (h + 1) * head_dim);
      Tensor weights =
          softmax(mvsc::scale(matmul(qh, transpose(kh)), scale), 1);
      if (probe != nullptr) probe->weights.push_back(weights);
      head_outputs.push_back(matmul(weights, vh));
    }
    Tensor merged =
        heads == 1 ? head_outputs[0] : concat_cols(head_outputs);
    return out.apply(merged);
  }
};

inline AttentionParams make_attention(std::size_t dim, std::size_t heads,
                                      Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention: dim " + std::to_string(dim) +
                     " not divisible by heads " + std::to_string(heads));
  }
  AttentionParams p;
  p.q = make_linear(dim, dim, rng);
  // No key bias: a constant added to every key shifts each query's scores
  // uniformly, which softmax cancels, leaving the parameter gradient-free.
  p.k = make_linear(dim, dim, rng, /*with_bias=*/false);
  p.v = make_linear(dim, dim, rng);
  p.out = make_linear(dim, dim, rng);
  p.heads = heads;
  return p;
}

}  // namespace detail

// Pre-normalized self-attention with a residual connection:
// y = x + Attn(LN(x), LN(x)).
struct SelfAttentionBlock {
  detail::LayerNormParams norm;
  detail::AttentionParams attn;

  Tensor forward(const Tensor& x, AttentionProbe* probe = nullptr) const {
    Tensor normed = layer_norm(x, norm.gain, norm.bias);
    return add(x, attn.attend(normed, normed, probe));
  }
};

// Pre-normalized cross-attention without a residual: the output is purely
// the output-projected attention readout, so a single-key call returns the
// projected value of that key regardless of the query.
struct CrossAttentionBlock {
  detail::LayerNormParams norm_q;
  detail::LayerNormParams norm_kv;
  detail::AttentionParams attn;

  Tensor forward(const Tensor& queries, const Tensor& context,
                 AttentionProbe* probe = nullptr) const {
    return attn.attend(layer_norm(queries, norm_q.gain, norm_q.bias),
                       layer_norm(context, norm_kv.gain, norm_kv.bias), probe);
  }
};

// --------------------------------------------------------------------------
// Model parameters
// --------------------------------------------------------------------------

struct SurrogateModel {
  NetworkConfig cfg;

  // Patch encoder: conv over the 3 input channels, kernel == stride.
  Tensor encoder_weight;  // [d x 3 x s x s]
  Tensor encoder_bias;    // [d]

  // Residual augmentation from the per-channel volume summary.
  detail::LinearMap summary_proj;  // 3 -> d
  Tensor summary_gate;             // learnable scalar, initialized to 0

  // Text projections (all zero-initialized, bias-free).
  detail::LinearMap text_proj_global;  // d_t -> d, produces g
  detail::LinearMap text_proj_slice;   // d_t -> d, per-slice injection
  detail::LinearMap film_scale;        // d -> d on g; gamma = 1 + ...
  detail::LinearMap film_shift;        // d -> d on g

  // Global context: K learned queries cross-attending over all tokens.
  Tensor global_queries;  // [K x d]; undefined when K == 0
  CrossAttentionBlock global_attn;  // unused when K == 0

  // Per-slice self-attention and the patch-aligned fusion attention.
  SelfAttentionBlock slice_attn;
  CrossAttentionBlock fuse_attn;

  // Decoder back to three channels, kernel == stride.
  Tensor decoder_weight;  // [d x 3 x s x s]
  Tensor decoder_bias;    // [3]

  static SurrogateModel init(const NetworkConfig& cfg, Rng& rng) {
    if (cfg.heads == 0 || cfg.dim % cfg.heads != 0) {
      throw ValidationError("network: dim must be divisible by heads");
    }
    SurrogateModel m;
    m.cfg = cfg;
    const std::size_t d = cfg.dim, s = cfg.patch;
    m.encoder_weight = fan_in_uniform({d, 3, s, s}, 3 * s * s, rng);
    m.encoder_bias = fan_in_uniform({d}, 3 * s * s, rng);
    m.summary_proj = detail::make_linear(3, d, rng);
    m.summary_gate = Tensor::param({1}, {0.0});
    m.text_proj_global = detail::make_zero_linear(cfg.text_dim, d);
    m.text_proj_slice = detail::make_zero_linear(cfg.text_dim, d);
    m.film_scale = detail::make_zero_linear(d, d);
    m.film_shift = detail::make_zero_linear(d, d);
    if (cfg.global_tokens > 0) {
      m.global_queries = randn({cfg.global_tokens, d}, rng, 0.02);
      m.global_attn.norm_q = detail::make_layer_norm(d);
      m.global_attn.norm_kv = detail::make_layer_norm(d);
      m.global_attn.attn = detail::make_attention(d, cfg.heads, rng);
    }
    m.slice_attn.norm = detail::make_layer_norm(d);
    m.slice_attn.attn = detail::make_attention(d, cfg.heads, rng);
    m.fuse_attn.norm_q = detail::make_layer_norm(d);
    m.fuse_attn.norm_kv = detail::make_layer_norm(d);
    m.fuse_attn.attn = detail::make_attention(d, cfg.heads, rng);
    m.decoder_weight = fan_in_uniform({d, 3, s, s}, d, rng);
    m.decoder_bias = fan_in_uniform({3}, d, rng);
    return m;
  }

  // Stable enumeration order; this order is the checkpoint and optimizer
  // contract.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> params;
    auto push = [&params](const std::string& name, const Tensor& t) {
      if (t.defined()) params.emplace_back(name, t);
    };
    auto push_attention = [&push](const std::string& prefix,
                                  const detail::AttentionParams& a) {
      push(prefix + ".q.weight", a.q.weight);
      push(prefix + ".q.bias", a.q.bias);
      push(prefix + ".k.weight", a.k.weight);
      push(prefix + ".k.bias", a.k.bias);
      push(prefix + ".v.weight", a.v.weight);
      push(prefix + ".v.bias", a.v.bias);
      push(prefix + ".out.weight", a.out.weight);
      push(prefix + ".out.bias", a.out.bias);
    };
    push("encoder.weight", encoder_weight);
    push("encoder.bias", encoder_bias);
    push("summary.proj.weight", summary_proj.weight);
    push("summary.proj.bias", summary_proj.bias);
    push("summary.gate", summary_gate);
    push("text.global.weight", text_proj_global.weight);
    push("text.slice.weight", text_proj_slice.weight);
    push("film.scale.weight", film_scale.weight);
    push("film.shift.weight", film_shift.weight);
    if (cfg.global_tokens > 0) {
      push("global.queries", global_queries);
      push("global.norm_q.gain", global_attn.norm_q.gain);
      push("global.norm_q.bias", global_attn.norm_q.bias);
      push("global.norm_kv.gain", global_attn.norm_kv.gain);
      push("global.norm_kv.bias", global_attn.norm_kv.bias);
      push_attention("global.attn", global_attn.attn);
    }
    push("slice.norm.gain", slice_attn.norm.gain);
    push("slice.norm.bias", slice_attn.norm.bias);
    push_attention("slice.attn", slice_attn.attn);
    push("fuse.norm_q.gain", fuse_attn.norm_q.gain);
    push("fuse.norm_q.bias", fuse_attn.norm_q.bias);
    push("fuse.norm_kv.gain", fuse_attn.norm_kv.gain);
    push("fuse.norm_kv.bias", fuse_attn.norm_kv.bias);
    push_attention("fuse.attn", fuse_attn.attn);
    push("decoder.weight", decoder_weight);
    push("decoder.bias", decoder_bias);
    return params;
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
};

// --------------------------------------------------------------------------
// Forward stages
// --------------------------------------------------------------------------

// One [P x d] token matrix per slice, spatial grid flattened row-major.
// The grid must be square so the decoder can restore a 2D layout.
inline std::vector<Tensor> encode_patches(
    const std::vector<ChannelStack>& stacks, const SurrogateModel& m) {
  require(!stacks.empty(), "encode_patches: no slices");
  const std::size_t s = m.cfg.patch;
  const std::size_t h = stacks[0].height, w = stacks[0].width;
  if (h % s != 0 || w % s != 0) {
    throw ShapeError("encode_patches: slice " + std::to_string(h) + "x" +
                     std::to_string(w) + " not divisible by patch " +
                     std::to_string(s));
  }
  if (h / s != w / s) {
    throw ShapeError("encode_patches: patch grid must be square");
  }
  std::vector<Tensor> grid;
  grid.reserve(stacks.size());
  for (const ChannelStack& stack : stacks) {
    Tensor features =
        conv2d(stack.to_tensor(), m.encoder_weight, m.encoder_bias, s);
    const std::size_t p = features.shape()[1] * features.shape()[2];
    grid.push_back(transpose(reshape(features, {m.cfg.dim, p})));
  }
  return grid;
}

// x <- x + gate * proj(summary). The gate starts at zero, so the grid is
// untouched at initialization.
inline std::vector<Tensor> residual_augment(
    const std::vector<Tensor>& grid, const std::array<double, 3>& summary,
    const SurrogateModel& m) {
  Tensor summary_row =
      Tensor::constant({1, 3}, {summary[0], summary[1], summary[2]});
  Tensor shift = reshape(
      scale_by(m.summary_proj.apply(summary_row), m.summary_gate),
      {m.cfg.dim});
  std::vector<Tensor> out;
  out.reserve(grid.size());
  for (const Tensor& tokens : grid) out.push_back(add_rowvec(tokens, shift));
  return out;
}

// Projected volume-level text feature g, shape [1 x d].
inline Tensor project_global_text(const TextEmbeddings& e,
                                  const SurrogateModel& m) {
  if (e.dim != m.cfg.text_dim) {
    throw PairingError("text dim " + std::to_string(e.dim) +
                       " does not match model text_dim " +
                       std::to_string(m.cfg.text_dim));
  }
  Tensor vol_row = Tensor::constant(
      {1, e.dim},
      std::vector<double>(e.volume_row(), e.volume_row() + e.dim));
  return m.text_proj_global.apply(vol_row);
}

// K global context tokens: learned queries, shifted by g, attending over
// every token of every slice.
inline Tensor global_context(const std::vector<Tensor>& grid,
                             const Tensor& g, const SurrogateModel& m,
                             AttentionProbe* probe = nullptr) {
  require(m.cfg.global_tokens > 0, "global_context: model has no queries");
  // g broadcasts to every query row.
  Tensor queries =
      add_rowvec(m.global_queries, reshape(g, {m.cfg.dim}));
  Tensor all_tokens = concat_rows(grid);
  return m.global_attn.forward(queries, all_tokens, probe);
}

// Adds the projected slice text row to every patch token of its slice.
inline std::vector<Tensor> inject_slice_text(const std::vector<Tensor>& grid,
                                             const TextEmbeddings& e,
                                             const SurrogateModel& m) {
  if (e.slice_rows() != grid.size()) {
    throw PairingError("slice count " + std::to_string(grid.size()) +
                       " does not pair with " +
                       std::to_string(e.slice_rows()) + " text rows");
  }
  std::vector<Tensor> out;
  out.reserve(grid.size());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    Tensor text_row = Tensor::constant(
        {1, e.dim},
        std::vector<double>(e.slice_row(n), e.slice_row(n) + e.dim));
    Tensor shift = reshape(m.text_proj_slice.apply(text_row), {m.cfg.dim});
    out.push_back(add_rowvec(grid[n], shift));
  }
  return out;
}

// Mean of the contextualized tokens across slices, one row per patch index.
inline Tensor reference_tokens(const std::vector<Tensor>& grid) {
  require(!grid.empty(), "reference_tokens: no slices");
  Tensor acc = grid[0];
  for (std::size_t n = 1; n < grid.size(); ++n) acc = add(acc, grid[n]);
  return scale(acc, 1.0 / static_cast<double>(grid.size()));
}

// Feature-wise modulation of the reference tokens by the global text:
// r' = (1 + scale(g)) . r + shift(g). Exact identity at initialization.
inline Tensor film_modulate(const Tensor& refs, const Tensor& g,
                            const SurrogateModel& m) {
  Tensor gamma = reshape(
      add_scalar(m.film_scale.apply(g), 1.0), {m.cfg.dim});
  Tensor beta = reshape(m.film_shift.apply(g), {m.cfg.dim});
  return add_rowvec(mul_rowvec(refs, gamma), beta);
}

// Keys/values for patch index p: that patch's token from every slice, then
// the K global rows.
inline Tensor build_slice_set(const std::vector<Tensor>& injected,
                              std::size_t p, const Tensor& context) {
  std::vector<Tensor> rows;
  rows.reserve(injected.size() + 1);
  for (const Tensor& tokens : injected) {
    rows.push_back(gather_rows(tokens, {p}));
  }
  if (context.defined()) rows.push_back(context);
  return concat_rows(rows);
}

// Single-query fusion over one patch-aligned set.
inline Tensor fuse_patch(const Tensor& query_row, const Tensor& slice_set,
                         const SurrogateModel& m,
                         AttentionProbe* probe = nullptr) {
  return m.fuse_attn.forward(query_row, slice_set, probe);
}

// Fused tokens [P x d] -> [3 x sqrt(P)*s x sqrt(P)*s].
inline Tensor decode_surrogate(const Tensor& fused, const SurrogateModel& m) {
  check_matrix("decode_surrogate", fused);
  const std::size_t p = fused.shape()[0];
  const auto side = static_cast<std::size_t>(std::llround(std::sqrt(
      static_cast<double>(p))));
  if (side * side != p) {
    throw ShapeError("decode_surrogate: token count " + std::to_string(p) +
                     " is not a perfect square");
  }
  Tensor grid2d = reshape(transpose(fused), {m.cfg.dim, side, side});
  return conv_transpose2d(grid2d, m.decoder_weight, m.decoder_bias,
                          m.cfg.patch);
}

// --------------------------------------------------------------------------
// Full forward pass
// --------------------------------------------------------------------------

// Precomputed per-scan inputs; everything the forward needs besides the
// model parameters. Building these once per scan keeps training loops from
// re-sorting voxels every step.
struct ScanInputs {
  std::vector<ChannelStack> stacks;     // selected slices, ascending order
  std::array<double, 3> summary{};      // per-channel volume means
  TextEmbeddings text;

  static ScanInputs prepare(const Volume& v, const TextEmbeddings& e) {
    require(!e.slice_indices.empty(),
            "ScanInputs: embeddings carry no slice indices");
    require(e.slice_indices.size() == e.slice_rows(),
            "ScanInputs: slice indices do not pair with text rows");
    ScanInputs in;
    in.stacks = stack_channels(v, e.slice_indices);
    in.summary = channel_summary(v);
    in.text = e;
    return in;
  }
};

inline Tensor mvsc_forward_prepared(const ScanInputs& in,
                                    const SurrogateModel& m,
                                    AttentionProbe* probe = nullptr) {
  std::vector<Tensor> grid = encode_patches(in.stacks, m);
  grid = residual_augment(grid, in.summary, m);
  Tensor g = project_global_text(in.text, m);

  std::vector<Tensor> contextualized;
  contextualized.reserve(grid.size());
  for (const Tensor& tokens : grid) {
    contextualized.push_back(m.slice_attn.forward(tokens, probe));
  }

  Tensor context;  // [K x d] when the global path is enabled
  if (m.cfg.global_tokens > 0) context = global_context(grid, g, m, probe);

  std::vector<Tensor> injected = inject_slice_text(contextualized, in.text, m);
  Tensor refs = film_modulate(reference_tokens(contextualized), g, m);

  const std::size_t patches = grid[0].shape()[0];
  std::vector<Tensor> fused;
  fused.reserve(patches);
  for (std::size_t p = 0; p < patches; ++p) {
    Tensor set = build_slice_set(injected, p, context);
    fused.push_back(fuse_patch(gather_rows(refs, {p}), set, m, probe));
  }
  return decode_surrogate(concat_rows(fused), m);
}

// Volume + paired text -> three-channel surrogate. Selection must already
// be recorded in the embeddings' slice indices.
inline Tensor mvsc_forward(const Volume& v, const TextEmbeddings& e,
                           const SurrogateModel& m,
                           AttentionProbe* probe = nullptr) {
  return mvsc_forward_prepared(ScanInputs::prepare(v, e), m, probe);
}

// --------------------------------------------------------------------------
// Checkpoint container: magic "MVSCMDL1", a config echo, then named f32
// tensors. Doubles are narrowed to f32 on disk.
// --------------------------------------------------------------------------

struct CheckpointExtra {
  // Additional named tensors (classifier head, normalization buffers).
  struct Entry {
    std::string name;
    Shape shape;
    std::vector<double> data;
  };
  std::vector<Entry> entries;

  void add(std::string name, Shape shape, std::vector<double> data) {
    entries.push_back({std::move(name), std::move(shape), std::move(data)});
  }
};

struct CheckpointMeta {
  NetworkConfig net;
  std::size_t feature_dim = 0;
  std::size_t classes = 0;
  std::size_t top_k = 0;
  std::uint64_t extractor_seed = 0;
};

inline void save_checkpoint(const std::filesystem::path& path,
                            const CheckpointMeta& meta,
                            const SurrogateModel& model,
                            const CheckpointExtra& extra) {
  BinaryWriter out(path);
  out.magic("MVSCMDL1");
  out.u32(1);  // version
  out.u32(static_cast<std::uint32_t>(meta.net.dim));
  out.u32(static_cast<std::uint32_t>(meta.net.global_tokens));
  out.u32(static_cast<std::uint32_t>(meta.net.patch));
  out.u32(static_cast<std::uint32_t>(meta.net.text_dim));
  out.u32(static_cast<std::uint32_t>(meta.net.heads));
  out.u32(static_cast<std::uint32_t>(meta.feature_dim));
  out.u32(static_cast<std::uint32_t>(meta.classes));
  out.u32(static_cast<std::uint32_t>(meta.top_k));
  out.u64(meta.extractor_seed);
  const auto params = model.named_parameters();
  out.u32(static_cast<std::uint32_t>(params.size() + extra.entries.size()));
  auto write_tensor = [&out](const std::string& name, const Shape& shape,
                             const std::vector<double>& data) {
    out.u32(static_cast<std::uint32_t>(name.size()));
    out.bytes(name);
    out.u32(static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) out.u32(static_cast<std::uint32_t>(d));
    out.f32_array(data);
  };
  for (const auto& [name, t] : params) {
    write_tensor(name, t.shape(), t.values());
  }
  for (const auto& e : extra.entries) {
    write_tensor(e.name, e.shape, e.data);
  }
  out.close();
}

struct LoadedCheckpoint {
  CheckpointMeta meta;
  std::map<std::string, std::pair<Shape, std::vector<double>>> tensors;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  BinaryReader in(path);
  in.expect_magic("MVSCMDL1");
  const std::uint32_t version = in.u32();
  if (version != 1) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version) + " in " + in.path());
  }
  LoadedCheckpoint ckpt;
  ckpt.meta.net.dim = in.u32();
  ckpt.meta.net.global_tokens = in.u32();
  ckpt.meta.net.patch = in.u32();
  ckpt.meta.net.text_dim = in.u32();
  ckpt.meta.net.heads = in.u32();
  ckpt.meta.feature_dim = in.u32();
  ckpt.meta.classes = in.u32();
  ckpt.meta.top_k = in.u32();
  ckpt.meta.extractor_seed = in.u64();
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = in.u32();
    const std::string name = in.bytes(name_len);
    const std::uint32_t ndim = in.u32();
    Shape shape(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) shape[d] = in.u32();
    const std::vector<float> raw = in.f32_array(numel(shape));
    ckpt.tensors[name] = {shape,
                          std::vector<double>(raw.begin(), raw.end())};
  }
  return ckpt;
}

// Restores a model from a loaded checkpoint; every model parameter must be
// present with a matching shape.
inline SurrogateModel restore_model(const LoadedCheckpoint& ckpt) {
  Rng rng(0);  // values are overwritten below
  SurrogateModel m = SurrogateModel::init(ckpt.meta.net, rng);
  for (auto& [name, t] : m.named_parameters()) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) {
      throw CorruptionError("checkpoint missing tensor " + name);
    }
    if (it->second.first != t.shape()) {
      throw CorruptionError("checkpoint tensor " + name + " has shape " +
                            shape_str(it->second.first) + ", expected " +
                            shape_str(t.shape()));
    }
    Tensor mutable_t = t;
    mutable_t.mutable_values() = it->second.second;
  }
  return m;
}

}  // namespace mvsc
