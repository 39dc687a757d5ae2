#pragma once

// Per-scan text embedding matrix: one row per selected slice (ascending
// slice order) followed by one volume-level row. Rows are unit-norm. The
// models that would produce real report embeddings run offline; this module
// only ingests their output or synthesizes deterministic stand-ins.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mvsc/errors.hpp"
#include "mvsc/io.hpp"
#include "mvsc/rng.hpp"

namespace mvsc {

struct TextEmbeddings {
  std::size_t rows = 0;  // k + 1
  std::size_t dim = 0;   // d_t
  std::vector<double> matrix;  // row-major [rows x dim]
  // Slice indices this matrix was produced for; used to validate pairing.
  std::vector<std::size_t> slice_indices;

  std::size_t slice_rows() const { return rows == 0 ? 0 : rows - 1; }

  const double* row(std::size_t r) const { return matrix.data() + r * dim; }

  const double* slice_row(std::size_t n) const { return row(n); }
  const double* volume_row() const { return row(rows - 1); }
};

namespace detail {

// Normalizes every row to unit length; zero rows are left untouched so a
// deliberately disabled text channel stays exactly zero.
inline void normalize_rows(TextEmbeddings& e) {
  for (std::size_t r = 0; r < e.rows; ++r) {
    double* row = e.matrix.data() + r * e.dim;
    double norm_sq = 0.0;
    for (std::size_t c = 0; c < e.dim; ++c) norm_sq += row[c] * row[c];
    if (norm_sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (std::size_t c = 0; c < e.dim; ++c) row[c] *= inv;
  }
}

// Overwrites the last row with the normalized mean of the slice rows.
inline void set_volume_row_to_mean(TextEmbeddings& e) {
  const std::size_t k = e.slice_rows();
  double* vol = e.matrix.data() + k * e.dim;
  std::fill(vol, vol + e.dim, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < e.dim; ++c) {
      vol[c] += e.matrix[r * e.dim + c] / static_cast<double>(k);
    }
  }
  double norm_sq = 0.0;
  for (std::size_t c = 0; c < e.dim; ++c) norm_sq += vol[c] * vol[c];
  if (norm_sq > 0.0) {
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (std::size_t c = 0; c < e.dim; ++c) vol[c] *= inv;
  }
}

}  // namespace detail

// --------------------------------------------------------------------------
// File format: magic "MVSCTXT1", u32 rows, u32 d_t, u32 k_indices,
// k_indices u32 slice indices, rows*d_t f32 row-major.
// --------------------------------------------------------------------------

inline void save_embeddings(const TextEmbeddings& e,
                            const std::filesystem::path& path) {
  BinaryWriter out(path);
  out.magic("MVSCTXT1");
  out.u32(static_cast<std::uint32_t>(e.rows));
  out.u32(static_cast<std::uint32_t>(e.dim));
  out.u32(static_cast<std::uint32_t>(e.slice_indices.size()));
  for (std::size_t z : e.slice_indices) {
    out.u32(static_cast<std::uint32_t>(z));
  }
  out.f32_array(e.matrix);
  out.close();
}

// Loads and re-normalizes rows defensively; fails if the row count does not
// pair with the expected selection size.
inline TextEmbeddings load_embeddings(const std::filesystem::path& path,
                                      std::size_t expected_k) {
  BinaryReader in(path);
  in.expect_magic("MVSCTXT1");
  TextEmbeddings e;
  e.rows = in.u32();
  e.dim = in.u32();
  const std::size_t k_indices = in.u32();
  e.slice_indices.resize(k_indices);
  for (std::size_t i = 0; i < k_indices; ++i) e.slice_indices[i] = in.u32();
  if (e.rows != expected_k + 1) {
    throw PairingError("embedding file " + in.path() + " has " +
                       std::to_string(e.rows) + " rows, expected " +
                       std::to_string(expected_k + 1));
  }
  const std::vector<float> raw = in.f32_array(e.rows * e.dim);
  if (!in.at_eof()) {
    throw CorruptionError("payload longer than header in " + in.path());
  }
  e.matrix.assign(raw.begin(), raw.end());
  detail::normalize_rows(e);
  return e;
}

// --------------------------------------------------------------------------
// Synthetic providers
// --------------------------------------------------------------------------

// Pseudo-random unit rows; the volume row is the normalized mean of the
// slice rows so the global text stays tied to the slice texts.
inline TextEmbeddings synth_embeddings(std::uint64_t seed, std::size_t k,
                                       std::size_t dim) {
  require(k >= 1 && dim >= 2, "synth_embeddings: need k >= 1 and d_t >= 2");
  Rng rng(derive_seed(seed, SeedStream::kEmbeddings));
  TextEmbeddings e;
  e.rows = k + 1;
  e.dim = dim;
  e.matrix.assign(e.rows * dim, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      e.matrix[r * dim + c] = rng.normal();
    }
  }
  detail::normalize_rows(e);
  detail::set_volume_row_to_mean(e);
  return e;
}

// Slice rows drawn around a label-specific direction plus isotropic noise.
// Lets tests verify that text guidance can carry class signal.
inline TextEmbeddings label_conditioned_embeddings(std::uint64_t seed,
                                                   std::size_t k,
                                                   std::size_t dim,
                                                   std::size_t label,
                                                   double noise = 0.5) {
  require(k >= 1 && dim >= 2,
          "label_conditioned_embeddings: need k >= 1 and d_t >= 2");
  // The class direction depends on (seed, label) only, not on the volume, so
  // every scan of a class shares it.
  Rng dir_rng(derive_seed(derive_seed(seed, SeedStream::kEmbeddings),
                          0xD1000000ULL + label));
  std::vector<double> direction(dim);
  double dnorm = 0.0;
  for (double& v : direction) {
    v = dir_rng.normal();
    dnorm += v * v;
  }
  dnorm = std::sqrt(dnorm);
  for (double& v : direction) v /= dnorm;

  Rng rng(derive_seed(seed, SeedStream::kEmbeddings));
  TextEmbeddings e;
  e.rows = k + 1;
  e.dim = dim;
  e.matrix.assign(e.rows * dim, 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      e.matrix[r * dim + c] = direction[c] + noise * rng.normal();
    }
  }
  detail::normalize_rows(e);
  detail::set_volume_row_to_mean(e);
  return e;
}

// All-zero matrix of the right shape; disables text influence entirely.
inline TextEmbeddings zero_embeddings(std::size_t k, std::size_t dim) {
  TextEmbeddings e;
  e.rows = k + 1;
  e.dim = dim;
  e.matrix.assign(e.rows * dim, 0.0);
  return e;
}

}  // namespace mvsc
