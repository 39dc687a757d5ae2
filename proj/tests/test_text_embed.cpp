#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "mvsc/text_embed.hpp"

using namespace mvsc;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  const fs::path dir = fs::temp_directory_path() / "mvsc_text_tests";
  fs::create_directories(dir);
  return dir;
}

double row_norm(const TextEmbeddings& e, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < e.dim; ++c) s += e.row(r)[c] * e.row(r)[c];
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("embedding save/load round-trips to float precision") {
  TextEmbeddings e = synth_embeddings(5, 3, 16);
  e.slice_indices = {4, 9, 17};
  const fs::path path = temp_dir() / "roundtrip.mvstxt";
  save_embeddings(e, path);
  TextEmbeddings loaded = load_embeddings(path, 3);
  REQUIRE(loaded.rows == 4);
  REQUIRE(loaded.dim == 16);
  REQUIRE(loaded.slice_indices == e.slice_indices);
  for (std::size_t i = 0; i < e.matrix.size(); ++i) {
    REQUIRE(std::abs(loaded.matrix[i] - e.matrix[i]) < 1e-6);
  }
}

TEST_CASE("load_embeddings rejects a row-count mismatch") {
  TextEmbeddings e = synth_embeddings(5, 3, 8);
  e.slice_indices = {1, 2, 3};
  const fs::path path = temp_dir() / "pairing.mvstxt";
  save_embeddings(e, path);
  REQUIRE_THROWS_AS(load_embeddings(path, 4), PairingError);
}

TEST_CASE("load_embeddings re-normalizes stored rows") {
  TextEmbeddings raw;
  raw.rows = 3;
  raw.dim = 4;
  raw.matrix = {2, 0, 0, 0, 0, 5, 0, 0, 1, 1, 1, 1};
  raw.slice_indices = {0, 1};
  const fs::path path = temp_dir() / "unnormalized.mvstxt";
  save_embeddings(raw, path);
  TextEmbeddings loaded = load_embeddings(path, 2);
  for (std::size_t r = 0; r < loaded.rows; ++r) {
    REQUIRE(row_norm(loaded, r) == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("synth_embeddings is deterministic with unit rows") {
  TextEmbeddings a = synth_embeddings(11, 4, 12);
  TextEmbeddings b = synth_embeddings(11, 4, 12);
  REQUIRE(a.matrix == b.matrix);
  for (std::size_t r = 0; r < a.rows; ++r) {
    REQUIRE(row_norm(a, r) == Catch::Approx(1.0).margin(1e-6));
  }
  TextEmbeddings c = synth_embeddings(12, 4, 12);
  REQUIRE(a.matrix != c.matrix);
}

TEST_CASE("synth volume row is the normalized mean of slice rows") {
  TextEmbeddings e = synth_embeddings(3, 5, 10);
  std::vector<double> mean(10, 0.0);
  for (std::size_t r = 0; r < 5; ++r) {
    for (std::size_t c = 0; c < 10; ++c) mean[c] += e.row(r)[c] / 5.0;
  }
  double norm = 0.0;
  for (double v : mean) norm += v * v;
  norm = std::sqrt(norm);
  for (std::size_t c = 0; c < 10; ++c) {
    REQUIRE(std::abs(e.volume_row()[c] - mean[c] / norm) < 1e-12);
  }
}

TEST_CASE("label-conditioned embeddings separate class directions") {
  const std::size_t k = 8, dim = 24;
  TextEmbeddings a0 = label_conditioned_embeddings(3, k, dim, 0);
  TextEmbeddings a1 = label_conditioned_embeddings(3, k, dim, 1);

  auto class_mean = [&](const TextEmbeddings& e) {
    std::vector<double> m(dim, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < dim; ++c) {
        m[c] += e.row(r)[c] / static_cast<double>(k);
      }
    }
    return m;
  };
  const std::vector<double> m0 = class_mean(a0);
  const std::vector<double> m1 = class_mean(a1);
  double dot = 0.0, n0 = 0.0, n1 = 0.0;
  for (std::size_t c = 0; c < dim; ++c) {
    dot += m0[c] * m1[c];
    n0 += m0[c] * m0[c];
    n1 += m1[c] * m1[c];
  }
  const double cosine = dot / std::sqrt(n0 * n1);
  REQUIRE(cosine < 0.9);

  for (std::size_t r = 0; r < a0.rows; ++r) {
    REQUIRE(row_norm(a0, r) == Catch::Approx(1.0).margin(1e-6));
  }
  TextEmbeddings again = label_conditioned_embeddings(3, k, dim, 0);
  REQUIRE(again.matrix == a0.matrix);
}

TEST_CASE("zero embeddings stay zero") {
  TextEmbeddings z = zero_embeddings(4, 8);
  REQUIRE(z.rows == 5);
  for (double v : z.matrix) REQUIRE(v == 0.0);
}
