#pragma once

// Central cropping, per-slice informativeness scoring, and Top-k selection.
// A slice's score is the plain average of three statistics: histogram
// entropy, mean gradient magnitude, and intensity variance.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mvsc/errors.hpp"
#include "mvsc/io.hpp"
#include "mvsc/volume.hpp"

namespace mvsc {

struct SelectionConfig {
  double crop_lo = 0.2;   // start of the central slice range, fraction of Z
  double crop_hi = 0.8;   // end (exclusive), fraction of Z
  std::size_t top_k = 4;  // number of slices to keep
  std::size_t bins = 64;  // histogram bins on [0, 1]
  double epsilon = 1e-12;  // additive smoothing inside the entropy log
};

struct SliceScores {
  std::vector<std::size_t> slice_index;  // cropped range, ascending
  std::vector<double> entropy;
  std::vector<double> gradient;
  std::vector<double> variance;
  std::vector<double> score;  // (entropy + gradient + variance) / 3
};

// Central crop along z: indices {floor(lo*Z), ..., floor(hi*Z) - 1}.
inline std::vector<std::size_t> crop_range(std::size_t depth, double lo,
                                           double hi) {
  require(depth >= 1, "crop_range: empty volume");
  require(0.0 <= lo && lo < hi && hi <= 1.0,
          "crop_range: need 0 <= lo < hi <= 1");
  const auto z0 = static_cast<std::size_t>(
      std::floor(lo * static_cast<double>(depth)));
  const auto z1 = static_cast<std::size_t>(
      std::floor(hi * static_cast<double>(depth)));
  if (z0 >= z1) throw ContractError("crop_range: cropped range is empty");
  std::vector<std::size_t> range(z1 - z0);
  for (std::size_t i = 0; i < range.size(); ++i) range[i] = z0 + i;
  return range;
}

// Entropy of the intensity histogram over `bins` equal-width bins on [0, 1],
// natural log, smoothed by `epsilon` inside the log. Clamped at zero: the
// smoothing makes a single-bin histogram come out at -epsilon otherwise.
inline double hist_entropy(const float* slice, std::size_t count,
                           std::size_t bins, double epsilon) {
  std::vector<double> hist(bins, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    const double v = std::clamp(static_cast<double>(slice[i]), 0.0, 1.0);
    auto b = static_cast<std::size_t>(v * static_cast<double>(bins));
    if (b >= bins) b = bins - 1;
    hist[b] += 1.0;
  }
  const double inv = 1.0 / static_cast<double>(count);
  double h = 0.0;
  for (double c : hist) {
    const double p = c * inv;
    if (p > 0.0) h -= p * std::log(p + epsilon);
  }
  return std::max(h, 0.0);
}

// Mean gradient magnitude with central differences and replicated borders.
inline double grad_mag_mean(const float* slice, std::size_t height,
                            std::size_t width) {
  require(height >= 2 && width >= 2, "grad_mag_mean: slice too small");
  auto at = [&](std::size_t i, std::size_t j) {
    return static_cast<double>(slice[i * width + j]);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < height; ++i) {
    const std::size_t iu = (i == 0) ? 0 : i - 1;
    const std::size_t id = (i + 1 == height) ? height - 1 : i + 1;
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t jl = (j == 0) ? 0 : j - 1;
      const std::size_t jr = (j + 1 == width) ? width - 1 : j + 1;
      const double gx = 0.5 * (at(i, jr) - at(i, jl));
      const double gy = 0.5 * (at(id, j) - at(iu, j));
      total += std::sqrt(gx * gx + gy * gy);
    }
  }
  return total / static_cast<double>(height * width);
}

// Population variance (divide by H*W).
inline double slice_variance(const float* slice, std::size_t count) {
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double v = static_cast<double>(slice[i]);
    sum += v;
    sum_sq += v * v;
  }
  const double inv = 1.0 / static_cast<double>(count);
  const double mean = sum * inv;
  return std::max(0.0, sum_sq * inv - mean * mean);
}

inline SliceScores score_slices(const Volume& v, const SelectionConfig& cfg) {
  SliceScores s;
  s.slice_index = crop_range(v.depth, cfg.crop_lo, cfg.crop_hi);
  const std::size_t hw = v.slice_size();
  for (std::size_t z : s.slice_index) {
    const float* slice = v.slice(z);
    const double h = hist_entropy(slice, hw, cfg.bins, cfg.epsilon);
    const double g = grad_mag_mean(slice, v.height, v.width);
    const double var = slice_variance(slice, hw);
    s.entropy.push_back(h);
    s.gradient.push_back(g);
    s.variance.push_back(var);
    s.score.push_back((h + g + var) / 3.0);
  }
  return s;
}

// Indices of the k highest-scoring slices in the cropped range. Ties break
// toward the lower slice index; the result is sorted ascending so the
// pairing with per-slice text rows is reproducible.
inline std::vector<std::size_t> select_topk(const Volume& v,
                                            const SelectionConfig& cfg) {
  const SliceScores s = score_slices(v, cfg);
  if (cfg.top_k == 0 || cfg.top_k > s.slice_index.size()) {
    throw ContractError("select_topk: k=" + std::to_string(cfg.top_k) +
                        " outside cropped range of size " +
                        std::to_string(s.slice_index.size()));
  }
  std::vector<std::size_t> order(s.slice_index.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::partial_sort(order.begin(), order.begin() + static_cast<long>(cfg.top_k),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      if (s.score[a] != s.score[b]) {
                        return s.score[a] > s.score[b];
                      }
                      return s.slice_index[a] < s.slice_index[b];
                    });
  std::vector<std::size_t> picked(cfg.top_k);
  for (std::size_t i = 0; i < cfg.top_k; ++i) {
    picked[i] = s.slice_index[order[i]];
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

// Score table as emitted by the CLI: one line per cropped slice,
// "z,H,G,V,s,selected(0|1)".
inline std::string score_table(const Volume& v, const SelectionConfig& cfg) {
  const SliceScores s = score_slices(v, cfg);
  const std::vector<std::size_t> picked = select_topk(v, cfg);
  std::string out;
  for (std::size_t i = 0; i < s.slice_index.size(); ++i) {
    const bool selected =
        std::binary_search(picked.begin(), picked.end(), s.slice_index[i]);
    out += std::to_string(s.slice_index[i]);
    out += ',';
    out += format_double(s.entropy[i]);
    out += ',';
    out += format_double(s.gradient[i]);
    out += ',';
    out += format_double(s.variance[i]);
    out += ',';
    out += format_double(s.score[i]);
    out += ',';
    out += selected ? '1' : '0';
    out += '\n';
  }
  return out;
}

}  // namespace mvsc
