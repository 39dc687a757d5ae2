#pragma once

// Ranking metrics. AUC is computed as the Mann-Whitney statistic
// P(score+ > score-) + 0.5 * P(tie) via average ranks, which handles ties
// exactly.

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "mvsc/errors.hpp"

namespace mvsc {

inline double auc(const std::vector<double>& scores,
                  const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "auc: size mismatch");
  std::size_t positives = 0, negatives = 0;
  for (int l : labels) {
    if (l == 1) {
      ++positives;
    } else if (l == 0) {
      ++negatives;
    } else {
      throw ContractError("auc: labels must be 0 or 1");
    }
  }
  if (positives == 0 || negatives == 0) {
    throw UndefinedMetricError("auc: both classes must be present");
  }
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });
  // Average ranks across tie groups, then sum positive ranks.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() &&
           scores[order[j + 1]] == scores[order[i]]) {
      ++j;
    }
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(positives);
  const double nn = static_cast<double>(negatives);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// Unweighted mean of one-vs-rest AUCs. prob_matrix is [n x classes] with
// per-class scores (softmax probabilities). Classes that cannot form a
// one-vs-rest split are excluded and reported through `warnings`.
inline double macro_auc(const std::vector<std::vector<double>>& prob_matrix,
                        const std::vector<std::size_t>& labels,
                        std::vector<std::string>* warnings = nullptr) {
  require(!prob_matrix.empty(), "macro_auc: empty input");
  require(prob_matrix.size() == labels.size(), "macro_auc: size mismatch");
  const std::size_t classes = prob_matrix[0].size();
  std::size_t distinct = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    bool present = false;
    for (std::size_t l : labels) present = present || (l == c);
    distinct += present ? 1 : 0;
  }
  if (distinct < 2) {
    throw UndefinedMetricError("macro_auc: need at least two classes present");
  }
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> scores(labels.size());
    std::vector<int> binary(labels.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      scores[i] = prob_matrix[i][c];
      binary[i] = labels[i] == c ? 1 : 0;
      pos += binary[i];
    }
    if (pos == 0 || pos == labels.size()) {
      if (warnings != nullptr) {
        warnings->push_back("class " + std::to_string(c) +
                            " excluded from macro AUC (one-sided)");
      }
      continue;
    }
    total += auc(scores, binary);
    ++used;
  }
  return total / static_cast<double>(used);
}

inline double accuracy(const std::vector<std::size_t>& predicted,
                       const std::vector<std::size_t>& labels) {
  require(predicted.size() == labels.size() && !labels.empty(),
          "accuracy: size mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hits += predicted[i] == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace mvsc
