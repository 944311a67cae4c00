#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "lossforge/errors.hpp"

namespace lossforge::metrics {

namespace detail {

inline void check_lengths(std::span<const double> labels, std::span<const double> scores) {
  if (labels.size() != scores.size()) throw ContractError("labels and scores differ in length");
  if (labels.empty()) throw MetricError("metric over an empty batch");
}

}  // namespace detail

/// Global ROC AUC, Mann-Whitney form: (ordered pairs + 0.5 * ties) / (P * N).
inline double auc(std::span<const double> labels, std::span<const double> scores) {
  detail::check_lengths(labels, scores);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks of the positives.
  double rank_sum = 0.0;
  double positives = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] > 0.5) {
        rank_sum += midrank;
        positives += 1.0;
      }
    }
    i = j + 1;
  }
  const double negatives = static_cast<double>(labels.size()) - positives;
  if (positives == 0.0 || negatives == 0.0) throw MetricError("AUC needs both positive and negative labels");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

struct Confusion {
  double tp = 0, fp = 0, tn = 0, fn = 0;
};

inline Confusion confusion(std::span<const double> labels, std::span<const double> scores, double threshold) {
  detail::check_lengths(labels, scores);
  Confusion c;
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const bool predicted = scores[k] >= threshold;
    const bool actual = labels[k] > 0.5;
    if (predicted && actual) c.tp += 1;
    else if (predicted) c.fp += 1;
    else if (actual) c.fn += 1;
    else c.tn += 1;
  }
  return c;
}

/// F1 of score >= threshold; 0 when precision + recall = 0.
inline double f1(std::span<const double> labels, std::span<const double> scores, double threshold = 0.5) {
  const Confusion c = confusion(labels, scores, threshold);
  const double precision = c.tp + c.fp > 0 ? c.tp / (c.tp + c.fp) : 0.0;
  const double recall = c.tp + c.fn > 0 ? c.tp / (c.tp + c.fn) : 0.0;
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

inline double accuracy(std::span<const double> labels, std::span<const double> scores, double threshold = 0.5) {
  const Confusion c = confusion(labels, scores, threshold);
  return (c.tp + c.tn) / static_cast<double>(labels.size());
}

inline double rmse(std::span<const double> labels, std::span<const double> scores) {
  detail::check_lengths(labels, scores);
  double s = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k) s += (labels[k] - scores[k]) * (labels[k] - scores[k]);
  return std::sqrt(s / static_cast<double>(labels.size()));
}

inline double mae(std::span<const double> labels, std::span<const double> scores) {
  detail::check_lengths(labels, scores);
  double s = 0.0;
  for (std::size_t k = 0; k < labels.size(); ++k) s += std::fabs(labels[k] - scores[k]);
  return s / static_cast<double>(labels.size());
}

}  // namespace lossforge::metrics
