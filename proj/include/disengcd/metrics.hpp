#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "disengcd/error.hpp"

namespace disengcd {

struct MetricReport {
  double acc = 0.0;
  double rmse = 0.0;
  std::optional<double> auc;  // absent when only one class is present
  std::size_t n_examples = 0;
  std::string split;
  std::string config_digest;
};

/// Exact AUC by pairwise counting, ties worth 0.5. O(n_pos * n_neg).
inline std::optional<double> auc_pairwise(std::span<const double> scores, std::span<const int> labels) {
  double wins = 0.0;
  std::size_t pos = 0, neg = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    ++pos;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  for (int y : labels) neg += y == 0;
  if (pos == 0 || neg == 0) return std::nullopt;
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Midranks of `values` (1-based), ties share their average rank.
inline std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

/// Mann-Whitney AUC from midranks. O(n log n).
inline std::optional<double> auc_rank(std::span<const double> scores, std::span<const int> labels) {
  const auto ranks = average_ranks(scores);
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (labels[i] == 1) {
      pos_rank_sum += ranks[i];
      ++pos;
    }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

inline constexpr std::size_t kPairwiseAucLimit = 10000;

inline std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  return scores.size() <= kPairwiseAucLimit ? auc_pairwise(scores, labels) : auc_rank(scores, labels);
}

/// ACC at threshold 0.5 (>= 0.5 predicts 1), RMSE of probability vs label, AUC.
inline MetricReport metrics(std::span<const double> predictions, std::span<const int> labels,
                            std::string split = {}) {
  require(predictions.size() == labels.size() && !predictions.empty(), ErrorKind::contract,
          "metrics: predictions and labels must be equal-length and non-empty");
  std::size_t correct = 0;
  double sq = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    require(labels[i] == 0 || labels[i] == 1, ErrorKind::contract, "metrics: labels must be 0 or 1");
    correct += (predictions[i] >= 0.5 ? 1 : 0) == labels[i];
    const double e = predictions[i] - labels[i];
    sq += e * e;
  }
  MetricReport r;
  r.n_examples = predictions.size();
  r.acc = static_cast<double>(correct) / static_cast<double>(r.n_examples);
  r.rmse = std::sqrt(sq / static_cast<double>(r.n_examples));
  r.auc = auc(predictions, labels);
  r.split = std::move(split);
  return r;
}

/// Spearman rank correlation (Pearson correlation of midranks).
inline double spearman(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::contract, "spearman: need two equal-length series");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace disengcd
