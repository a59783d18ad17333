// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "wetseg/eval/metrics.hpp"

namespace wetseg::testing {

// Per-pixel counting, written without a confusion matrix.
struct OracleMetrics {
  std::vector<std::vector<std::uint64_t>> confusion;
  double accuracy = 0, weighted = 0;
  double macro_precision = 0, macro_recall = 0, macro_dice = 0, macro_iou = 0;
  std::vector<double> precision, recall, dice, iou;
};

inline OracleMetrics metric_oracle(std::span<const std::uint8_t> truth,
                                   std::span<const std::uint8_t> pred, int k) {
  OracleMetrics o;
  o.confusion.assign(k, std::vector<std::uint64_t>(k, 0));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      for (std::size_t p = 0; p < truth.size(); ++p)
        o.confusion[i][j] += truth[p] == i && pred[p] == j;
  std::uint64_t labeled = 0, correct = 0;
  for (std::size_t p = 0; p < truth.size(); ++p) {
    if (truth[p] == 255) continue;
    ++labeled;
    correct += truth[p] == pred[p];
  }
  o.accuracy = labeled ? double(correct) / labeled : 0.0;
  int present = 0;
  for (int c = 0; c < k; ++c) {
    std::uint64_t tp = 0, fp = 0, fn = 0;
    for (std::size_t p = 0; p < truth.size(); ++p) {
      if (truth[p] == 255) continue;
      tp += truth[p] == c && pred[p] == c;
      fp += truth[p] != c && pred[p] == c;
      fn += truth[p] == c && pred[p] != c;
    }
    const double prec = tp + fp ? double(tp) / (tp + fp) : 0.0;
    const double rec = tp + fn ? double(tp) / (tp + fn) : 0.0;
    const double d = tp + fp + fn ? 2.0 * tp / (2.0 * tp + fp + fn) : 0.0;
    const double j = tp + fp + fn ? double(tp) / (tp + fp + fn) : 0.0;
    o.precision.push_back(prec);
    o.recall.push_back(rec);
    o.dice.push_back(d);
    o.iou.push_back(j);
    if (labeled) o.weighted += double(tp + fn) / labeled * rec;
    if (tp + fp + fn > 0) {
      ++present;
      o.macro_precision += prec;
      o.macro_recall += rec;
      o.macro_dice += d;
      o.macro_iou += j;
    }
  }
  if (present) {
    o.macro_precision /= present;
    o.macro_recall /= present;
    o.macro_dice /= present;
    o.macro_iou /= present;
  }
  return o;
}

// Empty string when everything agrees; otherwise the first difference.
// Counts must match exactly, derived ratios to 1e-12.
inline std::string compare_with_oracle(const eval::SegmentationMetrics& m, const OracleMetrics& o) {
  const int k = static_cast<int>(o.confusion.size());
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (m.confusion.at(i, j) != o.confusion[i][j])
        return "confusion[" + std::to_string(i) + "][" + std::to_string(j) + "]";
  auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
  if (!near(m.overall_accuracy, o.accuracy)) return "overall_accuracy";
  if (!near(m.weighted_accuracy, o.weighted)) return "weighted_accuracy";
  if (!near(m.macro_precision, o.macro_precision)) return "macro_precision";
  if (!near(m.macro_recall, o.macro_recall)) return "macro_recall";
  if (!near(m.macro_dice, o.macro_dice)) return "macro_dice";
  if (!near(m.macro_iou, o.macro_iou)) return "macro_iou";
  for (int c = 0; c < k; ++c) {
    const auto& pc = m.per_class[c];
    if (!near(pc.precision, o.precision[c]) || !near(pc.recall, o.recall[c]) ||
        !near(pc.dice, o.dice[c]) || !near(pc.iou, o.iou[c]))
      return "class " + std::to_string(c);
  }
  return {};
}

}  // namespace wetseg::testing
