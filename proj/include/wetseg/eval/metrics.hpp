// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wetseg/losses/losses.hpp"
#include "wetseg/rascore/class_scheme.hpp"
#include "wetseg/tensor/tensor.hpp"

namespace wetseg::eval {

/// Fraction of elements with |pred - target| <= tol.
double reconstruction_accuracy(std::span<const float> pred, std::span<const float> target,
                               double tol = 0.05);
/// 10 log10(1 / MSE) with peak 1; +infinity when MSE is zero.
double psnr(std::span<const float> pred, std::span<const float> target);

/// C[true][pred] counts over a fixed number of classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = 0) : classes_(classes), counts_(classes * classes, 0) {}

  int classes() const { return classes_; }
  std::uint64_t at(int truth, int pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t total() const;
  /// Pixels whose truth is kUnlabeled are skipped. Throws DataError on ids
  /// outside [0, classes).
  void add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred);
  void merge(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int classes_;
  std::vector<std::uint64_t> counts_;
};

struct ClassMetrics {
  int id = 0;
  std::string label;
  std::uint64_t support = 0;    // row sum
  std::uint64_t predicted = 0;  // column sum
  double precision = 0, recall = 0, dice = 0, iou = 0;
  bool included = false;  // support or prediction nonzero
};

struct SegmentationMetrics {
  double overall_accuracy = 0;
  double weighted_accuracy = 0;
  double macro_dice = 0, macro_iou = 0, macro_precision = 0, macro_recall = 0;
  std::optional<double> dice_loss;  // filled by evaluate()
  std::vector<ClassMetrics> per_class;
  ConfusionMatrix confusion;
};

/// Per-class and macro metrics; macro averages run over classes present in
/// the truth or the prediction.
SegmentationMetrics segmentation_metrics(const ConfusionMatrix& c, const ClassScheme& scheme);
SegmentationMetrics segmentation_metrics(std::span<const std::uint8_t> pred,
                                         std::span<const std::uint8_t> truth,
                                         const ClassScheme& scheme);

struct ReconstructionMetrics {
  double accuracy = 0;
  double psnr = 0;
  double ssim = 0;
  double huber = 0;
  double ssim_loss = 0;
  double edge_loss = 0;
  double mixed_loss = 0;
};

/// Sums element counts and squared errors across images so that the final
/// accuracy and PSNR are global, and averages the per-image losses.
class ReconstructionAccumulator {
 public:
  explicit ReconstructionAccumulator(double tol = 0.05, losses::MixedLossWeights weights = {},
                                     losses::SsimOptions ssim = {})
      : tol_(tol), weights_(weights), ssim_opts_(ssim) {}
  /// pred and target are (N, C, H, W) in [0, 1].
  void add(const nn::Tensor& pred, const nn::Tensor& target);
  ReconstructionMetrics result() const;
  std::size_t images() const { return images_; }

 private:
  double tol_;
  losses::MixedLossWeights weights_;
  losses::SsimOptions ssim_opts_;
  std::uint64_t elements_ = 0, within_ = 0;
  double sq_error_ = 0;
  double ssim_ = 0, huber_ = 0, edge_ = 0;
  std::size_t images_ = 0;
};

/// JSON numbers cannot hold infinity; +inf is written as the string "inf".
nlohmann::json number_or_inf(double v);

void to_json(nlohmann::json& j, const ConfusionMatrix& c);
void to_json(nlohmann::json& j, const SegmentationMetrics& m);
void to_json(nlohmann::json& j, const ReconstructionMetrics& m);

}  // namespace wetseg::eval
