// SPDX-License-Identifier: Apache-2.0
#include "wetseg/eval/metrics.hpp"

#include <cmath>
#include <numeric>

#include "wetseg/error.hpp"
#include "wetseg/losses/losses.hpp"

namespace wetseg::eval {

namespace {

void require_same_size(std::size_t a, std::size_t b, const char* op) {
  if (a != b)
    throw DataError(std::string(op) + ": size mismatch " + std::to_string(a) + " vs " +
                    std::to_string(b));
}

}  // namespace

double reconstruction_accuracy(std::span<const float> pred, std::span<const float> target,
                               double tol) {
  require_same_size(pred.size(), target.size(), "reconstruction_accuracy");
  if (pred.empty()) throw DataError("reconstruction_accuracy: empty input");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += std::abs(double{pred[i]} - target[i]) <= tol;
  return static_cast<double>(ok) / pred.size();
}

double psnr(std::span<const float> pred, std::span<const float> target) {
  require_same_size(pred.size(), target.size(), "psnr");
  if (pred.empty()) throw DataError("psnr: empty input");
  double se = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = double{pred[i]} - target[i];
    se += e * e;
  }
  const double mse = se / pred.size();
  return mse == 0.0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(mse);
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

void ConfusionMatrix::add(std::span<const std::uint8_t> truth, std::span<const std::uint8_t> pred) {
  require_same_size(truth.size(), pred.size(), "confusion matrix");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == kUnlabeled) continue;
    if (truth[i] >= classes_ || pred[i] >= classes_)
      throw DataError("class id " + std::to_string(std::max(truth[i], pred[i])) +
                      " outside a scheme of " + std::to_string(classes_) + " classes");
    ++counts_[truth[i] * classes_ + pred[i]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw DataError("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

SegmentationMetrics segmentation_metrics(const ConfusionMatrix& c, const ClassScheme& scheme) {
  if (static_cast<std::size_t>(c.classes()) != scheme.size())
    throw DataError("confusion matrix has " + std::to_string(c.classes()) + " classes, scheme '" +
                    scheme.name + "' has " + std::to_string(scheme.size()));
  SegmentationMetrics m;
  m.confusion = c;
  const int k = c.classes();
  const double total = static_cast<double>(c.total());
  std::uint64_t trace = 0;
  int included = 0;
  for (int i = 0; i < k; ++i) {
    ClassMetrics cm;
    cm.id = i;
    cm.label = scheme[i].label;
    for (int j = 0; j < k; ++j) {
      cm.support += c.at(i, j);
      cm.predicted += c.at(j, i);
    }
    const double tp = static_cast<double>(c.at(i, i));
    trace += c.at(i, i);
    cm.precision = cm.predicted ? tp / cm.predicted : 0.0;
    cm.recall = cm.support ? tp / cm.support : 0.0;
    const double denom = static_cast<double>(cm.support + cm.predicted);
    cm.dice = denom > 0 ? 2 * tp / denom : 0.0;
    cm.iou = denom - tp > 0 ? tp / (denom - tp) : 0.0;
    cm.included = cm.support + cm.predicted > 0;
    if (cm.included) {
      ++included;
      m.macro_precision += cm.precision;
      m.macro_recall += cm.recall;
      m.macro_dice += cm.dice;
      m.macro_iou += cm.iou;
    }
    if (total > 0) m.weighted_accuracy += cm.support / total * cm.recall;
    m.per_class.push_back(std::move(cm));
  }
  if (included) {
    m.macro_precision /= included;
    m.macro_recall /= included;
    m.macro_dice /= included;
    m.macro_iou /= included;
  }
  m.overall_accuracy = total > 0 ? trace / total : 0.0;
  return m;
}

SegmentationMetrics segmentation_metrics(std::span<const std::uint8_t> pred,
                                         std::span<const std::uint8_t> truth,
                                         const ClassScheme& scheme) {
  ConfusionMatrix c(static_cast<int>(scheme.size()));
  c.add(truth, pred);
  return segmentation_metrics(c, scheme);
}

void ReconstructionAccumulator::add(const nn::Tensor& pred, const nn::Tensor& target) {
  if (!(pred.shape == target.shape))
    throw DataError("reconstruction: shape mismatch " + pred.shape.str() + " vs " +
                    target.shape.str());
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double e = double{pred.data[i]} - target.data[i];
    within_ += std::abs(e) <= tol_;
    sq_error_ += e * e;
  }
  elements_ += pred.numel();
  const std::size_t per = pred.numel() / pred.shape.n;
  for (int n = 0; n < pred.shape.n; ++n) {
    nn::Shape one{1, pred.shape.c, pred.shape.h, pred.shape.w};
    const nn::Var p(nn::Tensor(one, {pred.data.begin() + n * per, pred.data.begin() + (n + 1) * per}));
    const nn::Var t(nn::Tensor(one, {target.data.begin() + n * per, target.data.begin() + (n + 1) * per}));
    huber_ += losses::huber_loss(p, t).item();
    edge_ += losses::edge_loss(p, t).item();
    ssim_ += losses::ssim(p, t, ssim_opts_).item();
    ++images_;
  }
}

ReconstructionMetrics ReconstructionAccumulator::result() const {
  if (!images_) throw DataError("reconstruction metrics over an empty split");
  ReconstructionMetrics r;
  r.accuracy = static_cast<double>(within_) / elements_;
  const double mse = sq_error_ / elements_;
  r.psnr = mse == 0.0 ? std::numeric_limits<double>::infinity() : -10.0 * std::log10(mse);
  r.ssim = ssim_ / images_;
  r.huber = huber_ / images_;
  r.ssim_loss = 1.0 - r.ssim;
  r.edge_loss = edge_ / images_;
  const auto& w = weights_;
  r.mixed_loss = w.alpha * r.huber + w.beta * r.ssim_loss + w.gamma * r.edge_loss;
  return r;
}

nlohmann::json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

void to_json(nlohmann::json& j, const ConfusionMatrix& c) {
  j = nlohmann::json::array();
  for (int i = 0; i < c.classes(); ++i) {
    auto row = nlohmann::json::array();
    for (int k = 0; k < c.classes(); ++k) row.push_back(c.at(i, k));
    j.push_back(row);
  }
}

void to_json(nlohmann::json& j, const SegmentationMetrics& m) {
  j = {{"overall_accuracy", m.overall_accuracy},
       {"weighted_accuracy", m.weighted_accuracy},
       {"macro_dice", m.macro_dice},
       {"macro_iou", m.macro_iou},
       {"macro_precision", m.macro_precision},
       {"macro_recall", m.macro_recall},
       {"confusion", m.confusion}};
  if (m.dice_loss) j["dice_loss"] = *m.dice_loss;
  auto& pc = j["per_class"] = nlohmann::json::array();
  for (const auto& c : m.per_class)
    pc.push_back({{"id", c.id},
                  {"label", c.label},
                  {"support", c.support},
                  {"predicted", c.predicted},
                  {"precision", c.precision},
                  {"recall", c.recall},
                  {"dice", c.dice},
                  {"iou", c.iou},
                  {"included", c.included}});
}

void to_json(nlohmann::json& j, const ReconstructionMetrics& m) {
  j = {{"accuracy", m.accuracy},       {"psnr", number_or_inf(m.psnr)},
       {"ssim", m.ssim},               {"huber", m.huber},
       {"ssim_loss", m.ssim_loss},     {"edge_loss", m.edge_loss},
       {"mixed_loss", m.mixed_loss}};
}

}  // namespace wetseg::eval
