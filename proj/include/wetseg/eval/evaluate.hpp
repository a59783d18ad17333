// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wetseg/data/dataset.hpp"
#include "wetseg/eval/metrics.hpp"
#include "wetseg/losses/losses.hpp"
#include "wetseg/nn/model.hpp"
#include "wetseg/rascore/class_scheme.hpp"

namespace wetseg::eval {

struct EvalOptions {
  double tolerance = 0.05;  // reconstruction accuracy
  losses::MixedLossWeights weights;
  losses::SsimOptions ssim;
  int batch_size = 4;
  ClassScheme scheme = dynamic_world_scheme();  // segmentation only
  std::string dataset_id;
  std::optional<std::filesystem::path> render_dir;
  std::size_t max_renders = 4;
};

struct MetricsReport {
  std::string task;  // "reconstruction" or "segmentation"
  std::string dataset_id;
  std::string checkpoint_id;
  std::size_t images = 0;
  std::optional<ReconstructionMetrics> reconstruction;
  std::optional<SegmentationMetrics> segmentation;
  ClassScheme scheme;
  std::vector<std::string> renders;  // file names inside render_dir
};

/// Runs the model over every sample of `data` in eval mode. Segmentation
/// sums one confusion matrix and one set of soft-Dice totals over the whole
/// split; reconstruction sums element counts. Throws DataError on an empty
/// dataset or, for segmentation, an unlabeled one.
MetricsReport evaluate(const nn::Model& model, const data::PatchDataset& data,
                       const EvalOptions& options);
/// Builds the model from `ckpt`; `expected` rejects a checkpoint of the wrong
/// kind with ConfigError.
MetricsReport evaluate(const nn::ModelCheckpoint& ckpt, const data::PatchDataset& data,
                       const EvalOptions& options,
                       std::optional<nn::ModelKind> expected = std::nullopt);

/// FNV-1a of the serialized checkpoint, as 16 hex digits.
std::string checkpoint_id(const nn::ModelCheckpoint& ckpt);

void to_json(nlohmann::json& j, const MetricsReport& r);
/// Deterministic JSON with a trailing newline.
void write_report(const MetricsReport& r, const std::filesystem::path& path);

}  // namespace wetseg::eval
