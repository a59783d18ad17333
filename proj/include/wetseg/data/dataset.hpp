// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wetseg/rascore/manifest.hpp"
#include "wetseg/tensor/tensor.hpp"

namespace wetseg::data {

struct Sample {
  std::string id;
  nn::Tensor image;                 // (1, C, H, W)
  std::vector<std::uint8_t> label;  // H*W class ids, empty when unlabeled
};

struct Batch {
  nn::Tensor images;                 // (B, C, H, W)
  std::vector<std::uint8_t> labels;  // B*H*W, empty when unlabeled
};

enum class LabelMode {
  Ignore,       // load images only
  Require,      // every entry must carry a label
  LabeledOnly,  // skip entries without a label
};

/// Patches of one split, loaded from disk on demand or held in memory.
class PatchDataset {
 public:
  PatchDataset() = default;

  /// Entries of `split`. With `require_labels`, entries without a label
  /// path are an error. Throws DataError when the split is empty.
  static PatchDataset from_manifest(const DatasetManifest& manifest,
                                    const std::filesystem::path& root, Split split,
                                    bool require_labels);
  static PatchDataset from_manifest(const DatasetManifest& manifest,
                                    const std::filesystem::path& root, Split split,
                                    LabelMode mode);
  /// Samples must share one shape; labels are all present or all absent.
  static PatchDataset from_samples(std::vector<Sample> samples);

  std::size_t size() const;
  bool empty() const { return size() == 0; }
  bool labeled() const { return labeled_; }
  int channels() const { return shape_.c; }
  int height() const { return shape_.h; }
  int width() const { return shape_.w; }

  Sample get(std::size_t i) const;
  Batch batch(std::span<const std::size_t> indices) const;

 private:
  struct OnDisk {
    std::string id;
    std::filesystem::path image;
    std::optional<std::filesystem::path> label;
  };

  std::vector<Sample> memory_;
  std::vector<OnDisk> disk_;
  ClassScheme scheme_;
  bool labeled_ = false;
  nn::Shape shape_{0, 0, 0, 0};
};

}  // namespace wetseg::data
