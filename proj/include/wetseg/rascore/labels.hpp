// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "wetseg/rascore/class_scheme.hpp"
#include "wetseg/rascore/raster.hpp"

namespace wetseg {

/// Per-pixel class ids. Values are either < scheme size or kUnlabeled.
struct LabelMask {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  ClassScheme scheme;
  std::vector<std::uint8_t> values;
  float gsd_m = 10.0f;

  std::uint8_t at(std::uint32_t row, std::uint32_t col) const {
    return values[std::size_t{row} * width + col];
  }
  std::uint8_t& at(std::uint32_t row, std::uint32_t col) {
    return values[std::size_t{row} * width + col];
  }

  void validate() const;
  bool operator==(const LabelMask& o) const {
    return width == o.width && height == o.height && values == o.values && gsd_m == o.gsd_m &&
           scheme.name == o.scheme.name;
  }
};

/// Class-major probability cube (C x H x W), the layout a single-image
/// softmax output already has.
struct ProbabilityCube {
  std::uint32_t classes = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::span<const float> values;
};

/// Per-pixel argmax, ties toward the lower class id. Throws DataError on NaN
/// or when the cube depth differs from the scheme size.
LabelMask labels_from_probabilities(const ProbabilityCube& probs, const ClassScheme& scheme,
                                    float gsd_m = 10.0f);

/// Masks live in the RAS1 container with one u8 band named "label".
MultibandRaster mask_to_raster(const LabelMask& mask);
LabelMask mask_from_raster(const MultibandRaster& raster, const ClassScheme& scheme);

void write_mask(const LabelMask& mask, const std::filesystem::path& path);
LabelMask read_mask(const std::filesystem::path& path, const ClassScheme& scheme);

}  // namespace wetseg
