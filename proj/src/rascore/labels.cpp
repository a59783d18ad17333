// SPDX-License-Identifier: Apache-2.0
#include "wetseg/rascore/labels.hpp"

#include <cmath>

#include "wetseg/error.hpp"

namespace wetseg {

void LabelMask::validate() const {
  if (values.size() != std::size_t{width} * height)
    throw DataError("label mask has " + std::to_string(values.size()) + " values for " +
                    std::to_string(width) + "x" + std::to_string(height) + " pixels");
  const auto n = scheme.size();
  for (std::size_t i = 0; i < values.size(); ++i)
    if (values[i] >= n && values[i] != kUnlabeled)
      throw DataError("label mask value " + std::to_string(values[i]) + " at pixel " +
                      std::to_string(i) + " is outside scheme '" + scheme.name + "'");
}

LabelMask labels_from_probabilities(const ProbabilityCube& probs, const ClassScheme& scheme,
                                    float gsd_m) {
  if (probs.classes != scheme.size())
    throw DataError("probability cube has " + std::to_string(probs.classes) +
                    " classes, scheme '" + scheme.name + "' has " + std::to_string(scheme.size()));
  const std::size_t plane = std::size_t{probs.width} * probs.height;
  if (probs.values.size() != plane * probs.classes)
    throw DataError("probability cube size does not match its dimensions");

  LabelMask mask{probs.width, probs.height, scheme, std::vector<std::uint8_t>(plane, 0), gsd_m};
  for (std::size_t i = 0; i < plane; ++i) {
    float best = probs.values[i];
    std::uint8_t best_id = 0;
    if (std::isnan(best)) throw DataError("NaN probability at pixel " + std::to_string(i));
    for (std::uint32_t c = 1; c < probs.classes; ++c) {
      const float p = probs.values[c * plane + i];
      if (std::isnan(p)) throw DataError("NaN probability at pixel " + std::to_string(i));
      if (p > best) {
        best = p;
        best_id = static_cast<std::uint8_t>(c);
      }
    }
    mask.values[i] = best_id;
  }
  return mask;
}

MultibandRaster mask_to_raster(const LabelMask& mask) {
  mask.validate();
  auto r = MultibandRaster::zeros(mask.width, mask.height, {"label"}, DType::U8);
  std::copy(mask.values.begin(), mask.values.end(), r.data.begin());
  r.nodata_value = kUnlabeled;
  r.gsd_m = mask.gsd_m;
  return r;
}

LabelMask mask_from_raster(const MultibandRaster& raster, const ClassScheme& scheme) {
  if (raster.bands != 1 || raster.dtype != DType::U8)
    throw DataError("label mask must be a single u8 band");
  LabelMask m{raster.width, raster.height, scheme, {}, raster.gsd_m};
  m.values.assign(raster.data.begin(), raster.data.end());
  m.validate();
  return m;
}

void write_mask(const LabelMask& mask, const std::filesystem::path& path) {
  write_raster(mask_to_raster(mask), path);
}

LabelMask read_mask(const std::filesystem::path& path, const ClassScheme& scheme) {
  return mask_from_raster(read_raster(path), scheme);
}

}  // namespace wetseg
