// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "wetseg/rascore/class_scheme.hpp"
#include "wetseg/rascore/labels.hpp"

namespace wetseg::eval {

/// 8-bit RGB, row-major, interleaved.
struct RgbImage {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(std::uint32_t w, std::uint32_t h) : width(w), height(h), pixels(std::size_t{w} * h * 3, 0) {}
  Rgb at(std::uint32_t row, std::uint32_t col) const;
  void set(std::uint32_t row, std::uint32_t col, Rgb c);
};

/// Scheme palette per class; unlabeled pixels are black. Throws DataError
/// when an id has no palette entry.
RgbImage render_segmentation(std::span<const std::uint8_t> mask, std::uint32_t width,
                             std::uint32_t height, const ClassScheme& scheme);

/// Correct pixels show the true class color at half intensity; misclassified
/// pixels are (round(255 p), 0, 0) with p the probability of the predicted
/// (argmax) class; unlabeled truth is black.
RgbImage render_error_map(const ProbabilityCube& probs, std::span<const std::uint8_t> truth,
                          const ClassScheme& scheme);

/// Per-pixel mean absolute band error, divided by the image maximum, through
/// a linear blue (0,0,255) to yellow (255,255,0) ramp. `pred` and `target`
/// are C x H x W.
RgbImage render_reconstruction_error(std::span<const float> pred, std::span<const float> target,
                                     std::uint32_t channels, std::uint32_t width,
                                     std::uint32_t height);

struct LegendEntry {
  int id = 0;
  std::string label;
  Rgb color{};
  double mean_probability = 0;
};

/// Image-average predicted probability of each class.
std::vector<LegendEntry> class_probability_legend(const ProbabilityCube& probs,
                                                  const ClassScheme& scheme);

/// Appends a legend below `image`: one row per class with a color swatch, a
/// bar proportional to the probability and the value printed to 3 decimals.
RgbImage append_legend(const RgbImage& image, const std::vector<LegendEntry>& legend);

void write_png(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_png(const std::filesystem::path& path);

}  // namespace wetseg::eval
