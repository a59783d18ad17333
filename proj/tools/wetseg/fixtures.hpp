// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>

namespace wetseg::cli {

struct ShapesFixture {
  int train = 48;          // train patches, labeled or not
  int labeled_train = 8;   // the first ones carry labels
  int val = 8;
  int test = 8;
  int size = 32;
  int bands = 3;
  std::uint64_t seed = 0;
};

/// Writes RAS1 patches plus manifest.json under `dir` and returns the
/// manifest path. Classes: background, disk, stripes.
std::filesystem::path write_shapes_fixture(const std::filesystem::path& dir, const ShapesFixture& f);

struct ResolutionFixture {
  int scenes = 8;        // hires scenes; the last two go to val and test
  int hires_size = 64;   // pixels at 2.5 m
  std::uint64_t seed = 0;
};

/// Hires scenes with masks, one lores scene covering them all at 4x coarser
/// sampling, and scenes.json listing both. Returns the scenes.json path.
std::filesystem::path write_resolution_fixture(const std::filesystem::path& dir,
                                               const ResolutionFixture& f);

}  // namespace wetseg::cli
