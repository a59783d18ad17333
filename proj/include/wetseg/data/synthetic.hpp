// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "wetseg/data/dataset.hpp"

namespace wetseg::data {

/// Diagonal stripes with a per-band phase offset, values in [0.1, 0.9].
nn::Tensor striped_patch(int bands, int size, int period = 8);

struct ShapesOptions {
  int count = 32;
  int bands = 3;
  int size = 64;
  std::uint64_t seed = 0;
  float noise = 0.05f;
  bool labeled = true;
};

/// Three-class scenes: background (0), filled disks (1) and rectangles of
/// striped texture (2), each class with its own spectral signature plus
/// Gaussian noise. Values are clamped to [0, 1]. Deterministic in `seed`.
std::vector<Sample> shapes_samples(const ShapesOptions& opt);
PatchDataset shapes_dataset(const ShapesOptions& opt);

}  // namespace wetseg::data
