// SPDX-License-Identifier: Apache-2.0
#include "wetseg/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "wetseg/error.hpp"
#include "wetseg/rng.hpp"

namespace wetseg::data {

namespace {

float signature(int cls, int band, bool stripe_on) {
  switch (cls) {
    case 1:
      return band % 2 ? 0.35f : 0.75f;
    case 2:
      return stripe_on ? 0.85f - 0.05f * (band % 3) : 0.15f + 0.05f * (band % 3);
    default:
      return 0.3f + 0.04f * (band % 4);
  }
}

}  // namespace

nn::Tensor striped_patch(int bands, int size, int period) {
  if (bands < 1 || size < 1 || period < 1) throw ConfigError("striped_patch: sizes must be positive");
  nn::Tensor t({1, bands, size, size});
  for (int b = 0; b < bands; ++b)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double phase = 2 * std::numbers::pi * ((x + y) + double(b) * period / bands) / period;
        t.at(0, b, y, x) = static_cast<float>(0.5 + 0.4 * std::sin(phase));
      }
  return t;
}

std::vector<Sample> shapes_samples(const ShapesOptions& opt) {
  if (opt.count < 0 || opt.bands < 1 || opt.size < 8)
    throw ConfigError("shapes dataset: count >= 0, bands >= 1 and size >= 8 required");
  std::vector<Sample> out;
  for (int i = 0; i < opt.count; ++i) {
    auto rng = keyed_rng(opt.seed, rng_stream::kSynthetic, static_cast<std::uint64_t>(i));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<float> noise(0.0f, opt.noise);
    const int s = opt.size;
    std::vector<std::uint8_t> label(std::size_t(s) * s, 0);
    // one striped rectangle, then one or two disks on top
    const int rw = s / 4 + static_cast<int>(u(rng) * s / 4), rh = s / 4 + static_cast<int>(u(rng) * s / 4);
    const int rx = static_cast<int>(u(rng) * (s - rw)), ry = static_cast<int>(u(rng) * (s - rh));
    for (int y = ry; y < ry + rh; ++y)
      for (int x = rx; x < rx + rw; ++x) label[std::size_t(y) * s + x] = 2;
    const int disks = 1 + static_cast<int>(u(rng) * 2);
    for (int d = 0; d < disks; ++d) {
      const double r = s * (0.08 + 0.1 * u(rng));
      const double cx = r + u(rng) * (s - 2 * r), cy = r + u(rng) * (s - 2 * r);
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x)
          if ((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r)
            label[std::size_t(y) * s + x] = 1;
    }
    Sample smp;
    smp.id = "shapes_" + std::to_string(i);
    smp.image = nn::Tensor({1, opt.bands, s, s});
    for (int b = 0; b < opt.bands; ++b)
      for (int y = 0; y < s; ++y)
        for (int x = 0; x < s; ++x) {
          const int cls = label[std::size_t(y) * s + x];
          const float v = signature(cls, b, ((x + y) / 2) % 2 == 0) + noise(rng);
          smp.image.at(0, b, y, x) = std::clamp(v, 0.0f, 1.0f);
        }
    if (opt.labeled) smp.label = std::move(label);
    out.push_back(std::move(smp));
  }
  return out;
}

PatchDataset shapes_dataset(const ShapesOptions& opt) {
  return PatchDataset::from_samples(shapes_samples(opt));
}

}  // namespace wetseg::data
