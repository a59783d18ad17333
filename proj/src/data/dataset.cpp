// SPDX-License-Identifier: Apache-2.0
#include "wetseg/data/dataset.hpp"

#include <cstring>

#include "wetseg/error.hpp"
#include "wetseg/rascore/labels.hpp"
#include "wetseg/rascore/raster.hpp"

namespace wetseg::data {

namespace {

nn::Tensor to_tensor(const MultibandRaster& r) {
  return nn::Tensor({1, static_cast<int>(r.bands), static_cast<int>(r.height),
                     static_cast<int>(r.width)},
                    r.data);
}

}  // namespace

PatchDataset PatchDataset::from_manifest(const DatasetManifest& manifest,
                                         const std::filesystem::path& root, Split split,
                                         bool require_labels) {
  return from_manifest(manifest, root, split,
                       require_labels ? LabelMode::Require : LabelMode::Ignore);
}

PatchDataset PatchDataset::from_manifest(const DatasetManifest& manifest,
                                         const std::filesystem::path& root, Split split,
                                         LabelMode mode) {
  const bool require_labels = mode != LabelMode::Ignore;
  PatchDataset d;
  d.scheme_ = manifest.class_scheme;
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto& e = manifest.entries[i];
    if (e.split != split) continue;
    if (mode == LabelMode::LabeledOnly && !e.label_path) continue;
    if (require_labels && !e.label_path)
      throw DataError("manifest entry " + std::to_string(i) + ": no label for " + e.patch_path);
    OnDisk item{e.patch_path, root / e.patch_path, std::nullopt};
    if (require_labels) item.label = root / *e.label_path;
    d.disk_.push_back(std::move(item));
  }
  if (d.disk_.empty()) throw DataError(std::string("empty split: ") + split_name(split));
  d.labeled_ = require_labels;
  const auto first = read_raster(d.disk_.front().image);
  d.shape_ = {1, static_cast<int>(first.bands), static_cast<int>(first.height),
              static_cast<int>(first.width)};
  return d;
}

PatchDataset PatchDataset::from_samples(std::vector<Sample> samples) {
  PatchDataset d;
  if (samples.empty()) return d;
  d.shape_ = samples.front().image.shape;
  d.labeled_ = !samples.front().label.empty();
  for (const auto& s : samples) {
    if (!(s.image.shape == d.shape_) || s.image.shape.n != 1)
      throw DataError("sample '" + s.id + "' has shape " + s.image.shape.str() + ", expected " +
                      d.shape_.str());
    if (s.label.empty() == d.labeled_ ||
        (d.labeled_ && s.label.size() != d.shape_.plane()))
      throw DataError("sample '" + s.id + "' label does not match the dataset");
  }
  d.memory_ = std::move(samples);
  return d;
}

std::size_t PatchDataset::size() const { return memory_.empty() ? disk_.size() : memory_.size(); }

Sample PatchDataset::get(std::size_t i) const {
  if (!memory_.empty()) return memory_.at(i);
  const auto& item = disk_.at(i);
  Sample s;
  s.id = item.id;
  const auto r = read_raster(item.image);
  s.image = to_tensor(r);
  if (!(s.image.shape == shape_))
    throw DataError(item.image.string() + ": shape " + s.image.shape.str() + " differs from " +
                    shape_.str());
  if (item.label) {
    const auto m = read_mask(*item.label, scheme_);
    if (m.width != r.width || m.height != r.height)
      throw DataError(item.label->string() + ": label dims differ from the patch");
    s.label = m.values;
  }
  return s;
}

Batch PatchDataset::batch(std::span<const std::size_t> indices) const {
  Batch b;
  const std::size_t per = static_cast<std::size_t>(shape_.c) * shape_.plane();
  b.images = nn::Tensor({static_cast<int>(indices.size()), shape_.c, shape_.h, shape_.w});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto s = get(indices[k]);
    std::memcpy(b.images.data.data() + k * per, s.image.data.data(), per * sizeof(float));
    b.labels.insert(b.labels.end(), s.label.begin(), s.label.end());
  }
  return b;
}

}  // namespace wetseg::data
