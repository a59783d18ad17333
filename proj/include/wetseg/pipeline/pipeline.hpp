// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wetseg/rascore/labels.hpp"
#include "wetseg/rascore/manifest.hpp"
#include "wetseg/rascore/raster.hpp"

namespace wetseg::pipeline {

/// The nine Sentinel-2 bands used for wetland classification.
const std::vector<std::string>& sentinel2_wetland_bands();
/// The four Pleiades Neo bands kept for the resolution comparison.
const std::vector<std::string>& pleiades_rgbn_bands();

struct SplitPolicy {
  enum class Kind { ByRegion, Random };
  Kind kind = Kind::ByRegion;
  /// ByRegion: region -> split, "*" catches unlisted regions.
  std::map<std::string, Split> regions;
  /// Random: fractions summing to 1. Val and test sizes are floored and the
  /// remainder goes to train.
  double train = 0.75, val = 0.15, test = 0.10;
  std::uint64_t seed = 0;

  /// Test=Biesbosch, val=Lauwersmeer, every other region train.
  static SplitPolicy wetlands_by_region();
  void validate() const;
};

enum class Normalize { MinMax, None };

struct PreprocessConfig {
  std::vector<std::string> selected_bands;  // empty keeps all bands
  std::uint32_t patch_size = 256;
  double max_invalid_fraction = 0.10;
  bool equalize = false;
  Normalize normalize = Normalize::MinMax;
  SplitPolicy split_policy = SplitPolicy::wetlands_by_region();
  std::string class_scheme = "dynamic-world";

  /// Sentinel-2 defaults: 9 bands, 256 px, 10 % invalid, by-region split.
  static PreprocessConfig medium_resolution();
  /// Pleiades Neo defaults: 4 bands, 1024 px, 30 % invalid, random 75/15/10 split.
  static PreprocessConfig high_resolution();

  /// Returns every violated field, empty when valid.
  std::vector<std::string> violations() const;
};

void to_json(nlohmann::json& j, const PreprocessConfig& c);
/// Missing keys keep the values already in `c`.
void update_from_json(const nlohmann::json& j, PreprocessConfig& c);

struct TilePosition {
  std::uint32_t grid_row = 0;
  std::uint32_t grid_col = 0;
  std::uint32_t y0 = 0;  // pixel offset in the source raster
  std::uint32_t x0 = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  bool undersized = false;

  bool operator==(const TilePosition&) const = default;
};

struct Patch {
  TilePosition pos;
  MultibandRaster image;
  std::size_t invalid_pixels = 0;
};

struct Rejected {
  Patch patch;
  std::string reason;  // "undersized" or "invalid_fraction"
};

struct FilterResult {
  std::vector<Patch> kept;
  std::vector<Rejected> rejected;
};

/// Output bands in the requested order, values untouched. Throws DataError
/// naming the first unknown band.
MultibandRaster select_bands(const MultibandRaster& raster, const std::vector<std::string>& bands);

/// Grid positions for a `width` x `height` raster: non-overlapping, anchored
/// at (0,0), with partial edge tiles flagged undersized.
std::vector<TilePosition> tile_grid(std::uint32_t width, std::uint32_t height,
                                    std::uint32_t patch_size);
MultibandRaster crop(const MultibandRaster& raster, const TilePosition& pos);
LabelMask crop(const LabelMask& mask, const TilePosition& pos);
/// Tiles the raster, tagging each patch with its invalid-pixel count.
std::vector<Patch> tile(const MultibandRaster& raster, std::uint32_t patch_size);

/// Rejects undersized patches and those whose invalid fraction is strictly
/// above the threshold.
FilterResult quality_filter(std::vector<Patch> patches, double max_invalid_fraction,
                            std::uint32_t patch_size);

/// Per-band 256-bin histogram equalization over valid pixels onto [0,1].
/// Invalid pixels map to 0; a band whose valid pixels are all equal maps to 0.5.
MultibandRaster equalize_histogram(const MultibandRaster& patch);
/// Per-band min-max scaling over valid pixels onto [0,1]; invalid pixels and
/// constant bands map to 0.
MultibandRaster normalize_minmax(const MultibandRaster& patch);

/// Applies the split policy. Entries come back sorted by (source, row, col,
/// patch path) with their split set; provenance records the policy.
DatasetManifest assign_splits(std::vector<ManifestEntry> entries, const SplitPolicy& policy,
                              const ClassScheme& scheme = dynamic_world_scheme());

struct SceneInput {
  MultibandRaster image;  // region and acquired_at come from the raster
  std::optional<LabelMask> label;
  std::string source;
  std::optional<double> cloud_cover;
};

struct PipelineResult {
  DatasetManifest manifest;
  std::size_t tiles = 0;
  std::map<std::string, std::size_t> rejections;  // reason -> count
};

/// Band selection, tiling, quality filtering, equalization or normalization,
/// split assignment. Writes `<out>/<split>/<region>/<source>_<row>_<col>.ras`
/// (labels as `..._label.ras`) and `<out>/manifest.json`.
PipelineResult run_pipeline(const std::vector<SceneInput>& scenes, const PreprocessConfig& config,
                            const std::filesystem::path& out_dir);

}  // namespace wetseg::pipeline
