// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wetseg/pipeline/pipeline.hpp"
#include "wetseg/rascore/labels.hpp"
#include "wetseg/rascore/manifest.hpp"
#include "wetseg/rascore/raster.hpp"

namespace wetseg::transfer {

/// The Sentinel-2 bands matching the Pleiades Neo R, G, B, NIR order.
const std::vector<std::string>& sentinel2_rgbn_bands();

/// A scene and its placement. Origins are the top-left corner in meters in a
/// shared frame whose y axis points down, like image rows.
struct SceneRef {
  std::string id;
  std::string path;         // raster file, relative to the scene list
  std::string mask;         // hires annotation, optional
  std::string acquired_at;  // YYYY-MM-DD
  double gsd_m = 10.0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  double origin_x = 0;
  double origin_y = 0;

  bool operator==(const SceneRef&) const = default;
};

void to_json(nlohmann::json& j, const SceneRef& s);
void from_json(const nlohmann::json& j, SceneRef& s);

/// Days since 1970-01-01 for a YYYY-MM-DD date (a time suffix is ignored).
/// Throws DataError on anything else.
long days_from_date(const std::string& date);

/// Continuous lores pixel coordinates of a hires pixel center:
/// x = offset_x + scale_x (col + 0.5), y = offset_y + scale_y (row + 0.5).
/// The lores cell is (floor(y), floor(x)).
struct AffineMap {
  double scale_x = 1, scale_y = 1;
  double offset_x = 0, offset_y = 0;

  static AffineMap between(const SceneRef& hires, const SceneRef& lores);
  bool operator==(const AffineMap&) const = default;
};

struct ScenePair {
  SceneRef hires;
  SceneRef lores;
  int date_gap_days = 0;
  AffineMap mapping;
};

struct UnpairedScene {
  std::string id;
  std::string reason;
};

struct PairingReport {
  int max_gap_days = 7;
  std::vector<ScenePair> pairs;
  std::vector<UnpairedScene> unpaired;
};

/// Pairs each hires scene with the lores scene nearest in time among those
/// whose footprint contains it; equal gaps go to the earlier lores date.
/// Scenes without a candidate within `max_gap_days` are reported unpaired.
PairingReport pair_scenes(const std::vector<SceneRef>& hires, const std::vector<SceneRef>& lores,
                          int max_gap_days = 7);
void to_json(nlohmann::json& j, const PairingReport& r);

struct GridTile {
  std::uint32_t row = 0, col = 0;  // grid cell
  pipeline::TilePosition pos;      // pixel window
};

/// rows x cols near-equal windows covering the raster exactly; the last row
/// and column absorb the remainder. Throws ConfigError when a cell would be
/// empty.
std::vector<GridTile> grid_split(std::uint32_t width, std::uint32_t height, std::uint32_t rows,
                                 std::uint32_t cols);
std::vector<MultibandRaster> grid_split(const MultibandRaster& raster, std::uint32_t rows,
                                        std::uint32_t cols);

/// Majority vote per lores cell over the hires label pixels whose mapped
/// centers fall in it; ties go to the lower class id. Cells with no labeled
/// source pixel are kUnlabeled. Throws DataError when a center maps outside
/// the lores grid.
LabelMask downscale_labels(const LabelMask& hires, const AffineMap& mapping,
                           std::uint32_t lores_width, std::uint32_t lores_height,
                           float lores_gsd_m = 10.0f);

struct ResolutionConfig {
  std::uint32_t hires_patch = 1024;
  std::uint32_t lores_patch = 256;
  std::vector<std::string> hires_bands = pipeline::pleiades_rgbn_bands();
  std::vector<std::string> lores_bands = sentinel2_rgbn_bands();
  double hires_max_invalid = 0.30;
  double lores_max_invalid = 0.30;
  bool equalize = false;
  std::string class_scheme = "biesbosch-manual";
  /// Scene split: explicit assignments first, the rest by a seeded shuffle
  /// with floored val/test counts and the remainder in train.
  std::map<std::string, Split> scene_splits;
  double val_fraction = 0.15, test_fraction = 0.10;
  std::uint64_t seed = 0;

  std::vector<std::string> violations() const;
};

void to_json(nlohmann::json& j, const ResolutionConfig& c);
void update_from_json(const nlohmann::json& j, ResolutionConfig& c);

/// Scene id -> split, the single assignment both manifests follow.
std::map<std::string, Split> assign_scene_splits(const std::vector<std::string>& scene_ids,
                                                 const ResolutionConfig& c);

struct ResolutionExperiment {
  DatasetManifest hires;
  DatasetManifest lores;
  std::map<std::string, Split> scene_splits;
};

/// For each pair: the hires scene with its mask is tiled into hires_patch
/// tiles; the mask is downscaled onto the lores grid and a lores_patch
/// window centered on the hires footprint is cut from the lores scene and
/// its mask. Both go through the preprocessing pipeline with the scene id as
/// region, written to `<out>/hires` and `<out>/lores`. Raster and mask paths
/// resolve against `base_dir`. Throws DataError when a mask is missing.
ResolutionExperiment build_resolution_experiment(const std::vector<ScenePair>& pairs,
                                                 const std::filesystem::path& base_dir,
                                                 const ResolutionConfig& config,
                                                 const std::filesystem::path& out_dir);

}  // namespace wetseg::transfer
