// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wetseg/rascore/class_scheme.hpp"

namespace wetseg {

enum class Split { Train, Val, Test };

const char* split_name(Split s);
/// Throws ConfigError for anything but "train", "val" or "test".
Split parse_split(const std::string& s);

struct ManifestEntry {
  std::string patch_path;                 // relative to the manifest directory
  std::optional<std::string> label_path;  // relative to the manifest directory
  std::string region;
  Split split = Split::Train;
  std::string acquired_at;
  double gsd_m = 10.0;
  // Tile provenance; empty source for hand-built manifests.
  std::string source;
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  std::optional<double> cloud_cover;

  bool operator==(const ManifestEntry&) const = default;
};

struct Provenance {
  std::uint32_t patch_size = 0;
  std::vector<std::string> selected_bands;
  double max_invalid_fraction = 0.0;
  bool equalize = false;
  std::string normalize = "none";
  std::vector<std::string> filters;
  // Declared region -> split mapping when the split policy is by-region;
  // the key "*" matches any region not listed.
  std::map<std::string, Split> region_splits;
  std::string split_policy;  // "by_region", "random" or empty

  bool operator==(const Provenance&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  ClassScheme class_scheme;
  Provenance provenance;

  std::size_t count(Split s) const;
  std::vector<const ManifestEntry*> split(Split s) const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
/// Schema-level parse; throws ConfigError naming the offending entry index.
DatasetManifest manifest_from_json(const nlohmann::json& j);

enum class ManifestCheck {
  Schema,  // structure, enums, split partition, region mapping
  Files,   // additionally: every referenced file exists and label dims match patch dims
};

/// Validates invariants. `base_dir` resolves relative paths for ManifestCheck::Files.
void validate_manifest(const DatasetManifest& m, const std::filesystem::path& base_dir,
                       ManifestCheck check);

DatasetManifest load_manifest(const std::filesystem::path& path,
                              ManifestCheck check = ManifestCheck::Files);
/// Deterministic JSON (sorted keys, two-space indent, trailing newline).
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
std::string dump_manifest(const DatasetManifest& m);

}  // namespace wetseg
