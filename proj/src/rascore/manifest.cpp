// SPDX-License-Identifier: Apache-2.0
#include "wetseg/rascore/manifest.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "wetseg/error.hpp"
#include "wetseg/rascore/raster.hpp"

namespace wetseg {

namespace {
constexpr const char* kFormat = "wetseg-manifest/1";

std::string at_entry(std::size_t i) { return "manifest entry " + std::to_string(i) + ": "; }
}  // namespace

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw ConfigError("invalid split '" + s + "' (expected train, val or test)");
}

std::size_t DatasetManifest::count(Split s) const {
  std::size_t n = 0;
  for (const auto& e : entries) n += e.split == s;
  return n;
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  const auto& p = m.provenance;
  nlohmann::json regions = nlohmann::json::object();
  for (const auto& [region, split] : p.region_splits) regions[region] = split_name(split);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je = {{"patch", e.patch_path},     {"region", e.region},
                         {"split", split_name(e.split)}, {"acquired_at", e.acquired_at},
                         {"gsd_m", e.gsd_m},           {"source", e.source},
                         {"row", e.row},               {"col", e.col}};
    if (e.label_path) je["label"] = *e.label_path;
    if (e.cloud_cover) je["cloud_cover"] = *e.cloud_cover;
    entries.push_back(std::move(je));
  }
  j = {{"format", kFormat},
       {"class_scheme", m.class_scheme},
       {"preprocessing",
        {{"patch_size", p.patch_size},
         {"selected_bands", p.selected_bands},
         {"max_invalid_fraction", p.max_invalid_fraction},
         {"equalize", p.equalize},
         {"normalize", p.normalize},
         {"filters", p.filters},
         {"split_policy", p.split_policy},
         {"region_splits", regions}}},
       {"entries", entries}};
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  try {
    if (j.value("format", std::string{}) != kFormat)
      throw ConfigError("manifest: missing or unknown 'format' (expected " + std::string(kFormat) +
                        ")");
    m.class_scheme = j.at("class_scheme").get<ClassScheme>();
    if (j.contains("preprocessing")) {
      const auto& jp = j.at("preprocessing");
      auto& p = m.provenance;
      p.patch_size = jp.value("patch_size", 0u);
      p.selected_bands = jp.value("selected_bands", std::vector<std::string>{});
      p.max_invalid_fraction = jp.value("max_invalid_fraction", 0.0);
      p.equalize = jp.value("equalize", false);
      p.normalize = jp.value("normalize", std::string("none"));
      p.filters = jp.value("filters", std::vector<std::string>{});
      p.split_policy = jp.value("split_policy", std::string{});
      if (jp.contains("region_splits"))
        for (const auto& [region, split] : jp.at("region_splits").items())
          p.region_splits[region] = parse_split(split.get<std::string>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: schema violation: ") + e.what());
  }

  const auto& jentries = j.at("entries");
  if (!jentries.is_array()) throw ConfigError("manifest: 'entries' must be an array");
  for (std::size_t i = 0; i < jentries.size(); ++i) {
    const auto& je = jentries[i];
    ManifestEntry e;
    try {
      e.patch_path = je.at("patch").get<std::string>();
      if (je.contains("label") && !je.at("label").is_null())
        e.label_path = je.at("label").get<std::string>();
      e.region = je.at("region").get<std::string>();
      e.split = parse_split(je.at("split").get<std::string>());
      e.acquired_at = je.value("acquired_at", std::string{});
      e.gsd_m = je.value("gsd_m", 10.0);
      e.source = je.value("source", std::string{});
      e.row = je.value("row", 0u);
      e.col = je.value("col", 0u);
      if (je.contains("cloud_cover")) e.cloud_cover = je.at("cloud_cover").get<double>();
    } catch (const ConfigError& err) {
      throw ConfigError(at_entry(i) + err.what());
    } catch (const nlohmann::json::exception& err) {
      throw ConfigError(at_entry(i) + "schema violation: " + err.what());
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void validate_manifest(const DatasetManifest& m, const std::filesystem::path& base_dir,
                       ManifestCheck check) {
  m.class_scheme.validate();
  std::unordered_map<std::string, std::size_t> seen;
  const bool by_region = m.provenance.split_policy == "by_region";
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    if (e.patch_path.empty()) throw ConfigError(at_entry(i) + "empty patch path");
    if (!(e.gsd_m > 0.0)) throw ConfigError(at_entry(i) + "gsd_m must be > 0");
    auto [it, fresh] = seen.emplace(e.patch_path, i);
    if (!fresh)
      throw ConfigError(at_entry(i) + "patch '" + e.patch_path + "' already listed by entry " +
                        std::to_string(it->second));
    if (by_region) {
      auto r = m.provenance.region_splits.find(e.region);
      if (r == m.provenance.region_splits.end()) r = m.provenance.region_splits.find("*");
      if (r == m.provenance.region_splits.end())
        throw ConfigError(at_entry(i) + "region '" + e.region + "' has no declared split");
      if (r->second != e.split)
        throw ConfigError(at_entry(i) + "region '" + e.region + "' is declared " +
                          split_name(r->second) + " but entry is " + split_name(e.split));
    }
  }
  if (check != ManifestCheck::Files) return;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    const auto patch = base_dir / e.patch_path;
    if (!std::filesystem::exists(patch))
      throw DataError(at_entry(i) + "dangling patch path '" + e.patch_path + "'");
    if (!e.label_path) continue;
    const auto label = base_dir / *e.label_path;
    if (!std::filesystem::exists(label))
      throw DataError(at_entry(i) + "dangling label path '" + *e.label_path + "'");
    const auto img = read_raster(patch);
    const auto lab = read_raster(label);
    if (img.width != lab.width || img.height != lab.height)
      throw DataError(at_entry(i) + "label dims " + std::to_string(lab.width) + "x" +
                      std::to_string(lab.height) + " do not match patch dims " +
                      std::to_string(img.width) + "x" + std::to_string(img.height));
  }
}

DatasetManifest load_manifest(const std::filesystem::path& path, ManifestCheck check) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open manifest '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("manifest '" + path.string() + "': " + e.what());
  }
  auto m = manifest_from_json(j);
  validate_manifest(m, path.parent_path(), check);
  return m;
}

std::string dump_manifest(const DatasetManifest& m) {
  nlohmann::json j = m;
  return j.dump(2) + "\n";
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  validate_manifest(m, path.parent_path(), ManifestCheck::Schema);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw DataError("cannot write manifest '" + path.string() + "'");
  f << dump_manifest(m);
  if (!f) throw DataError("I/O failure writing manifest '" + path.string() + "'");
}

}  // namespace wetseg
