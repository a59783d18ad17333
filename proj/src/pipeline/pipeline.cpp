// SPDX-License-Identifier: Apache-2.0
#include "wetseg/pipeline/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include "wetseg/error.hpp"
#include "wetseg/rng.hpp"

namespace wetseg::pipeline {

const std::vector<std::string>& sentinel2_wetland_bands() {
  static const std::vector<std::string> bands{"B2", "B3", "B4", "B5", "B6",
                                              "B7", "B8", "B11", "B12"};
  return bands;
}

const std::vector<std::string>& pleiades_rgbn_bands() {
  static const std::vector<std::string> bands{"R", "G", "B", "NIR"};
  return bands;
}

SplitPolicy SplitPolicy::wetlands_by_region() {
  SplitPolicy p;
  p.kind = Kind::ByRegion;
  p.regions = {{"Biesbosch", Split::Test}, {"Lauwersmeer", Split::Val}, {"*", Split::Train}};
  return p;
}

void SplitPolicy::validate() const {
  if (kind == Kind::Random) {
    if (train < 0 || val < 0 || test < 0 || std::abs(train + val + test - 1.0) > 1e-9)
      throw ConfigError("split_policy: random fractions must be nonnegative and sum to 1");
  } else if (regions.empty()) {
    throw ConfigError("split_policy: by_region needs at least one region mapping");
  }
}

PreprocessConfig PreprocessConfig::medium_resolution() {
  PreprocessConfig c;
  c.selected_bands = sentinel2_wetland_bands();
  c.patch_size = 256;
  c.max_invalid_fraction = 0.10;
  c.split_policy = SplitPolicy::wetlands_by_region();
  return c;
}

PreprocessConfig PreprocessConfig::high_resolution() {
  PreprocessConfig c;
  c.selected_bands = pleiades_rgbn_bands();
  c.patch_size = 1024;
  c.max_invalid_fraction = 0.30;
  c.split_policy.kind = SplitPolicy::Kind::Random;
  c.split_policy.regions.clear();
  c.class_scheme = "biesbosch-manual";
  return c;
}

std::vector<std::string> PreprocessConfig::violations() const {
  std::vector<std::string> out;
  if (patch_size == 0) out.push_back("patch_size: must be > 0");
  if (!(max_invalid_fraction >= 0.0 && max_invalid_fraction <= 1.0))
    out.push_back("max_invalid_fraction: must lie in [0,1]");
  try {
    split_policy.validate();
  } catch (const ConfigError& e) {
    out.push_back(e.what());
  }
  try {
    builtin_scheme(class_scheme);
  } catch (const ConfigError& e) {
    out.push_back(std::string("class_scheme: ") + e.what());
  }
  return out;
}

void to_json(nlohmann::json& j, const PreprocessConfig& c) {
  nlohmann::json policy;
  if (c.split_policy.kind == SplitPolicy::Kind::ByRegion) {
    nlohmann::json regions = nlohmann::json::object();
    for (const auto& [r, s] : c.split_policy.regions) regions[r] = split_name(s);
    policy = {{"kind", "by_region"}, {"regions", regions}};
  } else {
    policy = {{"kind", "random"},
              {"train", c.split_policy.train},
              {"val", c.split_policy.val},
              {"test", c.split_policy.test},
              {"seed", c.split_policy.seed}};
  }
  j = {{"selected_bands", c.selected_bands},
       {"patch_size", c.patch_size},
       {"max_invalid_fraction", c.max_invalid_fraction},
       {"equalize", c.equalize},
       {"normalize", c.normalize == Normalize::MinMax ? "minmax" : "none"},
       {"split_policy", policy},
       {"class_scheme", c.class_scheme}};
}

void update_from_json(const nlohmann::json& j, PreprocessConfig& c) {
  try {
    c.selected_bands = j.value("selected_bands", c.selected_bands);
    c.patch_size = j.value("patch_size", c.patch_size);
    c.max_invalid_fraction = j.value("max_invalid_fraction", c.max_invalid_fraction);
    c.equalize = j.value("equalize", c.equalize);
    c.class_scheme = j.value("class_scheme", c.class_scheme);
    if (j.contains("normalize")) {
      const auto n = j.at("normalize").get<std::string>();
      if (n == "minmax") c.normalize = Normalize::MinMax;
      else if (n == "none") c.normalize = Normalize::None;
      else throw ConfigError("normalize: expected 'minmax' or 'none', got '" + n + "'");
    }
    if (j.contains("split_policy")) {
      const auto& jp = j.at("split_policy");
      auto& p = c.split_policy;
      const auto kind = jp.value("kind", std::string(p.kind == SplitPolicy::Kind::Random
                                                         ? "random"
                                                         : "by_region"));
      if (kind == "by_region") {
        p.kind = SplitPolicy::Kind::ByRegion;
        if (jp.contains("regions")) {
          p.regions.clear();
          for (const auto& [r, s] : jp.at("regions").items())
            p.regions[r] = parse_split(s.get<std::string>());
        }
      } else if (kind == "random") {
        p.kind = SplitPolicy::Kind::Random;
        p.train = jp.value("train", p.train);
        p.val = jp.value("val", p.val);
        p.test = jp.value("test", p.test);
        p.seed = jp.value("seed", p.seed);
      } else {
        throw ConfigError("split_policy.kind: expected 'by_region' or 'random', got '" + kind +
                          "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("preprocess config: ") + e.what());
  }
}

MultibandRaster select_bands(const MultibandRaster& raster, const std::vector<std::string>& bands) {
  std::vector<std::uint32_t> idx;
  for (const auto& name : bands) {
    const int i = raster.band_index(name);
    if (i < 0) throw DataError("select_bands: unknown band name '" + name + "'");
    idx.push_back(static_cast<std::uint32_t>(i));
  }
  MultibandRaster out = raster;
  out.bands = static_cast<std::uint32_t>(bands.size());
  out.band_names = bands;
  out.data.resize(out.pixels() * out.bands);
  for (std::size_t b = 0; b < idx.size(); ++b) {
    auto src = raster.band(idx[b]);
    std::copy(src.begin(), src.end(), out.data.begin() + b * out.pixels());
  }
  return out;
}

std::vector<TilePosition> tile_grid(std::uint32_t width, std::uint32_t height,
                                    std::uint32_t patch_size) {
  if (patch_size == 0) throw ConfigError("patch_size must be > 0");
  std::vector<TilePosition> out;
  for (std::uint32_t y = 0, gr = 0; y < height; y += patch_size, ++gr)
    for (std::uint32_t x = 0, gc = 0; x < width; x += patch_size, ++gc) {
      TilePosition p;
      p.grid_row = gr;
      p.grid_col = gc;
      p.y0 = y;
      p.x0 = x;
      p.width = std::min(patch_size, width - x);
      p.height = std::min(patch_size, height - y);
      p.undersized = p.width < patch_size || p.height < patch_size;
      out.push_back(p);
    }
  return out;
}

MultibandRaster crop(const MultibandRaster& raster, const TilePosition& pos) {
  MultibandRaster out = raster;
  out.width = pos.width;
  out.height = pos.height;
  out.data.assign(out.pixels() * out.bands, 0.0f);
  for (std::uint32_t b = 0; b < out.bands; ++b)
    for (std::uint32_t r = 0; r < pos.height; ++r) {
      const float* src = &raster.data[(std::size_t{b} * raster.height + pos.y0 + r) * raster.width +
                                      pos.x0];
      std::copy(src, src + pos.width, &out.at(b, r, 0));
    }
  return out;
}

LabelMask crop(const LabelMask& mask, const TilePosition& pos) {
  LabelMask out{pos.width, pos.height, mask.scheme, {}, mask.gsd_m};
  out.values.resize(std::size_t{pos.width} * pos.height);
  for (std::uint32_t r = 0; r < pos.height; ++r) {
    const auto* src = &mask.values[std::size_t{pos.y0 + r} * mask.width + pos.x0];
    std::copy(src, src + pos.width, &out.values[std::size_t{r} * pos.width]);
  }
  return out;
}

std::vector<Patch> tile(const MultibandRaster& raster, std::uint32_t patch_size) {
  std::vector<Patch> out;
  for (const auto& pos : tile_grid(raster.width, raster.height, patch_size)) {
    Patch p{pos, crop(raster, pos), 0};
    p.invalid_pixels = p.image.count_invalid();
    out.push_back(std::move(p));
  }
  return out;
}

FilterResult quality_filter(std::vector<Patch> patches, double max_invalid_fraction,
                            std::uint32_t patch_size) {
  FilterResult res;
  for (auto& p : patches) {
    const double total = static_cast<double>(p.image.pixels());
    if (p.image.width < patch_size || p.image.height < patch_size || p.pos.undersized) {
      res.rejected.push_back({std::move(p), "undersized"});
    } else if (static_cast<double>(p.invalid_pixels) / total > max_invalid_fraction) {
      res.rejected.push_back({std::move(p), "invalid_fraction"});
    } else {
      res.kept.push_back(std::move(p));
    }
  }
  return res;
}

namespace {

std::vector<bool> valid_mask(const MultibandRaster& r) {
  std::vector<bool> valid(r.pixels());
  for (std::uint32_t y = 0; y < r.height; ++y)
    for (std::uint32_t x = 0; x < r.width; ++x)
      valid[std::size_t{y} * r.width + x] = !r.is_invalid(y, x);
  return valid;
}

MultibandRaster as_f32(const MultibandRaster& r) {
  MultibandRaster out = r;
  out.dtype = DType::F32;
  out.nodata_value = 0.0f;
  return out;
}

}  // namespace

MultibandRaster equalize_histogram(const MultibandRaster& patch) {
  constexpr int kBins = 256;
  const auto valid = valid_mask(patch);
  MultibandRaster out = as_f32(patch);
  for (std::uint32_t b = 0; b < patch.bands; ++b) {
    auto src = patch.band(b);
    auto dst = out.band(b);
    float lo = 0, hi = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (!valid[i]) continue;
      lo = n ? std::min(lo, src[i]) : src[i];
      hi = n ? std::max(hi, src[i]) : src[i];
      ++n;
    }
    if (n == 0) {
      std::fill(dst.begin(), dst.end(), 0.0f);
      continue;
    }
    if (lo == hi) {
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = valid[i] ? 0.5f : 0.0f;
      continue;
    }
    const double scale = kBins / (static_cast<double>(hi) - lo);
    auto bin_of = [&](float v) {
      return std::min(kBins - 1, static_cast<int>((static_cast<double>(v) - lo) * scale));
    };
    std::array<std::size_t, kBins> hist{};
    for (std::size_t i = 0; i < src.size(); ++i)
      if (valid[i]) ++hist[bin_of(src[i])];
    std::array<float, kBins> cdf{};
    std::size_t acc = 0;
    for (int k = 0; k < kBins; ++k) {
      acc += hist[k];
      cdf[k] = static_cast<float>(static_cast<double>(acc) / static_cast<double>(n));
    }
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = valid[i] ? cdf[bin_of(src[i])] : 0.0f;
  }
  return out;
}

MultibandRaster normalize_minmax(const MultibandRaster& patch) {
  const auto valid = valid_mask(patch);
  MultibandRaster out = as_f32(patch);
  for (std::uint32_t b = 0; b < patch.bands; ++b) {
    auto src = patch.band(b);
    auto dst = out.band(b);
    float lo = 0, hi = 0;
    bool any = false;
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (!valid[i]) continue;
      lo = any ? std::min(lo, src[i]) : src[i];
      hi = any ? std::max(hi, src[i]) : src[i];
      any = true;
    }
    const double range = static_cast<double>(hi) - lo;
    for (std::size_t i = 0; i < src.size(); ++i)
      dst[i] = (valid[i] && range > 0) ? static_cast<float>((src[i] - lo) / range) : 0.0f;
  }
  return out;
}

DatasetManifest assign_splits(std::vector<ManifestEntry> entries, const SplitPolicy& policy,
                              const ClassScheme& scheme) {
  policy.validate();
  std::sort(entries.begin(), entries.end(), [](const ManifestEntry& a, const ManifestEntry& b) {
    return std::tie(a.source, a.row, a.col, a.patch_path) <
           std::tie(b.source, b.row, b.col, b.patch_path);
  });

  DatasetManifest m;
  m.class_scheme = scheme;
  if (policy.kind == SplitPolicy::Kind::ByRegion) {
    m.provenance.split_policy = "by_region";
    m.provenance.region_splits = policy.regions;
    for (auto& e : entries) {
      auto it = policy.regions.find(e.region);
      if (it == policy.regions.end()) it = policy.regions.find("*");
      if (it == policy.regions.end())
        throw ConfigError("assign_splits: unmapped region '" + e.region + "'");
      e.split = it->second;
    }
  } else {
    m.provenance.split_policy = "random";
    const std::size_t n = entries.size();
    // Small epsilon keeps products like 0.29 * 100 from flooring to 28.
    const auto n_val = static_cast<std::size_t>(std::floor(policy.val * n + 1e-9));
    const auto n_test = static_cast<std::size_t>(std::floor(policy.test * n + 1e-9));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto rng = keyed_rng(policy.seed, rng_stream::kSplit);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < n; ++k) {
      auto& e = entries[order[k]];
      e.split = k < n_val ? Split::Val : k < n_val + n_test ? Split::Test : Split::Train;
    }
  }
  m.entries = std::move(entries);
  return m;
}

namespace {

std::string patch_stem(const ManifestEntry& e) {
  return e.source + "_" + std::to_string(e.row) + "_" + std::to_string(e.col);
}

std::string format_fraction(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

}  // namespace

PipelineResult run_pipeline(const std::vector<SceneInput>& scenes, const PreprocessConfig& config,
                            const std::filesystem::path& out_dir) {
  if (auto v = config.violations(); !v.empty()) {
    std::string msg = "invalid preprocess config:";
    for (const auto& s : v) msg += "\n  " + s;
    throw ConfigError(msg);
  }
  const ClassScheme& scheme = builtin_scheme(config.class_scheme);

  // Scenes are processed in source order so output never depends on input order.
  std::vector<const SceneInput*> ordered;
  for (const auto& s : scenes) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const SceneInput* a, const SceneInput* b) { return a->source < b->source; });

  std::set<std::string> sources;
  for (const SceneInput* s : ordered)
    if (!sources.insert(s->source).second)
      throw ConfigError("duplicate scene source name '" + s->source + "'");

  PipelineResult result;
  struct Pending {
    ManifestEntry entry;
    MultibandRaster image;
    std::optional<LabelMask> label;
  };
  std::vector<Pending> pending;

  for (const SceneInput* scene : ordered) {
    if (scene->source.empty()) throw ConfigError("scene without a source name");
    if (scene->label && (scene->label->width != scene->image.width ||
                         scene->label->height != scene->image.height))
      throw DataError("scene '" + scene->source + "': label dims " +
                      std::to_string(scene->label->width) + "x" +
                      std::to_string(scene->label->height) + " differ from image dims " +
                      std::to_string(scene->image.width) + "x" +
                      std::to_string(scene->image.height));
    const MultibandRaster image = config.selected_bands.empty()
                                      ? scene->image
                                      : select_bands(scene->image, config.selected_bands);
    auto patches = tile(image, config.patch_size);
    result.tiles += patches.size();
    auto filtered = quality_filter(std::move(patches), config.max_invalid_fraction,
                                   config.patch_size);
    for (const auto& r : filtered.rejected) ++result.rejections[r.reason];

    for (auto& p : filtered.kept) {
      Pending item;
      auto& e = item.entry;
      e.source = scene->source;
      e.row = p.pos.grid_row;
      e.col = p.pos.grid_col;
      e.region = image.region;
      e.acquired_at = image.acquired_at;
      e.gsd_m = image.gsd_m;
      e.cloud_cover = scene->cloud_cover;
      if (config.equalize)
        item.image = equalize_histogram(p.image);
      else if (config.normalize == Normalize::MinMax)
        item.image = normalize_minmax(p.image);
      else
        item.image = std::move(p.image);
      if (scene->label) {
        item.label = crop(*scene->label, p.pos);
        item.label->scheme = scheme;
      }
      pending.push_back(std::move(item));
    }
  }

  std::vector<ManifestEntry> entries;
  for (const auto& p : pending) entries.push_back(p.entry);
  auto manifest = assign_splits(std::move(entries), config.split_policy, scheme);

  // assign_splits returns entries in (source,row,col) order, the same order
  // `pending` was built in, so the two line up index for index.
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    auto& e = manifest.entries[i];
    const auto& p = pending[i];
    const std::filesystem::path dir = std::filesystem::path(split_name(e.split)) / e.region;
    e.patch_path = (dir / (patch_stem(e) + ".ras")).generic_string();
    write_raster(p.image, out_dir / e.patch_path);
    if (p.label) {
      e.label_path = (dir / (patch_stem(e) + "_label.ras")).generic_string();
      write_mask(*p.label, out_dir / *e.label_path);
    }
  }

  auto& prov = manifest.provenance;
  prov.patch_size = config.patch_size;
  prov.selected_bands = config.selected_bands;
  prov.max_invalid_fraction = config.max_invalid_fraction;
  prov.equalize = config.equalize;
  prov.normalize = config.equalize ? "equalized"
                                   : (config.normalize == Normalize::MinMax ? "minmax" : "none");
  prov.filters = {"size>=" + std::to_string(config.patch_size),
                  "invalid_fraction<=" + format_fraction(config.max_invalid_fraction)};
  if (config.equalize) prov.filters.push_back("histogram_equalization");
  save_manifest(manifest, out_dir / "manifest.json");
  result.manifest = std::move(manifest);
  return result;
}

}  // namespace wetseg::pipeline
