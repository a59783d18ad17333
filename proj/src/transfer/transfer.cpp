// SPDX-License-Identifier: Apache-2.0
#include "wetseg/transfer/transfer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "wetseg/error.hpp"
#include "wetseg/rng.hpp"

namespace wetseg::transfer {

namespace {

constexpr double kFootprintSlack = 1e-6;  // meters

bool covers(const SceneRef& outer, const SceneRef& inner) {
  return inner.origin_x >= outer.origin_x - kFootprintSlack &&
         inner.origin_y >= outer.origin_y - kFootprintSlack &&
         inner.origin_x + inner.width * inner.gsd_m <=
             outer.origin_x + outer.width * outer.gsd_m + kFootprintSlack &&
         inner.origin_y + inner.height * inner.gsd_m <=
             outer.origin_y + outer.height * outer.gsd_m + kFootprintSlack;
}

std::vector<std::uint32_t> grid_edges(std::uint32_t extent, std::uint32_t parts) {
  const std::uint32_t step = extent / parts;
  std::vector<std::uint32_t> e;
  for (std::uint32_t i = 0; i < parts; ++i) e.push_back(i * step);
  e.push_back(extent);
  return e;
}

}  // namespace

const std::vector<std::string>& sentinel2_rgbn_bands() {
  static const std::vector<std::string> bands{"B4", "B3", "B2", "B8"};
  return bands;
}

void to_json(nlohmann::json& j, const SceneRef& s) {
  j = {{"id", s.id},           {"path", s.path},         {"acquired_at", s.acquired_at},
       {"gsd_m", s.gsd_m},     {"width", s.width},       {"height", s.height},
       {"origin_x", s.origin_x}, {"origin_y", s.origin_y}};
  if (!s.mask.empty()) j["mask"] = s.mask;
}

void from_json(const nlohmann::json& j, SceneRef& s) {
  try {
    s.id = j.at("id").get<std::string>();
    s.path = j.value("path", std::string{});
    s.mask = j.value("mask", std::string{});
    s.acquired_at = j.at("acquired_at").get<std::string>();
    s.gsd_m = j.at("gsd_m").get<double>();
    s.width = j.at("width").get<std::uint32_t>();
    s.height = j.at("height").get<std::uint32_t>();
    s.origin_x = j.value("origin_x", 0.0);
    s.origin_y = j.value("origin_y", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scene entry: ") + e.what());
  }
  if (!(s.gsd_m > 0)) throw ConfigError("scene '" + s.id + "': gsd_m must be > 0");
}

long days_from_date(const std::string& date) {
  int y = 0;
  unsigned m = 0, d = 0;
  char tail = 0;
  const int n = std::sscanf(date.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail);
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m},
                                        std::chrono::day{d}};
  if (date.size() < 10 || n < 3 || (n == 4 && tail != 'T' && tail != ' ') || !ymd.ok())
    throw DataError("invalid date '" + date + "', expected YYYY-MM-DD");
  return std::chrono::sys_days{ymd}.time_since_epoch().count();
}

AffineMap AffineMap::between(const SceneRef& hires, const SceneRef& lores) {
  return {hires.gsd_m / lores.gsd_m, hires.gsd_m / lores.gsd_m,
          (hires.origin_x - lores.origin_x) / lores.gsd_m,
          (hires.origin_y - lores.origin_y) / lores.gsd_m};
}

PairingReport pair_scenes(const std::vector<SceneRef>& hires, const std::vector<SceneRef>& lores,
                          int max_gap_days) {
  if (max_gap_days < 0) throw ConfigError("max_gap_days must be >= 0");
  PairingReport report;
  report.max_gap_days = max_gap_days;
  for (const auto& h : hires) {
    const long hd = days_from_date(h.acquired_at);
    const SceneRef* best = nullptr;
    long best_gap = 0, best_day = 0;
    for (const auto& l : lores) {
      if (!covers(l, h)) continue;
      const long ld = days_from_date(l.acquired_at);
      const long gap = std::labs(ld - hd);
      if (!best || gap < best_gap || (gap == best_gap && ld < best_day)) {
        best = &l;
        best_gap = gap;
        best_day = ld;
      }
    }
    if (!best) {
      report.unpaired.push_back({h.id, "no lores scene covers the footprint"});
    } else if (best_gap > max_gap_days) {
      report.unpaired.push_back({h.id, "no lores scene within " + std::to_string(max_gap_days) +
                                           " days (nearest gap " + std::to_string(best_gap) + ")"});
    } else {
      report.pairs.push_back({h, *best, static_cast<int>(best_gap), AffineMap::between(h, *best)});
    }
  }
  return report;
}

void to_json(nlohmann::json& j, const PairingReport& r) {
  auto pairs = nlohmann::json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"hires", p.hires.id},
                     {"lores", p.lores.id},
                     {"hires_date", p.hires.acquired_at},
                     {"lores_date", p.lores.acquired_at},
                     {"gap_days", p.date_gap_days},
                     {"mapping",
                      {{"scale_x", p.mapping.scale_x},
                       {"scale_y", p.mapping.scale_y},
                       {"offset_x", p.mapping.offset_x},
                       {"offset_y", p.mapping.offset_y}}}});
  auto unpaired = nlohmann::json::array();
  for (const auto& u : r.unpaired) unpaired.push_back({{"id", u.id}, {"reason", u.reason}});
  j = {{"max_gap_days", r.max_gap_days}, {"pairs", pairs}, {"unpaired", unpaired}};
}

std::vector<GridTile> grid_split(std::uint32_t width, std::uint32_t height, std::uint32_t rows,
                                 std::uint32_t cols) {
  if (rows < 1 || cols < 1) throw ConfigError("grid_split: rows and cols must be >= 1");
  if (rows > height || cols > width)
    throw ConfigError("grid_split: a " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " grid leaves empty cells in a " + std::to_string(width) + "x" +
                      std::to_string(height) + " raster");
  const auto ys = grid_edges(height, rows), xs = grid_edges(width, cols);
  std::vector<GridTile> out;
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) {
      GridTile t;
      t.row = r;
      t.col = c;
      t.pos = {r, c, ys[r], xs[c], xs[c + 1] - xs[c], ys[r + 1] - ys[r], false};
      out.push_back(t);
    }
  return out;
}

std::vector<MultibandRaster> grid_split(const MultibandRaster& raster, std::uint32_t rows,
                                        std::uint32_t cols) {
  std::vector<MultibandRaster> out;
  for (const auto& t : grid_split(raster.width, raster.height, rows, cols))
    out.push_back(pipeline::crop(raster, t.pos));
  return out;
}

LabelMask downscale_labels(const LabelMask& hires, const AffineMap& mapping,
                           std::uint32_t lores_width, std::uint32_t lores_height,
                           float lores_gsd_m) {
  const std::size_t k = hires.scheme.size();
  if (k == 0 || k >= kUnlabeled) throw DataError("downscale_labels: mask scheme has no usable classes");
  const std::size_t cells = std::size_t{lores_width} * lores_height;
  std::vector<std::uint32_t> votes(cells * k, 0);
  for (std::uint32_t r = 0; r < hires.height; ++r) {
    const double y = mapping.offset_y + mapping.scale_y * (r + 0.5);
    const double fy = std::floor(y);
    for (std::uint32_t c = 0; c < hires.width; ++c) {
      const double fx = std::floor(mapping.offset_x + mapping.scale_x * (c + 0.5));
      if (fx < 0 || fy < 0 || fx >= lores_width || fy >= lores_height)
        throw DataError("hires pixel (" + std::to_string(r) + ", " + std::to_string(c) +
                        ") maps outside the " + std::to_string(lores_width) + "x" +
                        std::to_string(lores_height) + " lores grid");
      const std::uint8_t v = hires.at(r, c);
      if (v == kUnlabeled) continue;
      if (v >= k) throw DataError("class id " + std::to_string(v) + " outside scheme '" + hires.scheme.name + "'");
      const std::size_t cell = static_cast<std::size_t>(fy) * lores_width + static_cast<std::size_t>(fx);
      ++votes[cell * k + v];
    }
  }
  LabelMask out;
  out.width = lores_width;
  out.height = lores_height;
  out.scheme = hires.scheme;
  out.gsd_m = lores_gsd_m;
  out.values.assign(cells, kUnlabeled);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const auto* v = votes.data() + cell * k;
    const auto best = std::max_element(v, v + k);  // first maximum: lowest id wins ties
    if (*best > 0) out.values[cell] = static_cast<std::uint8_t>(best - v);
  }
  return out;
}

std::vector<std::string> ResolutionConfig::violations() const {
  std::vector<std::string> v;
  if (hires_patch < 1) v.push_back("hires_patch must be >= 1");
  if (lores_patch < 1) v.push_back("lores_patch must be >= 1");
  if (hires_bands.size() != lores_bands.size())
    v.push_back("hires_bands and lores_bands must have the same length");
  if (hires_max_invalid < 0 || hires_max_invalid > 1) v.push_back("hires_max_invalid must lie in [0,1]");
  if (lores_max_invalid < 0 || lores_max_invalid > 1) v.push_back("lores_max_invalid must lie in [0,1]");
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction > 1)
    v.push_back("val_fraction and test_fraction must be nonnegative with sum <= 1");
  try {
    builtin_scheme(class_scheme);
  } catch (const ConfigError& e) {
    v.push_back(e.what());
  }
  return v;
}

void to_json(nlohmann::json& j, const ResolutionConfig& c) {
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [id, s] : c.scene_splits) splits[id] = split_name(s);
  j = {{"hires_patch", c.hires_patch},
       {"lores_patch", c.lores_patch},
       {"hires_bands", c.hires_bands},
       {"lores_bands", c.lores_bands},
       {"hires_max_invalid", c.hires_max_invalid},
       {"lores_max_invalid", c.lores_max_invalid},
       {"equalize", c.equalize},
       {"class_scheme", c.class_scheme},
       {"scene_splits", splits},
       {"val_fraction", c.val_fraction},
       {"test_fraction", c.test_fraction},
       {"seed", c.seed}};
}

void update_from_json(const nlohmann::json& j, ResolutionConfig& c) {
  if (!j.is_object()) throw ConfigError("resolution config must be a JSON object");
  std::vector<std::string> errors;
  auto field = [&](const char* key, auto& dst) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(dst);
    } catch (const std::exception& e) {
      errors.push_back(std::string(key) + ": " + e.what());
    }
  };
  for (const auto& [k, v] : j.items()) {
    static const std::vector<std::string> known{
        "hires_patch", "lores_patch", "hires_bands", "lores_bands",  "hires_max_invalid", "lores_max_invalid",
        "equalize",    "class_scheme", "scene_splits", "val_fraction", "test_fraction",     "seed"};
    if (std::find(known.begin(), known.end(), k) == known.end()) errors.push_back("unknown key '" + k + "'");
  }
  field("hires_patch", c.hires_patch);
  field("lores_patch", c.lores_patch);
  field("hires_bands", c.hires_bands);
  field("lores_bands", c.lores_bands);
  field("hires_max_invalid", c.hires_max_invalid);
  field("lores_max_invalid", c.lores_max_invalid);
  field("equalize", c.equalize);
  field("class_scheme", c.class_scheme);
  field("val_fraction", c.val_fraction);
  field("test_fraction", c.test_fraction);
  field("seed", c.seed);
  if (j.contains("scene_splits")) {
    try {
      c.scene_splits.clear();
      for (const auto& [id, s] : j["scene_splits"].items()) c.scene_splits[id] = parse_split(s.get<std::string>());
    } catch (const std::exception& e) {
      errors.push_back(std::string("scene_splits: ") + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid resolution config:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

std::map<std::string, Split> assign_scene_splits(const std::vector<std::string>& scene_ids,
                                                 const ResolutionConfig& c) {
  std::vector<std::string> ids = scene_ids;
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
    throw DataError("duplicate scene id in the resolution experiment");
  std::map<std::string, Split> out;
  std::vector<std::string> rest;
  for (const auto& id : ids) {
    auto it = c.scene_splits.find(id);
    if (it != c.scene_splits.end()) out[id] = it->second;
    else rest.push_back(id);
  }
  auto rng = keyed_rng(c.seed, rng_stream::kSplit);
  for (std::size_t i = rest.size(); i > 1; --i) std::swap(rest[i - 1], rest[rng() % i]);
  const auto n_val = static_cast<std::size_t>(std::floor(rest.size() * c.val_fraction));
  const auto n_test = static_cast<std::size_t>(std::floor(rest.size() * c.test_fraction));
  for (std::size_t i = 0; i < rest.size(); ++i)
    out[rest[i]] = i < n_val ? Split::Val : (i < n_val + n_test ? Split::Test : Split::Train);
  return out;
}

ResolutionExperiment build_resolution_experiment(const std::vector<ScenePair>& pairs,
                                                 const std::filesystem::path& base_dir,
                                                 const ResolutionConfig& config,
                                                 const std::filesystem::path& out_dir) {
  if (auto v = config.violations(); !v.empty()) {
    std::string msg = "invalid resolution config:";
    for (const auto& s : v) msg += "\n  " + s;
    throw ConfigError(msg);
  }
  if (pairs.empty()) throw DataError("no scene pairs to build a resolution experiment from");
  const ClassScheme& scheme = builtin_scheme(config.class_scheme);
  std::vector<std::string> ids;
  for (const auto& p : pairs) ids.push_back(p.hires.id);
  ResolutionExperiment exp;
  exp.scene_splits = assign_scene_splits(ids, config);

  std::vector<pipeline::SceneInput> hires_in, lores_in;
  for (const auto& p : pairs) {
    if (p.hires.mask.empty()) throw DataError("missing mask for scene '" + p.hires.id + "'");
    MultibandRaster hi = read_raster(base_dir / p.hires.path);
    const LabelMask mask = read_mask(base_dir / p.hires.mask, scheme);
    if (mask.width != hi.width || mask.height != hi.height)
      throw DataError("scene '" + p.hires.id + "': mask dims differ from the raster");
    hi.region = p.hires.id;
    hi.acquired_at = p.hires.acquired_at;
    hi.gsd_m = static_cast<float>(p.hires.gsd_m);
    hires_in.push_back({std::move(hi), mask, p.hires.id, std::nullopt});

    const MultibandRaster lo_full = read_raster(base_dir / p.lores.path);
    const LabelMask lo_mask = downscale_labels(mask, p.mapping, lo_full.width, lo_full.height,
                                               static_cast<float>(p.lores.gsd_m));
    const std::uint32_t n = config.lores_patch;
    if (lo_full.width < n || lo_full.height < n)
      throw DataError("lores scene '" + p.lores.id + "' is smaller than one " + std::to_string(n) +
                      " px patch");
    // window centered on the hires footprint, clamped into the scene
    auto place = [&](double offset, double scale, std::uint32_t extent, std::uint32_t hires_extent) {
      const double center = offset + scale * hires_extent / 2.0;
      const double start = std::round(center - n / 2.0);
      return static_cast<std::uint32_t>(std::clamp(start, 0.0, double(extent - n)));
    };
    const pipeline::TilePosition window{0, 0,
                                        place(p.mapping.offset_y, p.mapping.scale_y, lo_full.height, mask.height),
                                        place(p.mapping.offset_x, p.mapping.scale_x, lo_full.width, mask.width),
                                        n, n, false};
    MultibandRaster lo = pipeline::crop(lo_full, window);
    lo.region = p.hires.id;
    lo.acquired_at = p.lores.acquired_at;
    lo.gsd_m = static_cast<float>(p.lores.gsd_m);
    lores_in.push_back({std::move(lo), pipeline::crop(lo_mask, window), p.lores.id + "_" + p.hires.id,
                        std::nullopt});
  }

  pipeline::SplitPolicy policy;
  policy.kind = pipeline::SplitPolicy::Kind::ByRegion;
  policy.regions = exp.scene_splits;

  pipeline::PreprocessConfig hc;
  hc.selected_bands = config.hires_bands;
  hc.patch_size = config.hires_patch;
  hc.max_invalid_fraction = config.hires_max_invalid;
  hc.equalize = config.equalize;
  hc.split_policy = policy;
  hc.class_scheme = config.class_scheme;
  pipeline::PreprocessConfig lc = hc;
  lc.selected_bands = config.lores_bands;
  lc.patch_size = config.lores_patch;
  lc.max_invalid_fraction = config.lores_max_invalid;

  exp.hires = pipeline::run_pipeline(hires_in, hc, out_dir / "hires").manifest;
  exp.lores = pipeline::run_pipeline(lores_in, lc, out_dir / "lores").manifest;
  return exp;
}

}  // namespace wetseg::transfer
