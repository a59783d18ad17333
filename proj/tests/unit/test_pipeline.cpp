// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "support/temp_dir.hpp"
#include "wetseg/error.hpp"
#include "wetseg/pipeline/pipeline.hpp"

using namespace wetseg;
using namespace wetseg::pipeline;
using wetseg::testing::TempDir;

namespace {

std::vector<std::string> numbered_bands(int n) {
  std::vector<std::string> names;
  for (int i = 1; i <= n; ++i) names.push_back("B" + std::to_string(i));
  return names;
}

MultibandRaster ramp(std::uint32_t w, std::uint32_t h, std::vector<std::string> bands) {
  auto r = MultibandRaster::zeros(w, h, std::move(bands));
  for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] = static_cast<float>(i % 997) + 1.0f;
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::vector<ManifestEntry> entries_for(std::size_t n, const std::string& region = "r") {
  std::vector<ManifestEntry> out;
  for (std::size_t i = 0; i < n; ++i) {
    ManifestEntry e;
    e.patch_path = "p" + std::to_string(i) + ".ras";
    e.region = region;
    e.source = "scene";
    e.row = static_cast<std::uint32_t>(i);
    out.push_back(e);
  }
  return out;
}

}  // namespace

TEST_CASE("select_bands keeps the nine wetland bands of a 26-band stack") {
  auto names = numbered_bands(12);
  names.push_back("B8A");
  for (int i = 0; i < 13; ++i) names.push_back("aux" + std::to_string(i));
  REQUIRE(names.size() == 26);
  const auto r = ramp(8, 8, names);
  const auto out = select_bands(r, sentinel2_wetland_bands());
  CHECK(out.bands == 9);
  CHECK(out.band_names == sentinel2_wetland_bands());
  for (std::uint32_t b = 0; b < 9; ++b) {
    const auto src = r.band(r.band_index(out.band_names[b]));
    CHECK(std::equal(src.begin(), src.end(), out.band(b).begin()));
  }
}

TEST_CASE("select_bands identity and permutation") {
  auto r = MultibandRaster::zeros(5, 4, {"B2", "B3", "B4"});
  std::mt19937 rng(1);
  for (auto& v : r.data) v = static_cast<float>(rng() % 1000);
  CHECK(select_bands(r, r.band_names) == r);

  const auto p = select_bands(r, {"B4", "B3", "B2"});
  for (std::uint32_t y = 0; y < 4; ++y)
    for (std::uint32_t x = 0; x < 5; ++x)
      for (std::uint32_t b = 0; b < 3; ++b) CHECK(p.at(b, y, x) == r.at(2 - b, y, x));

  CHECK_THROWS_WITH_AS(select_bands(r, {"B2", "B9"}), doctest::Contains("B9"), DataError);
}

TEST_CASE("tile grid counts") {
  const auto count = [](std::uint32_t w, std::uint32_t h, std::uint32_t s) {
    std::size_t full = 0, small = 0;
    for (const auto& t : tile_grid(w, h, s)) (t.undersized ? small : full)++;
    return std::pair{full, small};
  };
  CHECK(count(512, 512, 256) == std::pair<std::size_t, std::size_t>{4, 0});
  CHECK(count(1024, 1024, 1024) == std::pair<std::size_t, std::size_t>{1, 0});
  // Counting oracle: full = floor(w/s)*floor(h/s), total = ceil(w/s)*ceil(h/s).
  std::mt19937 rng(5);
  for (int i = 0; i < 100; ++i) {
    const std::uint32_t w = 1 + rng() % 700, h = 1 + rng() % 700, s = 1 + rng() % 300;
    const std::size_t full = std::size_t{w / s} * (h / s);
    const std::size_t total = std::size_t{(w + s - 1) / s} * ((h + s - 1) / s);
    CHECK(count(w, h, s) == std::pair{full, total - full});
  }
  CHECK(count(600, 600, 256) == std::pair<std::size_t, std::size_t>{4, 5});
}

TEST_CASE("tiling partitions the raster") {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint32_t w = 1 + rng() % 90, h = 1 + rng() % 90, s = 1 + rng() % 40;
    std::vector<int> hits(std::size_t{w} * h, 0);
    for (const auto& t : tile_grid(w, h, s)) {
      CHECK(t.y0 + t.height <= h);
      CHECK(t.x0 + t.width <= w);
      CHECK(t.undersized == (t.width < s || t.height < s));
      for (std::uint32_t y = t.y0; y < t.y0 + t.height; ++y)
        for (std::uint32_t x = t.x0; x < t.x0 + t.width; ++x) ++hits[std::size_t{y} * w + x];
    }
    CHECK(std::all_of(hits.begin(), hits.end(), [](int c) { return c == 1; }));
  }
}

TEST_CASE("tile copies pixel values and counts invalid pixels") {
  auto r = ramp(10, 6, {"B2", "B3"});
  r.nodata_value = 0.0f;
  for (std::uint32_t b = 0; b < 2; ++b) r.at(b, 1, 1) = 0.0f;
  r.at(0, 2, 2) = 0.0f;  // only one band at nodata: still valid
  const auto patches = tile(r, 4);
  REQUIRE(patches.size() == 6);
  CHECK(patches[0].invalid_pixels == 1);
  const auto& p = patches[4];  // grid row 1, col 1
  CHECK(p.pos.grid_row == 1);
  CHECK(p.pos.grid_col == 1);
  CHECK(p.image.width == 4);
  CHECK(p.image.height == 2);
  CHECK(p.image.at(1, 1, 3) == r.at(1, 5, 7));
}

TEST_CASE("quality_filter rejects just above the threshold") {
  auto r = MultibandRaster::zeros(256, 256, {"B2"});
  for (auto& v : r.data) v = 1.0f;
  for (int i = 0; i < 6554; ++i) r.data[i] = 0.0f;
  auto patches = tile(r, 256);
  REQUIRE(patches[0].invalid_pixels == 6554);
  CHECK(6554.0 / 65536.0 > 0.10);
  auto res = quality_filter(patches, 0.10, 256);
  CHECK(res.kept.empty());
  REQUIRE(res.rejected.size() == 1);
  CHECK(res.rejected[0].reason == "invalid_fraction");

  r.data[6553] = 1.0f;  // 6553/65536 is below 10 %
  res = quality_filter(tile(r, 256), 0.10, 256);
  CHECK(res.kept.size() == 1);
}

TEST_CASE("quality_filter keeps clean patches and rejects undersized ones") {
  auto clean = ramp(256, 256, {"B2"});
  CHECK(quality_filter(tile(clean, 256), 0.10, 256).kept.size() == 1);

  const auto narrow = ramp(256, 200, {"B2"});
  const auto res = quality_filter(tile(narrow, 256), 0.10, 256);
  CHECK(res.kept.empty());
  REQUIRE(res.rejected.size() == 1);
  CHECK(res.rejected[0].reason == "undersized");
}

TEST_CASE("quality_filter agrees with a brute-force invalid count") {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    auto r = MultibandRaster::zeros(16, 16, {"B2", "B3"});
    const double density = (rng() % 100) / 400.0;
    std::bernoulli_distribution black(density);
    for (std::uint32_t y = 0; y < 16; ++y)
      for (std::uint32_t x = 0; x < 16; ++x) {
        const bool b = black(rng);
        r.at(0, y, x) = b ? 0.0f : 1.0f + static_cast<float>(rng() % 50);
        r.at(1, y, x) = b ? 0.0f : static_cast<float>(rng() % 2);
      }
    int oracle = 0;
    for (std::uint32_t y = 0; y < 16; ++y)
      for (std::uint32_t x = 0; x < 16; ++x)
        oracle += r.at(0, y, x) == 0.0f && r.at(1, y, x) == 0.0f;
    const double threshold = (rng() % 30) / 100.0;
    const auto res = quality_filter(tile(r, 16), threshold, 16);
    const bool keep = oracle <= threshold * 256.0;
    CHECK(res.kept.size() == (keep ? 1u : 0u));
  }
}

TEST_CASE("equalize_histogram") {
  SUBCASE("uniform band is nearly unchanged") {
    auto r = MultibandRaster::zeros(64, 64, {"B2"});
    for (std::size_t i = 0; i < r.data.size(); ++i)
      r.data[i] = static_cast<float>(i) / static_cast<float>(r.data.size() - 1);
    r.nodata_value = -1.0f;
    const auto e = equalize_histogram(r);
    for (std::size_t i = 0; i < r.data.size(); ++i)
      CHECK(std::abs(e.data[i] - r.data[i]) <= 2.0f / 256.0f);
  }
  SUBCASE("two-valued band follows its CDF") {
    auto r = MultibandRaster::zeros(10, 10, {"B2"});
    for (std::size_t i = 0; i < 100; ++i) r.data[i] = i < 10 ? 3.0f : 7.0f;
    const auto e = equalize_histogram(r);
    CHECK(e.data[0] == doctest::Approx(0.1).epsilon(1.0 / 256.0));
    CHECK(e.data[50] == doctest::Approx(1.0).epsilon(1.0 / 256.0));
  }
  SUBCASE("constant band maps to one half") {
    auto r = MultibandRaster::zeros(4, 4, {"B2"});
    std::fill(r.data.begin(), r.data.end(), 42.0f);
    const auto e = equalize_histogram(r);
    CHECK(std::all_of(e.data.begin(), e.data.end(), [](float v) { return v == 0.5f; }));
  }
  SUBCASE("invalid pixels stay at zero, output monotone and within [0,1]") {
    std::mt19937 rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      auto r = MultibandRaster::zeros(20, 20, {"B2", "B3"});
      std::lognormal_distribution<float> d(3.0f, 1.0f);
      for (auto& v : r.data) v = 1.0f + d(rng);
      for (std::uint32_t b = 0; b < 2; ++b) r.at(b, 3, 3) = 0.0f;
      const auto e = equalize_histogram(r);
      CHECK(e.at(0, 3, 3) == 0.0f);
      CHECK(e.at(1, 3, 3) == 0.0f);
      for (std::uint32_t b = 0; b < 2; ++b) {
        std::vector<std::size_t> idx(400);
        for (std::size_t i = 0; i < 400; ++i) idx[i] = i;
        idx.erase(idx.begin() + 3 * 20 + 3);
        const auto in = r.band(b);
        const auto out = e.band(b);
        std::sort(idx.begin(), idx.end(), [&](auto a, auto c) { return in[a] < in[c]; });
        for (std::size_t k = 1; k < idx.size(); ++k) CHECK(out[idx[k - 1]] <= out[idx[k]]);
        for (float v : out) CHECK((v >= 0.0f && v <= 1.0f));
      }
    }
  }
}

TEST_CASE("normalize_minmax") {
  auto r = MultibandRaster::zeros(3, 1, {"B2", "B3"});
  r.data = {0.0f, 10.0f, 30.0f, 0.0f, 5.0f, 5.0f};
  r.nodata_value = 0.0f;
  const auto n = normalize_minmax(r);
  // Pixel 0 is invalid in both bands.
  CHECK(n.at(0, 0, 0) == 0.0f);
  CHECK(n.at(0, 0, 1) == 0.0f);
  CHECK(n.at(0, 0, 2) == 1.0f);
  CHECK(n.at(1, 0, 1) == 0.0f);  // constant band
  CHECK(n.at(1, 0, 2) == 0.0f);
}

TEST_CASE("assign_splits by region") {
  auto entries = entries_for(2, "Biesbosch");
  auto more = entries_for(3, "Lauwersmeer");
  auto rest = entries_for(4, "Gelderse Poort");
  for (auto& e : more) e.source = "b";
  for (auto& e : rest) e.source = "c";
  entries.insert(entries.end(), more.begin(), more.end());
  entries.insert(entries.end(), rest.begin(), rest.end());
  const auto m = assign_splits(entries, SplitPolicy::wetlands_by_region());
  for (const auto& e : m.entries) {
    if (e.region == "Biesbosch") CHECK(e.split == Split::Test);
    else if (e.region == "Lauwersmeer") CHECK(e.split == Split::Val);
    else CHECK(e.split == Split::Train);
  }
  CHECK(m.count(Split::Train) == 4);
  CHECK(m.provenance.split_policy == "by_region");

  SplitPolicy strict;
  strict.regions = {{"Biesbosch", Split::Test}};
  CHECK_THROWS_WITH_AS(assign_splits(entries, strict), doctest::Contains("Lauwersmeer"),
                       ConfigError);
}

TEST_CASE("assign_splits random follows the floor-then-remainder rule") {
  SplitPolicy p;
  p.kind = SplitPolicy::Kind::Random;
  p.seed = 17;
  const auto m = assign_splits(entries_for(1368), p);
  // floor(0.15*1368)=205, floor(0.10*1368)=136, remainder 1027.
  CHECK(m.count(Split::Val) == 205);
  CHECK(m.count(Split::Test) == 136);
  CHECK(m.count(Split::Train) == 1027);
  const long long dev = static_cast<long long>(m.count(Split::Train)) - 1026;
  CHECK(std::llabs(dev) <= 1);

  CHECK(dump_manifest(assign_splits(entries_for(1368), p)) == dump_manifest(m));
  p.seed = 18;
  CHECK(dump_manifest(assign_splits(entries_for(1368), p)) != dump_manifest(m));

  SplitPolicy all_train;
  all_train.kind = SplitPolicy::Kind::Random;
  all_train.train = 1.0;
  all_train.val = 0.0;
  all_train.test = 0.0;
  const auto one = assign_splits(entries_for(1), all_train);
  REQUIRE(one.entries.size() == 1);
  CHECK(one.entries[0].split == Split::Train);

  SplitPolicy bad = all_train;
  bad.val = 0.2;
  CHECK_THROWS_AS(assign_splits(entries_for(1), bad), ConfigError);
}

TEST_CASE("preprocess config defaults and validation") {
  const auto med = PreprocessConfig::medium_resolution();
  CHECK(med.patch_size == 256);
  CHECK(med.max_invalid_fraction == 0.10);
  CHECK(med.selected_bands.size() == 9);
  CHECK(med.violations().empty());
  const auto hi = PreprocessConfig::high_resolution();
  CHECK(hi.patch_size == 1024);
  CHECK(hi.max_invalid_fraction == 0.30);
  CHECK(hi.split_policy.kind == SplitPolicy::Kind::Random);

  auto bad = med;
  bad.patch_size = 0;
  bad.max_invalid_fraction = 1.5;
  CHECK(bad.violations().size() == 2);

  nlohmann::json j = med;
  PreprocessConfig back = hi;
  update_from_json(j, back);
  CHECK(nlohmann::json(back) == j);
}

namespace {

struct Scene {
  MultibandRaster image;
  LabelMask label;
};

Scene labeled_scene(std::uint32_t size, const std::string& region) {
  Scene s;
  s.image = ramp(size, size, sentinel2_wetland_bands());
  s.image.region = region;
  s.image.acquired_at = "2023-06-01";
  s.label = LabelMask{size, size, dynamic_world_scheme(),
                      std::vector<std::uint8_t>(std::size_t{size} * size), 10.0f};
  for (std::size_t i = 0; i < s.label.values.size(); ++i) s.label.values[i] = i % 9;
  return s;
}

}  // namespace

TEST_CASE("run_pipeline writes paired patches and a manifest") {
  TempDir dir("pipe");
  auto s = labeled_scene(512, "Biesbosch");
  auto cfg = PreprocessConfig::medium_resolution();
  cfg.max_invalid_fraction = 0.0;
  const auto res = run_pipeline({{s.image, s.label, "s2a", std::nullopt}}, cfg, dir.path());
  REQUIRE(res.manifest.entries.size() == 4);
  for (const auto& e : res.manifest.entries) {
    CHECK(e.split == Split::Test);
    REQUIRE(e.label_path.has_value());
    const auto img = read_raster(dir.path() / e.patch_path);
    const auto lbl = read_mask(dir.path() / *e.label_path, dynamic_world_scheme());
    CHECK(img.width == 256);
    CHECK(lbl.width == 256);
    // Labels are cropped, never resampled.
    CHECK(lbl.at(0, 0) == s.label.at(e.row * 256, e.col * 256));
  }
  CHECK(std::filesystem::exists(dir.path() / "test/Biesbosch/s2a_1_1.ras"));
  CHECK(std::filesystem::exists(dir.path() / "test/Biesbosch/s2a_1_1_label.ras"));
  const auto loaded = load_manifest(dir.path() / "manifest.json", ManifestCheck::Files);
  CHECK(loaded.entries == res.manifest.entries);
  CHECK(loaded.provenance.filters == std::vector<std::string>{"size>=256", "invalid_fraction<=0"});
}

TEST_CASE("run_pipeline rejects an image patch together with its label") {
  TempDir dir("pipe");
  auto s = labeled_scene(512, "Lauwersmeer");
  s.image.nodata_value = 0.0f;
  for (std::uint32_t b = 0; b < s.image.bands; ++b)
    for (std::uint32_t y = 256; y < 300; ++y)
      for (std::uint32_t x = 0; x < 256; ++x) s.image.at(b, y, x) = 0.0f;
  auto cfg = PreprocessConfig::medium_resolution();
  const auto res = run_pipeline({{s.image, s.label, "scene", std::nullopt}}, cfg, dir.path());
  CHECK(res.manifest.entries.size() == 3);
  CHECK(res.rejections.at("invalid_fraction") == 1);
  for (const auto& e : res.manifest.entries) CHECK(!(e.row == 1 && e.col == 0));
  CHECK(!std::filesystem::exists(dir.path() / "val/Lauwersmeer/scene_1_0.ras"));
  CHECK(!std::filesystem::exists(dir.path() / "val/Lauwersmeer/scene_1_0_label.ras"));
}

TEST_CASE("run_pipeline with equalization records it and is deterministic") {
  TempDir a("pipe"), b("pipe");
  auto s = labeled_scene(300, "Gelderse Poort");
  auto cfg = PreprocessConfig::medium_resolution();
  cfg.equalize = true;
  const auto ra = run_pipeline({{s.image, s.label, "x", 0.05}}, cfg, a.path());
  const auto rb = run_pipeline({{s.image, s.label, "x", 0.05}}, cfg, b.path());
  CHECK(ra.manifest.provenance.equalize);
  CHECK(ra.rejections.at("undersized") == 3);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  const auto img = read_raster(a.path() / ra.manifest.entries.at(0).patch_path);
  CHECK(img == equalize_histogram(crop(s.image, tile_grid(300, 300, 256)[0])));
}

TEST_CASE("run_pipeline rejects mismatched label dims") {
  TempDir dir("pipe");
  auto s = labeled_scene(256, "Biesbosch");
  s.label.width = 128;
  s.label.values.resize(128 * 256);
  CHECK_THROWS_AS(run_pipeline({{s.image, s.label, "x", std::nullopt}},
                               PreprocessConfig::medium_resolution(), dir.path()),
                  DataError);
}
