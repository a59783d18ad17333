// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "support/downscale_oracle.hpp"
#include "support/temp_dir.hpp"
#include "wetseg/error.hpp"
#include "wetseg/transfer/transfer.hpp"

using namespace wetseg;
using namespace wetseg::transfer;
using wetseg::testing::downscale_oracle;
using wetseg::testing::TempDir;

namespace {

SceneRef scene(const std::string& id, const std::string& date, double gsd, std::uint32_t w,
               std::uint32_t h, double ox = 0, double oy = 0) {
  SceneRef s;
  s.id = id;
  s.acquired_at = date;
  s.gsd_m = gsd;
  s.width = w;
  s.height = h;
  s.origin_x = ox;
  s.origin_y = oy;
  return s;
}

LabelMask random_mask(std::uint32_t w, std::uint32_t h, int classes, std::mt19937& rng,
                      bool holes = true) {
  LabelMask m;
  m.width = w;
  m.height = h;
  m.scheme = biesbosch_manual_scheme();
  std::uniform_int_distribution<int> cls(0, classes - 1), hole(0, 19);
  for (std::size_t i = 0; i < std::size_t{w} * h; ++i)
    m.values.push_back(holes && hole(rng) == 0 ? kUnlabeled : static_cast<std::uint8_t>(cls(rng)));
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("scene pairing picks the nearest date inside the footprint") {
  const auto h = scene("h", "2023-06-10", 0.3, 100, 100, 50, 50);
  const auto a = scene("a", "2023-06-09", 10, 20, 20);
  const auto b = scene("b", "2023-06-20", 10, 20, 20);
  const auto r = pair_scenes({h}, {b, a});
  REQUIRE(r.pairs.size() == 1);
  CHECK(r.pairs[0].lores.id == "a");
  CHECK(r.pairs[0].date_gap_days == 1);
  CHECK(r.unpaired.empty());
}

TEST_CASE("equal gaps go to the earlier date") {
  const auto h = scene("h", "2023-06-10", 0.3, 10, 10);
  const auto late = scene("late", "2023-06-13", 10, 5, 5);
  const auto early = scene("early", "2023-06-07", 10, 5, 5);
  CHECK(pair_scenes({h}, {late, early}).pairs.at(0).lores.id == "early");
  CHECK(pair_scenes({h}, {early, late}).pairs.at(0).lores.id == "early");
}

TEST_CASE("scenes without a candidate are reported unpaired") {
  const auto h = scene("h", "2023-06-10", 0.3, 10, 10);
  const auto far = scene("far", "2023-06-30", 10, 5, 5);
  const auto r = pair_scenes({h}, {far});
  CHECK(r.pairs.empty());
  REQUIRE(r.unpaired.size() == 1);
  CHECK(r.unpaired[0].reason.find("nearest gap 20") != std::string::npos);
  CHECK(pair_scenes({h}, {far}, 20).pairs.size() == 1);

  const auto elsewhere = scene("elsewhere", "2023-06-10", 10, 5, 5, 1000, 0);
  const auto r2 = pair_scenes({h}, {elsewhere});
  REQUIRE(r2.unpaired.size() == 1);
  CHECK(r2.unpaired[0].reason.find("footprint") != std::string::npos);
  const nlohmann::json j = r2;
  CHECK(j["unpaired"][0]["id"] == "h");
}

TEST_CASE("dates and the affine mapping") {
  CHECK(days_from_date("1970-01-01") == 0);
  CHECK(days_from_date("2024-03-01") - days_from_date("2024-02-28") == 2);  // leap year
  CHECK(days_from_date("2023-06-10T11:05:00Z") == days_from_date("2023-06-10"));
  CHECK_THROWS_AS(days_from_date("2023-13-01"), DataError);
  CHECK_THROWS_AS(days_from_date("10/06/2023"), DataError);
  CHECK_THROWS_AS(days_from_date(""), DataError);
  const auto m = AffineMap::between(scene("h", "2023-01-01", 0.3, 1, 1, 100, 200),
                                    scene("l", "2023-01-01", 10, 1, 1));
  CHECK(m.scale_x == doctest::Approx(0.03));
  CHECK(m.offset_x == doctest::Approx(10.0));
  CHECK(m.offset_y == doctest::Approx(20.0));
}

TEST_CASE("grid split into a 4x4 grid of 1024 tiles") {
  const auto tiles = grid_split(4096, 4096, 4, 4);
  REQUIRE(tiles.size() == 16);
  for (const auto& t : tiles) {
    CHECK(t.pos.width == 1024);
    CHECK(t.pos.height == 1024);
    CHECK(t.pos.x0 == t.col * 1024);
    CHECK(t.pos.y0 == t.row * 1024);
  }
}

TEST_CASE("grid split covers every pixel exactly once") {
  const auto tiles = grid_split(10, 10, 3, 3);
  CHECK(tiles[0].pos.width == 3);
  CHECK(tiles[1].pos.width == 3);
  CHECK(tiles[2].pos.width == 4);
  CHECK(tiles[8].pos.height == 4);
  for (auto [w, h, r, c] : std::vector<std::array<std::uint32_t, 4>>{
           {10, 10, 3, 3}, {17, 5, 2, 4}, {7, 13, 7, 1}, {1, 1, 1, 1}, {100, 37, 6, 9}}) {
    std::vector<int> hits(std::size_t{w} * h, 0);
    for (const auto& t : grid_split(w, h, r, c))
      for (std::uint32_t y = t.pos.y0; y < t.pos.y0 + t.pos.height; ++y)
        for (std::uint32_t x = t.pos.x0; x < t.pos.x0 + t.pos.width; ++x) ++hits[std::size_t{y} * w + x];
    CHECK(std::all_of(hits.begin(), hits.end(), [](int v) { return v == 1; }));
  }
  CHECK_THROWS_AS(grid_split(10, 10, 0, 1), ConfigError);
  CHECK_THROWS_AS(grid_split(3, 10, 2, 4), ConfigError);

  auto r = MultibandRaster::zeros(5, 4, {"a"});
  for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] = float(i);
  const auto one = grid_split(r, 1, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0].data == r.data);
  const auto four = grid_split(r, 2, 2);
  CHECK(four[3].width == 3);
  CHECK(four[3].at(0, 0, 0) == r.at(0, 2, 2));
}

TEST_CASE("downscaling a constant mask gives a constant mask") {
  std::mt19937 rng(1);
  auto m = random_mask(40, 40, 1, rng, false);
  std::fill(m.values.begin(), m.values.end(), 3);
  const auto d = downscale_labels(m, {0.25, 0.25, 0, 0}, 10, 10);
  CHECK(std::all_of(d.values.begin(), d.values.end(), [](std::uint8_t v) { return v == 3; }));
}

TEST_CASE("majority vote counting cases") {
  std::mt19937 rng(2);
  auto m = random_mask(4, 4, 1, rng, false);
  for (int i = 0; i < 16; ++i) m.values[i] = i < 9 ? 2 : 1;  // 9 of class 2, 7 of class 1
  CHECK(downscale_labels(m, {0.25, 0.25, 0, 0}, 1, 1).values[0] == 2);
  for (int i = 0; i < 16; ++i) m.values[i] = i < 8 ? 2 : 1;  // tie
  CHECK(downscale_labels(m, {0.25, 0.25, 0, 0}, 1, 1).values[0] == 1);
  std::fill(m.values.begin(), m.values.end(), kUnlabeled);
  m.values[5] = 4;
  CHECK(downscale_labels(m, {0.25, 0.25, 0, 0}, 1, 1).values[0] == 4);
  // cells with no source pixel stay unlabeled
  const auto d = downscale_labels(m, {0.25, 0.25, 1, 1}, 3, 3);
  CHECK(d.values[4] == 4);
  CHECK(std::count(d.values.begin(), d.values.end(), kUnlabeled) == 8);
  CHECK(d.gsd_m == 10.0f);
}

TEST_CASE("1:1 mapping is the identity") {
  std::mt19937 rng(3);
  const auto m = random_mask(23, 17, 5, rng);
  const auto d = downscale_labels(m, {1, 1, 0, 0}, 23, 17, m.gsd_m);
  CHECK(d.values == m.values);
}

TEST_CASE("downscaling equals the brute-force center-mapping oracle") {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> off(0.0, 2.0);
  struct Case {
    double hires_gsd, lores_gsd;
    std::uint32_t w, h;
  };
  for (const auto& c : {Case{5, 10, 24, 18}, Case{2.5, 10, 32, 28}, Case{0.3, 10, 150, 120}}) {
    for (int trial = 0; trial < 4; ++trial) {
      const auto mask = random_mask(c.w, c.h, 5, rng);
      const double s = c.hires_gsd / c.lores_gsd;
      const AffineMap map{s, s, off(rng), off(rng)};
      const auto lw = static_cast<std::uint32_t>(std::ceil(map.offset_x + s * c.w)) + 1;
      const auto lh = static_cast<std::uint32_t>(std::ceil(map.offset_y + s * c.h)) + 1;
      const auto got = downscale_labels(mask, map, lw, lh);
      CHECK(got.values == downscale_oracle(mask, map, lw, lh));
    }
  }
}

TEST_CASE("downscaling rejects centers outside the lores grid") {
  std::mt19937 rng(5);
  const auto m = random_mask(8, 8, 3, rng);
  CHECK_THROWS_AS(downscale_labels(m, {0.5, 0.5, 0, 0}, 3, 4), DataError);
  CHECK_THROWS_AS(downscale_labels(m, {0.5, 0.5, -1, 0}, 8, 8), DataError);
}

TEST_CASE("class frequencies move by at most the mixed-cell fraction") {
  std::mt19937 rng(6);
  std::uniform_int_distribution<int> pos(0, 63);
  for (int trial = 0; trial < 20; ++trial) {
    LabelMask m;
    m.width = m.height = 64;
    m.scheme = biesbosch_manual_scheme();
    m.values.assign(64 * 64, 0);
    for (int rect = 0; rect < 3; ++rect) {
      int x0 = pos(rng), x1 = pos(rng), y0 = pos(rng), y1 = pos(rng);
      if (x0 > x1) std::swap(x0, x1);
      if (y0 > y1) std::swap(y0, y1);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.values[y * 64 + x] = static_cast<std::uint8_t>(rect + 1);
    }
    const auto d = downscale_labels(m, {0.25, 0.25, 0, 0}, 16, 16);
    int mixed = 0;
    for (int cy = 0; cy < 16; ++cy)
      for (int cx = 0; cx < 16; ++cx) {
        std::set<int> seen;
        for (int y = 0; y < 4; ++y)
          for (int x = 0; x < 4; ++x) seen.insert(m.values[(cy * 4 + y) * 64 + cx * 4 + x]);
        mixed += seen.size() > 1;
      }
    for (int k = 0; k < 4; ++k) {
      const double hi = std::count(m.values.begin(), m.values.end(), k) / 4096.0;
      const double lo = std::count(d.values.begin(), d.values.end(), k) / 256.0;
      CHECK(std::abs(hi - lo) <= mixed / 256.0 + 1e-12);
    }
  }
}

TEST_CASE("scene splits are seeded, floored and honor explicit assignments") {
  ResolutionConfig c;
  std::vector<std::string> ids;
  for (int i = 0; i < 20; ++i) ids.push_back("s" + std::to_string(i));
  const auto a = assign_scene_splits(ids, c);
  CHECK(a == assign_scene_splits(ids, c));
  int val = 0, test = 0;
  for (const auto& [id, s] : a) {
    val += s == Split::Val;
    test += s == Split::Test;
  }
  CHECK(val == 3);
  CHECK(test == 2);
  c.scene_splits["s0"] = Split::Test;
  CHECK(assign_scene_splits(ids, c).at("s0") == Split::Test);
  CHECK(assign_scene_splits({"only"}, ResolutionConfig{}).at("only") == Split::Train);
  CHECK_THROWS_AS(assign_scene_splits({"x", "x"}, c), DataError);
}

namespace {

// Two 64x64 hires scenes at 2.5 m inside one 40x40 lores scene at 10 m.
std::vector<ScenePair> write_fixture(const std::filesystem::path& dir, bool with_masks = true) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> u(1.0f, 200.0f);
  auto lo = MultibandRaster::zeros(40, 40, {"B2", "B3", "B4", "B5", "B8"});
  for (auto& v : lo.data) v = u(rng);
  write_raster(lo, dir / "lo.ras");
  SceneRef lref = scene("lo", "2023-06-11", 10, 40, 40);
  lref.path = "lo.ras";
  std::vector<SceneRef> his;
  for (int i = 0; i < 2; ++i) {
    auto hi = MultibandRaster::zeros(64, 64, {"B", "G", "R", "NIR", "PAN"});
    for (auto& v : hi.data) v = u(rng);
    const std::string id = "hi" + std::to_string(i);
    write_raster(hi, dir / (id + ".ras"));
    auto m = random_mask(64, 64, 5, rng);
    write_mask(m, dir / (id + "_mask.ras"));
    SceneRef h = scene(id, "2023-06-1" + std::to_string(i), 2.5, 64, 64, 20.0 + 200 * i, 40);
    h.path = id + ".ras";
    if (with_masks) h.mask = id + "_mask.ras";
    his.push_back(h);
  }
  return pair_scenes(his, {lref}).pairs;
}

ResolutionConfig fixture_config() {
  ResolutionConfig c;
  c.hires_patch = 32;
  c.lores_patch = 16;
  c.scene_splits = {{"hi0", Split::Test}};
  return c;
}

}  // namespace

TEST_CASE("resolution experiment couples splits and bands across resolutions") {
  TempDir dir("res");
  const auto pairs = write_fixture(dir.path());
  REQUIRE(pairs.size() == 2);
  const auto exp = build_resolution_experiment(pairs, dir.path(), fixture_config(), dir.path() / "out");
  CHECK(exp.scene_splits.at("hi0") == Split::Test);
  CHECK(exp.hires.entries.size() == 8);
  CHECK(exp.lores.entries.size() == 2);
  for (const auto* m : {&exp.hires, &exp.lores}) {
    CHECK(m->provenance.selected_bands.size() == 4);
    CHECK(m->class_scheme.name == "biesbosch-manual");
    for (const auto& e : m->entries) {
      CHECK(e.split == exp.scene_splits.at(e.region));
      CHECK(e.label_path);
    }
  }
  CHECK(exp.lores.provenance.selected_bands == sentinel2_rgbn_bands());
  CHECK(exp.hires.provenance.selected_bands == pipeline::pleiades_rgbn_bands());

  // the lores label patch is the downscaled mask, cut at the footprint window
  const auto& p = pairs[0];
  const auto mask = read_mask(dir.path() / p.hires.mask, biesbosch_manual_scheme());
  const auto full = downscale_labels(mask, p.mapping, 40, 40);
  const auto e = std::find_if(exp.lores.entries.begin(), exp.lores.entries.end(),
                              [](const ManifestEntry& x) { return x.region == "hi0"; });
  REQUIRE(e != exp.lores.entries.end());
  const auto patch = read_mask(dir.path() / "out" / "lores" / *e->label_path, biesbosch_manual_scheme());
  // footprint spans cells 2..17 in x and 4..19 in y: the window starts at (4, 2)
  for (std::uint32_t y = 0; y < 16; ++y)
    for (std::uint32_t x = 0; x < 16; ++x) CHECK(patch.at(y, x) == full.at(4 + y, 2 + x));
}

TEST_CASE("resolution experiment is deterministic and needs masks") {
  TempDir dir("res2");
  const auto pairs = write_fixture(dir.path());
  build_resolution_experiment(pairs, dir.path(), fixture_config(), dir.path() / "a");
  build_resolution_experiment(pairs, dir.path(), fixture_config(), dir.path() / "b");
  for (const char* m : {"hires/manifest.json", "lores/manifest.json"})
    CHECK(slurp(dir.path() / "a" / m) == slurp(dir.path() / "b" / m));
  const auto no_masks = write_fixture(dir.path(), false);
  CHECK_THROWS_AS(build_resolution_experiment(no_masks, dir.path(), fixture_config(), dir.path() / "c"),
                  DataError);
  CHECK_THROWS_AS(build_resolution_experiment({}, dir.path(), fixture_config(), dir.path() / "d"), DataError);
  auto bad = fixture_config();
  bad.lores_bands = {"B2"};
  CHECK_THROWS_AS(build_resolution_experiment(pairs, dir.path(), bad, dir.path() / "e"), ConfigError);
}

TEST_CASE("resolution config JSON round trip") {
  auto c = fixture_config();
  c.seed = 9;
  const nlohmann::json j = c;
  ResolutionConfig back;
  update_from_json(j, back);
  CHECK(nlohmann::json(back) == j);
  CHECK_THROWS_AS(update_from_json({{"lores_pach", 3}}, back), ConfigError);
}
