// SPDX-License-Identifier: Apache-2.0
#include <fstream>
#include <random>

#include "doctest.h"
#include "support/temp_dir.hpp"
#include "wetseg/error.hpp"
#include "wetseg/rascore/labels.hpp"
#include "wetseg/rascore/manifest.hpp"
#include "wetseg/rascore/raster.hpp"

using namespace wetseg;
using wetseg::testing::TempDir;

namespace {

MultibandRaster random_raster(std::mt19937& rng, std::uint32_t w, std::uint32_t h,
                              std::uint32_t bands, DType dtype) {
  std::vector<std::string> names;
  for (std::uint32_t b = 0; b < bands; ++b) names.push_back("B" + std::to_string(b + 2));
  auto r = MultibandRaster::zeros(w, h, names, dtype);
  std::uniform_real_distribution<float> real(-1e4f, 1e4f);
  std::uniform_int_distribution<int> u8(0, 255), u16(0, 65535);
  for (auto& v : r.data) {
    switch (dtype) {
      case DType::U8: v = static_cast<float>(u8(rng)); break;
      case DType::U16: v = static_cast<float>(u16(rng)); break;
      case DType::F32: v = real(rng); break;
    }
  }
  r.nodata_value = dtype == DType::F32 ? -9999.0f : 0.0f;
  r.gsd_m = 0.3f + static_cast<float>(rng() % 100);
  r.region = "Lauwersmeer";
  r.acquired_at = "2021-07-04";
  return r;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("RAS1 4x4x2 f32 round trip") {
  TempDir dir("ras");
  auto r = MultibandRaster::zeros(4, 4, {"B2", "B3"});
  for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] = 0.25f * static_cast<float>(i);
  write_raster(r, dir / "a.ras");
  const auto back = read_raster(dir / "a.ras");
  CHECK(back.width == 4);
  CHECK(back.height == 4);
  CHECK(back.bands == 2);
  CHECK(back.data.size() == 32);
  CHECK(back == r);
}

TEST_CASE("RAS1 header layout is the documented little-endian layout") {
  auto r = MultibandRaster::zeros(3, 2, {"B2", "B8"}, DType::U16);
  r.gsd_m = 10.0f;
  const auto bytes = encode_ras1(r);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "RAS1");
  CHECK(bytes[4] == 3);
  CHECK(bytes[8] == 2);
  CHECK(bytes[12] == 2);
  CHECK(bytes[16] == 1);  // u16
  CHECK(bytes[17] == 0);  // no metadata block
  // gsd 10.0f = 0x41200000
  CHECK(bytes[24] == 0x00);
  CHECK(bytes[27] == 0x41);
  CHECK(bytes[28] == 5);  // "B2\0B8"
  CHECK(bytes.size() == 30 + 5 + 3 * 2 * 2 * 2);
}

TEST_CASE("RAS1 rejects malformed input") {
  auto r = MultibandRaster::zeros(4, 4, {"B2", "B3"});
  auto bytes = encode_ras1(r);

  SUBCASE("truncated payload") {
    auto shorter = bytes;
    shorter.pop_back();
    CHECK_THROWS_WITH_AS(decode_ras1(shorter), doctest::Contains("truncated payload"), DataError);
    auto longer = bytes;
    longer.push_back(0);
    CHECK_THROWS_WITH_AS(decode_ras1(longer), doctest::Contains("truncated payload"), DataError);
  }
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_ras1(bytes), doctest::Contains("malformed header"), DataError);
  }
  SUBCASE("unsupported dtype") {
    bytes[16] = 7;
    CHECK_THROWS_WITH_AS(decode_ras1(bytes), doctest::Contains("dtype unsupported"), DataError);
  }
  SUBCASE("header cut short") {
    bytes.resize(10);
    CHECK_THROWS_WITH_AS(decode_ras1(bytes), doctest::Contains("malformed header"), DataError);
  }
}

TEST_CASE("write_raster rejects invariant violations") {
  TempDir dir("ras");
  MultibandRaster empty;
  empty.width = 4;
  empty.height = 4;
  CHECK_THROWS_AS(write_raster(empty, dir / "x.ras"), DataError);

  auto bad_gsd = MultibandRaster::zeros(2, 2, {"B2"});
  bad_gsd.gsd_m = 0.0f;
  CHECK_THROWS_AS(write_raster(bad_gsd, dir / "x.ras"), DataError);

  auto bad_u8 = MultibandRaster::zeros(2, 2, {"B2"}, DType::U8);
  bad_u8.data[0] = 256.0f;
  CHECK_THROWS_AS(write_raster(bad_u8, dir / "x.ras"), DataError);
}

TEST_CASE("RAS1 round trip is bit-identical for random rasters of every dtype") {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    const auto dtype = static_cast<DType>(trial % 3);
    const auto r = random_raster(rng, 1 + rng() % 40, 1 + rng() % 40, 1 + rng() % 12, dtype);
    const auto bytes = encode_ras1(r);
    const auto back = decode_ras1(bytes);
    CHECK(back == r);
    CHECK(encode_ras1(back) == bytes);
  }
}

TEST_CASE("RAS1 round trip of a 1024x1024x4 high-resolution patch") {
  TempDir dir("ras");
  std::mt19937 rng(11);
  auto r = random_raster(rng, 1024, 1024, 4, DType::U16);
  r.band_names = {"R", "G", "B", "NIR"};
  r.gsd_m = 0.3f;
  write_raster(r, dir / "hires.ras");
  const auto back = read_raster(dir / "hires.ras");
  CHECK(back == r);
  write_raster(back, dir / "again.ras");
  CHECK(slurp(dir / "hires.ras") == slurp(dir / "again.ras"));
}

TEST_CASE("GeoTIFF adapter reads a 256x256x9 Sentinel-2 style patch") {
  TempDir dir("tif");
  std::mt19937 rng(3);
  auto r = random_raster(rng, 256, 256, 9, DType::U16);
  r.gsd_m = 10.0f;
  r.nodata_value = 0.0f;
  write_geotiff(r, dir / "s2.tif");
  const auto back = read_raster(dir / "s2.tif");
  CHECK(back.bands == 9);
  CHECK(back.width == 256);
  CHECK(back.height == 256);
  CHECK(back.dtype == DType::U16);
  CHECK(back.gsd_m == doctest::Approx(10.0));
  CHECK(back.data == r.data);

  auto f = random_raster(rng, 17, 9, 3, DType::F32);
  write_geotiff(f, dir / "f.tif");
  const auto fb = read_geotiff(dir / "f.tif");
  CHECK(fb.data == f.data);
  CHECK(fb.nodata_value == f.nodata_value);
}

TEST_CASE("labels_from_probabilities takes the argmax with ties to the lower id") {
  ClassScheme three{"three", {{0, "a", {}}, {1, "b", {}}, {2, "c", {}}}};
  const std::vector<float> probs{0.1f, 0.7f, 0.2f};
  const auto m = labels_from_probabilities({3, 1, 1, probs}, three);
  CHECK(m.values == std::vector<std::uint8_t>{1});

  ClassScheme two{"two", {{0, "a", {}}, {1, "b", {}}}};
  const std::vector<float> tie{0.5f, 0.5f};
  CHECK(labels_from_probabilities({2, 1, 1, tie}, two).values == std::vector<std::uint8_t>{0});

  const std::vector<float> nan{0.5f, std::numeric_limits<float>::quiet_NaN()};
  CHECK_THROWS_AS(labels_from_probabilities({2, 1, 1, nan}, two), DataError);
  CHECK_THROWS_AS(labels_from_probabilities({3, 1, 1, probs}, two), DataError);
}

TEST_CASE("labels_from_probabilities equals a per-pixel argmax loop on random cubes") {
  std::mt19937 rng(42);
  std::uniform_int_distribution<int> level(0, 4);  // coarse levels force frequent ties
  const auto& scheme = dynamic_world_scheme();
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> cube(9 * 8 * 8);
    for (auto& v : cube) v = static_cast<float>(level(rng)) * 0.25f;
    const auto mask = labels_from_probabilities({9, 8, 8, cube}, scheme);
    for (int p = 0; p < 64; ++p) {
      int oracle = 0;
      for (int c = 1; c < 9; ++c)
        if (cube[c * 64 + p] > cube[oracle * 64 + p]) oracle = c;
      REQUIRE(mask.values[p] == oracle);
    }
  }
}

TEST_CASE("label masks round trip through RAS1 and are validated against the scheme") {
  TempDir dir("mask");
  LabelMask m{3, 2, dynamic_world_scheme(), {0, 1, 8, kUnlabeled, 4, 2}, 10.0f};
  write_mask(m, dir / "m.ras");
  CHECK(read_mask(dir / "m.ras", dynamic_world_scheme()) == m);
  CHECK_THROWS_AS(read_mask(dir / "m.ras", biesbosch_manual_scheme()), DataError);
}

TEST_CASE("built-in class schemes") {
  CHECK(dynamic_world_scheme().size() == 9);
  dynamic_world_scheme().validate();
  const auto& manual = biesbosch_manual_scheme();
  manual.validate();
  for (const char* label : {"water", "grass", "reed", "forest", "built"}) {
    bool found = false;
    for (const auto& c : manual.classes) found |= c.label == label;
    CHECK_MESSAGE(found, label);
  }
  ClassScheme gap{"gap", {{0, "a", {}}, {2, "b", {}}}};
  CHECK_THROWS_AS(gap.validate(), DataError);
  ClassScheme dup{"dup", {{0, "a", {}}, {1, "a", {}}}};
  CHECK_THROWS_AS(dup.validate(), DataError);
}

namespace {

DatasetManifest counted_manifest(std::size_t train, std::size_t val, std::size_t test) {
  DatasetManifest m;
  m.class_scheme = dynamic_world_scheme();
  auto add = [&](std::size_t n, Split s, const std::string& region) {
    for (std::size_t i = 0; i < n; ++i) {
      ManifestEntry e;
      e.patch_path = std::string(split_name(s)) + "/" + region + "/p" + std::to_string(i) + ".ras";
      e.label_path = std::string(split_name(s)) + "/" + region + "/p" + std::to_string(i) +
                     "_label.ras";
      e.region = region;
      e.split = s;
      e.acquired_at = "2022-05-01";
      m.entries.push_back(e);
    }
  };
  add(train, Split::Train, "Gelderse Poort");
  add(val, Split::Val, "Lauwersmeer");
  add(test, Split::Test, "Biesbosch");
  m.provenance.split_policy = "by_region";
  m.provenance.region_splits = {{"Biesbosch", Split::Test}, {"Lauwersmeer", Split::Val},
                                {"*", Split::Train}};
  return m;
}

}  // namespace

TEST_CASE("manifest with the medium-resolution split counts loads with those counts") {
  TempDir dir("man");
  const auto m = counted_manifest(1701, 948, 1140);
  save_manifest(m, dir / "manifest.json");
  const auto back = load_manifest(dir / "manifest.json", ManifestCheck::Schema);
  CHECK(back.count(Split::Train) == 1701);
  CHECK(back.count(Split::Val) == 948);
  CHECK(back.count(Split::Test) == 1140);
  CHECK(back.entries == m.entries);
  CHECK(dump_manifest(back) == dump_manifest(m));
}

TEST_CASE("empty manifest is valid") {
  TempDir dir("man");
  DatasetManifest m;
  m.class_scheme = dynamic_world_scheme();
  save_manifest(m, dir / "manifest.json");
  CHECK(load_manifest(dir / "manifest.json").entries.empty());
}

TEST_CASE("manifest schema violations name the entry") {
  nlohmann::json j = counted_manifest(2, 1, 1);
  j["entries"][2]["split"] = "holdout";
  CHECK_THROWS_WITH_AS(manifest_from_json(j), doctest::Contains("manifest entry 2"), ConfigError);

  auto dup = counted_manifest(2, 0, 0);
  dup.entries[1].patch_path = dup.entries[0].patch_path;
  CHECK_THROWS_WITH_AS(validate_manifest(dup, ".", ManifestCheck::Schema),
                       doctest::Contains("already listed"), ConfigError);

  auto wrong_region = counted_manifest(1, 1, 1);
  wrong_region.entries[1].split = Split::Train;  // Lauwersmeer is declared val
  CHECK_THROWS_AS(validate_manifest(wrong_region, ".", ManifestCheck::Schema), ConfigError);
}

TEST_CASE("manifest file check reports dangling paths and label size mismatches") {
  TempDir dir("man");
  auto m = counted_manifest(2, 0, 0);
  CHECK_THROWS_WITH_AS(validate_manifest(m, dir.path(), ManifestCheck::Files),
                       doctest::Contains("manifest entry 0: dangling patch path"), DataError);

  for (const auto& e : m.entries) {
    write_raster(MultibandRaster::zeros(8, 8, {"B2"}), dir.path() / e.patch_path);
    write_mask(LabelMask{8, 8, dynamic_world_scheme(), std::vector<std::uint8_t>(64, 0), 10.f},
               dir.path() / *e.label_path);
  }
  validate_manifest(m, dir.path(), ManifestCheck::Files);

  write_mask(LabelMask{4, 8, dynamic_world_scheme(), std::vector<std::uint8_t>(32, 0), 10.f},
             dir.path() / *m.entries[1].label_path);
  CHECK_THROWS_WITH_AS(validate_manifest(m, dir.path(), ManifestCheck::Files),
                       doctest::Contains("manifest entry 1: label dims"), DataError);
}
