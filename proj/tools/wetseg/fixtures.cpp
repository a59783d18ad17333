// SPDX-License-Identifier: Apache-2.0
#include "fixtures.hpp"

#include <fstream>
#include <string>

#include "json.hpp"
#include "wetseg/data/synthetic.hpp"
#include "wetseg/pipeline/pipeline.hpp"
#include "wetseg/rascore/labels.hpp"
#include "wetseg/rascore/manifest.hpp"
#include "wetseg/transfer/transfer.hpp"

namespace wetseg::cli {

namespace fs = std::filesystem;

namespace {

const ClassScheme& shapes_scheme() {
  static const ClassScheme scheme{"shapes",
                                  {{0, "background", {0x60, 0x60, 0x60}},
                                   {1, "disk", {0x41, 0x9B, 0xDF}},
                                   {2, "stripes", {0xC8, 0xB4, 0x6E}}}};
  return scheme;
}

MultibandRaster to_raster(const nn::Tensor& t, std::vector<std::string> names, float gsd) {
  auto r = MultibandRaster::zeros(static_cast<std::uint32_t>(t.shape.w),
                                  static_cast<std::uint32_t>(t.shape.h), std::move(names));
  r.data = t.data;
  r.gsd_m = gsd;
  return r;
}

std::vector<std::string> band_names(int n) {
  std::vector<std::string> v;
  for (int b = 0; b < n; ++b) v.push_back("b" + std::to_string(b + 1));
  return v;
}

}  // namespace

fs::path write_shapes_fixture(const fs::path& dir, const ShapesFixture& f) {
  DatasetManifest m;
  m.class_scheme = shapes_scheme();
  const struct {
    Split split;
    int count;
    std::uint64_t seed;
  } parts[] = {{Split::Train, f.train, f.seed * 3 + 1},
               {Split::Val, f.val, f.seed * 3 + 2},
               {Split::Test, f.test, f.seed * 3 + 3}};
  for (const auto& part : parts) {
    data::ShapesOptions opt;
    opt.count = part.count;
    opt.bands = f.bands;
    opt.size = f.size;
    opt.seed = part.seed;
    const auto samples = data::shapes_samples(opt);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::string stem = std::string(split_name(part.split)) + "/shapes_" + std::to_string(i);
      auto raster = to_raster(samples[i].image, band_names(f.bands), 10.0f);
      raster.region = "synthetic";
      write_raster(raster, dir / (stem + ".ras"));
      ManifestEntry e;
      e.patch_path = stem + ".ras";
      e.region = "synthetic";
      e.split = part.split;
      e.source = "shapes";
      e.row = static_cast<std::uint32_t>(i);
      const bool labeled = part.split != Split::Train || static_cast<int>(i) < f.labeled_train;
      if (labeled) {
        LabelMask mask{static_cast<std::uint32_t>(f.size), static_cast<std::uint32_t>(f.size),
                       shapes_scheme(), samples[i].label, 10.0f};
        write_mask(mask, dir / (stem + "_label.ras"));
        e.label_path = stem + "_label.ras";
      }
      m.entries.push_back(std::move(e));
    }
  }
  const auto path = dir / "manifest.json";
  save_manifest(m, path);
  return path;
}

fs::path write_resolution_fixture(const fs::path& dir, const ResolutionFixture& f) {
  const int hs = f.hires_size;
  const int ls = hs / 4;              // footprint in lores pixels
  const int cell = ls + 4;            // lores pixels per scene slot, with margin
  const int lw = cell * f.scenes, lh = cell;
  auto lores = MultibandRaster::zeros(static_cast<std::uint32_t>(lw), static_cast<std::uint32_t>(lh),
                                      transfer::sentinel2_rgbn_bands());
  std::fill(lores.data.begin(), lores.data.end(), 0.5f);
  lores.region = "lores";
  lores.acquired_at = "2023-06-04";

  nlohmann::json hires_refs = nlohmann::json::array();
  for (int s = 0; s < f.scenes; ++s) {
    data::ShapesOptions opt;
    opt.count = 1;
    opt.bands = 4;
    opt.size = hs;
    opt.seed = f.seed * 1000 + static_cast<std::uint64_t>(s);
    const auto sample = data::shapes_samples(opt).front();
    const std::string id = "scene_" + std::to_string(s);
    const std::string date = "2023-06-0" + std::to_string(1 + s % 7);
    auto raster = to_raster(sample.image, pipeline::pleiades_rgbn_bands(), 2.5f);
    raster.region = id;
    raster.acquired_at = date;
    write_raster(raster, dir / "hires" / (id + ".ras"));
    LabelMask mask{static_cast<std::uint32_t>(hs), static_cast<std::uint32_t>(hs),
                   biesbosch_manual_scheme(), sample.label, 2.5f};
    write_mask(mask, dir / "hires" / (id + "_mask.ras"));

    const int col0 = s * cell + 2, row0 = 2;
    for (std::uint32_t b = 0; b < 4; ++b)
      for (int r = 0; r < ls; ++r)
        for (int c = 0; c < ls; ++c) {
          float acc = 0;
          for (int dy = 0; dy < 4; ++dy)
            for (int dx = 0; dx < 4; ++dx) acc += raster.at(b, 4 * r + dy, 4 * c + dx);
          lores.at(b, row0 + r, col0 + c) = acc / 16;
        }

    transfer::SceneRef ref{id, "hires/" + id + ".ras", "hires/" + id + "_mask.ras", date, 2.5,
                           static_cast<std::uint32_t>(hs), static_cast<std::uint32_t>(hs),
                           col0 * 10.0, row0 * 10.0};
    hires_refs.push_back(ref);
  }
  write_raster(lores, dir / "lores" / "lores_0.ras");
  transfer::SceneRef lref{"lores_0", "lores/lores_0.ras", "", "2023-06-04", 10.0,
                          static_cast<std::uint32_t>(lw), static_cast<std::uint32_t>(lh), 0.0, 0.0};
  const nlohmann::json scenes = {{"hires", hires_refs}, {"lores", nlohmann::json::array({lref})}};
  const auto path = dir / "scenes.json";
  std::ofstream(path) << scenes.dump(2) << "\n";
  return path;
}

}  // namespace wetseg::cli
