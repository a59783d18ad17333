// SPDX-License-Identifier: Apache-2.0
// Minimal GeoTIFF ingest on top of libtiff. Only what RAS1 carries is read:
// pixel grid, sample type, nodata (GDAL_NODATA) and pixel size (ModelPixelScale).

#include <tiffio.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>

#include "wetseg/error.hpp"
#include "wetseg/rascore/raster.hpp"

namespace wetseg {

namespace {

constexpr ttag_t kModelPixelScale = 33550;
constexpr ttag_t kGdalNodata = 42113;

TIFFExtendProc g_parent_extender = nullptr;

void geotiff_tag_extender(TIFF* tif) {
  static const TIFFFieldInfo kFields[] = {
      {kModelPixelScale, -1, -1, TIFF_DOUBLE, FIELD_CUSTOM, 1, 1,
       const_cast<char*>("ModelPixelScaleTag")},
      {kGdalNodata, -1, -1, TIFF_ASCII, FIELD_CUSTOM, 1, 0, const_cast<char*>("GDALNoDataValue")},
  };
  TIFFMergeFieldInfo(tif, kFields, sizeof(kFields) / sizeof(kFields[0]));
  if (g_parent_extender) g_parent_extender(tif);
}

void install_extender() {
  static std::once_flag once;
  std::call_once(once, [] {
    g_parent_extender = TIFFSetTagExtender(geotiff_tag_extender);
    TIFFSetWarningHandler(nullptr);
  });
}

struct TiffCloser {
  void operator()(TIFF* t) const { TIFFClose(t); }
};
using TiffPtr = std::unique_ptr<TIFF, TiffCloser>;

DType dtype_for(uint16_t bits, uint16_t format, const std::string& path) {
  if (format == SAMPLEFORMAT_IEEEFP && bits == 32) return DType::F32;
  if (format == SAMPLEFORMAT_UINT && bits == 8) return DType::U8;
  if (format == SAMPLEFORMAT_UINT && bits == 16) return DType::U16;
  throw DataError("GeoTIFF '" + path + "': dtype unsupported (" + std::to_string(bits) +
                  "-bit, sample format " + std::to_string(format) + ")");
}

float sample_at(const std::uint8_t* buf, std::size_t index, DType t) {
  switch (t) {
    case DType::U8: return buf[index];
    case DType::U16: {
      std::uint16_t v;
      std::memcpy(&v, buf + 2 * index, 2);
      return v;
    }
    case DType::F32: {
      float v;
      std::memcpy(&v, buf + 4 * index, 4);
      return v;
    }
  }
  return 0.0f;
}

}  // namespace

MultibandRaster read_geotiff(const std::filesystem::path& path) {
  install_extender();
  const std::string name = path.string();
  TiffPtr tif(TIFFOpen(name.c_str(), "r"));
  if (!tif) throw DataError("GeoTIFF '" + name + "': malformed header");

  uint32_t width = 0, height = 0;
  uint16_t spp = 1, bits = 8, format = SAMPLEFORMAT_UINT, planar = PLANARCONFIG_CONTIG;
  TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &width);
  TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &height);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &spp);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_BITSPERSAMPLE, &bits);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLEFORMAT, &format);
  TIFFGetFieldDefaulted(tif.get(), TIFFTAG_PLANARCONFIG, &planar);
  if (width == 0 || height == 0 || spp == 0)
    throw DataError("GeoTIFF '" + name + "': malformed header");
  if (TIFFIsTiled(tif.get()))
    throw DataError("GeoTIFF '" + name + "': tiled layout unsupported, convert to strips");

  std::vector<std::string> band_names;
  for (uint16_t b = 0; b < spp; ++b) band_names.push_back("B" + std::to_string(b + 1));
  auto r = MultibandRaster::zeros(width, height, std::move(band_names),
                                  dtype_for(bits, format, name));

  uint16_t count = 0;
  double* scale = nullptr;
  if (TIFFGetField(tif.get(), kModelPixelScale, &count, &scale) && count >= 1 && scale[0] > 0)
    r.gsd_m = static_cast<float>(scale[0]);
  char* nodata = nullptr;
  if (TIFFGetField(tif.get(), kGdalNodata, &nodata) && nodata)
    r.nodata_value = std::strtof(nodata, nullptr);

  std::vector<std::uint8_t> line(static_cast<std::size_t>(TIFFScanlineSize(tif.get())));
  if (planar == PLANARCONFIG_SEPARATE) {
    for (uint16_t b = 0; b < spp; ++b)
      for (uint32_t row = 0; row < height; ++row) {
        if (TIFFReadScanline(tif.get(), line.data(), row, b) < 0)
          throw DataError("GeoTIFF '" + name + "': truncated payload");
        for (uint32_t col = 0; col < width; ++col) r.at(b, row, col) = sample_at(line.data(), col, r.dtype);
      }
  } else {
    for (uint32_t row = 0; row < height; ++row) {
      if (TIFFReadScanline(tif.get(), line.data(), row, 0) < 0)
        throw DataError("GeoTIFF '" + name + "': truncated payload");
      for (uint32_t col = 0; col < width; ++col)
        for (uint16_t b = 0; b < spp; ++b)
          r.at(b, row, col) = sample_at(line.data(), std::size_t{col} * spp + b, r.dtype);
    }
  }
  return r;
}

void write_geotiff(const MultibandRaster& r, const std::filesystem::path& path) {
  r.validate();
  install_extender();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string name = path.string();
  TiffPtr tif(TIFFOpen(name.c_str(), "w"));
  if (!tif) throw DataError("cannot write '" + name + "'");

  const uint16_t bits = r.dtype == DType::U8 ? 8 : r.dtype == DType::U16 ? 16 : 32;
  TIFFSetField(tif.get(), TIFFTAG_IMAGEWIDTH, r.width);
  TIFFSetField(tif.get(), TIFFTAG_IMAGELENGTH, r.height);
  TIFFSetField(tif.get(), TIFFTAG_SAMPLESPERPIXEL, static_cast<uint16_t>(r.bands));
  TIFFSetField(tif.get(), TIFFTAG_BITSPERSAMPLE, bits);
  TIFFSetField(tif.get(), TIFFTAG_SAMPLEFORMAT,
               r.dtype == DType::F32 ? SAMPLEFORMAT_IEEEFP : SAMPLEFORMAT_UINT);
  TIFFSetField(tif.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_SEPARATE);
  TIFFSetField(tif.get(), TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
  TIFFSetField(tif.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);
  TIFFSetField(tif.get(), TIFFTAG_ROWSPERSTRIP, 1u);
  double scale[3] = {r.gsd_m, r.gsd_m, 0.0};
  TIFFSetField(tif.get(), kModelPixelScale, 3, scale);
  char nodata[32];
  std::snprintf(nodata, sizeof nodata, "%.9g", static_cast<double>(r.nodata_value));
  TIFFSetField(tif.get(), kGdalNodata, nodata);

  const std::size_t bytes_per = bits / 8;
  std::vector<std::uint8_t> line(r.width * bytes_per);
  for (uint32_t b = 0; b < r.bands; ++b)
    for (uint32_t row = 0; row < r.height; ++row) {
      for (uint32_t col = 0; col < r.width; ++col) {
        const float v = r.at(b, row, col);
        if (r.dtype == DType::U8) {
          line[col] = static_cast<std::uint8_t>(v);
        } else if (r.dtype == DType::U16) {
          const auto u = static_cast<std::uint16_t>(v);
          std::memcpy(line.data() + 2 * col, &u, 2);
        } else {
          std::memcpy(line.data() + 4 * col, &v, 4);
        }
      }
      if (TIFFWriteScanline(tif.get(), line.data(), row, static_cast<uint16_t>(b)) < 0)
        throw DataError("I/O failure writing '" + name + "'");
    }
}

}  // namespace wetseg
