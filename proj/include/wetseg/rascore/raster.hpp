// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace wetseg {

enum class DType : std::uint8_t { U8 = 0, U16 = 1, F32 = 2 };

const char* dtype_name(DType t);

/// H x W x B raster stored band-sequential, row-major.
///
/// Values are held as f32 regardless of the on-disk dtype; u8 and u16 samples
/// are exactly representable, so the conversion is lossless in both
/// directions.
struct MultibandRaster {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t bands = 0;
  DType dtype = DType::F32;
  std::vector<float> data;
  std::vector<std::string> band_names;
  float nodata_value = 0.0f;
  std::string region;
  std::string acquired_at;  // ISO-8601 date, may be empty
  float gsd_m = 10.0f;

  static MultibandRaster zeros(std::uint32_t width, std::uint32_t height,
                               std::vector<std::string> band_names, DType dtype = DType::F32);

  std::size_t pixels() const { return std::size_t{width} * height; }

  float& at(std::uint32_t band, std::uint32_t row, std::uint32_t col) {
    return data[(std::size_t{band} * height + row) * width + col];
  }
  float at(std::uint32_t band, std::uint32_t row, std::uint32_t col) const {
    return data[(std::size_t{band} * height + row) * width + col];
  }
  std::span<float> band(std::uint32_t b) { return {data.data() + b * pixels(), pixels()}; }
  std::span<const float> band(std::uint32_t b) const {
    return {data.data() + b * pixels(), pixels()};
  }

  /// Index of a band by name, or -1.
  int band_index(const std::string& name) const;

  /// A pixel is invalid ("black") when every band equals nodata_value.
  bool is_invalid(std::uint32_t row, std::uint32_t col) const;
  std::size_t count_invalid() const;

  /// Throws DataError when the size, gsd or band-name invariants are broken,
  /// or when integer-dtype samples are out of range.
  void validate() const;

  bool operator==(const MultibandRaster&) const = default;
};

/// Serializes to the RAS1 container.
std::vector<std::uint8_t> encode_ras1(const MultibandRaster& raster);
/// Parses a RAS1 container. Throws DataError on any malformed input.
MultibandRaster decode_ras1(std::span<const std::uint8_t> bytes);

/// Reads RAS1, or a baseline/GeoTIFF file (converted on the fly).
MultibandRaster read_raster(const std::filesystem::path& path);
/// Writes RAS1. Creates parent directories.
void write_raster(const MultibandRaster& raster, const std::filesystem::path& path);

/// GeoTIFF adapter: uncompressed or deflate/LZW u8/u16/f32 TIFFs, chunky or planar.
MultibandRaster read_geotiff(const std::filesystem::path& path);
/// Writes a planar f32/u16/u8 TIFF, used for interchange tests.
void write_geotiff(const MultibandRaster& raster, const std::filesystem::path& path);

}  // namespace wetseg
