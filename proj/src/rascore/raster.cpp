// SPDX-License-Identifier: Apache-2.0
#include "wetseg/rascore/raster.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "wetseg/error.hpp"

namespace wetseg {

namespace {

constexpr std::uint8_t kMagic[4] = {'R', 'A', 'S', '1'};
constexpr std::uint8_t kFlagMeta = 0x01;

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    u8(static_cast<std::uint8_t>(v));
    u8(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }
  void reserve(std::size_t n) { out_.reserve(n); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> in) : in_(in) {}

  std::uint8_t u8() {
    need(1);
    return in_[pos_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = in_[pos_] | (std::uint16_t{in_[pos_ + 1]} << 8);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{in_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw DataError("RAS1: malformed header (unexpected end of file)");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::U8: return 1;
    case DType::U16: return 2;
    case DType::F32: return 4;
  }
  return 0;
}

std::vector<std::string> split_nul(const std::string& table, std::size_t expected) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = table.find('\0', start);
    if (pos == std::string::npos) {
      out.push_back(table.substr(start));
      break;
    }
    out.push_back(table.substr(start, pos - start));
    start = pos + 1;
  }
  if (out.size() != expected)
    throw DataError("RAS1: malformed header (band-name table holds " + std::to_string(out.size()) +
                    " names for " + std::to_string(expected) + " bands)");
  return out;
}

std::string join_nul(const std::vector<std::string>& names) {
  std::string out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out.push_back('\0');
    out += names[i];
  }
  return out;
}

}  // namespace

const char* dtype_name(DType t) {
  switch (t) {
    case DType::U8: return "u8";
    case DType::U16: return "u16";
    case DType::F32: return "f32";
  }
  return "?";
}

MultibandRaster MultibandRaster::zeros(std::uint32_t width, std::uint32_t height,
                                       std::vector<std::string> band_names, DType dtype) {
  MultibandRaster r;
  r.width = width;
  r.height = height;
  r.bands = static_cast<std::uint32_t>(band_names.size());
  r.dtype = dtype;
  r.band_names = std::move(band_names);
  r.data.assign(r.pixels() * r.bands, 0.0f);
  return r;
}

int MultibandRaster::band_index(const std::string& name) const {
  auto it = std::find(band_names.begin(), band_names.end(), name);
  return it == band_names.end() ? -1 : static_cast<int>(it - band_names.begin());
}

bool MultibandRaster::is_invalid(std::uint32_t row, std::uint32_t col) const {
  for (std::uint32_t b = 0; b < bands; ++b)
    if (at(b, row, col) != nodata_value) return false;
  return true;
}

std::size_t MultibandRaster::count_invalid() const {
  std::size_t n = 0;
  for (std::uint32_t r = 0; r < height; ++r)
    for (std::uint32_t c = 0; c < width; ++c) n += is_invalid(r, c);
  return n;
}

void MultibandRaster::validate() const {
  if (bands == 0) throw DataError("raster has 0 bands");
  if (width == 0 || height == 0) throw DataError("raster has an empty extent");
  if (data.size() != pixels() * bands)
    throw DataError("raster data length " + std::to_string(data.size()) + " != width*height*bands " +
                    std::to_string(pixels() * bands));
  if (band_names.size() != bands)
    throw DataError("raster has " + std::to_string(band_names.size()) + " band names for " +
                    std::to_string(bands) + " bands");
  if (!(gsd_m > 0.0f) || !std::isfinite(gsd_m)) throw DataError("raster gsd_m must be > 0");
  if (dtype == DType::U8 || dtype == DType::U16) {
    const float hi = dtype == DType::U8 ? 255.0f : 65535.0f;
    auto bad = std::find_if(data.begin(), data.end(), [hi](float v) {
      return !(v >= 0.0f && v <= hi) || v != std::floor(v);
    });
    if (bad != data.end())
      throw DataError(std::string("raster value out of range for dtype ") + dtype_name(dtype));
  }
}

std::vector<std::uint8_t> encode_ras1(const MultibandRaster& r) {
  r.validate();
  const std::string names = join_nul(r.band_names);
  const bool has_meta = !r.region.empty() || !r.acquired_at.empty();
  const std::string meta = r.region + '\0' + r.acquired_at;
  if (names.size() > 0xFFFF || meta.size() > 0xFFFF)
    throw DataError("RAS1: band-name or metadata table exceeds 65535 bytes");

  ByteWriter w;
  w.reserve(64 + names.size() + meta.size() + r.data.size() * dtype_size(r.dtype));
  for (auto b : kMagic) w.u8(b);
  w.u32(r.width);
  w.u32(r.height);
  w.u32(r.bands);
  w.u8(static_cast<std::uint8_t>(r.dtype));
  w.u8(has_meta ? kFlagMeta : 0);
  w.u16(0);
  w.f32(r.nodata_value);
  w.f32(r.gsd_m);
  w.u16(static_cast<std::uint16_t>(names.size()));
  w.bytes(names);
  if (has_meta) {
    w.u16(static_cast<std::uint16_t>(meta.size()));
    w.bytes(meta);
  }
  switch (r.dtype) {
    case DType::U8:
      for (float v : r.data) w.u8(static_cast<std::uint8_t>(v));
      break;
    case DType::U16:
      for (float v : r.data) w.u16(static_cast<std::uint16_t>(v));
      break;
    case DType::F32:
      for (float v : r.data) w.f32(v);
      break;
  }
  return w.take();
}

MultibandRaster decode_ras1(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()))
    throw DataError("RAS1: malformed header (bad magic)");
  in.str(4);
  MultibandRaster r;
  r.width = in.u32();
  r.height = in.u32();
  r.bands = in.u32();
  const std::uint8_t code = in.u8();
  if (code > 2) throw DataError("RAS1: dtype unsupported (code " + std::to_string(code) + ")");
  r.dtype = static_cast<DType>(code);
  const std::uint8_t flags = in.u8();
  in.u16();  // reserved
  r.nodata_value = in.f32();
  r.gsd_m = in.f32();
  if (r.width == 0 || r.height == 0 || r.bands == 0)
    throw DataError("RAS1: malformed header (zero width, height or bands)");
  r.band_names = split_nul(in.str(in.u16()), r.bands);
  if (flags & kFlagMeta) {
    const std::string meta = in.str(in.u16());
    auto parts = split_nul(meta, 2);
    r.region = parts[0];
    r.acquired_at = parts[1];
  }
  const std::size_t count = r.pixels() * r.bands;
  const std::size_t expected = count * dtype_size(r.dtype);
  if (in.remaining() != expected)
    throw DataError("RAS1: truncated payload (expected " + std::to_string(expected) +
                    " bytes, found " + std::to_string(in.remaining()) + ")");
  r.data.resize(count);
  switch (r.dtype) {
    case DType::U8:
      for (auto& v : r.data) v = in.u8();
      break;
    case DType::U16:
      for (auto& v : r.data) v = in.u16();
      break;
    case DType::F32:
      for (auto& v : r.data) v = in.f32();
      break;
  }
  if (!(r.gsd_m > 0.0f)) throw DataError("RAS1: malformed header (gsd_m must be > 0)");
  return r;
}

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool looks_like_tiff(std::span<const std::uint8_t> b) {
  return b.size() >= 4 && ((b[0] == 'I' && b[1] == 'I' && b[2] == 42 && b[3] == 0) ||
                           (b[0] == 'M' && b[1] == 'M' && b[2] == 0 && b[3] == 42) ||
                           (b[0] == 'I' && b[1] == 'I' && b[2] == 43 && b[3] == 0) ||
                           (b[0] == 'M' && b[1] == 'M' && b[2] == 0 && b[3] == 43));
}

}  // namespace

MultibandRaster read_raster(const std::filesystem::path& path) {
  auto bytes = slurp(path);
  if (looks_like_tiff(bytes)) return read_geotiff(path);
  return decode_ras1(bytes);
}

void write_raster(const MultibandRaster& raster, const std::filesystem::path& path) {
  const auto bytes = encode_ras1(raster);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write '" + path.string() + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("I/O failure writing '" + path.string() + "'");
}

}  // namespace wetseg
