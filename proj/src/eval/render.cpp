// SPDX-License-Identifier: Apache-2.0
#include "wetseg/eval/render.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "wetseg/error.hpp"

namespace wetseg::eval {

namespace {

// 3x5 glyphs for "0123456789.", one row per 3-bit mask.
constexpr std::uint8_t kGlyphs[11][5] = {
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1},
    {7, 4, 7, 1, 7}, {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7},
    {0, 0, 0, 0, 2}};

constexpr int kRowHeight = 12;
constexpr int kSwatch = 10;
constexpr int kTextWidth = 5 * 4;  // "0.123" at 4 px per glyph

void draw_text(RgbImage& img, int x, int y, const std::string& s, Rgb color) {
  for (char ch : s) {
    const int g = ch == '.' ? 10 : ch - '0';
    if (g < 0 || g > 10) continue;
    for (int r = 0; r < 5; ++r)
      for (int c = 0; c < 3; ++c)
        if ((kGlyphs[g][r] >> (2 - c)) & 1) {
          const int px = x + c, py = y + r;
          if (px >= 0 && py >= 0 && px < static_cast<int>(img.width) &&
              py < static_cast<int>(img.height))
            img.set(py, px, color);
        }
    x += 4;
  }
}

void fill(RgbImage& img, int x0, int y0, int w, int h, Rgb color) {
  for (int y = y0; y < y0 + h && y < static_cast<int>(img.height); ++y)
    for (int x = x0; x < x0 + w && x < static_cast<int>(img.width); ++x) img.set(y, x, color);
}

const Rgb& palette_color(const ClassScheme& scheme, std::uint8_t id) {
  if (id >= scheme.size())
    throw DataError("scheme '" + scheme.name + "' has no palette entry for class " +
                    std::to_string(id));
  return scheme[id].color;
}

std::size_t check_cube(const ProbabilityCube& probs) {
  const std::size_t plane = std::size_t{probs.height} * probs.width;
  if (probs.values.size() != plane * probs.classes)
    throw DataError("probability cube holds " + std::to_string(probs.values.size()) +
                    " values, expected " + std::to_string(plane * probs.classes));
  return plane;
}

}  // namespace

Rgb RgbImage::at(std::uint32_t row, std::uint32_t col) const {
  const std::size_t i = (std::size_t{row} * width + col) * 3;
  return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void RgbImage::set(std::uint32_t row, std::uint32_t col, Rgb c) {
  const std::size_t i = (std::size_t{row} * width + col) * 3;
  pixels[i] = c[0];
  pixels[i + 1] = c[1];
  pixels[i + 2] = c[2];
}

RgbImage render_segmentation(std::span<const std::uint8_t> mask, std::uint32_t width,
                             std::uint32_t height, const ClassScheme& scheme) {
  if (mask.size() != std::size_t{width} * height)
    throw DataError("mask size does not match " + std::to_string(width) + "x" +
                    std::to_string(height));
  RgbImage img(width, height);
  for (std::uint32_t r = 0; r < height; ++r)
    for (std::uint32_t c = 0; c < width; ++c) {
      const std::uint8_t id = mask[std::size_t{r} * width + c];
      if (id != kUnlabeled) img.set(r, c, palette_color(scheme, id));
    }
  return img;
}

RgbImage render_error_map(const ProbabilityCube& probs, std::span<const std::uint8_t> truth,
                          const ClassScheme& scheme) {
  const std::size_t plane = check_cube(probs);
  if (truth.size() != plane) throw DataError("truth mask does not match the probability cube");
  if (probs.classes != scheme.size())
    throw DataError("probability cube has " + std::to_string(probs.classes) +
                    " classes, scheme '" + scheme.name + "' has " + std::to_string(scheme.size()));
  const LabelMask pred = labels_from_probabilities(probs, scheme);
  RgbImage img(probs.width, probs.height);
  for (std::uint32_t r = 0; r < probs.height; ++r)
    for (std::uint32_t c = 0; c < probs.width; ++c) {
      const std::size_t i = std::size_t{r} * probs.width + c;
      const std::uint8_t t = truth[i];
      if (t == kUnlabeled) continue;
      const std::uint8_t p = pred.values[i];
      if (p == t) {
        const Rgb& base = palette_color(scheme, t);
        img.set(r, c, {static_cast<std::uint8_t>(base[0] / 2), static_cast<std::uint8_t>(base[1] / 2),
                       static_cast<std::uint8_t>(base[2] / 2)});
      } else {
        palette_color(scheme, t);
        const double prob = std::clamp(double{probs.values[p * plane + i]}, 0.0, 1.0);
        img.set(r, c, {static_cast<std::uint8_t>(std::lround(255.0 * prob)), 0, 0});
      }
    }
  return img;
}

RgbImage render_reconstruction_error(std::span<const float> pred, std::span<const float> target,
                                     std::uint32_t channels, std::uint32_t width,
                                     std::uint32_t height) {
  const std::size_t plane = std::size_t{width} * height;
  if (pred.size() != plane * channels || target.size() != pred.size())
    throw DataError("reconstruction render: shape mismatch");
  if (channels == 0) throw DataError("reconstruction render: zero channels");
  std::vector<double> err(plane, 0.0);
  for (std::uint32_t k = 0; k < channels; ++k)
    for (std::size_t i = 0; i < plane; ++i)
      err[i] += std::abs(double{pred[k * plane + i]} - target[k * plane + i]) / channels;
  const double peak = plane ? *std::max_element(err.begin(), err.end()) : 0.0;
  RgbImage img(width, height);
  for (std::size_t i = 0; i < plane; ++i) {
    const double t = peak > 0 ? err[i] / peak : 0.0;
    const auto ramp = static_cast<std::uint8_t>(std::lround(255.0 * t));
    img.set(static_cast<std::uint32_t>(i / width), static_cast<std::uint32_t>(i % width),
            {ramp, ramp, static_cast<std::uint8_t>(255 - ramp)});
  }
  return img;
}

std::vector<LegendEntry> class_probability_legend(const ProbabilityCube& probs,
                                                  const ClassScheme& scheme) {
  const std::size_t plane = check_cube(probs);
  if (probs.classes != scheme.size())
    throw DataError("probability cube depth differs from scheme '" + scheme.name + "'");
  std::vector<LegendEntry> out;
  for (std::uint32_t k = 0; k < probs.classes; ++k) {
    double s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += probs.values[k * plane + i];
    out.push_back({scheme[k].id, scheme[k].label, scheme[k].color, plane ? s / plane : 0.0});
  }
  return out;
}

RgbImage append_legend(const RgbImage& image, const std::vector<LegendEntry>& legend) {
  const std::uint32_t width = std::max<std::uint32_t>(image.width, 64);
  RgbImage out(width, image.height + kRowHeight * static_cast<std::uint32_t>(legend.size()));
  std::fill(out.pixels.begin(), out.pixels.end(), std::uint8_t{255});
  for (std::uint32_t r = 0; r < image.height; ++r)
    for (std::uint32_t c = 0; c < image.width; ++c) out.set(r, c, image.at(r, c));
  const int bar_max = static_cast<int>(width) - (kSwatch + 6) - kTextWidth - 4;
  for (std::size_t e = 0; e < legend.size(); ++e) {
    const int y = static_cast<int>(image.height + e * kRowHeight) + 1;
    fill(out, 2, y, kSwatch, kSwatch, legend[e].color);
    const double p = std::clamp(legend[e].mean_probability, 0.0, 1.0);
    fill(out, kSwatch + 6, y + 2, static_cast<int>(std::lround(p * bar_max)), kSwatch - 4,
         {64, 64, 64});
    char text[16];
    std::snprintf(text, sizeof text, "%.3f", p);
    draw_text(out, static_cast<int>(width) - kTextWidth - 2, y + 3, text, {0, 0, 0});
  }
  return out;
}

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::uint32_t r = 0; r < image.height; ++r)
    png_write_row(png, const_cast<png_bytep>(image.pixels.data() + std::size_t{r} * image.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw DataError("cannot read " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  RgbImage out(img.width, img.height);
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr))
    throw DataError("cannot decode " + path.string() + ": " + img.message);
  return out;
}

}  // namespace wetseg::eval
