// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#include "geonvs/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace geonvs {

namespace {

struct Tap {
  int x0, x1, y0, y1;
  double wx, wy;
};

Tap make_tap(double x, double y, int W, int H) {
  double fx = std::min(std::max(x - 0.5, 0.0), static_cast<double>(W - 1));
  double fy = std::min(std::max(y - 0.5, 0.0), static_cast<double>(H - 1));
  Tap t;
  t.x0 = std::min(static_cast<int>(std::floor(fx)), W - 1);
  t.y0 = std::min(static_cast<int>(std::floor(fy)), H - 1);
  t.x1 = std::min(t.x0 + 1, W - 1);
  t.y1 = std::min(t.y0 + 1, H - 1);
  t.wx = fx - t.x0;
  t.wy = fy - t.y0;
  return t;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

Eigen::Vector3d Image::bilinear(double x, double y) const {
  const Tap t = make_tap(x, y, width, height);
  Eigen::Vector3d out;
  for (int c = 0; c < 3; ++c) {
    const double top = (1 - t.wx) * at(t.y0, t.x0, c) + t.wx * at(t.y0, t.x1, c);
    const double bot = (1 - t.wx) * at(t.y1, t.x0, c) + t.wx * at(t.y1, t.x1, c);
    out[c] = (1 - t.wy) * top + t.wy * bot;
  }
  return out;
}

double DepthMap::bilinear(double x, double y) const {
  const Tap t = make_tap(x, y, width, height);
  const double v00 = at(t.y0, t.x0), v01 = at(t.y0, t.x1);
  const double v10 = at(t.y1, t.x0), v11 = at(t.y1, t.x1);
  if (!std::isfinite(v00) || !std::isfinite(v01) || !std::isfinite(v10) ||
      !std::isfinite(v11))
    return std::numeric_limits<double>::infinity();
  const double top = (1 - t.wx) * v00 + t.wx * v01;
  const double bot = (1 - t.wx) * v10 + t.wx * v11;
  return (1 - t.wy) * top + t.wy * bot;
}

double DepthMap::nearest(double x, double y) const {
  const Tap t = make_tap(x, y, width, height);
  const int xi = t.wx < 0.5 ? t.x0 : t.x1;
  const int yi = t.wy < 0.5 ? t.y0 : t.y1;
  return at(yi, xi);
}

void write_png(const std::string& path, const Image& img) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw std::runtime_error("write_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("write_png: libpng error writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  // Pin every encoder knob that could vary: reproducibility over size.
  png_set_compression_level(png, 6);
  png_set_filter(png, 0, PNG_FILTER_NONE);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<std::size_t>(img.width) * 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::min(1.0, std::max(0.0, img.at(y, x, c)));
        row[static_cast<std::size_t>(x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw std::runtime_error("read_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: libpng error reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("read_png: expected 3 channels after expansion");
  }
  Image img(w, h);
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

namespace {

constexpr char kDepthMagic[8] = {'C', 'N', 'R', 'F', 'D', 'P', 'T', 'H'};

void put_u32_le(std::FILE* f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  std::fwrite(b, 1, 4, f);
}

std::uint32_t get_u32_le(std::FILE* f) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw std::runtime_error("depth grid: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_depth(const std::string& path, const DepthMap& depth) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("write_depth: cannot open " + path);
  std::fwrite(kDepthMagic, 1, 8, fp.get());
  put_u32_le(fp.get(), static_cast<std::uint32_t>(depth.height));
  put_u32_le(fp.get(), static_cast<std::uint32_t>(depth.width));
  std::vector<float> buf(depth.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(depth.data[i]);
  static_assert(sizeof(float) == 4);
  std::fwrite(buf.data(), 4, buf.size(), fp.get());
}

DepthMap read_depth(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("read_depth: cannot open " + path);
  char magic[8];
  if (std::fread(magic, 1, 8, fp.get()) != 8 || std::memcmp(magic, kDepthMagic, 8) != 0)
    throw std::runtime_error("read_depth: bad magic in " + path);
  const int h = static_cast<int>(get_u32_le(fp.get()));
  const int w = static_cast<int>(get_u32_le(fp.get()));
  DepthMap depth(w, h);
  std::vector<float> buf(static_cast<std::size_t>(w) * h);
  if (std::fread(buf.data(), 4, buf.size(), fp.get()) != buf.size())
    throw std::runtime_error("read_depth: truncated data in " + path);
  for (std::size_t i = 0; i < buf.size(); ++i) depth.data[i] = buf[i];
  return depth;
}

}  // namespace geonvs
