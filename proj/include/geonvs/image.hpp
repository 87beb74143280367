// Copyright 2026 The geonvs Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <limits>
#include <string>
#include <vector>

namespace geonvs {

// RGB image, doubles in [0,1], row-major (y, x, channel).
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  Eigen::Vector3d pixel(int y, int x) const {
    return {at(y, x, 0), at(y, x, 1), at(y, x, 2)};
  }
  void set_pixel(int y, int x, const Eigen::Vector3d& rgb) {
    for (int c = 0; c < 3; ++c) at(y, x, c) = rgb[c];
  }
  // Border-clamped bilinear sample; (x,y) continuous, pixel centers at +0.5.
  Eigen::Vector3d bilinear(double x, double y) const;
};

// Per-pixel depth along the pixel ray's delta parameter; misses are +inf.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  DepthMap() = default;
  DepthMap(int w, int h)
      : width(w), height(h),
        data(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity()) {}

  double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  // Bilinear lookup; +inf if any contributing tap is non-finite.
  double bilinear(double x, double y) const;
  double nearest(double x, double y) const;
};

// 8-bit RGB PNG. Deterministic encoder settings so identical images produce
// identical files.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Binary depth grid: magic "CNRFDPTH", u32 height, u32 width (little-endian),
// then height*width float32 row-major values.
void write_depth(const std::string& path, const DepthMap& depth);
DepthMap read_depth(const std::string& path);

}  // namespace geonvs
