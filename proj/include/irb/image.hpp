#pragma once

#include <string>
#include <vector>

#include "irb/geometry.hpp"

namespace irb {

// Row-major interleaved RGB in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(std::size_t(w) * h * 3, 0.0) {}

  Vec3 at(int x, int y) const {
    const double* p = data.data() + (std::size_t(y) * width + x) * 3;
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, const Vec3& c) {
    double* p = data.data() + (std::size_t(y) * width + x) * 3;
    p[0] = c.x();
    p[1] = c.y();
    p[2] = c.z();
  }
};

struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  DepthMap() = default;
  DepthMap(int w, int h) : width(w), height(h), data(std::size_t(w) * h, 0.0) {}
  double at(int x, int y) const { return data[std::size_t(y) * width + x]; }
  double& at(int x, int y) { return data[std::size_t(y) * width + x]; }
};

// 8-bit RGB PNG; values are clamped to [0, 1] and rounded.
void write_png(const std::string& path, const Image& img);
Image read_png(const std::string& path);

// Single-channel float32 PFM ("Pf", little-endian, rows stored bottom-up).
void write_pfm(const std::string& path, const DepthMap& depth);
DepthMap read_pfm(const std::string& path);

// Lossless depth container: "IRB-DEPTH-v1 <w> <h>" line then float64 LE.
void write_depth64(const std::string& path, const DepthMap& depth);
DepthMap read_depth64(const std::string& path);

}  // namespace irb
