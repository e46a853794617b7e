#include "irb/image.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "irb/errors.hpp"

namespace irb {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path);
  return f;
}

}  // namespace

void write_png(const std::string& path, const Image& img) {
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<png_byte> row(std::size_t(img.width) * 3);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to write " + path);
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width * 3; ++x) {
      const double v = std::clamp(img.data[std::size_t(y) * img.width * 3 + x], 0.0, 1.0);
      row[x] = static_cast<png_byte>(std::lround(v * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Image read_png(const std::string& path) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to read " + path);
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_palette_to_rgb(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_rowbytes(png, info) != std::size_t(w) * 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("unsupported PNG layout in " + path);
  }
  Image img(w, h);
  std::vector<png_byte> row(std::size_t(w) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w * 3; ++x) img.data[std::size_t(y) * w * 3 + x] = row[x] / 255.0;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_pfm(const std::string& path, const DepthMap& depth) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "Pf\n" << depth.width << ' ' << depth.height << "\n-1.0\n";
  for (int y = depth.height - 1; y >= 0; --y)
    for (int x = 0; x < depth.width; ++x) {
      const float v = static_cast<float>(depth.at(x, y));
      os.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
}

DepthMap read_pfm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  is >> magic >> w >> h >> scale;
  is.get();
  if (magic != "Pf" || w <= 0 || h <= 0 || scale >= 0.0) throw IoError("unsupported PFM " + path);
  DepthMap d(w, h);
  for (int y = h - 1; y >= 0; --y)
    for (int x = 0; x < w; ++x) {
      float v;
      is.read(reinterpret_cast<char*>(&v), sizeof(v));
      d.at(x, y) = v;
    }
  if (!is) throw IoError("truncated PFM " + path);
  return d;
}

void write_depth64(const std::string& path, const DepthMap& depth) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "IRB-DEPTH-v1 " << depth.width << ' ' << depth.height << '\n';
  os.write(reinterpret_cast<const char*>(depth.data.data()),
           std::streamsize(depth.data.size() * sizeof(double)));
}

DepthMap read_depth64(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::string line;
  std::getline(is, line);
  std::istringstream ls(line);
  std::string magic;
  int w = 0, h = 0;
  if (!(ls >> magic >> w >> h) || magic != "IRB-DEPTH-v1") throw ParseError("bad depth header", 1);
  DepthMap d(w, h);
  is.read(reinterpret_cast<char*>(d.data.data()), std::streamsize(d.data.size() * sizeof(double)));
  if (!is) throw IoError("truncated depth file " + path);
  return d;
}

}  // namespace irb
