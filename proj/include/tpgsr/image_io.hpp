#pragma once
// Grayscale image file I/O: binary PGM (P5) and 8-bit PNG.

#include <png.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "tpgsr/base.hpp"

namespace tpgsr {

struct GrayImage {
  int64_t h = 0, w = 0;
  std::vector<float> pix;  // row-major, values in [0,1]
};

inline uint8_t to_byte(float v) {
  double x = double(v) * 255.0 + 0.5;
  if (x < 0) x = 0;
  if (x > 255) x = 255;
  return uint8_t(x);
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  check(f.good(), "cannot open for writing: ", path);
  f << "P5\n" << img.w << " " << img.h << "\n255\n";
  std::vector<uint8_t> bytes(img.pix.size());
  for (size_t i = 0; i < img.pix.size(); ++i) bytes[i] = to_byte(img.pix[i]);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          std::streamsize(bytes.size()));
  check(f.good(), "failed writing PGM: ", path);
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "cannot open: ", path);
  std::string magic;
  f >> magic;
  check(magic == "P5", "not a binary PGM (P5) file: ", path);
  int64_t w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  check(w > 0 && h > 0, "bad PGM dimensions in ", path);
  check(maxval == 255, "unsupported PGM maxval ", maxval, " in ", path);
  f.get();  // single whitespace after header
  std::vector<uint8_t> bytes(size_t(w * h));
  f.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  check(f.gcount() == std::streamsize(bytes.size()), "truncated PGM: ", path);
  GrayImage img;
  img.h = h;
  img.w = w;
  img.pix.resize(bytes.size());
  for (size_t i = 0; i < bytes.size(); ++i)
    img.pix[i] = float(bytes[i]) / 255.0f;
  return img;
}

inline void write_png(const std::string& path, const GrayImage& img) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  check(fp != nullptr, "cannot open for writing: ", path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    fail("libpng failure writing ", path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, png_uint_32(img.w), png_uint_32(img.h), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<uint8_t> row(size_t(img.w));
  for (int64_t y = 0; y < img.h; ++y) {
    for (int64_t x = 0; x < img.w; ++x)
      row[size_t(x)] = to_byte(img.pix[size_t(y * img.w + x)]);
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

inline GrayImage read_png(const std::string& path) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  check(fp != nullptr, "cannot open: ", path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    std::fclose(fp);
    fail("libpng failure reading ", path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  // normalize any input to 8-bit grayscale
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  GrayImage img;
  img.h = int64_t(h);
  img.w = int64_t(w);
  img.pix.resize(size_t(img.h * img.w));
  std::vector<uint8_t> row(size_t(png_get_rowbytes(png, info)));
  for (int64_t y = 0; y < img.h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int64_t x = 0; x < img.w; ++x)
      img.pix[size_t(y * img.w + x)] = float(row[size_t(x)]) / 255.0f;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

}  // namespace tpgsr
