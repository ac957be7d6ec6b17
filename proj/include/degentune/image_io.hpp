#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "degentune/errors.hpp"
#include "degentune/tensor.hpp"

namespace dgt {

/// [-1,1] -> 8-bit: round((v+1) * 127.5), clamped.
inline unsigned char quantize_u8(double v) {
  const double q = std::nearbyint((v + 1.0) * 127.5);
  return static_cast<unsigned char>(q < 0.0 ? 0.0 : (q > 255.0 ? 255.0 : q));
}

inline double dequantize_u8(unsigned char b) {
  return static_cast<double>(b) / 127.5 - 1.0;
}

/// Writes a {C,H,W} image as an 8-bit PNG (C = 1 gray or 3 RGB).
/// Encoding settings are fixed so identical pixels give identical bytes.
inline void write_png(const std::string& path, const Image& img) {
  if (img.ndim() != 3 || (img.dim(0) != 1 && img.dim(0) != 3))
    throw ValidationError("write_png: expected {1|3,H,W} image, got " +
                          shape_str(img.shape));
  const int c = img.dim(0), h = img.dim(1), w = img.dim(2);

  std::FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw RuntimeError("write_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw RuntimeError("write_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw RuntimeError("write_png: libpng error writing " + path);
  }

  png_init_io(png, fp);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<unsigned char> row(static_cast<std::size_t>(w) * c);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        row[static_cast<std::size_t>(x) * c + ch] = quantize_u8(img.at3(ch, y, x));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

/// Reads an 8-bit PNG into a {C,H,W} image in [-1,1]. Gray stays 1-channel,
/// everything else is expanded/truncated to RGB.
inline Image read_png(const std::string& path) {
  std::FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw RuntimeError("read_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw RuntimeError("read_png: libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw RuntimeError("read_png: libpng error reading " + path);
  }

  png_init_io(png, fp);
  png_read_info(png, info);

  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = static_cast<int>(png_get_channels(png, info));
  const int c = channels >= 3 ? 3 : 1;

  std::vector<unsigned char> row(png_get_rowbytes(png, info));
  Image img = make_image(c, h, w);
  for (int y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch)
        img.at3(ch, y, x) = dequantize_u8(row[static_cast<std::size_t>(x) * channels + ch]);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return img;
}

/// Raw little-endian f32 dump: int32 ndim, int32 dims..., then values.
/// Bit-exact companion format to the PNGs for tests and replay.
inline void write_f32(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeError("write_f32: cannot open " + path);
  const std::int32_t nd = t.ndim();
  out.write(reinterpret_cast<const char*>(&nd), 4);
  for (int i = 0; i < nd; ++i) {
    const std::int32_t d = t.dim(i);
    out.write(reinterpret_cast<const char*>(&d), 4);
  }
  std::vector<float> vals(t.data.begin(), t.data.end());
  out.write(reinterpret_cast<const char*>(vals.data()),
            static_cast<std::streamsize>(vals.size() * sizeof(float)));
  if (!out) throw RuntimeError("write_f32: short write to " + path);
}

inline Tensor read_f32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeError("read_f32: cannot open " + path);
  std::int32_t nd = 0;
  in.read(reinterpret_cast<char*>(&nd), 4);
  if (!in || nd < 1 || nd > 8) throw RuntimeError("read_f32: bad header in " + path);
  std::vector<int> shape(static_cast<std::size_t>(nd));
  for (auto& d : shape) {
    std::int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    d = v;
  }
  Tensor t(shape);
  std::vector<float> vals(static_cast<std::size_t>(t.numel()));
  in.read(reinterpret_cast<char*>(vals.data()),
          static_cast<std::streamsize>(vals.size() * sizeof(float)));
  if (!in) throw RuntimeError("read_f32: truncated file " + path);
  for (std::size_t i = 0; i < vals.size(); ++i) t.data[i] = vals[i];
  return t;
}

}  // namespace dgt
