#include "coda/data/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "coda/errors.hpp"

namespace coda::img {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

void write_png(const std::string& path, const uint8_t* data, int width, int height, int color_type, int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IOFailure("cannot open for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IOFailure("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IOFailure("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IOFailure("png write failed: " + path);
  }
  png_init_io(png, fp.get());
  // fixed encoder settings so identical pixels give identical bytes
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, png_uint_32(width), png_uint_32(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y)
    rows[size_t(y)] = const_cast<png_bytep>(data + size_t(y) * size_t(width) * size_t(channels));
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_gray8(const std::string& path, const std::vector<uint8_t>& pix, int width, int height) {
  if (int64_t(pix.size()) != int64_t(width) * height)
    throw IOFailure("pixel buffer size does not match dimensions for " + path);
  write_png(path, pix.data(), width, height, PNG_COLOR_TYPE_GRAY, 1);
}

void write_png_rgb8(const std::string& path, const std::vector<uint8_t>& rgb, int width, int height) {
  if (int64_t(rgb.size()) != int64_t(width) * height * 3)
    throw IOFailure("pixel buffer size does not match dimensions for " + path);
  write_png(path, rgb.data(), width, height, PNG_COLOR_TYPE_RGB, 3);
}

std::vector<uint8_t> read_png_gray8(const std::string& path, int& width, int& height) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DecodeError("cannot open image file: " + path);

  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8))
    throw DecodeError("not a PNG file: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DecodeError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DecodeError("png_create_info_struct failed");
  }
  std::vector<uint8_t> out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DecodeError("corrupt PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  // normalize anything we get to 8-bit grayscale
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_color_type(png, info) & PNG_COLOR_MASK_COLOR) png_set_rgb_to_gray(png, 1, -1, -1);
  if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);

  width = int(png_get_image_width(png, info));
  height = int(png_get_image_height(png, info));
  out.resize(size_t(width) * size_t(height));
  std::vector<png_bytep> rows(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y) rows[size_t(y)] = out.data() + size_t(y) * size_t(width);
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace coda::img
