#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace coda::img {

// 8-bit grayscale PNG, one file per acquisition channel.
void write_png_gray8(const std::string& path, const std::vector<uint8_t>& pix, int width, int height);
std::vector<uint8_t> read_png_gray8(const std::string& path, int& width, int& height);

// 8-bit RGB, used for emitted plots.
void write_png_rgb8(const std::string& path, const std::vector<uint8_t>& rgb, int width, int height);

}  // namespace coda::img
