#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fssd {

struct ImageRgb {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // 3 bytes per pixel, row-major
};

void write_png(const std::string& path, const ImageRgb& image);
ImageRgb read_png(const std::string& path);

}  // namespace fssd
