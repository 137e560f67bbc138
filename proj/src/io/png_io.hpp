#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace xdd::io {

// 8-bit RGB raster, row-major, tightly packed.
struct ImageU8 {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;  // height*width*3

  size_t idx(int y, int x) const {
    return (static_cast<size_t>(y) * width + x) * 3;
  }
};

ImageU8 read_png(const std::string& path);
void write_png(const std::string& path, const ImageU8& img);

}  // namespace xdd::io
