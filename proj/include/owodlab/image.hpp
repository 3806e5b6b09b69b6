#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace owodlab {

// Row-major 8-bit RGB raster.
struct RasterImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // width * height * 3

  RasterImage() = default;
  RasterImage(std::size_t w, std::size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const {
    return pixels.data() + (y * width + x) * 3;
  }
};

// Binary NetPBM (P6), 8-bit maxval.
RasterImage read_ppm(const std::string& path);
void write_ppm(const RasterImage& img, const std::string& path);

}  // namespace owodlab
