#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "consim/manifest.hpp"

namespace consim {

// 8-bit RGB, row-major, interleaved.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

Image read_png(const std::string& path);
Image read_jpeg(const std::string& path);
// Dispatches on extension.
Image read_image(const std::string& path);
void write_png(const std::string& path, const Image& image);

Image crop(const Image& image, const Rect& rect);
Image resize_nearest(const Image& image, int width, int height);
// Places tiles row-major on a grid x grid canvas of tile_size cells; missing
// tiles stay black.
Image montage(const std::vector<Image>& tiles, int grid, int tile_size);

}  // namespace consim
