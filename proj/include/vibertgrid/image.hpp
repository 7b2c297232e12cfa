// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace vbg {

/// Row-major H x W x 3 image with channel values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, float fill = 1.0f)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * 3, fill) {}

  float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool empty() const { return height == 0 || width == 0; }
};

/// Decodes binary (P6) or ASCII (P3) portable pixmaps, and P5 greymaps.
Image decode_pnm(std::string_view bytes);

/// Encodes as binary P6 with 8-bit channels.
std::string encode_ppm(const Image& img);

/// Bilinear resampling with half-pixel centers.
Image resize_bilinear(const Image& img, int new_height, int new_width);

}  // namespace vbg
