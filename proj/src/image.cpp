// SPDX-License-Identifier: Apache-2.0
#include "vibertgrid/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "vibertgrid/errors.hpp"

namespace vbg {
namespace {

class PnmReader {
 public:
  explicit PnmReader(std::string_view bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  int read_int(const char* what) {
    skip_space_and_comments();
    std::size_t start = pos_;
    while (pos_ < bytes_.size() && std::isdigit(static_cast<unsigned char>(bytes_[pos_]))) ++pos_;
    if (start == pos_) throw ParseError(std::string("image: expected integer for ") + what);
    return std::stoi(std::string(bytes_.substr(start, pos_ - start)));
  }

  std::string_view rest_after_single_space() {
    if (pos_ >= bytes_.size()) throw ParseError("image: truncated header");
    ++pos_;
    return bytes_.substr(pos_);
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

Image decode_pnm(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P') throw ParseError("image: not a PNM file");
  const char kind = bytes[1];
  if (kind != '3' && kind != '5' && kind != '6') throw ParseError("image: unsupported PNM type");
  PnmReader reader(bytes);
  const int width = reader.read_int("width");
  const int height = reader.read_int("height");
  const int maxval = reader.read_int("maxval");
  if (width <= 0 || height <= 0) throw ParseError("image: non-positive dimensions");
  if (maxval <= 0 || maxval > 255) throw ParseError("image: only 8-bit maxval supported");
  Image img(height, width, 0.0f);
  const float scale = 1.0f / static_cast<float>(maxval);
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (kind == '3') {
    std::istringstream in(std::string(reader.rest_after_single_space()));
    for (std::size_t i = 0; i < n * 3; ++i) {
      int v = 0;
      if (!(in >> v)) throw ParseError("image: truncated P3 data");
      img.pixels[i] = std::clamp(v, 0, maxval) * scale;
    }
    return img;
  }
  const auto data = reader.rest_after_single_space();
  const std::size_t channels = kind == '6' ? 3 : 1;
  if (data.size() < n * channels) throw ParseError("image: truncated pixel data");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const auto v = static_cast<unsigned char>(data[i * channels + (channels == 3 ? c : 0)]);
      img.pixels[i * 3 + c] = std::min<int>(v, maxval) * scale;
    }
  }
  return img;
}

std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  const std::size_t header = out.size();
  out.resize(header + img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    const float v = std::clamp(img.pixels[i], 0.0f, 1.0f);
    out[header + i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f)));
  }
  return out;
}

Image resize_bilinear(const Image& img, int new_height, int new_width) {
  if (new_height == img.height && new_width == img.width) return img;
  Image out(new_height, new_width, 0.0f);
  if (img.empty()) return out;
  const double sy = static_cast<double>(img.height) / new_height;
  const double sx = static_cast<double>(img.width) / new_width;
  for (int y = 0; y < new_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
        const double bot = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

}  // namespace vbg
