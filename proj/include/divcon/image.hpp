#pragma once

#include "divcon/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace divcon {

/// Row-major float image with interleaved channels, values nominally in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c = 3, double fill = 0.0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  void set_rgb(int x, int y, const Vec3& rgb) {
    for (int c = 0; c < 3; ++c) at(x, y, c) = rgb[c];
  }
  Vec3 rgb(int x, int y) const { return Vec3(at(x, y, 0), at(x, y, 1), at(x, y, 2)); }

  bool same_shape(const Image& o) const { return width == o.width && height == o.height && channels == o.channels; }
  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int x, int y, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
};

inline std::uint8_t quantize_8bit(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Binary PPM (P6, maxval 255). Single-channel images are written as gray RGB.
inline std::string encode_ppm(const Image& img) {
  std::ostringstream out;
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::string bytes = out.str();
  bytes.reserve(bytes.size() + static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) bytes.push_back(static_cast<char>(quantize_8bit(img.at(x, y, img.channels == 3 ? c : 0))));
  return bytes;
}

inline void write_ppm(const Image& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::Io, "cannot open " + path + " for writing");
  const std::string bytes = encode_ppm(img);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "failed writing " + path);
}

inline Image decode_ppm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P6") fail(ErrorCode::Io, "only binary P6 PPM is supported");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    fail(ErrorCode::Io, "malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) fail(ErrorCode::Io, "unsupported PPM dimensions or depth");
  ++pos;  // single whitespace after maxval
  const std::size_t need = static_cast<std::size_t>(w) * h * 3;
  if (bytes.size() < pos + need) fail(ErrorCode::Io, "PPM pixel data is truncated");
  Image img(w, h, 3);
  for (std::size_t i = 0; i < need; ++i) img.data[i] = static_cast<unsigned char>(bytes[pos + i]) / 255.0;
  return img;
}

inline Image read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_ppm(ss.str());
}

/// Maps a depth map to [0, 1] for viewing by dividing by `max_depth`.
inline Image depth_to_gray(const Image& depth, double max_depth) {
  Image out(depth.width, depth.height, 3);
  for (int y = 0; y < depth.height; ++y)
    for (int x = 0; x < depth.width; ++x) {
      const double v = max_depth > 0.0 ? depth.at(x, y) / max_depth : 0.0;
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = v;
    }
  return out;
}

}  // namespace divcon
