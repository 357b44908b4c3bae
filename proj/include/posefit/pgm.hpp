#pragma once

// Depth image I/O: binary 16-bit PGM (P5, maxval 65535, big-endian samples).
// Pixel value = round(depth_m * 1000), 0 = absent. Lossless at millimeter
// quantization.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "posefit/geometry.hpp"

namespace posefit {

struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> millimeters;  // row-major, 0 = absent

  std::uint16_t at(int u, int v) const {
    return millimeters[static_cast<std::size_t>(v) * width + u];
  }
  void set(int u, int v, std::uint16_t mm) {
    millimeters[static_cast<std::size_t>(v) * width + u] = mm;
  }
  bool operator==(const DepthImage& o) const = default;
};

namespace detail {

// Skips PGM whitespace and `#` comments between header tokens.
inline int next_pgm_token(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c == '#' || std::isspace(c)) {
    if (c == '#')
      while (c != '\n' && c != EOF) c = in.get();
    c = in.get();
  }
  if (c == EOF) throw InputError(path + ": truncated PGM header");
  int value = 0;
  bool any = false;
  while (c >= '0' && c <= '9') {
    value = value * 10 + (c - '0');
    any = true;
    if (value > 1 << 30) throw InputError(path + ": PGM header value too large");
    c = in.get();
  }
  if (!any) throw InputError(path + ": malformed PGM header");
  in.unget();
  return value;
}

}  // namespace detail

inline DepthImage load_pgm16(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open depth file: " + path);
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') throw InputError(path + ": not a binary PGM (P5)");
  DepthImage img;
  img.width = detail::next_pgm_token(in, path);
  img.height = detail::next_pgm_token(in, path);
  int maxval = detail::next_pgm_token(in, path);
  if (maxval != 65535) throw InputError(path + ": depth PGM must have maxval 65535");
  if (img.width <= 0 || img.height <= 0) throw InputError(path + ": empty image");
  in.get();  // single whitespace byte after maxval
  std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  std::vector<std::uint8_t> raw(n * 2);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw InputError(path + ": truncated PGM payload");
  img.millimeters.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    img.millimeters[i] = static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]);
  return img;
}

inline void save_pgm16(const DepthImage& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write depth file: " + path);
  out << "P5\n" << img.width << ' ' << img.height << "\n65535\n";
  std::vector<std::uint8_t> raw(img.millimeters.size() * 2);
  for (std::size_t i = 0; i < img.millimeters.size(); ++i) {
    raw[2 * i] = static_cast<std::uint8_t>(img.millimeters[i] >> 8);
    raw[2 * i + 1] = static_cast<std::uint8_t>(img.millimeters[i] & 0xFF);
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw InputError("write failed: " + path);
}

inline DepthImage cloud_to_depth_image(const OrganizedCloud& cloud) {
  DepthImage img;
  img.width = cloud.width();
  img.height = cloud.height();
  img.millimeters.assign(static_cast<std::size_t>(img.width) * img.height, 0);
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      if (!cloud.present(u, v)) continue;
      double mm = std::round(cloud.at(u, v).z * 1000.0);
      img.set(u, v, static_cast<std::uint16_t>(std::min(65535.0, std::max(1.0, mm))));
    }
  }
  return img;
}

// Millimeter depths to an organized cloud. Pixels whose depth falls outside
// [z_near, z_far] are treated as absent, matching sensor range limits.
inline OrganizedCloud depth_image_to_cloud(const DepthImage& img, const CameraIntrinsics& k) {
  if (img.width != k.width || img.height != k.height)
    throw InputError("depth image size does not match intrinsics");
  OrganizedCloud cloud(k);
  for (int v = 0; v < img.height; ++v) {
    for (int u = 0; u < img.width; ++u) {
      std::uint16_t mm = img.at(u, v);
      if (mm == 0) continue;
      double z = mm / 1000.0;
      if (z < k.z_near || z > k.z_far) continue;
      cloud.set(u, v, backproject(k, u, v, z));
    }
  }
  return cloud;
}

}  // namespace posefit
