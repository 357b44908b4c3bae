#pragma once

// Rigid-body math, pinhole camera model, organized point clouds and triangle
// meshes. Camera frame convention: +z forward, +x right, +y down. All lengths
// in meters, angles in radians.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "posefit/rng.hpp"

namespace posefit {

// Validation failure on externally supplied data (files, configs). The CLI
// maps this to its input-validation exit code.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3& operator+=(const Vec3& o) {
    x += o.x;
    y += o.y;
    z += o.z;
    return *this;
  }
  bool operator==(const Vec3& o) const = default;
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double distance(const Vec3& a, const Vec3& b) { return norm(a - b); }
inline Vec3 normalized(const Vec3& a) {
  double n = norm(a);
  if (n == 0.0) throw std::invalid_argument("cannot normalize zero vector");
  return a * (1.0 / n);
}
inline bool is_finite(const Vec3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

using Mat3 = std::array<std::array<double, 3>, 3>;

// Unit quaternion, canonicalized so the scalar part is never negative
// (the two quaternion covers of a rotation compare equal).
class Rotation {
 public:
  Rotation() = default;

  static Rotation from_quat(double w, double x, double y, double z) {
    Rotation r;
    double n = std::sqrt(w * w + x * x + y * y + z * z);
    if (n == 0.0 || !std::isfinite(n)) throw std::invalid_argument("invalid quaternion");
    r.w_ = w / n;
    r.x_ = x / n;
    r.y_ = y / n;
    r.z_ = z / n;
    r.canonicalize();
    return r;
  }

  static Rotation identity() { return Rotation(); }

  static Rotation from_axis_angle(const Vec3& axis, double angle) {
    Vec3 u = normalized(axis);
    double h = 0.5 * angle;
    double s = std::sin(h);
    return from_quat(std::cos(h), u.x * s, u.y * s, u.z * s);
  }

  // Shortest-arc rotation mapping unit vector a onto unit vector b.
  static Rotation between(const Vec3& a, const Vec3& b) {
    Vec3 ua = normalized(a);
    Vec3 ub = normalized(b);
    double c = dot(ua, ub);
    if (c < -1.0 + 1e-12) {
      // Antiparallel: rotate pi about any axis orthogonal to a.
      Vec3 ortho = std::abs(ua.x) < 0.9 ? cross(ua, Vec3{1, 0, 0}) : cross(ua, Vec3{0, 1, 0});
      return from_axis_angle(ortho, std::numbers::pi);
    }
    Vec3 v = cross(ua, ub);
    return from_quat(1.0 + c, v.x, v.y, v.z);
  }

  static Rotation from_matrix(const Mat3& m) {
    // Shepperd's method.
    double t = m[0][0] + m[1][1] + m[2][2];
    double w, x, y, z;
    if (t > 0.0) {
      double s = std::sqrt(t + 1.0) * 2.0;
      w = 0.25 * s;
      x = (m[2][1] - m[1][2]) / s;
      y = (m[0][2] - m[2][0]) / s;
      z = (m[1][0] - m[0][1]) / s;
    } else if (m[0][0] > m[1][1] && m[0][0] > m[2][2]) {
      double s = std::sqrt(1.0 + m[0][0] - m[1][1] - m[2][2]) * 2.0;
      w = (m[2][1] - m[1][2]) / s;
      x = 0.25 * s;
      y = (m[0][1] + m[1][0]) / s;
      z = (m[0][2] + m[2][0]) / s;
    } else if (m[1][1] > m[2][2]) {
      double s = std::sqrt(1.0 + m[1][1] - m[0][0] - m[2][2]) * 2.0;
      w = (m[0][2] - m[2][0]) / s;
      x = (m[0][1] + m[1][0]) / s;
      y = 0.25 * s;
      z = (m[1][2] + m[2][1]) / s;
    } else {
      double s = std::sqrt(1.0 + m[2][2] - m[0][0] - m[1][1]) * 2.0;
      w = (m[1][0] - m[0][1]) / s;
      x = (m[0][2] + m[2][0]) / s;
      y = (m[1][2] + m[2][1]) / s;
      z = 0.25 * s;
    }
    return from_quat(w, x, y, z);
  }

  double w() const { return w_; }
  double x() const { return x_; }
  double y() const { return y_; }
  double z() const { return z_; }

  Rotation operator*(const Rotation& o) const {
    return from_quat(w_ * o.w_ - x_ * o.x_ - y_ * o.y_ - z_ * o.z_,
                     w_ * o.x_ + x_ * o.w_ + y_ * o.z_ - z_ * o.y_,
                     w_ * o.y_ - x_ * o.z_ + y_ * o.w_ + z_ * o.x_,
                     w_ * o.z_ + x_ * o.y_ - y_ * o.x_ + z_ * o.w_);
  }

  Rotation inverse() const {
    Rotation r = *this;
    r.x_ = -r.x_;
    r.y_ = -r.y_;
    r.z_ = -r.z_;
    r.canonicalize();
    return r;
  }

  Vec3 rotate(const Vec3& v) const {
    // v' = v + 2 q_v x (q_v x v + w v)
    Vec3 qv{x_, y_, z_};
    Vec3 t = cross(qv, v) * 2.0;
    return v + t * w_ + cross(qv, t);
  }

  Mat3 matrix() const {
    double xx = x_ * x_, yy = y_ * y_, zz = z_ * z_;
    double wx = w_ * x_, wy = w_ * y_, wz = w_ * z_;
    double xy = x_ * y_, xz = x_ * z_, yz = y_ * z_;
    return {{{1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)},
             {2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)},
             {2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)}}};
  }

  // Rotation angle in [0, pi].
  double angle() const { return 2.0 * std::acos(std::min(1.0, std::abs(w_))); }

  bool operator==(const Rotation& o) const = default;

 private:
  void canonicalize() {
    if (w_ < 0.0) {
      w_ = -w_;
      x_ = -x_;
      y_ = -y_;
      z_ = -z_;
    }
  }

  double w_ = 1.0;
  double x_ = 0.0;
  double y_ = 0.0;
  double z_ = 0.0;
};

inline double angle_between(const Rotation& a, const Rotation& b) {
  return (a.inverse() * b).angle();
}

struct Pose {
  Rotation rotation;
  Vec3 translation;

  static Pose identity() { return {}; }

  Pose operator*(const Pose& o) const {
    return {rotation * o.rotation, rotation.rotate(o.translation) + translation};
  }

  Pose inverse() const {
    Rotation ri = rotation.inverse();
    return {ri, ri.rotate(translation) * -1.0};
  }

  bool operator==(const Pose& o) const = default;
};

inline Vec3 transform_point(const Pose& pose, const Vec3& p) {
  return pose.rotation.rotate(p) + pose.translation;
}

// R . p + T with a precomputed rotation matrix; the renderer's inner loop.
struct PoseMatrix {
  Mat3 r;
  Vec3 t;

  explicit PoseMatrix(const Pose& p) : r(p.rotation.matrix()), t(p.translation) {}

  Vec3 apply(const Vec3& v) const {
    return {r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z + t.x,
            r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z + t.y,
            r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z + t.z};
  }
};

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  double z_near = 0.05;
  double z_far = 5.0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) throw InputError("intrinsics: fx and fy must be positive");
    if (!(z_near > 0.0) || !(z_near < z_far))
      throw InputError("intrinsics: require 0 < z_near < z_far");
    if (width < 16 || height < 16) throw InputError("intrinsics: image must be at least 16x16");
  }

  bool operator==(const CameraIntrinsics& o) const = default;
};

struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

// Pinhole projection. Present only when the depth is inside [z_near, z_far]
// and the projected continuous pixel lies inside [0, width) x [0, height).
inline std::optional<Pixel> project(const CameraIntrinsics& k, const Vec3& p) {
  if (!(p.z >= k.z_near && p.z <= k.z_far)) return std::nullopt;
  double u = k.fx * p.x / p.z + k.cx;
  double v = k.fy * p.y / p.z + k.cy;
  if (u < 0.0 || u >= static_cast<double>(k.width)) return std::nullopt;
  if (v < 0.0 || v >= static_cast<double>(k.height)) return std::nullopt;
  return Pixel{u, v};
}

inline Vec3 backproject(const CameraIntrinsics& k, double u, double v, double depth) {
  if (!(depth >= k.z_near && depth <= k.z_far))
    throw std::invalid_argument("backproject: depth outside [z_near, z_far]");
  return {(u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth};
}

struct Triangle {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  std::uint32_t c = 0;
};

struct TriangleMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;
  double diameter = 0.0;  // max pairwise vertex distance

  void compute_diameter() {
    double best = 0.0;
    for (std::size_t i = 0; i < vertices.size(); ++i)
      for (std::size_t j = i + 1; j < vertices.size(); ++j)
        best = std::max(best, distance(vertices[i], vertices[j]));
    diameter = best;
  }

  void validate() const {
    if (triangles.empty()) throw InputError("mesh: no triangles");
    for (const Triangle& t : triangles) {
      if (t.a >= vertices.size() || t.b >= vertices.size() || t.c >= vertices.size())
        throw InputError("mesh: triangle index out of range");
    }
    if (!(diameter > 0.0)) throw InputError("mesh: degenerate (diameter must be positive)");
  }
};

// Point cloud that keeps its image-grid layout. Absent pixels are the norm:
// only pixels where geometry (or the sensor) produced a depth hold a point.
class OrganizedCloud {
 public:
  OrganizedCloud() = default;

  explicit OrganizedCloud(const CameraIntrinsics& k) { reset(k); }

  void reset(const CameraIntrinsics& k) {
    intrinsics_ = k;
    points_.assign(static_cast<std::size_t>(k.width) * k.height, Vec3{});
    present_.assign(static_cast<std::size_t>(k.width) * k.height, 0);
  }

  int width() const { return intrinsics_.width; }
  int height() const { return intrinsics_.height; }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }

  bool present(int u, int v) const { return present_[index(u, v)] != 0; }
  const Vec3& at(int u, int v) const { return points_[index(u, v)]; }

  void set(int u, int v, const Vec3& p) {
    points_[index(u, v)] = p;
    present_[index(u, v)] = 1;
  }
  void clear(int u, int v) { present_[index(u, v)] = 0; }

  std::size_t present_count() const {
    std::size_t n = 0;
    for (std::uint8_t f : present_) n += f;
    return n;
  }

  // Checks the depth-range and reprojection invariants; used on ingested data
  // and in tests.
  void validate() const {
    for (int v = 0; v < height(); ++v) {
      for (int u = 0; u < width(); ++u) {
        if (!present(u, v)) continue;
        const Vec3& p = at(u, v);
        if (!is_finite(p)) throw InputError("cloud: non-finite point");
        auto px = project(intrinsics_, p);
        if (!px) throw InputError("cloud: point does not project into the image");
        if (std::abs(px->u - u) > 0.5 || std::abs(px->v - v) > 0.5)
          throw InputError("cloud: point reprojects more than 0.5 px from its grid cell");
      }
    }
  }

 private:
  std::size_t index(int u, int v) const {
    return static_cast<std::size_t>(v) * intrinsics_.width + u;
  }

  CameraIntrinsics intrinsics_;
  std::vector<Vec3> points_;
  std::vector<std::uint8_t> present_;
};

// Keep every k-th pixel; intrinsics scale so present points still reproject
// onto their new grid cells exactly.
inline OrganizedCloud downsample_nearest(const OrganizedCloud& cloud, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample factor must be >= 1");
  if (factor == 1) return cloud;
  CameraIntrinsics k = cloud.intrinsics();
  k.fx /= factor;
  k.fy /= factor;
  k.cx /= factor;
  k.cy /= factor;
  k.width = cloud.width() / factor;
  k.height = cloud.height() / factor;
  OrganizedCloud out(k);
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u)
      if (cloud.present(u * factor, v * factor)) out.set(u, v, cloud.at(u * factor, v * factor));
  return out;
}

// Haar-uniform random rotation (Shoemake's subgroup algorithm).
inline Rotation sample_uniform_rotation(Rng& rng) {
  double u1 = rng.uniform();
  double u2 = rng.uniform();
  double u3 = rng.uniform();
  double a = std::sqrt(1.0 - u1);
  double b = std::sqrt(u1);
  double t2 = 2.0 * std::numbers::pi * u2;
  double t3 = 2.0 * std::numbers::pi * u3;
  return Rotation::from_quat(b * std::cos(t3), a * std::sin(t2), a * std::cos(t2),
                             b * std::sin(t3));
}

// Compose r with a random rotation whose axis is uniform on the sphere and
// whose angle is |N(0, sigma^2)|. sigma = 0 returns r unchanged.
inline Rotation perturb_rotation(const Rotation& r, double sigma_rad, Rng& rng) {
  if (sigma_rad < 0.0) throw std::invalid_argument("perturb_rotation: sigma must be >= 0");
  if (sigma_rad == 0.0) return r;
  double zc = rng.uniform(-1.0, 1.0);
  double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
  double s = std::sqrt(std::max(0.0, 1.0 - zc * zc));
  Vec3 axis{s * std::cos(phi), s * std::sin(phi), zc};
  double angle = std::abs(rng.gaussian() * sigma_rad);
  return Rotation::from_axis_angle(axis, angle) * r;
}

}  // namespace posefit
