#pragma once

// Software z-buffer rasterizer producing depth hypotheses. Pixel centers sit
// at integer (u, v), coverage follows a top-left fill rule, and depth is
// perspective-correct (1/z interpolated in screen space). Deterministic:
// identical inputs give bit-identical buffers.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "posefit/geometry.hpp"

namespace posefit {

class DepthBuffer {
 public:
  DepthBuffer() = default;
  DepthBuffer(int width, int height) { reset(width, height); }

  void reset(int width, int height) {
    width_ = width;
    height_ = height;
    depth_.assign(static_cast<std::size_t>(width) * height, kAbsent);
  }

  void clear() { std::fill(depth_.begin(), depth_.end(), kAbsent); }

  int width() const { return width_; }
  int height() const { return height_; }
  bool present(int u, int v) const { return depth_[index(u, v)] != kAbsent; }
  double at(int u, int v) const { return depth_[index(u, v)]; }

  // Keeps the smaller depth; the z-buffer test.
  void merge(int u, int v, double depth) {
    double& d = depth_[index(u, v)];
    if (depth < d) d = depth;
  }

  std::size_t present_count() const {
    std::size_t n = 0;
    for (double d : depth_) n += (d != kAbsent);
    return n;
  }

  bool operator==(const DepthBuffer& o) const = default;

  static constexpr double kAbsent = std::numeric_limits<double>::infinity();

 private:
  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width_ + u; }

  int width_ = 0;
  int height_ = 0;
  std::vector<double> depth_;
};

// One instance per worker: owns no buffer itself but keeps clip scratch;
// rasterize() min-merges into a caller-owned buffer so a scene can composite
// several meshes into one depth image.
class Renderer {
 public:
  // Rasterizes mesh under pose into buffer (which must match intrinsics
  // dimensions). Triangles straddling z = z_near are clipped against that
  // plane; pixels whose interpolated depth exceeds z_far are dropped.
  // Backfaces are kept: hypotheses may be viewed from any side.
  void rasterize(const TriangleMesh& mesh, const Pose& pose, const CameraIntrinsics& k,
                 DepthBuffer& buffer) const {
    PoseMatrix pm(pose);
    for (const Triangle& tri : mesh.triangles) {
      Vec3 cam[3] = {pm.apply(mesh.vertices[tri.a]), pm.apply(mesh.vertices[tri.b]),
                     pm.apply(mesh.vertices[tri.c])};
      clip_near(cam, k.z_near);
      // Clip output is a convex polygon with 0, 3, or 4 vertices; fan it.
      for (int t = 0; t + 2 < clip_count_; ++t)
        raster_clipped(clipped_[0], clipped_[t + 1], clipped_[t + 2], k, buffer);
    }
  }

  DepthBuffer render_depth(const TriangleMesh& mesh, const Pose& pose,
                           const CameraIntrinsics& k) const {
    DepthBuffer buffer(k.width, k.height);
    rasterize(mesh, pose, k, buffer);
    return buffer;
  }

 private:
  struct ScreenVertex {
    double u;
    double v;
    double invz;
  };

  // Sutherland-Hodgman against the z = z_near plane, keeping z >= z_near.
  // Intersection vertices get z set to exactly z_near.
  void clip_near(const Vec3 (&in)[3], double z_near) const {
    clip_count_ = 0;
    for (int i = 0; i < 3; ++i) {
      const Vec3& a = in[i];
      const Vec3& b = in[(i + 1) % 3];
      bool a_in = a.z >= z_near;
      bool b_in = b.z >= z_near;
      if (a_in) clipped_[clip_count_++] = a;
      if (a_in != b_in) {
        double t = (z_near - a.z) / (b.z - a.z);
        clipped_[clip_count_++] = {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y), z_near};
      }
    }
  }

  static double edge(const ScreenVertex& a, const ScreenVertex& b, double pu, double pv) {
    return (b.u - a.u) * (pv - a.v) - (b.v - a.v) * (pu - a.u);
  }

  // With vertex order normalized to positive edge-function area, a boundary
  // pixel belongs to the triangle only on top edges (horizontal, triangle
  // below) and left edges (direction pointing up-image). Shared seams are
  // then covered exactly once.
  static bool top_left(const ScreenVertex& a, const ScreenVertex& b) {
    double du = b.u - a.u;
    double dv = b.v - a.v;
    return (dv == 0.0 && du > 0.0) || dv < 0.0;
  }

  void raster_clipped(const Vec3& a, const Vec3& b, const Vec3& c, const CameraIntrinsics& k,
                      DepthBuffer& buffer) const {
    ScreenVertex s[3] = {to_screen(a, k), to_screen(b, k), to_screen(c, k)};
    double area = edge(s[0], s[1], s[2].u, s[2].v);
    if (area == 0.0) return;
    if (area < 0.0) std::swap(s[1], s[2]);

    int u0 = static_cast<int>(std::ceil(std::min({s[0].u, s[1].u, s[2].u})));
    int u1 = static_cast<int>(std::floor(std::max({s[0].u, s[1].u, s[2].u})));
    int v0 = static_cast<int>(std::ceil(std::min({s[0].v, s[1].v, s[2].v})));
    int v1 = static_cast<int>(std::floor(std::max({s[0].v, s[1].v, s[2].v})));
    u0 = std::max(u0, 0);
    v0 = std::max(v0, 0);
    u1 = std::min(u1, k.width - 1);
    v1 = std::min(v1, k.height - 1);

    bool tl0 = top_left(s[1], s[2]);
    bool tl1 = top_left(s[2], s[0]);
    bool tl2 = top_left(s[0], s[1]);

    for (int pv = v0; pv <= v1; ++pv) {
      for (int pu = u0; pu <= u1; ++pu) {
        double du = pu;
        double dv = pv;
        double e0 = edge(s[1], s[2], du, dv);
        double e1 = edge(s[2], s[0], du, dv);
        double e2 = edge(s[0], s[1], du, dv);
        bool in0 = e0 > 0.0 || (e0 == 0.0 && tl0);
        bool in1 = e1 > 0.0 || (e1 == 0.0 && tl1);
        bool in2 = e2 > 0.0 || (e2 == 0.0 && tl2);
        if (!(in0 && in1 && in2)) continue;
        // Dividing by the per-pixel sum (= area exactly, in exact arithmetic)
        // makes a constant-1/z triangle interpolate to exactly that value.
        double denom = e0 + e1 + e2;
        if (denom <= 0.0) continue;
        double invz = (e0 * s[0].invz + e1 * s[1].invz + e2 * s[2].invz) / denom;
        if (invz <= 0.0) continue;
        double depth = 1.0 / invz;
        if (depth > k.z_far) continue;
        if (depth < k.z_near) depth = k.z_near;  // clip-plane rounding guard
        buffer.merge(pu, pv, depth);
      }
    }
  }

  static ScreenVertex to_screen(const Vec3& p, const CameraIntrinsics& k) {
    return {k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, 1.0 / p.z};
  }

  mutable Vec3 clipped_[4];
  mutable int clip_count_ = 0;
};

inline OrganizedCloud buffer_to_cloud(const DepthBuffer& buffer, const CameraIntrinsics& k) {
  OrganizedCloud cloud(k);
  for (int v = 0; v < buffer.height(); ++v)
    for (int u = 0; u < buffer.width(); ++u)
      if (buffer.present(u, v)) cloud.set(u, v, backproject(k, u, v, buffer.at(u, v)));
  return cloud;
}

}  // namespace posefit
