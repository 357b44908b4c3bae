// Rasterizer: coverage rules, perspective-correct depth, clipping, and
// agreement with an independent ray-casting oracle.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "posefit/renderer.hpp"
#include "posefit/synth.hpp"

using namespace posefit;
using Catch::Approx;

namespace {

CameraIntrinsics small_cam() {
  CameraIntrinsics k;
  k.fx = k.fy = 64.0;
  k.cx = k.cy = 23.5;
  k.width = k.height = 48;
  return k;
}

TriangleMesh single_triangle(const Vec3& a, const Vec3& b, const Vec3& c) {
  TriangleMesh m;
  m.vertices = {a, b, c};
  m.triangles = {{0, 1, 2}};
  m.compute_diameter();
  return m;
}

}  // namespace

TEST_CASE("flat triangle renders its exact depth", "[renderer]") {
  CameraIntrinsics k = small_cam();
  TriangleMesh tri = single_triangle({-0.2, -0.2, 1.0}, {0.3, -0.2, 1.0}, {0.0, 0.3, 1.0});
  Renderer r;
  DepthBuffer buf = r.render_depth(tri, Pose::identity(), k);
  REQUIRE(buf.present_count() > 100);
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u)
      if (buf.present(u, v)) REQUIRE(buf.at(u, v) == 1.0);  // constant 1/z is exact
}

TEST_CASE("slanted triangle depth is perspective correct", "[renderer]") {
  CameraIntrinsics k = small_cam();
  // Plane z = 1 + x: depth at pixel u solves z = 1 + (u - cx) z / fx.
  TriangleMesh tri = single_triangle({-0.5, -0.5, 0.5}, {0.8, -0.5, 1.8}, {0.0, 1.0, 1.0});
  Renderer r;
  DepthBuffer buf = r.render_depth(tri, Pose::identity(), k);
  REQUIRE(buf.present_count() > 50);
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u)
      if (buf.present(u, v)) {
        double expected = 1.0 / (1.0 - (u - k.cx) / k.fx);
        REQUIRE(buf.at(u, v) == Approx(expected).margin(1e-9));
      }
}

TEST_CASE("shared seam is covered exactly once", "[renderer]") {
  CameraIntrinsics k = small_cam();
  // A quad split along its diagonal; rasterize the halves into separate
  // buffers. Top-left rules must assign every quad pixel to exactly one half.
  Vec3 q00{-0.25, -0.25, 1.0}, q10{0.25, -0.25, 1.0}, q01{-0.25, 0.25, 1.0}, q11{0.25, 0.25, 1.0};
  Renderer r;
  DepthBuffer a = r.render_depth(single_triangle(q00, q10, q11), Pose::identity(), k);
  DepthBuffer b = r.render_depth(single_triangle(q00, q11, q01), Pose::identity(), k);
  std::size_t overlap = 0, unions = 0;
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u) {
      overlap += a.present(u, v) && b.present(u, v);
      unions += a.present(u, v) || b.present(u, v);
    }
  CHECK(overlap == 0);
  // The quad spans 32x32 pixel centers exactly.
  CHECK(unions == 32 * 32);
}

TEST_CASE("z-buffer keeps the nearer surface", "[renderer]") {
  CameraIntrinsics k = small_cam();
  TriangleMesh far_tri = single_triangle({-0.4, -0.4, 2.0}, {0.4, -0.4, 2.0}, {0.0, 0.5, 2.0});
  TriangleMesh near_tri = single_triangle({-0.1, -0.1, 1.0}, {0.1, -0.1, 1.0}, {0.0, 0.1, 1.0});
  Renderer r;
  DepthBuffer buf(k.width, k.height);
  r.rasterize(far_tri, Pose::identity(), k, buf);
  std::size_t far_only = buf.present_count();
  r.rasterize(near_tri, Pose::identity(), k, buf);
  CHECK(buf.present_count() == far_only);  // near triangle projects inside the far one
  CHECK(buf.at(24, 24) == 1.0);
  CHECK(buf.at(4, 10) == DepthBuffer::kAbsent);
}

TEST_CASE("near plane clips and clamps", "[renderer]") {
  CameraIntrinsics k = small_cam();
  Renderer r;

  TriangleMesh behind = single_triangle({-0.1, -0.1, -1.0}, {0.1, -0.1, -1.0}, {0.0, 0.1, -1.0});
  CHECK(r.render_depth(behind, Pose::identity(), k).present_count() == 0);

  // Straddling triangle: rendered depths never dip below z_near.
  TriangleMesh straddle = single_triangle({0.0, -0.1, -0.5}, {0.05, 0.1, 1.0}, {-0.05, 0.1, 1.0});
  DepthBuffer buf = r.render_depth(straddle, Pose::identity(), k);
  REQUIRE(buf.present_count() > 0);
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u)
      if (buf.present(u, v)) REQUIRE(buf.at(u, v) >= k.z_near);
}

TEST_CASE("far plane drops pixels", "[renderer]") {
  CameraIntrinsics k = small_cam();
  TriangleMesh beyond = single_triangle({-1.0, -1.0, 6.0}, {1.0, -1.0, 6.0}, {0.0, 1.0, 6.0});
  Renderer r;
  CHECK(r.render_depth(beyond, Pose::identity(), k).present_count() == 0);
}

TEST_CASE("backfaces render", "[renderer]") {
  CameraIntrinsics k = small_cam();
  TriangleMesh front = single_triangle({-0.2, -0.2, 1.0}, {0.3, -0.2, 1.0}, {0.0, 0.3, 1.0});
  TriangleMesh back = single_triangle({-0.2, -0.2, 1.0}, {0.0, 0.3, 1.0}, {0.3, -0.2, 1.0});
  Renderer r;
  DepthBuffer fb = r.render_depth(front, Pose::identity(), k);
  DepthBuffer bb = r.render_depth(back, Pose::identity(), k);
  CHECK(fb.present_count() == bb.present_count());
  CHECK(fb == bb);
}

TEST_CASE("rendering is deterministic", "[renderer]") {
  CameraIntrinsics k = small_cam();
  TriangleMesh mesh = make_primitive(PrimitiveKind::kLshape, {0.10, 0.08, 0.06});
  Pose pose{Rotation::from_axis_angle({0.3, 1.0, 0.2}, 0.8), {0.02, -0.01, 0.8}};
  Renderer r;
  CHECK(r.render_depth(mesh, pose, k) == r.render_depth(mesh, pose, k));
}

TEST_CASE("rasterizer agrees with the ray-casting oracle", "[renderer]") {
  CameraIntrinsics k = small_cam();
  k.fx = k.fy = 150.0;  // fill more of the frame than the coverage tests need
  Renderer r;
  Rng rng(404, {12});
  TriangleMesh meshes[3] = {make_primitive(PrimitiveKind::kBox, {0.07, 0.05, 0.10}),
                            make_primitive(PrimitiveKind::kCylinder, {0.07, 0.07, 0.11}, 32),
                            make_primitive(PrimitiveKind::kLshape, {0.10, 0.08, 0.06})};
  for (const TriangleMesh& mesh : meshes) {
    for (int trial = 0; trial < 2; ++trial) {
      Pose pose{sample_uniform_rotation(rng),
                {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05), rng.uniform(0.5, 0.7)}};
      DepthBuffer raster = r.render_depth(mesh, pose, k);
      DepthBuffer rays = oracle::ray_cast_depth(mesh, pose, k);
      oracle::BufferDiff d = oracle::compare_depth(raster, rays, 1e-4);
      REQUIRE(d.both > 50);
      // Coverage can differ only at silhouette pixels; depths agree closely
      // wherever both methods hit the surface.
      std::size_t total = d.both + d.only_a + d.only_b;
      CHECK(static_cast<double>(d.only_a + d.only_b) <= 0.005 * static_cast<double>(total));
      CHECK(d.within == d.both);
    }
  }
}

TEST_CASE("buffer to cloud preserves depth on the pixel grid", "[renderer]") {
  CameraIntrinsics k = small_cam();
  TriangleMesh mesh = make_primitive(PrimitiveKind::kBox, {0.07, 0.05, 0.10});
  Pose pose{Rotation::from_axis_angle({1.0, 0.3, 0.0}, 0.5), {0.0, 0.0, 0.7}};
  Renderer r;
  DepthBuffer buf = r.render_depth(mesh, pose, k);
  OrganizedCloud cloud = buffer_to_cloud(buf, k);
  REQUIRE(cloud.present_count() == buf.present_count());
  for (int v = 0; v < k.height; ++v)
    for (int u = 0; u < k.width; ++u)
      if (buf.present(u, v)) REQUIRE(cloud.at(u, v).z == Approx(buf.at(u, v)));
  CHECK_NOTHROW(cloud.validate());
}
