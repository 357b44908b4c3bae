#pragma once

// Synthetic ground truth: primitive meshes, procedural tabletop scenes,
// composite scene rendering, and a depth-sensor corruption model.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "posefit/geometry.hpp"
#include "posefit/priors.hpp"
#include "posefit/renderer.hpp"
#include "posefit/rng.hpp"

namespace posefit {

enum class PrimitiveKind { kBox, kCylinder, kLshape };

inline const char* primitive_name(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::kBox: return "box";
    case PrimitiveKind::kCylinder: return "cylinder";
    default: return "lshape";
  }
}

inline std::optional<PrimitiveKind> primitive_from_name(const std::string& name) {
  if (name == "box") return PrimitiveKind::kBox;
  if (name == "cylinder") return PrimitiveKind::kCylinder;
  if (name == "lshape") return PrimitiveKind::kLshape;
  return std::nullopt;
}

namespace detail {

inline void append_box(TriangleMesh& mesh, const Vec3& lo, const Vec3& hi) {
  std::uint32_t base = static_cast<std::uint32_t>(mesh.vertices.size());
  for (int i = 0; i < 8; ++i)
    mesh.vertices.push_back({i & 1 ? hi.x : lo.x, i & 2 ? hi.y : lo.y, i & 4 ? hi.z : lo.z});
  static constexpr int kFaces[12][3] = {
      {0, 2, 1}, {1, 2, 3},  // z = lo
      {4, 5, 6}, {5, 7, 6},  // z = hi
      {0, 1, 4}, {1, 5, 4},  // y = lo
      {2, 6, 3}, {3, 6, 7},  // y = hi
      {0, 4, 2}, {2, 4, 6},  // x = lo
      {1, 3, 5}, {3, 7, 5},  // x = hi
  };
  for (const auto& f : kFaces)
    mesh.triangles.push_back({base + static_cast<std::uint32_t>(f[0]),
                              base + static_cast<std::uint32_t>(f[1]),
                              base + static_cast<std::uint32_t>(f[2])});
}

}  // namespace detail

// Watertight primitive centered at its object-frame origin.
//  - box: extents dims.x * dims.y * dims.z
//  - cylinder: axis +z, diameter dims.x, height dims.z (dims.y ignored)
//  - lshape: two flush-bottomed boxes of unequal widths and heights forming a
//    chiral step-L inside overall extents dims; asymmetric by construction
inline TriangleMesh make_primitive(PrimitiveKind kind, const Vec3& dims, int tessellation = 96) {
  if (!(dims.x > 0.0 && dims.y > 0.0 && dims.z > 0.0))
    throw InputError("primitive dims must be positive");
  TriangleMesh mesh;
  switch (kind) {
    case PrimitiveKind::kBox: {
      Vec3 h = dims * 0.5;
      detail::append_box(mesh, h * -1.0, h);
      break;
    }
    case PrimitiveKind::kCylinder: {
      if (tessellation < 3) throw InputError("cylinder tessellation must be >= 3");
      double r = 0.5 * dims.x;
      double hz = 0.5 * dims.z;
      int n = tessellation;
      for (int i = 0; i < n; ++i) {
        double a = 2.0 * std::numbers::pi * i / n;
        mesh.vertices.push_back({r * std::cos(a), r * std::sin(a), -hz});
        mesh.vertices.push_back({r * std::cos(a), r * std::sin(a), hz});
      }
      std::uint32_t bottom_center = static_cast<std::uint32_t>(mesh.vertices.size());
      mesh.vertices.push_back({0, 0, -hz});
      std::uint32_t top_center = bottom_center + 1;
      mesh.vertices.push_back({0, 0, hz});
      for (int i = 0; i < n; ++i) {
        std::uint32_t b0 = static_cast<std::uint32_t>(2 * i);
        std::uint32_t t0 = b0 + 1;
        std::uint32_t b1 = static_cast<std::uint32_t>(2 * ((i + 1) % n));
        std::uint32_t t1 = b1 + 1;
        mesh.triangles.push_back({b0, b1, t0});
        mesh.triangles.push_back({t0, b1, t1});
        mesh.triangles.push_back({bottom_center, b1, b0});
        mesh.triangles.push_back({top_center, t0, t1});
      }
      break;
    }
    case PrimitiveKind::kLshape: {
      // Arm A runs along +x with a narrow footprint and full height; arm B
      // runs along +y, wider but shorter in z. Unequal heights break the
      // extrusion mirror symmetry, making the shape chiral.
      double ax = dims.x;
      double ay = 0.40 * dims.y;
      double az = dims.z;
      double bx = 0.35 * dims.x;
      double by = dims.y;
      double bz = 0.60 * dims.z;
      detail::append_box(mesh, {0, 0, 0}, {ax, ay, az});
      detail::append_box(mesh, {0, 0, 0}, {bx, by, bz});
      // Center the union's bounding box on the origin.
      Vec3 shift{-0.5 * dims.x, -0.5 * dims.y, -0.5 * dims.z};
      for (Vec3& v : mesh.vertices) v += shift;
      break;
    }
  }
  mesh.compute_diameter();
  mesh.validate();
  return mesh;
}

struct SceneObject {
  std::string class_name;
  TriangleMesh mesh;
  Pose pose;
  bool symmetric = false;  // evaluation metadata: ADD-S instead of ADD
};

struct SceneSpec {
  std::vector<SceneObject> objects;
  CameraIntrinsics intrinsics;
  std::optional<SceneObject> table;  // class_name "table"; not a filter target

  void validate() const {
    intrinsics.validate();
    if (objects.empty()) throw InputError("scene: needs at least one object");
    for (std::size_t i = 0; i < objects.size(); ++i) {
      objects[i].mesh.validate();
      for (std::size_t j = i + 1; j < objects.size(); ++j)
        if (objects[i].class_name == objects[j].class_name)
          throw InputError("scene: duplicate class '" + objects[i].class_name + "'");
    }
    if (table) table->mesh.validate();
  }
};

// Composite render: joint z-buffer across table and all objects, so nearer
// geometry occludes farther geometry, then back-projection.
inline OrganizedCloud render_scene(const SceneSpec& spec) {
  spec.validate();
  Renderer renderer;
  DepthBuffer buffer(spec.intrinsics.width, spec.intrinsics.height);
  if (spec.table) renderer.rasterize(spec.table->mesh, spec.table->pose, spec.intrinsics, buffer);
  for (const SceneObject& obj : spec.objects)
    renderer.rasterize(obj.mesh, obj.pose, spec.intrinsics, buffer);
  return buffer_to_cloud(buffer, spec.intrinsics);
}

struct SensorNoiseSpec {
  double axial_coefficient = 0.0;  // noise std in meters at z = 1 m, scales with z^2
  double dropout = 0.0;            // per-pixel removal probability
  double quantization = 0.0;       // depth rounding step, meters (0 = off)

  void validate() const {
    if (axial_coefficient < 0 || quantization < 0)
      throw InputError("sensor noise: coefficients must be >= 0");
    if (dropout < 0 || dropout > 1) throw InputError("sensor noise: dropout must be in [0, 1]");
  }
};

// Depth-sensor degradation: dropout, axial Gaussian noise growing with z^2,
// quantization. Surviving points are re-back-projected so the grid invariant
// holds. Deterministic per seed.
inline OrganizedCloud corrupt(const OrganizedCloud& cloud, const SensorNoiseSpec& spec,
                              std::uint64_t seed) {
  spec.validate();
  const CameraIntrinsics& k = cloud.intrinsics();
  OrganizedCloud out(k);
  Rng rng(seed, {phase_key(RngPhase::kSensor)});
  for (int v = 0; v < cloud.height(); ++v) {
    for (int u = 0; u < cloud.width(); ++u) {
      if (!cloud.present(u, v)) continue;
      if (spec.dropout > 0.0 && rng.uniform() < spec.dropout) continue;
      double z = cloud.at(u, v).z;
      if (spec.axial_coefficient > 0.0) z += rng.gaussian() * spec.axial_coefficient * z * z;
      if (spec.quantization > 0.0) z = std::round(z / spec.quantization) * spec.quantization;
      if (z < k.z_near || z > k.z_far) continue;
      out.set(u, v, backproject(k, u, v, z));
    }
  }
  return out;
}

enum class SceneSetting { kBase, kDark, kOcclusion };

inline const char* setting_name(SceneSetting s) {
  switch (s) {
    case SceneSetting::kBase: return "base";
    case SceneSetting::kDark: return "dark";
    default: return "occlusion";
  }
}

inline std::optional<SceneSetting> setting_from_name(const std::string& name) {
  if (name == "base") return SceneSetting::kBase;
  if (name == "dark") return SceneSetting::kDark;
  if (name == "occlusion") return SceneSetting::kOcclusion;
  return std::nullopt;
}

// Sensor model attached to each setting. Darkness degrades the detector a lot
// (handled by prior corruption) and depth mildly; that mild depth term lives
// here.
inline SensorNoiseSpec setting_noise(SceneSetting s) {
  switch (s) {
    case SceneSetting::kDark: return {0.002, 0.15, 0.001};
    default: return {0.0, 0.0, 0.0};
  }
}

struct SceneGenConfig {
  int object_count = 3;
  SceneSetting setting = SceneSetting::kBase;
  CameraIntrinsics intrinsics{.fx = 160.0, .fy = 160.0, .cx = 79.5, .cy = 59.5,
                              .width = 160, .height = 120};
  bool with_table = true;
  // Objects scatter over [-x, x] × [-y, y] in the table plane. Narrow-FOV
  // cameras need a tighter scatter to keep everything framed.
  double placement_x = 0.16;
  double placement_y = 0.12;
  // Center of the supporting plane in camera coordinates.
  double plane_y = 0.05;
  double plane_z = 1.05;
  // Uniform scale on object dimensions; close-range narrow-FOV scenes can
  // afford larger objects that fill more of the frame.
  double object_scale = 1.0;
};

// Procedural tabletop scene: a tilted table about a meter ahead of the
// camera, with up to three distinct primitives resting on it. The occlusion
// setting pushes the second object behind the first along the camera ray so
// their silhouettes overlap.
inline SceneSpec generate_scene(const SceneGenConfig& cfg, std::uint64_t seed) {
  if (cfg.object_count < 1 || cfg.object_count > 3)
    throw InputError("scene: object count must be in [1, 3] (one instance per class)");
  cfg.intrinsics.validate();

  SceneSpec spec;
  spec.intrinsics = cfg.intrinsics;
  Rng rng(seed, {phase_key(RngPhase::kScene)});

  // Table: a thin slab about a meter ahead, tilted toward the camera. Base
  // scenes use a steep desk view; occlusion scenes use a grazing view so an
  // object placed behind another stays behind it in the image too.
  bool occl = cfg.setting == SceneSetting::kOcclusion;
  double tilt = occl ? rng.uniform(1.0, 1.2) : rng.uniform(0.5, 0.7);
  Vec3 table_center{0.0, cfg.plane_y, cfg.plane_z};
  // Normal tilted from -z toward "up" (-y in camera frame, which points down).
  Vec3 normal{0.0, -std::sin(tilt), -std::cos(tilt)};
  // Table frame: +z is the normal pointing at the camera side.
  Rotation table_frame = Rotation::between({0, 0, 1}, normal);
  if (cfg.with_table) {
    // Sized so the whole slab projects inside the frame with a few pixels of
    // spare border at every tilt; depth never touches the image edge.
    SceneObject table;
    table.class_name = "table";
    table.mesh = make_primitive(PrimitiveKind::kBox, {0.6, 0.52, 0.02});
    table.pose = {table_frame, table_center - normal * 0.01};
    spec.table = std::move(table);
  }

  static constexpr PrimitiveKind kKinds[3] = {PrimitiveKind::kBox, PrimitiveKind::kCylinder,
                                              PrimitiveKind::kLshape};
  int first = static_cast<int>(rng.below(3));
  std::vector<Vec3> placed;  // table-plane coordinates of placed objects
  for (int i = 0; i < cfg.object_count; ++i) {
    PrimitiveKind kind = kKinds[(first + i) % 3];
    SceneObject obj;
    obj.class_name = primitive_name(kind);
    double k = cfg.object_scale;
    switch (kind) {
      case PrimitiveKind::kBox:
        obj.mesh = make_primitive(kind, {0.07 * k, 0.05 * k, 0.10 * k});
        obj.symmetric = true;  // right-angle render equivalents
        break;
      case PrimitiveKind::kCylinder:
        obj.mesh = make_primitive(kind, {0.07 * k, 0.07 * k, 0.11 * k});
        obj.symmetric = true;  // continuous axis symmetry
        break;
      case PrimitiveKind::kLshape:
        obj.mesh = make_primitive(kind, {0.10 * k, 0.08 * k, 0.06 * k});
        obj.symmetric = false;  // chiral, unique pose
        break;
    }
    double half_height = 0.0;  // meshes are AABB-centered, so max z is the half-extent
    for (const Vec3& v : obj.mesh.vertices) half_height = std::max(half_height, v.z);
    // Sample a spot on the table plane, keeping objects apart except in the
    // occlusion setting where the second object hides behind the first.
    Vec3 local;
    if (cfg.setting == SceneSetting::kOcclusion && i == 1 && !placed.empty()) {
      // Behind the first object along the camera ray through it, projected
      // into the table plane: same sign direction as the first object's
      // position seen from the camera.
      Vec3 anchor_world = table_center + table_frame.rotate(placed[0]);
      Vec3 ray = normalized(anchor_world);  // camera sits at the origin
      // Project the ray direction onto the table plane.
      Vec3 along = ray - normal * dot(ray, normal);
      if (norm(along) < 1e-6) along = table_frame.rotate({0, 1, 0});
      along = normalized(along);
      Vec3 back_world = anchor_world + along * rng.uniform(0.11, 0.15);
      Vec3 rel = back_world - table_center;
      local = {dot(rel, table_frame.rotate({1, 0, 0})), dot(rel, table_frame.rotate({0, 1, 0})),
               0.0};
    } else {
      for (int attempt = 0; attempt < 64; ++attempt) {
        local = {rng.uniform(-cfg.placement_x, cfg.placement_x),
                 rng.uniform(-cfg.placement_y, cfg.placement_y), 0.0};
        bool clear = true;
        for (const Vec3& p : placed)
          if (distance(local, p) < 0.15) clear = false;
        if (clear) break;
      }
    }
    placed.push_back(local);
    Vec3 table_point = table_center + table_frame.rotate(local);
    double yaw = rng.uniform(0.0, 2.0 * std::numbers::pi);
    obj.pose = {Rotation::from_axis_angle(normal, yaw) * table_frame,
                table_point + normal * half_height};
    spec.objects.push_back(std::move(obj));
  }
  spec.validate();
  return spec;
}

// Ground-truth boxes for every non-table object in the scene.
inline std::map<std::string, BoundingBox> scene_gt_boxes(const SceneSpec& spec) {
  std::map<std::string, BoundingBox> boxes;
  for (const SceneObject& obj : spec.objects)
    boxes[obj.class_name] = gt_box_from_pose(obj.mesh, obj.pose, spec.intrinsics);
  return boxes;
}

}  // namespace posefit
