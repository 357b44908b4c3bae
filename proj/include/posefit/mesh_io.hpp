#pragma once

// Triangulated OBJ subset: `v x y z` and `f i j k` lines (1-based indices,
// triangles only), everything else ignored. Units are meters.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "posefit/geometry.hpp"

namespace posefit {

inline TriangleMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open mesh file: " + path);
  TriangleMesh mesh;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag)) continue;
    auto fail = [&](const std::string& msg) {
      throw InputError(path + ":" + std::to_string(line_no) + ": " + msg);
    };
    if (tag == "v") {
      Vec3 p;
      if (!(ss >> p.x >> p.y >> p.z)) fail("malformed vertex line");
      if (!is_finite(p)) fail("non-finite vertex");
      mesh.vertices.push_back(p);
    } else if (tag == "f") {
      long long idx[3];
      std::string tok;
      for (int i = 0; i < 3; ++i) {
        if (!(ss >> tok)) fail("face must have three vertices");
        // Accept `i`, `i/t`, `i/t/n`, `i//n`; only the vertex index is used.
        idx[i] = std::strtoll(tok.c_str(), nullptr, 10);
        if (idx[i] == 0) fail("face index must be 1-based");
      }
      if (ss >> tok) fail("face must be a triangle");
      Triangle t;
      std::uint32_t* out[3] = {&t.a, &t.b, &t.c};
      for (int i = 0; i < 3; ++i) {
        long long v = idx[i];
        if (v < 0) v = static_cast<long long>(mesh.vertices.size()) + 1 + v;
        if (v < 1) fail("face index out of range");
        *out[i] = static_cast<std::uint32_t>(v - 1);
      }
      mesh.triangles.push_back(t);
    }
    // Other tags (vn, vt, comments, groups...) are ignored.
  }
  mesh.compute_diameter();
  mesh.validate();
  return mesh;
}

inline void save_obj(const TriangleMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write mesh file: " + path);
  char buf[128];
  for (const Vec3& v : mesh.vertices) {
    std::snprintf(buf, sizeof(buf), "v %.17g %.17g %.17g\n", v.x, v.y, v.z);
    out << buf;
  }
  for (const Triangle& t : mesh.triangles)
    out << "f " << t.a + 1 << ' ' << t.b + 1 << ' ' << t.c + 1 << '\n';
  if (!out) throw InputError("write failed: " + path);
}

}  // namespace posefit
