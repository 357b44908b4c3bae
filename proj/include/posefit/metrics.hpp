#pragma once

// Pose-error metrics over mesh vertices: ADD (matched pairing), ADD-S
// (nearest-point pairing for symmetric objects), accuracy-threshold curves
// and their normalized AUC.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

#include "posefit/geometry.hpp"

namespace posefit {

// Mean per-vertex distance between the two rigid placements of the mesh.
inline double add_error(const TriangleMesh& mesh, const Pose& pose_gt, const Pose& pose_est) {
  if (mesh.vertices.empty()) throw std::invalid_argument("add_error: empty mesh");
  PoseMatrix gt(pose_gt);
  PoseMatrix est(pose_est);
  double sum = 0.0;
  for (const Vec3& v : mesh.vertices) sum += distance(gt.apply(v), est.apply(v));
  return sum / static_cast<double>(mesh.vertices.size());
}

// Exact nearest-neighbor search over a fixed point set; median-split kd-tree.
class KdTree3 {
 public:
  explicit KdTree3(std::vector<Vec3> points) : points_(std::move(points)) {
    if (points_.empty()) throw std::invalid_argument("KdTree3: empty point set");
    order_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    nodes_.reserve(points_.size());
    root_ = build(0, points_.size());
  }

  // Squared distance from query to its nearest point.
  double nearest_sq(const Vec3& query) const {
    double best = std::numeric_limits<double>::infinity();
    search(root_, query, best);
    return best;
  }

 private:
  struct Node {
    std::uint32_t point;
    int axis;
    std::int32_t left = -1;
    std::int32_t right = -1;
  };

  static double coord(const Vec3& p, int axis) { return axis == 0 ? p.x : axis == 1 ? p.y : p.z; }

  std::int32_t build(std::size_t begin, std::size_t end) {
    if (begin >= end) return -1;
    // Split on the widest axis of this subset.
    Vec3 lo = points_[order_[begin]];
    Vec3 hi = lo;
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3& p = points_[order_[i]];
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    Vec3 extent = hi - lo;
    int axis = 0;
    if (extent.y > extent.x) axis = 1;
    if (extent.z > coord(extent, axis)) axis = 2;
    std::size_t mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::uint32_t a, std::uint32_t b) {
                       return coord(points_[a], axis) < coord(points_[b], axis);
                     });
    std::int32_t id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back({order_[mid], axis, -1, -1});
    std::int32_t left = build(begin, mid);
    std::int32_t right = build(mid + 1, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
  }

  void search(std::int32_t id, const Vec3& query, double& best) const {
    if (id < 0) return;
    const Node& node = nodes_[id];
    const Vec3& p = points_[node.point];
    Vec3 d = query - p;
    best = std::min(best, dot(d, d));
    double delta = coord(query, node.axis) - coord(p, node.axis);
    std::int32_t near = delta < 0.0 ? node.left : node.right;
    std::int32_t far = delta < 0.0 ? node.right : node.left;
    search(near, query, best);
    if (delta * delta < best) search(far, query, best);
  }

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
};

namespace detail {

inline std::vector<Vec3> transformed_vertices(const TriangleMesh& mesh, const Pose& pose) {
  PoseMatrix pm(pose);
  std::vector<Vec3> out;
  out.reserve(mesh.vertices.size());
  for (const Vec3& v : mesh.vertices) out.push_back(pm.apply(v));
  return out;
}

}  // namespace detail

// Mean over ground-truth-placed vertices of the distance to the closest
// estimated-placed vertex. Brute force below the kd-tree cutoff; both paths
// are exact and must agree.
inline double adds_error(const TriangleMesh& mesh, const Pose& pose_gt, const Pose& pose_est,
                         std::size_t brute_force_limit = 1000) {
  if (mesh.vertices.empty()) throw std::invalid_argument("adds_error: empty mesh");
  std::vector<Vec3> gt = detail::transformed_vertices(mesh, pose_gt);
  std::vector<Vec3> est = detail::transformed_vertices(mesh, pose_est);
  double sum = 0.0;
  if (est.size() <= brute_force_limit) {
    for (const Vec3& g : gt) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& e : est) {
        Vec3 d = g - e;
        best = std::min(best, dot(d, d));
      }
      sum += std::sqrt(best);
    }
  } else {
    KdTree3 tree(est);
    for (const Vec3& g : gt) sum += std::sqrt(tree.nearest_sq(g));
  }
  return sum / static_cast<double>(gt.size());
}

struct PoseError {
  double add = 0.0;
  double add_s = 0.0;
};

inline PoseError pose_error(const TriangleMesh& mesh, const Pose& pose_gt, const Pose& pose_est) {
  return {add_error(mesh, pose_gt, pose_est), adds_error(mesh, pose_gt, pose_est)};
}

struct AccuracyCurve {
  std::vector<double> thresholds;  // meters, ascending uniform grid from 0
  std::vector<double> accuracy;    // fraction of errors < threshold
  double auc = 0.0;                // trapezoidal integral normalized by t_max
};

inline AccuracyCurve accuracy_curve(const std::vector<double>& errors, double t_max = 0.04,
                                    int steps = 401) {
  if (errors.empty()) throw std::invalid_argument("accuracy_curve: empty error list");
  if (steps < 2) throw std::invalid_argument("accuracy_curve: steps must be >= 2");
  if (!(t_max > 0.0)) throw std::invalid_argument("accuracy_curve: t_max must be positive");
  for (double e : errors)
    if (!(e >= 0.0) || !std::isfinite(e))
      throw std::invalid_argument("accuracy_curve: errors must be finite and non-negative");
  AccuracyCurve curve;
  curve.thresholds.resize(steps);
  curve.accuracy.resize(steps);
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < steps; ++i) {
    double t = t_max * i / (steps - 1);
    curve.thresholds[i] = t;
    auto below = std::lower_bound(sorted.begin(), sorted.end(), t);
    curve.accuracy[i] = static_cast<double>(below - sorted.begin()) / sorted.size();
  }
  double integral = 0.0;
  for (int i = 1; i < steps; ++i)
    integral += 0.5 * (curve.accuracy[i] + curve.accuracy[i - 1]) *
                (curve.thresholds[i] - curve.thresholds[i - 1]);
  curve.auc = integral / t_max;
  return curve;
}

}  // namespace posefit
