#pragma once

// Edge/planar feature extraction from organized clouds via the local surface
// smoothness statistic: c = |sum of displacement vectors to neighbors| /
// (neighbor count * |point|). High c marks depth discontinuities (edges),
// low c marks locally flat surface (planar points).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "posefit/geometry.hpp"

namespace posefit {

struct FeaturePoint {
  int u = 0;
  int v = 0;
  Vec3 p;
};

struct FeatureCloud {
  std::vector<FeaturePoint> edges;
  std::vector<FeaturePoint> planars;
};

struct FeatureParams {
  int window = 5;               // non-overlapping block size, pixels
  int max_edges_per_window = 5;
  int max_planars_per_window = 2;
  double log_c_threshold = -5.5;  // ln(c) at or above -> edge candidate
  int neighborhood_radius = 2;    // Chebyshev radius for the smoothness sum

  void validate() const {
    if (window < 3) throw InputError("features: window must be >= 3");
    if (max_edges_per_window < 0 || max_planars_per_window < 0)
      throw InputError("features: caps must be >= 0");
    if (neighborhood_radius < 1) throw InputError("features: radius must be >= 1");
  }

  double c_threshold() const { return std::exp(log_c_threshold); }
};

// Smoothness of the present point at (u, v) over its present neighbors within
// Chebyshev distance radius. Absent when the center point is absent, when no
// neighbor is present, or when the window extends past the image border: a
// truncated window makes even a perfect plane look unsmooth (the displacement
// vectors no longer cancel), so border pixels carry no feature evidence.
// Holes inside the image still yield partial neighborhoods; those keep the
// statistic responsive at silhouettes.
inline std::optional<double> smoothness(const OrganizedCloud& cloud, int u, int v, int radius) {
  if (!cloud.present(u, v)) return std::nullopt;
  if (u - radius < 0 || v - radius < 0 || u + radius >= cloud.width() ||
      v + radius >= cloud.height())
    return std::nullopt;
  const Vec3& center = cloud.at(u, v);
  Vec3 sum;
  int count = 0;
  for (int dv = -radius; dv <= radius; ++dv) {
    for (int du = -radius; du <= radius; ++du) {
      if (du == 0 && dv == 0) continue;
      if (!cloud.present(u + du, v + dv)) continue;
      sum += cloud.at(u + du, v + dv) - center;
      ++count;
    }
  }
  if (count == 0) return std::nullopt;
  return norm(sum) / (count * norm(center));
}

// Tiles the image into window x window blocks; within each block the largest-c
// points at or above the threshold become edges (up to the edge cap) and the
// smallest-c points below it become planars (up to the planar cap). Ties in c
// resolve in row-major pixel order. Output order: blocks row-major, selected
// points in selection order.
inline FeatureCloud extract_features(const OrganizedCloud& cloud, const FeatureParams& params) {
  params.validate();
  FeatureCloud out;
  const double threshold = params.c_threshold();
  struct Candidate {
    double c;
    int u;
    int v;
  };
  std::vector<Candidate> edge_cand;
  std::vector<Candidate> planar_cand;
  for (int bv = 0; bv < cloud.height(); bv += params.window) {
    for (int bu = 0; bu < cloud.width(); bu += params.window) {
      edge_cand.clear();
      planar_cand.clear();
      int v_end = std::min(bv + params.window, cloud.height());
      int u_end = std::min(bu + params.window, cloud.width());
      for (int v = bv; v < v_end; ++v) {
        for (int u = bu; u < u_end; ++u) {
          auto c = smoothness(cloud, u, v, params.neighborhood_radius);
          if (!c) continue;
          if (*c >= threshold)
            edge_cand.push_back({*c, u, v});
          else
            planar_cand.push_back({*c, u, v});
        }
      }
      std::stable_sort(edge_cand.begin(), edge_cand.end(),
                       [](const Candidate& a, const Candidate& b) { return a.c > b.c; });
      std::stable_sort(planar_cand.begin(), planar_cand.end(),
                       [](const Candidate& a, const Candidate& b) { return a.c < b.c; });
      int n_e = std::min<int>(params.max_edges_per_window, static_cast<int>(edge_cand.size()));
      for (int i = 0; i < n_e; ++i)
        out.edges.push_back({edge_cand[i].u, edge_cand[i].v, cloud.at(edge_cand[i].u, edge_cand[i].v)});
      int n_p = std::min<int>(params.max_planars_per_window, static_cast<int>(planar_cand.size()));
      for (int i = 0; i < n_p; ++i)
        out.planars.push_back(
            {planar_cand[i].u, planar_cand[i].v, cloud.at(planar_cand[i].u, planar_cand[i].v)});
    }
  }
  return out;
}

// Per-pixel lookup of a feature cloud. Each pixel holds at most one feature,
// so a dense index array suffices.
class FeatureGrid {
 public:
  FeatureGrid() = default;

  FeatureGrid(const std::vector<FeaturePoint>& features, int width, int height)
      : width_(width), index_(static_cast<std::size_t>(width) * height, -1) {
    for (std::size_t i = 0; i < features.size(); ++i)
      index_[static_cast<std::size_t>(features[i].v) * width + features[i].u] =
          static_cast<std::int32_t>(i);
  }

  std::int32_t at(int u, int v) const {
    return index_[static_cast<std::size_t>(v) * width_ + u];
  }

 private:
  int width_ = 0;
  std::vector<std::int32_t> index_;
};

}  // namespace posefit
