#pragma once

// Hypothesis scoring: renders the pose, compares raw points and features
// against the observation, and combines five bounded terms into one weight:
//   W = alpha_box*w_box + alpha_b*I_b + alpha_r*I_r + alpha_e*I_e + alpha_p*I_p

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "posefit/features.hpp"
#include "posefit/geometry.hpp"
#include "posefit/renderer.hpp"

namespace posefit {

// Axis-aligned detection box in pixel coordinates with a confidence score.
// Pixel centers live on the integer grid, so the image rectangle in box space
// is [0, width-1] x [0, height-1].
struct BoundingBox {
  double u_min = 0.0;
  double v_min = 0.0;
  double u_max = 0.0;
  double v_max = 0.0;
  double confidence = 0.0;

  double width() const { return u_max - u_min; }
  double height() const { return v_max - v_min; }
  double center_u() const { return 0.5 * (u_min + u_max); }
  double center_v() const { return 0.5 * (v_min + v_max); }

  bool contains(double u, double v) const {
    return u >= u_min && u <= u_max && v >= v_min && v <= v_max;
  }

  bool intersects_image(int image_width, int image_height) const {
    return u_max > 0.0 && v_max > 0.0 && u_min < image_width - 1.0 && v_min < image_height - 1.0;
  }

  void validate(int image_width, int image_height) const {
    if (!(u_min < u_max) || !(v_min < v_max))
      throw InputError("box: require u_min < u_max and v_min < v_max");
    if (!intersects_image(image_width, image_height))
      throw InputError("box: does not intersect the image");
    if (!(confidence >= 0.0 && confidence <= 1.0))
      throw InputError("box: confidence must be in [0, 1]");
  }
};

// Intersects the box with the image rectangle; the confidence is kept.
// Returns false (box untouched) when the intersection would be degenerate.
inline bool clip_box_to_image(BoundingBox& box, int image_width, int image_height) {
  BoundingBox c = box;
  c.u_min = std::max(c.u_min, 0.0);
  c.v_min = std::max(c.v_min, 0.0);
  c.u_max = std::min(c.u_max, image_width - 1.0);
  c.v_max = std::min(c.v_max, image_height - 1.0);
  if (!(c.u_min < c.u_max) || !(c.v_min < c.v_max)) return false;
  box = c;
  return true;
}

struct LikelihoodWeights {
  double alpha_box = 0.1;
  double alpha_b = 0.1;
  double alpha_r = 0.3;
  double alpha_e = 0.25;
  double alpha_p = 0.25;

  void validate() const {
    if (alpha_box < 0 || alpha_b < 0 || alpha_r < 0 || alpha_e < 0 || alpha_p < 0)
      throw InputError("coefficients must be non-negative");
    double sum = alpha_box + alpha_b + alpha_r + alpha_e + alpha_p;
    if (std::abs(sum - 1.0) > 1e-9) throw InputError("coefficients must sum to 1");
  }
};

struct TermBreakdown {
  double w_box = 0.0;
  double i_b = 0.0;
  double i_r = 0.0;
  double i_e = 0.0;
  double i_p = 0.0;
  double total = 0.0;

  bool operator==(const TermBreakdown& o) const = default;
};

// Strict inequality: a pair exactly epsilon apart is an outlier.
inline bool inlier(const Vec3& p, const Vec3& p_prime, double epsilon) {
  Vec3 d = p - p_prime;
  return dot(d, d) < epsilon * epsilon;
}

namespace detail {

inline void require_same_grid(const OrganizedCloud& a, const OrganizedCloud& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw std::invalid_argument("clouds must share grid dimensions");
}

}  // namespace detail

// Fraction of rendered points whose observed counterpart at the same pixel is
// within epsilon. Rendered points over absent observation count as outliers
// (information loss penalizes the hypothesis). Empty render scores 0.
inline double inlier_ratio(const OrganizedCloud& rendered, const OrganizedCloud& observed,
                           double epsilon) {
  detail::require_same_grid(rendered, observed);
  std::size_t rendered_count = 0;
  std::size_t inliers = 0;
  for (int v = 0; v < rendered.height(); ++v) {
    for (int u = 0; u < rendered.width(); ++u) {
      if (!rendered.present(u, v)) continue;
      ++rendered_count;
      if (observed.present(u, v) && inlier(rendered.at(u, v), observed.at(u, v), epsilon))
        ++inliers;
    }
  }
  if (rendered_count == 0) return 0.0;
  return static_cast<double>(inliers) / static_cast<double>(rendered_count);
}

// inlier_ratio restricted to rendered points inside the box; 0 when no
// rendered point falls inside it.
inline double bbox_inlier_ratio(const OrganizedCloud& rendered, const OrganizedCloud& observed,
                                const BoundingBox& box, double epsilon) {
  detail::require_same_grid(rendered, observed);
  std::size_t rendered_count = 0;
  std::size_t inliers = 0;
  int u0 = std::max(0, static_cast<int>(std::ceil(box.u_min)));
  int u1 = std::min(rendered.width() - 1, static_cast<int>(std::floor(box.u_max)));
  int v0 = std::max(0, static_cast<int>(std::ceil(box.v_min)));
  int v1 = std::min(rendered.height() - 1, static_cast<int>(std::floor(box.v_max)));
  for (int v = v0; v <= v1; ++v) {
    for (int u = u0; u <= u1; ++u) {
      if (!rendered.present(u, v)) continue;
      ++rendered_count;
      if (observed.present(u, v) && inlier(rendered.at(u, v), observed.at(u, v), epsilon))
        ++inliers;
    }
  }
  if (rendered_count == 0) return 0.0;
  return static_cast<double>(inliers) / static_cast<double>(rendered_count);
}

namespace detail {

// A rendered feature matches if some observed feature of the same kind lies
// within the Chebyshev pixel window and within epsilon in 3D.
inline double feature_ratio(const std::vector<FeaturePoint>& rendered,
                            const std::vector<FeaturePoint>& observed, const FeatureGrid& grid,
                            int width, int height, double epsilon, int pixel_window) {
  if (rendered.empty()) return 1.0;  // no feature evidence against the hypothesis
  std::size_t matches = 0;
  for (const FeaturePoint& r : rendered) {
    bool hit = false;
    for (int dv = -pixel_window; dv <= pixel_window && !hit; ++dv) {
      int v = r.v + dv;
      if (v < 0 || v >= height) continue;
      for (int du = -pixel_window; du <= pixel_window; ++du) {
        int u = r.u + du;
        if (u < 0 || u >= width) continue;
        std::int32_t idx = grid.at(u, v);
        if (idx >= 0 && inlier(r.p, observed[idx].p, epsilon)) {
          hit = true;
          break;
        }
      }
    }
    matches += hit;
  }
  return static_cast<double>(matches) / static_cast<double>(rendered.size());
}

}  // namespace detail

// Observation side of the scoring problem, preprocessed once per run and
// shared read-only across workers.
struct ObservationContext {
  OrganizedCloud cloud;
  FeatureCloud features;
  FeatureGrid edge_grid;
  FeatureGrid planar_grid;
  FeatureParams feature_params;
  LikelihoodWeights weights;
  double epsilon = 0.005;
  int feature_pixel_window = 1;
  // Boxes arrive in source-image pixel coordinates; when scoring runs on a
  // downsampled grid they scale by this factor first.
  double box_scale = 1.0;

  ObservationContext() = default;

  ObservationContext(OrganizedCloud obs, const FeatureParams& fp, const LikelihoodWeights& w,
                     double eps, int pixel_window = 1, double scale = 1.0)
      : cloud(std::move(obs)),
        feature_params(fp),
        weights(w),
        epsilon(eps),
        feature_pixel_window(pixel_window),
        box_scale(scale) {
    weights.validate();
    if (!(epsilon > 0.0)) throw InputError("epsilon must be positive");
    features = extract_features(cloud, feature_params);
    edge_grid = FeatureGrid(features.edges, cloud.width(), cloud.height());
    planar_grid = FeatureGrid(features.planars, cloud.width(), cloud.height());
  }
};

inline double feature_inlier_ratio_edges(const FeatureCloud& rendered,
                                         const ObservationContext& ctx) {
  return detail::feature_ratio(rendered.edges, ctx.features.edges, ctx.edge_grid,
                               ctx.cloud.width(), ctx.cloud.height(), ctx.epsilon,
                               ctx.feature_pixel_window);
}

inline double feature_inlier_ratio_planars(const FeatureCloud& rendered,
                                           const ObservationContext& ctx) {
  return detail::feature_ratio(rendered.planars, ctx.features.planars, ctx.planar_grid,
                               ctx.cloud.width(), ctx.cloud.height(), ctx.epsilon,
                               ctx.feature_pixel_window);
}

// Scores hypotheses against one ObservationContext. Owns the render scratch,
// so each worker thread needs its own instance.
class HypothesisScorer {
 public:
  explicit HypothesisScorer(const ObservationContext& ctx)
      : ctx_(ctx),
        buffer_(ctx.cloud.width(), ctx.cloud.height()),
        rendered_(ctx.cloud.intrinsics()) {}

  TermBreakdown score(const Pose& pose, const BoundingBox& box, const TriangleMesh& mesh) {
    const CameraIntrinsics& k = ctx_.cloud.intrinsics();
    buffer_.clear();
    renderer_.rasterize(mesh, pose, k, buffer_);

    BoundingBox scaled = box;
    if (ctx_.box_scale != 1.0) {
      scaled.u_min *= ctx_.box_scale;
      scaled.u_max *= ctx_.box_scale;
      scaled.v_min *= ctx_.box_scale;
      scaled.v_max *= ctx_.box_scale;
    }

    rendered_.reset(k);
    int u0 = std::max(0, static_cast<int>(std::ceil(scaled.u_min)));
    int u1 = std::min(k.width - 1, static_cast<int>(std::floor(scaled.u_max)));
    int v0 = std::max(0, static_cast<int>(std::ceil(scaled.v_min)));
    int v1 = std::min(k.height - 1, static_cast<int>(std::floor(scaled.v_max)));

    std::size_t rendered_count = 0;
    std::size_t inliers = 0;
    std::size_t box_count = 0;
    std::size_t box_inliers = 0;
    for (int v = 0; v < k.height; ++v) {
      for (int u = 0; u < k.width; ++u) {
        if (!buffer_.present(u, v)) continue;
        Vec3 p = backproject(k, u, v, buffer_.at(u, v));
        rendered_.set(u, v, p);
        ++rendered_count;
        bool in = ctx_.cloud.present(u, v) && inlier(p, ctx_.cloud.at(u, v), ctx_.epsilon);
        inliers += in;
        if (u >= u0 && u <= u1 && v >= v0 && v <= v1) {
          ++box_count;
          box_inliers += in;
        }
      }
    }

    TermBreakdown b;
    b.w_box = std::clamp(box.confidence, 0.0, 1.0);
    b.i_r = rendered_count ? static_cast<double>(inliers) / rendered_count : 0.0;
    b.i_b = box_count ? static_cast<double>(box_inliers) / box_count : 0.0;
    FeatureCloud feats = extract_features(rendered_, ctx_.feature_params);
    b.i_e = feature_inlier_ratio_edges(feats, ctx_);
    b.i_p = feature_inlier_ratio_planars(feats, ctx_);
    const LikelihoodWeights& w = ctx_.weights;
    b.total = w.alpha_box * b.w_box + w.alpha_b * b.i_b + w.alpha_r * b.i_r + w.alpha_e * b.i_e +
              w.alpha_p * b.i_p;
    return b;
  }

 private:
  const ObservationContext& ctx_;
  Renderer renderer_;
  DepthBuffer buffer_;
  OrganizedCloud rendered_;
};

// One-shot scoring; tests and small callers. The filter uses a per-worker
// HypothesisScorer over a shared context instead.
inline TermBreakdown weigh(const Pose& pose, const BoundingBox& box, const OrganizedCloud& obs,
                           const TriangleMesh& mesh, const LikelihoodWeights& weights,
                           double epsilon, const FeatureParams& feature_params = {},
                           int feature_pixel_window = 1) {
  ObservationContext ctx(obs, feature_params, weights, epsilon, feature_pixel_window);
  HypothesisScorer scorer(ctx);
  return scorer.score(pose, box, mesh);
}

}  // namespace posefit
