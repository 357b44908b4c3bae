#pragma once

// Iterated likelihood weighting over a static state: initialize hypotheses
// from the detection prior, then repeat score / resample / diffuse with
// annealed noise until the best weight crosses the convergence threshold or
// the iteration budget runs out. The observation never changes; only the
// sample set moves.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "posefit/geometry.hpp"
#include "posefit/likelihood.hpp"
#include "posefit/parallel.hpp"
#include "posefit/priors.hpp"
#include "posefit/rng.hpp"

namespace posefit {

struct Hypothesis {
  Pose pose;
  BoundingBox box;
  double weight = 0.0;
  TermBreakdown breakdown;
};

struct FilterConfig {
  int num_samples = 625;
  int max_iterations = 400;
  double convergence_threshold = 0.9;  // w-bar
  double presence_threshold = 0.5;
  double sigma_t0 = 0.07;  // meters
  double sigma_r0 = 0.3;   // radians
  double anneal_knee = 0.6;
  double anneal_power = 5.0;
  double epsilon = 0.005;  // meters
  LikelihoodWeights weights;
  FeatureParams features;
  std::uint64_t rng_seed = 0;
  double workspace_z_min = 0.3;  // meters
  double workspace_z_max = 2.5;
  double box_diffusion_frac = 0.1;  // box jitter radius as a fraction of image size
  int feature_pixel_window = 1;
  int image_margin_px = 4;  // diffused centers keep this far inside the image
  int workers = 1;
  int render_downsample = 1;  // score at observation resolution divided by this

  void validate() const {
    if (num_samples < 1) throw InputError("config: num_samples must be >= 1");
    if (max_iterations < 0) throw InputError("config: max_iterations must be >= 0");
    if (!(convergence_threshold > 0.0 && convergence_threshold <= 1.0))
      throw InputError("config: convergence threshold must be in (0, 1]");
    if (!(presence_threshold > 0.0 && presence_threshold <= 1.0))
      throw InputError("config: presence threshold must be in (0, 1]");
    if (!(anneal_knee > 0.0 && anneal_knee < 1.0))
      throw InputError("config: anneal knee must be in (0, 1)");
    if (anneal_power <= 0.0) throw InputError("config: anneal power must be positive");
    if (sigma_t0 < 0.0 || sigma_r0 < 0.0) throw InputError("config: sigmas must be >= 0");
    if (!(epsilon > 0.0)) throw InputError("config: epsilon must be positive");
    if (!(workspace_z_min > 0.0 && workspace_z_min < workspace_z_max))
      throw InputError("config: require 0 < workspace z min < max");
    if (box_diffusion_frac < 0.0) throw InputError("config: box diffusion must be >= 0");
    if (feature_pixel_window < 0) throw InputError("config: pixel window must be >= 0");
    if (image_margin_px < 0) throw InputError("config: image margin must be >= 0");
    if (workers < 1) throw InputError("config: workers must be >= 1");
    if (render_downsample < 1) throw InputError("config: render downsample must be >= 1");
    weights.validate();
    features.validate();
  }
};

struct EstimateReport {
  std::string object_class;
  Pose best_pose;
  BoundingBox best_box;
  double best_weight = 0.0;
  TermBreakdown breakdown;
  int iterations_run = 0;  // resample/diffuse/score cycles after the initial pass
  bool converged = false;
  bool present = false;
  std::vector<double> weight_trace;  // best-so-far weight after each scoring pass
  int degenerate_iterations = 0;     // all-zero-weight resampling fallbacks
  bool failed = false;
  std::string error;
};

// Annealing: noise stays at full scale until the best weight reaches the
// knee, then decays polynomially to zero at weight 1.
inline double anneal_factor(double best_weight, double knee = 0.6, double power = 5.0) {
  double w = std::clamp(best_weight, 0.0, 1.0);
  if (w < knee) return 1.0;
  return std::pow((1.0 - w) / (1.0 - knee), power);
}

namespace detail {

// Per-box translation depth bounds: observed depth range inside the box
// padded by the mesh diameter, clipped to the workspace; boxes with no valid
// depth fall back to the whole workspace.
struct BoxDepthRange {
  double lo;
  double hi;
};

inline BoxDepthRange box_depth_range(const BoundingBox& box, const OrganizedCloud& obs,
                                     double diameter, double z_lo, double z_hi) {
  int u0 = std::max(0, static_cast<int>(std::ceil(box.u_min)));
  int u1 = std::min(obs.width() - 1, static_cast<int>(std::floor(box.u_max)));
  int v0 = std::max(0, static_cast<int>(std::ceil(box.v_min)));
  int v1 = std::min(obs.height() - 1, static_cast<int>(std::floor(box.v_max)));
  double zmin = std::numeric_limits<double>::infinity();
  double zmax = -std::numeric_limits<double>::infinity();
  for (int v = v0; v <= v1; ++v) {
    for (int u = u0; u <= u1; ++u) {
      if (!obs.present(u, v)) continue;
      double z = obs.at(u, v).z;
      zmin = std::min(zmin, z);
      zmax = std::max(zmax, z);
    }
  }
  if (!(zmin <= zmax)) return {z_lo, z_hi};
  double lo = std::max(z_lo, zmin - diameter);
  double hi = std::min(z_hi, zmax + diameter);
  if (!(lo < hi)) return {z_lo, z_hi};
  return {lo, hi};
}

// Union of the per-box depth bands: the depth extent of the run's workspace.
inline BoxDepthRange workspace_depth_band(const std::vector<BoundingBox>& boxes,
                                          const OrganizedCloud& obs, double diameter, double z_lo,
                                          double z_hi) {
  BoxDepthRange band{z_hi, z_lo};
  for (const BoundingBox& b : boxes) {
    BoxDepthRange r = box_depth_range(b, obs, diameter, z_lo, z_hi);
    band.lo = std::min(band.lo, r.lo);
    band.hi = std::max(band.hi, r.hi);
  }
  if (!(band.lo < band.hi)) return {z_lo, z_hi};
  return band;
}

}  // namespace detail

// Draws num_samples hypotheses: box by confidence-proportional importance
// sampling, translation uniform in that box's viewing frustum between the
// depth bounds, rotation uniform over the rotation group. Weights start at 0.
inline std::vector<Hypothesis> init_samples(const std::vector<BoundingBox>& boxes,
                                            const OrganizedCloud& obs, double mesh_diameter,
                                            const FilterConfig& config) {
  if (boxes.empty()) throw InputError("no detections for class");
  const CameraIntrinsics& k = obs.intrinsics();
  double z_lo = std::max(config.workspace_z_min, k.z_near);
  double z_hi = std::min(config.workspace_z_max, k.z_far);
  if (!(z_lo < z_hi)) throw InputError("workspace does not intersect the sensor depth range");

  double total_conf = 0.0;
  for (const BoundingBox& b : boxes) total_conf += b.confidence;
  std::vector<detail::BoxDepthRange> ranges;
  ranges.reserve(boxes.size());
  for (const BoundingBox& b : boxes)
    ranges.push_back(detail::box_depth_range(b, obs, mesh_diameter, z_lo, z_hi));

  std::vector<Hypothesis> samples(static_cast<std::size_t>(config.num_samples));
  for (int i = 0; i < config.num_samples; ++i) {
    Rng rng(config.rng_seed, {phase_key(RngPhase::kInit), 0, static_cast<std::uint64_t>(i)});
    std::size_t pick = 0;
    if (boxes.size() > 1 && total_conf > 0.0) {
      double r = rng.uniform() * total_conf;
      double cum = 0.0;
      for (std::size_t j = 0; j < boxes.size(); ++j) {
        cum += boxes[j].confidence;
        if (r < cum) {
          pick = j;
          break;
        }
        pick = j;  // guards r == total under rounding
      }
    } else if (boxes.size() > 1) {
      pick = rng.below(boxes.size());  // all-zero confidences: uniform choice
    }
    const BoundingBox& box = boxes[pick];
    Hypothesis& h = samples[static_cast<std::size_t>(i)];
    h.box = box;
    double u = rng.uniform(box.u_min, box.u_max);
    double v = rng.uniform(box.v_min, box.v_max);
    double z = rng.uniform(ranges[pick].lo, ranges[pick].hi);
    h.pose.translation = backproject(k, u, v, z);
    h.pose.rotation = sample_uniform_rotation(rng);
  }
  return samples;
}

// Systematic (low-variance) resampling with replacement, probability
// proportional to weight. One uniform phase draw per call; zero-weight
// samples can never be selected. All-zero weights fall back to uniform
// multiplicities and report degenerate = true.
inline std::vector<Hypothesis> resample(const std::vector<Hypothesis>& samples, std::size_t n_out,
                                        Rng& rng, bool* degenerate = nullptr) {
  if (samples.empty()) throw std::invalid_argument("resample: empty sample set");
  double total = 0.0;
  for (const Hypothesis& h : samples) total += h.weight;
  double u0 = rng.uniform();
  if (degenerate) *degenerate = !(total > 0.0);
  std::vector<Hypothesis> out;
  out.reserve(n_out);
  if (!(total > 0.0)) {
    // Uniform fallback: every input survives with equal multiplicity, round
    // robin when counts differ.
    for (std::size_t k = 0; k < n_out; ++k) out.push_back(samples[k % samples.size()]);
    return out;
  }
  std::size_t j = 0;
  double cum = samples[0].weight;
  for (std::size_t k = 0; k < n_out; ++k) {
    double t = (static_cast<double>(k) + u0) * total / static_cast<double>(n_out);
    while (cum <= t && j + 1 < samples.size()) cum += samples[++j].weight;
    out.push_back(samples[j]);
  }
  return out;
}

// Annealed diffusion: Gaussian translation noise, axis-uniform rotation
// perturbation, uniform box-center jitter clipped to the image. lambda = 0
// leaves the set untouched. Both clips keep samples inside the workspace the
// prior indicated: a box pushed fully off the image reverts, and a translation
// whose projection leaves the image or whose depth leaves [z_lo, z_hi] (the
// same depth band initialization drew from) reverts. Without the depth clamp
// samples random-walk to depths where the object renders as a degenerate
// sliver, and slivers score a spurious plateau through the empty-feature-set
// convention.
inline void diffuse(std::vector<Hypothesis>& samples, double lambda, const FilterConfig& config,
                    const CameraIntrinsics& intrinsics, double z_lo, double z_hi, int iteration) {
  if (lambda <= 0.0) return;
  double sigma_t = lambda * config.sigma_t0;
  double sigma_r = lambda * config.sigma_r0;
  double kappa_u = lambda * config.box_diffusion_frac * intrinsics.width;
  double kappa_v = lambda * config.box_diffusion_frac * intrinsics.height;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    Rng rng(config.rng_seed, {phase_key(RngPhase::kDiffuse), static_cast<std::uint64_t>(iteration),
                              static_cast<std::uint64_t>(i)});
    Hypothesis& h = samples[i];
    Vec3 moved_t = h.pose.translation + Vec3{rng.gaussian() * sigma_t, rng.gaussian() * sigma_t,
                                             rng.gaussian() * sigma_t};
    bool in_band = moved_t.z >= z_lo && moved_t.z <= z_hi;
    if (in_band) {
      std::optional<Pixel> px = project(intrinsics, moved_t);
      double m = config.image_margin_px;
      if (px && px->u >= m && px->u <= intrinsics.width - 1 - m && px->v >= m &&
          px->v <= intrinsics.height - 1 - m)
        h.pose.translation = moved_t;
    }
    h.pose.rotation = perturb_rotation(h.pose.rotation, sigma_r, rng);
    double du = rng.uniform(-kappa_u, kappa_u);
    double dv = rng.uniform(-kappa_v, kappa_v);
    BoundingBox moved = h.box;
    moved.u_min += du;
    moved.u_max += du;
    moved.v_min += dv;
    moved.v_max += dv;
    if (clip_box_to_image(moved, intrinsics.width, intrinsics.height)) h.box = moved;
  }
}

using IterationObserver = std::function<void(int iteration, const Hypothesis& best_so_far)>;

// One filter run for one object class. The report carries the best-weight
// hypothesis seen across all scoring passes; converged / present are
// thresholded on that weight. Per-sample scoring parallelizes across
// config.workers without changing any result bit.
inline EstimateReport run_filter(const std::string& object_class, const TriangleMesh& mesh,
                                 const DetectionPrior& prior, const OrganizedCloud& obs,
                                 const FilterConfig& config,
                                 const IterationObserver& observer = nullptr) {
  config.validate();
  mesh.validate();
  if (prior.width != obs.width() || prior.height != obs.height())
    throw InputError("prior image size does not match the observation");
  const std::vector<BoundingBox>* boxes = prior.boxes_for(object_class);
  if (boxes == nullptr || boxes->empty())
    throw InputError("no detections for class '" + object_class + "'");

  OrganizedCloud scoring_obs =
      config.render_downsample > 1 ? downsample_nearest(obs, config.render_downsample) : obs;
  ObservationContext ctx(std::move(scoring_obs), config.features, config.weights, config.epsilon,
                         config.feature_pixel_window, 1.0 / config.render_downsample);

  std::vector<std::unique_ptr<HypothesisScorer>> scorers;
  for (int w = 0; w < config.workers; ++w)
    scorers.push_back(std::make_unique<HypothesisScorer>(ctx));
  std::size_t chunk =
      (static_cast<std::size_t>(config.num_samples) + config.workers - 1) / config.workers;

  std::vector<Hypothesis> samples = init_samples(*boxes, obs, mesh.diameter, config);
  double ws_lo = std::max(config.workspace_z_min, obs.intrinsics().z_near);
  double ws_hi = std::min(config.workspace_z_max, obs.intrinsics().z_far);
  detail::BoxDepthRange band =
      detail::workspace_depth_band(*boxes, obs, mesh.diameter, ws_lo, ws_hi);

  EstimateReport report;
  report.object_class = object_class;

  auto score_all = [&](std::vector<Hypothesis>& set) {
    parallel_for(set.size(), config.workers, [&](std::size_t i) {
      HypothesisScorer& scorer = *scorers[i / chunk];
      set[i].breakdown = scorer.score(set[i].pose, set[i].box, mesh);
      set[i].weight = set[i].breakdown.total;
    });
  };

  // Strictly-greater wins keep the earliest hypothesis under ties, which is
  // deterministic and independent of worker count.
  bool seeded = false;
  auto track_best = [&](const std::vector<Hypothesis>& set) {
    for (const Hypothesis& h : set) {
      if (!seeded || h.weight > report.best_weight) {
        report.best_pose = h.pose;
        report.best_box = h.box;
        report.best_weight = h.weight;
        report.breakdown = h.breakdown;
        seeded = true;
      }
    }
  };

  score_all(samples);
  track_best(samples);
  report.weight_trace.push_back(report.best_weight);
  if (observer) observer(0, {report.best_pose, report.best_box, report.best_weight, report.breakdown});

  while (report.iterations_run < config.max_iterations &&
         report.best_weight < config.convergence_threshold) {
    int iteration = report.iterations_run + 1;
    Rng resample_rng(config.rng_seed,
                     {phase_key(RngPhase::kResample), static_cast<std::uint64_t>(iteration)});
    bool degenerate = false;
    samples = resample(samples, samples.size(), resample_rng, &degenerate);
    report.degenerate_iterations += degenerate;
    double lambda = anneal_factor(report.best_weight, config.anneal_knee, config.anneal_power);
    diffuse(samples, lambda, config, obs.intrinsics(), band.lo, band.hi, iteration);
    score_all(samples);
    track_best(samples);
    report.weight_trace.push_back(report.best_weight);
    report.iterations_run = iteration;
    if (observer)
      observer(iteration,
               {report.best_pose, report.best_box, report.best_weight, report.breakdown});
  }

  report.converged = report.best_weight >= config.convergence_threshold;
  report.present = report.best_weight >= config.presence_threshold;
  return report;
}

// Independent per-class runs; a class whose run throws yields a failed report
// and does not disturb the others. Per-class randomness is derived from the
// class name, so results do not depend on the order classes are listed in.
inline std::vector<EstimateReport> run_scene(const std::vector<std::string>& classes,
                                             const std::map<std::string, TriangleMesh>& meshes,
                                             const DetectionPrior& prior,
                                             const OrganizedCloud& obs, const FilterConfig& config,
                                             const IterationObserver& observer = nullptr) {
  for (std::size_t i = 0; i < classes.size(); ++i)
    for (std::size_t j = i + 1; j < classes.size(); ++j)
      if (classes[i] == classes[j]) throw InputError("duplicate class '" + classes[i] + "'");
  std::vector<EstimateReport> reports;
  reports.reserve(classes.size());
  for (const std::string& cls : classes) {
    FilterConfig per_class = config;
    per_class.rng_seed = detail::mix64(config.rng_seed ^ fnv1a(cls.c_str()));
    try {
      auto it = meshes.find(cls);
      if (it == meshes.end()) throw InputError("no mesh for class '" + cls + "'");
      reports.push_back(run_filter(cls, it->second, prior, obs, per_class, observer));
    } catch (const std::exception& e) {
      EstimateReport failed;
      failed.object_class = cls;
      failed.failed = true;
      failed.error = e.what();
      reports.push_back(std::move(failed));
    }
  }
  return reports;
}

}  // namespace posefit
