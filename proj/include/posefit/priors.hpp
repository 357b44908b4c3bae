#pragma once

// Detection priors: ingestion of scored, unthresholded bounding boxes from
// JSON, synthetic corruption of ground-truth boxes for robustness trials, and
// ground-truth box computation from poses.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "posefit/geometry.hpp"
#include "posefit/likelihood.hpp"
#include "posefit/rng.hpp"

namespace posefit {

struct DetectionPrior {
  int width = 0;
  int height = 0;
  // Ordered by class name so serialization and iteration are deterministic.
  std::map<std::string, std::vector<BoundingBox>> detections;
  std::vector<std::string> warnings;  // ingestion clamp/clip notes, not persisted

  const std::vector<BoundingBox>* boxes_for(const std::string& cls) const {
    auto it = detections.find(cls);
    return it == detections.end() ? nullptr : &it->second;
  }

  void validate() const {
    if (width < 16 || height < 16) throw InputError("prior: image must be at least 16x16");
    for (const auto& [cls, boxes] : detections)
      for (std::size_t i = 0; i < boxes.size(); ++i) {
        try {
          boxes[i].validate(width, height);
        } catch (const InputError& e) {
          throw InputError("prior: class '" + cls + "' box " + std::to_string(i) + ": " +
                           e.what());
        }
      }
  }
};

inline DetectionPrior load_prior(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open prior file: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  DetectionPrior prior;
  try {
    prior.width = j.at("width").get<int>();
    prior.height = j.at("height").get<int>();
    for (const auto& [cls, boxes] : j.at("detections").items()) {
      std::vector<BoundingBox>& out = prior.detections[cls];
      for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& entry = boxes[i];
        const auto& b = entry.at("box");
        if (!b.is_array() || b.size() != 4)
          throw InputError(path + ": class '" + cls + "' box " + std::to_string(i) +
                           ": box must be [u_min, v_min, u_max, v_max]");
        BoundingBox box;
        box.u_min = b[0].get<double>();
        box.v_min = b[1].get<double>();
        box.u_max = b[2].get<double>();
        box.v_max = b[3].get<double>();
        box.confidence = entry.at("confidence").get<double>();
        if (box.confidence < 0.0 || box.confidence > 1.0) {
          prior.warnings.push_back("class '" + cls + "' box " + std::to_string(i) +
                                   ": confidence clamped to [0, 1]");
          box.confidence = std::clamp(box.confidence, 0.0, 1.0);
        }
        if (!(box.u_min < box.u_max) || !(box.v_min < box.v_max))
          throw InputError(path + ": class '" + cls + "' box " + std::to_string(i) +
                           ": require u_min < u_max and v_min < v_max");
        BoundingBox clipped = box;
        if (!clip_box_to_image(clipped, prior.width, prior.height))
          throw InputError(path + ": class '" + cls + "' box " + std::to_string(i) +
                           ": does not intersect the image");
        if (clipped.u_min != box.u_min || clipped.v_min != box.v_min ||
            clipped.u_max != box.u_max || clipped.v_max != box.v_max)
          prior.warnings.push_back("class '" + cls + "' box " + std::to_string(i) +
                                   ": clipped to the image");
        out.push_back(clipped);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  prior.validate();
  return prior;
}

inline nlohmann::json prior_to_json(const DetectionPrior& prior) {
  nlohmann::json det = nlohmann::json::object();
  for (const auto& [cls, boxes] : prior.detections) {
    nlohmann::json arr = nlohmann::json::array();
    for (const BoundingBox& b : boxes)
      arr.push_back({{"box", {b.u_min, b.v_min, b.u_max, b.v_max}}, {"confidence", b.confidence}});
    det[cls] = arr;
  }
  return {{"width", prior.width}, {"height", prior.height}, {"detections", det}};
}

inline void save_prior(const DetectionPrior& prior, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write prior file: " + path);
  out << prior_to_json(prior).dump(2) << '\n';
  if (!out) throw InputError("write failed: " + path);
}

// Detector failure model applied to ground-truth boxes.
struct CorruptionSpec {
  double center_jitter_px = 0.0;   // Gaussian sigma on the box center, pixels
  double scale_jitter_frac = 0.0;  // Gaussian sigma on box size, fractional
  int false_positives = 0;         // spurious boxes added per class
  double fp_confidence_lo = 0.1;
  double fp_confidence_hi = 0.9;
  double drop_probability = 0.0;   // chance a true box is removed
  double confidence_noise = 0.0;   // true-box confidence = 1 - |N(0, sigma)|

  void validate() const {
    if (center_jitter_px < 0 || scale_jitter_frac < 0 || confidence_noise < 0)
      throw InputError("corruption: sigmas must be >= 0");
    if (drop_probability < 0 || drop_probability > 1)
      throw InputError("corruption: drop probability must be in [0, 1]");
    if (false_positives < 0) throw InputError("corruption: false-positive count must be >= 0");
    if (fp_confidence_lo < 0 || fp_confidence_hi > 1 || fp_confidence_lo > fp_confidence_hi)
      throw InputError("corruption: require 0 <= lo <= hi <= 1 for fp confidence");
  }
};

// Axis-aligned box of all mesh vertices that project into the image under the
// pose; confidence 1.0.
inline BoundingBox gt_box_from_pose(const TriangleMesh& mesh, const Pose& pose,
                                    const CameraIntrinsics& k) {
  PoseMatrix pm(pose);
  BoundingBox box;
  bool any = false;
  for (const Vec3& v : mesh.vertices) {
    auto px = project(k, pm.apply(v));
    if (!px) continue;
    if (!any) {
      box.u_min = box.u_max = px->u;
      box.v_min = box.v_max = px->v;
      any = true;
    } else {
      box.u_min = std::min(box.u_min, px->u);
      box.u_max = std::max(box.u_max, px->u);
      box.v_min = std::min(box.v_min, px->v);
      box.v_max = std::max(box.v_max, px->v);
    }
  }
  if (!any) throw InputError("object out of view");
  box.confidence = 1.0;
  if (!(box.u_min < box.u_max) || !(box.v_min < box.v_max))
    throw InputError("object projects to a degenerate box");
  return box;
}

// Applies the corruption model per class. Randomness is keyed by class name,
// so per-class output does not depend on map iteration or on which other
// classes exist.
inline DetectionPrior synth_prior(const std::map<std::string, BoundingBox>& gt_boxes, int width,
                                  int height, const CorruptionSpec& spec, std::uint64_t seed) {
  spec.validate();
  DetectionPrior prior;
  prior.width = width;
  prior.height = height;
  for (const auto& [cls, gt] : gt_boxes) {
    std::vector<BoundingBox>& out = prior.detections[cls];
    Rng rng(seed, {phase_key(RngPhase::kPrior), fnv1a(cls.c_str())});
    bool dropped = rng.uniform() < spec.drop_probability;
    if (!dropped) {
      BoundingBox b = gt;
      if (spec.center_jitter_px > 0.0) {
        double du = rng.gaussian() * spec.center_jitter_px;
        double dv = rng.gaussian() * spec.center_jitter_px;
        b.u_min += du;
        b.u_max += du;
        b.v_min += dv;
        b.v_max += dv;
      }
      if (spec.scale_jitter_frac > 0.0) {
        double sw = std::max(0.1, 1.0 + rng.gaussian() * spec.scale_jitter_frac);
        double sh = std::max(0.1, 1.0 + rng.gaussian() * spec.scale_jitter_frac);
        double cu = b.center_u();
        double cv = b.center_v();
        double hw = 0.5 * b.width() * sw;
        double hh = 0.5 * b.height() * sh;
        b.u_min = cu - hw;
        b.u_max = cu + hw;
        b.v_min = cv - hh;
        b.v_max = cv + hh;
      }
      b.confidence = spec.confidence_noise > 0.0
                         ? std::clamp(1.0 - std::abs(rng.gaussian() * spec.confidence_noise), 0.0, 1.0)
                         : 1.0;
      if (clip_box_to_image(b, width, height)) out.push_back(b);
    }
    for (int i = 0; i < spec.false_positives; ++i) {
      double w = rng.uniform(0.1, 0.5) * width;
      double h = rng.uniform(0.1, 0.5) * height;
      double cu = rng.uniform(0.0, width - 1.0);
      double cv = rng.uniform(0.0, height - 1.0);
      BoundingBox b;
      b.u_min = cu - 0.5 * w;
      b.u_max = cu + 0.5 * w;
      b.v_min = cv - 0.5 * h;
      b.v_max = cv + 0.5 * h;
      b.confidence = rng.uniform(spec.fp_confidence_lo, spec.fp_confidence_hi);
      if (clip_box_to_image(b, width, height)) out.push_back(b);
    }
  }
  prior.validate();
  return prior;
}

}  // namespace posefit
