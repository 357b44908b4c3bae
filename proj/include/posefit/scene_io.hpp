#pragma once

// Scene bundle and report serialization. A bundle directory holds
// scene.json, intrinsics.json, depth.pgm, gt_boxes.json, and meshes/*.obj.
// Estimates and metrics are JSON documents whose numeric fields round-trip
// exactly (shortest-representation doubles), so equal inputs produce
// byte-identical files.

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "posefit/filter.hpp"
#include "posefit/geometry.hpp"
#include "posefit/mesh_io.hpp"
#include "posefit/metrics.hpp"
#include "posefit/pgm.hpp"
#include "posefit/priors.hpp"
#include "posefit/synth.hpp"
#include "posefit/version.hpp"

namespace posefit {

using Json = nlohmann::json;

inline Json pose_to_json(const Pose& p) {
  return {{"rotation", {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}},
          {"translation", {p.translation.x, p.translation.y, p.translation.z}}};
}

inline Pose pose_from_json(const Json& j) {
  const auto& r = j.at("rotation");
  const auto& t = j.at("translation");
  if (!r.is_array() || r.size() != 4 || !t.is_array() || t.size() != 3)
    throw InputError("pose: rotation must be [w,x,y,z] and translation [x,y,z]");
  Pose p;
  p.rotation = Rotation::from_quat(r[0].get<double>(), r[1].get<double>(), r[2].get<double>(),
                                   r[3].get<double>());
  p.translation = {t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
  return p;
}

inline Json intrinsics_to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx},         {"fy", k.fy},       {"cx", k.cx},
          {"cy", k.cy},         {"width", k.width}, {"height", k.height},
          {"z_near", k.z_near}, {"z_far", k.z_far}};
}

inline CameraIntrinsics intrinsics_from_json(const Json& j) {
  CameraIntrinsics k;
  k.fx = j.at("fx").get<double>();
  k.fy = j.at("fy").get<double>();
  k.cx = j.at("cx").get<double>();
  k.cy = j.at("cy").get<double>();
  k.width = j.at("width").get<int>();
  k.height = j.at("height").get<int>();
  k.z_near = j.value("z_near", 0.05);
  k.z_far = j.value("z_far", 5.0);
  k.validate();
  return k;
}

inline Json box_to_json(const BoundingBox& b) {
  return {{"box", {b.u_min, b.v_min, b.u_max, b.v_max}}, {"confidence", b.confidence}};
}

namespace detail {

inline Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write file: " + path);
  out << text;
  if (!out) throw InputError("write failed: " + path);
}

}  // namespace detail

// On-disk scene bundle, including everything needed to re-load it without
// the generator: meshes are written as OBJ and referenced by relative path.
inline void save_scene_bundle(const SceneSpec& spec, const OrganizedCloud& observed,
                              const std::map<std::string, BoundingBox>& gt_boxes,
                              const std::string& setting, std::uint64_t seed,
                              const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "meshes", ec);
  if (ec) throw InputError("cannot create bundle directory: " + dir);

  Json objects = Json::array();
  for (const SceneObject& obj : spec.objects) {
    std::string mesh_rel = "meshes/" + obj.class_name + ".obj";
    save_obj(obj.mesh, (fs::path(dir) / mesh_rel).string());
    objects.push_back({{"class", obj.class_name},
                       {"mesh", mesh_rel},
                       {"symmetric", obj.symmetric},
                       {"pose", pose_to_json(obj.pose)}});
  }
  Json scene = {{"setting", setting},
                {"seed", seed},
                {"tool_version", kVersion},
                {"objects", objects}};
  if (spec.table) {
    save_obj(spec.table->mesh, (fs::path(dir) / "meshes/table.obj").string());
    scene["table"] = {{"mesh", "meshes/table.obj"}, {"pose", pose_to_json(spec.table->pose)}};
  }
  detail::write_text_file((fs::path(dir) / "scene.json").string(), scene.dump(2) + "\n");
  detail::write_text_file((fs::path(dir) / "intrinsics.json").string(),
                          intrinsics_to_json(spec.intrinsics).dump(2) + "\n");
  save_pgm16(cloud_to_depth_image(observed), (fs::path(dir) / "depth.pgm").string());

  DetectionPrior gt_prior;
  gt_prior.width = spec.intrinsics.width;
  gt_prior.height = spec.intrinsics.height;
  for (const auto& [cls, box] : gt_boxes) gt_prior.detections[cls].push_back(box);
  save_prior(gt_prior, (fs::path(dir) / "gt_boxes.json").string());
}

struct SceneBundle {
  SceneSpec spec;
  OrganizedCloud observed;
  std::map<std::string, BoundingBox> gt_boxes;
  std::string setting;
  std::uint64_t seed = 0;
};

inline SceneBundle load_scene_bundle(const std::string& dir) {
  namespace fs = std::filesystem;
  SceneBundle bundle;
  Json scene = detail::load_json_file((fs::path(dir) / "scene.json").string());
  bundle.spec.intrinsics =
      intrinsics_from_json(detail::load_json_file((fs::path(dir) / "intrinsics.json").string()));
  try {
    bundle.setting = scene.at("setting").get<std::string>();
    bundle.seed = scene.at("seed").get<std::uint64_t>();
    for (const auto& obj_json : scene.at("objects")) {
      SceneObject obj;
      obj.class_name = obj_json.at("class").get<std::string>();
      obj.symmetric = obj_json.value("symmetric", false);
      obj.pose = pose_from_json(obj_json.at("pose"));
      obj.mesh = load_obj((fs::path(dir) / obj_json.at("mesh").get<std::string>()).string());
      bundle.spec.objects.push_back(std::move(obj));
    }
    if (scene.contains("table")) {
      SceneObject table;
      table.class_name = "table";
      table.pose = pose_from_json(scene.at("table").at("pose"));
      table.mesh =
          load_obj((fs::path(dir) / scene.at("table").at("mesh").get<std::string>()).string());
      bundle.spec.table = std::move(table);
    }
  } catch (const Json::exception& e) {
    throw InputError(dir + "/scene.json: " + e.what());
  }
  bundle.spec.validate();
  bundle.observed = depth_image_to_cloud(load_pgm16((fs::path(dir) / "depth.pgm").string()),
                                         bundle.spec.intrinsics);
  DetectionPrior gt = load_prior((fs::path(dir) / "gt_boxes.json").string());
  for (const auto& [cls, boxes] : gt.detections)
    if (!boxes.empty()) bundle.gt_boxes[cls] = boxes.front();
  return bundle;
}

inline Json breakdown_to_json(const TermBreakdown& b) {
  return {{"w_box", b.w_box}, {"i_b", b.i_b}, {"i_r", b.i_r},
          {"i_e", b.i_e},     {"i_p", b.i_p}, {"total", b.total}};
}

inline Json report_to_json(const EstimateReport& r) {
  Json j = {{"class", r.object_class},
            {"failed", r.failed},
            {"converged", r.converged},
            {"present", r.present},
            {"best_weight", r.best_weight},
            {"iterations_run", r.iterations_run},
            {"degenerate_iterations", r.degenerate_iterations}};
  if (r.failed) {
    j["error"] = r.error;
  } else {
    j["pose"] = pose_to_json(r.best_pose);
    j["box"] = box_to_json(r.best_box);
    j["breakdown"] = breakdown_to_json(r.breakdown);
    j["weight_trace"] = r.weight_trace;
  }
  return j;
}

inline EstimateReport report_from_json(const Json& j) {
  EstimateReport r;
  r.object_class = j.at("class").get<std::string>();
  r.failed = j.at("failed").get<bool>();
  r.converged = j.at("converged").get<bool>();
  r.present = j.at("present").get<bool>();
  r.best_weight = j.at("best_weight").get<double>();
  r.iterations_run = j.at("iterations_run").get<int>();
  r.degenerate_iterations = j.value("degenerate_iterations", 0);
  if (r.failed) {
    r.error = j.value("error", "");
  } else {
    r.best_pose = pose_from_json(j.at("pose"));
    const auto& b = j.at("box").at("box");
    r.best_box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>(),
                  j.at("box").at("confidence").get<double>()};
    const auto& bd = j.at("breakdown");
    r.breakdown = {bd.at("w_box").get<double>(), bd.at("i_b").get<double>(),
                   bd.at("i_r").get<double>(),   bd.at("i_e").get<double>(),
                   bd.at("i_p").get<double>(),   bd.at("total").get<double>()};
    r.weight_trace = j.at("weight_trace").get<std::vector<double>>();
  }
  return r;
}

// Full config snapshot so a run can be replayed exactly. Worker count is
// deliberately absent: it cannot affect results, and including it would break
// byte-identity across --workers values.
inline Json manifest_json(const FilterConfig& config, const std::string& bundle_dir,
                          const std::string& prior_path) {
  return {{"tool_version", kVersion},
          {"bundle", bundle_dir},
          {"prior", prior_path},
          {"config",
           {{"num_samples", config.num_samples},
            {"max_iterations", config.max_iterations},
            {"convergence_threshold", config.convergence_threshold},
            {"presence_threshold", config.presence_threshold},
            {"sigma_t0", config.sigma_t0},
            {"sigma_r0", config.sigma_r0},
            {"anneal_knee", config.anneal_knee},
            {"anneal_power", config.anneal_power},
            {"epsilon", config.epsilon},
            {"alphas",
             {config.weights.alpha_box, config.weights.alpha_b, config.weights.alpha_r,
              config.weights.alpha_e, config.weights.alpha_p}},
            {"features",
             {{"window", config.features.window},
              {"max_edges_per_window", config.features.max_edges_per_window},
              {"max_planars_per_window", config.features.max_planars_per_window},
              {"log_c_threshold", config.features.log_c_threshold},
              {"neighborhood_radius", config.features.neighborhood_radius}}},
            {"rng_seed", config.rng_seed},
            {"workspace_z", {config.workspace_z_min, config.workspace_z_max}},
            {"box_diffusion_frac", config.box_diffusion_frac},
            {"feature_pixel_window", config.feature_pixel_window},
            {"render_downsample", config.render_downsample}}}};
}

inline void save_estimates(const std::vector<EstimateReport>& reports, const FilterConfig& config,
                           const std::string& bundle_dir, const std::string& prior_path,
                           const std::string& out_path) {
  Json arr = Json::array();
  for (const EstimateReport& r : reports) arr.push_back(report_to_json(r));
  Json doc = {{"manifest", manifest_json(config, bundle_dir, prior_path)}, {"estimates", arr}};
  detail::write_text_file(out_path, doc.dump(2) + "\n");
}

inline std::vector<EstimateReport> load_estimates(const std::string& path) {
  Json doc = detail::load_json_file(path);
  std::vector<EstimateReport> reports;
  try {
    for (const auto& j : doc.at("estimates")) reports.push_back(report_from_json(j));
  } catch (const Json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  return reports;
}

}  // namespace posefit
