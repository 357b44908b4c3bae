// posefit: synthesize tabletop depth scenes, corrupt detection priors,
// estimate 6-DoF object poses with an iterated likelihood weighting filter,
// and evaluate the results with ADD/ADD-S accuracy curves.
//
// Exit codes: 0 success, 1 usage error, 2 input validation error,
// 3 runtime failure.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "posefit/filter.hpp"
#include "posefit/metrics.hpp"
#include "posefit/scene_io.hpp"
#include "posefit/synth.hpp"
#include "posefit/version.hpp"

namespace {

using namespace posefit;
namespace fs = std::filesystem;

// Flag-semantics failure after successful parsing; maps to exit code 1.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& what) : std::runtime_error(what) {}
};

struct SynthArgs {
  std::string out;
  int objects = 3;
  std::string setting = "base";
  std::uint64_t seed = 0;
  bool no_table = false;
};

struct PriorArgs {
  std::string bundle;
  std::string preset = "clean";
  std::string out;
  std::uint64_t seed = 0;
  std::optional<double> jitter;       // center jitter, fraction of box size
  std::optional<double> scale_jitter;
  std::optional<double> drop;
  std::optional<int> false_positives;
  std::optional<double> conf_noise;
};

struct EstimateArgs {
  std::string bundle;
  std::string prior;
  std::string out;
  int samples = 625;
  int iters = 400;
  double epsilon = 0.005;
  double wbar = 0.9;
  double presence = 0.5;
  double sigma_t = 0.07;
  double sigma_r = 0.3;
  std::vector<double> alphas = {0.1, 0.1, 0.3, 0.25, 0.25};
  std::uint64_t seed = 0;
  int workers = 1;
  int downsample = 1;
  std::vector<std::string> classes;  // empty = all scene classes
};

struct EvalArgs {
  std::string bundle;
  std::string estimate;
  std::string out;
  std::string csv;
  double t_max = 0.04;
  int steps = 401;
};

struct SweepArgs {
  std::string out;
  std::vector<std::string> settings = {"base"};
  std::vector<std::string> presets = {"clean"};
  int seeds = 3;
  std::uint64_t seed_base = 0;
  int objects = 3;
  EstimateArgs estimate;  // shared estimation knobs (bundle/prior/out unused)
  PriorArgs prior_overrides;
};

// Corruption preset table. Center jitter is expressed as a fraction of box
// size and converted to pixels per box, so large and small detections degrade
// comparably.
struct PresetSpec {
  double center_frac = 0.0;
  double scale_jitter = 0.0;
  double drop = 0.0;
  int false_positives = 0;
  double fp_lo = 0.1;
  double fp_hi = 0.9;
  double conf_noise = 0.0;
};

PresetSpec preset_table(const std::string& name) {
  if (name == "clean") return {};
  if (name == "jitter") return {.center_frac = 0.15, .conf_noise = 0.1};
  if (name == "falsepos")
    return {.center_frac = 0.05, .false_positives = 2, .fp_lo = 0.5, .fp_hi = 0.9,
            .conf_noise = 0.1};
  if (name == "dropout") return {.center_frac = 0.05, .drop = 0.5, .conf_noise = 0.1};
  if (name == "dark")
    return {.center_frac = 0.10, .drop = 0.3, .false_positives = 1, .fp_lo = 0.2, .fp_hi = 0.6,
            .conf_noise = 0.3};
  throw UsageError("unknown preset '" + name + "'");
}

DetectionPrior build_prior(const std::map<std::string, BoundingBox>& gt_boxes, int width,
                           int height, const PriorArgs& args) {
  PresetSpec preset = preset_table(args.preset);
  if (args.jitter) preset.center_frac = *args.jitter;
  if (args.scale_jitter) preset.scale_jitter = *args.scale_jitter;
  if (args.drop) preset.drop = *args.drop;
  if (args.false_positives) preset.false_positives = *args.false_positives;
  if (args.conf_noise) preset.conf_noise = *args.conf_noise;
  if (preset.drop < 0.0 || preset.drop > 1.0)
    throw UsageError("drop probability must be in [0, 1]");
  if (preset.center_frac < 0.0 || preset.scale_jitter < 0.0 || preset.conf_noise < 0.0)
    throw UsageError("jitter sigmas must be >= 0");
  if (preset.false_positives < 0) throw UsageError("false-positive count must be >= 0");

  DetectionPrior prior;
  prior.width = width;
  prior.height = height;
  // Per-class corruption spec (jitter scales with that class's box), merged
  // over classes; randomness is keyed by class name inside synth_prior, so
  // the merge order cannot change any box.
  for (const auto& [cls, box] : gt_boxes) {
    CorruptionSpec spec;
    spec.center_jitter_px = preset.center_frac * 0.5 * (box.width() + box.height());
    spec.scale_jitter_frac = preset.scale_jitter;
    spec.drop_probability = preset.drop;
    spec.false_positives = preset.false_positives;
    spec.fp_confidence_lo = preset.fp_lo;
    spec.fp_confidence_hi = preset.fp_hi;
    spec.confidence_noise = preset.conf_noise;
    DetectionPrior one = synth_prior({{cls, box}}, width, height, spec, args.seed);
    prior.detections[cls] = one.detections[cls];
  }
  return prior;
}

int cmd_synth(const SynthArgs& args) {
  auto setting = setting_from_name(args.setting);
  if (!setting) throw UsageError("unknown setting '" + args.setting + "'");
  if (*setting == SceneSetting::kOcclusion && args.objects < 2)
    throw UsageError("occlusion scenes need at least 2 objects");

  SceneGenConfig cfg;
  cfg.object_count = args.objects;
  cfg.setting = *setting;
  cfg.with_table = !args.no_table;
  SceneSpec spec = generate_scene(cfg, args.seed);
  OrganizedCloud clean = render_scene(spec);
  OrganizedCloud observed = corrupt(clean, setting_noise(*setting), args.seed);
  std::map<std::string, BoundingBox> gt_boxes = scene_gt_boxes(spec);
  save_scene_bundle(spec, observed, gt_boxes, args.setting, args.seed, args.out);
  std::cout << "wrote scene bundle " << args.out << " (" << spec.objects.size() << " objects, "
            << observed.present_count() << " depth points)\n";
  return 0;
}

int cmd_prior(const PriorArgs& args) {
  SceneBundle bundle = load_scene_bundle(args.bundle);
  DetectionPrior prior = build_prior(bundle.gt_boxes, bundle.spec.intrinsics.width,
                                     bundle.spec.intrinsics.height, args);
  std::string out = args.out.empty() ? (fs::path(args.bundle) / "prior.json").string() : args.out;
  save_prior(prior, out);
  std::size_t boxes = 0;
  for (const auto& [cls, list] : prior.detections) boxes += list.size();
  std::cout << "wrote " << out << " (" << prior.detections.size() << " classes, " << boxes
            << " boxes)\n";
  return 0;
}

FilterConfig config_from_args(const EstimateArgs& args) {
  if (args.alphas.size() != 5)
    throw UsageError("--alphas needs 5 comma-separated coefficients");
  double sum = 0.0;
  for (double a : args.alphas) {
    if (a < 0.0) throw UsageError("coefficients must be non-negative");
    sum += a;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw UsageError("coefficients must sum to 1");
  FilterConfig config;
  config.num_samples = args.samples;
  config.max_iterations = args.iters;
  config.epsilon = args.epsilon;
  config.convergence_threshold = args.wbar;
  config.presence_threshold = args.presence;
  config.sigma_t0 = args.sigma_t;
  config.sigma_r0 = args.sigma_r;
  config.weights = {args.alphas[0], args.alphas[1], args.alphas[2], args.alphas[3],
                    args.alphas[4]};
  config.rng_seed = args.seed;
  config.workers = args.workers;
  config.render_downsample = args.downsample;
  try {
    config.validate();
  } catch (const InputError& e) {
    throw UsageError(e.what());
  }
  return config;
}

int cmd_estimate(const EstimateArgs& args) {
  FilterConfig config = config_from_args(args);
  SceneBundle bundle = load_scene_bundle(args.bundle);
  std::string prior_path =
      args.prior.empty() ? (fs::path(args.bundle) / "prior.json").string() : args.prior;
  DetectionPrior prior = load_prior(prior_path);

  std::vector<std::string> classes = args.classes;
  std::map<std::string, TriangleMesh> meshes;
  for (const SceneObject& obj : bundle.spec.objects) {
    if (classes.empty() || std::find(args.classes.begin(), args.classes.end(), obj.class_name) !=
                               args.classes.end())
      meshes[obj.class_name] = obj.mesh;
  }
  if (classes.empty())
    for (const SceneObject& obj : bundle.spec.objects) classes.push_back(obj.class_name);
  for (const std::string& cls : classes)
    if (!meshes.count(cls)) throw InputError("class '" + cls + "' is not in the scene");

  std::vector<EstimateReport> reports =
      run_scene(classes, meshes, prior, bundle.observed, config);
  std::string out =
      args.out.empty() ? (fs::path(args.bundle) / "estimate.json").string() : args.out;
  save_estimates(reports, config, args.bundle, prior_path, out);
  for (const EstimateReport& r : reports) {
    if (r.failed)
      std::cout << r.object_class << ": failed (" << r.error << ")\n";
    else
      std::cout << r.object_class << ": weight " << r.best_weight << ", "
                << (r.converged ? "converged" : "not converged") << " after " << r.iterations_run
                << " iterations\n";
  }
  std::cout << "wrote " << out << "\n";
  return 0;
}

struct EvalResult {
  Json json;
  std::string csv;
};

EvalResult evaluate(const SceneBundle& bundle, const std::vector<EstimateReport>& reports,
                    double t_max, int steps) {
  std::map<std::string, const EstimateReport*> by_class;
  for (const EstimateReport& r : reports) by_class[r.object_class] = &r;

  Json objects = Json::array();
  std::vector<double> errors;
  int failed = 0;
  for (const SceneObject& obj : bundle.spec.objects) {
    auto it = by_class.find(obj.class_name);
    if (it == by_class.end())
      throw InputError("no estimate for class '" + obj.class_name + "'");
    const EstimateReport& r = *it->second;
    Json entry = {{"class", obj.class_name},
                  {"symmetric", obj.symmetric},
                  {"metric", obj.symmetric ? "add_s" : "add"},
                  {"failed", r.failed},
                  {"converged", r.converged},
                  {"present", r.present}};
    double err;
    if (r.failed) {
      // Sentinel well above every threshold: a missing estimate counts as a
      // miss at all tolerances without poisoning the curve with infinities.
      err = 10.0 * t_max;
      ++failed;
    } else {
      err = obj.symmetric ? adds_error(obj.mesh, obj.pose, r.best_pose)
                          : add_error(obj.mesh, obj.pose, r.best_pose);
    }
    entry["error"] = err;
    errors.push_back(err);
    objects.push_back(entry);
  }
  AccuracyCurve curve = accuracy_curve(errors, t_max, steps);

  EvalResult result;
  result.json = {{"tool_version", kVersion},
                 {"objects", objects},
                 {"failed_objects", failed},
                 {"curve",
                  {{"thresholds", curve.thresholds},
                   {"accuracy", curve.accuracy},
                   {"auc", curve.auc}}}};
  std::string csv = "threshold,accuracy\n";
  char buf[80];
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", curve.thresholds[i], curve.accuracy[i]);
    csv += buf;
  }
  result.csv = csv;
  return result;
}

int cmd_eval(const EvalArgs& args) {
  if (args.steps < 2) throw UsageError("--steps must be >= 2");
  if (!(args.t_max > 0.0)) throw UsageError("--tmax must be positive");
  SceneBundle bundle = load_scene_bundle(args.bundle);
  std::string est_path =
      args.estimate.empty() ? (fs::path(args.bundle) / "estimate.json").string() : args.estimate;
  std::vector<EstimateReport> reports = load_estimates(est_path);
  EvalResult result = evaluate(bundle, reports, args.t_max, args.steps);
  std::string out = args.out.empty() ? (fs::path(args.bundle) / "metrics.json").string() : args.out;
  std::string csv = args.csv.empty() ? (fs::path(args.bundle) / "curve.csv").string() : args.csv;
  detail::write_text_file(out, result.json.dump(2) + "\n");
  detail::write_text_file(csv, result.csv);
  std::cout << "auc " << result.json["curve"]["auc"].dump() << ", wrote " << out << " and " << csv
            << "\n";
  return 0;
}

int cmd_sweep(const SweepArgs& args) {
  if (args.seeds < 1) throw UsageError("--seeds must be >= 1");
  for (const std::string& s : args.settings)
    if (!setting_from_name(s)) throw UsageError("unknown setting '" + s + "'");
  for (const std::string& p : args.presets) preset_table(p);  // validates names
  FilterConfig config = config_from_args(args.estimate);

  std::error_code ec;
  fs::create_directories(fs::path(args.out) / "cells", ec);
  if (ec) throw InputError("cannot create sweep directory: " + args.out);

  std::string csv =
      "setting,preset,seed,status,objects,failed_objects,converged,converged_rate,median_error,"
      "auc\n";
  for (const std::string& setting : args.settings) {
    for (const std::string& preset : args.presets) {
      for (int s = 0; s < args.seeds; ++s) {
        std::uint64_t seed = args.seed_base + static_cast<std::uint64_t>(s);
        std::string cell = setting + "-" + preset + "-" + std::to_string(seed);
        std::string dir = (fs::path(args.out) / "cells" / cell).string();
        char row[256];
        try {
          SynthArgs synth;
          synth.out = dir;
          synth.objects = args.objects;
          synth.setting = setting;
          synth.seed = seed;
          cmd_synth(synth);

          PriorArgs prior = args.prior_overrides;
          prior.bundle = dir;
          prior.preset = preset;
          prior.seed = seed;
          cmd_prior(prior);

          SceneBundle bundle = load_scene_bundle(dir);
          DetectionPrior det = load_prior((fs::path(dir) / "prior.json").string());
          FilterConfig cell_config = config;
          cell_config.rng_seed = seed;
          std::vector<std::string> classes;
          std::map<std::string, TriangleMesh> meshes;
          for (const SceneObject& obj : bundle.spec.objects) {
            classes.push_back(obj.class_name);
            meshes[obj.class_name] = obj.mesh;
          }
          std::vector<EstimateReport> reports =
              run_scene(classes, meshes, det, bundle.observed, cell_config);
          save_estimates(reports, cell_config, dir, (fs::path(dir) / "prior.json").string(),
                         (fs::path(dir) / "estimate.json").string());
          EvalResult eval = evaluate(bundle, reports, 0.04, 401);
          detail::write_text_file((fs::path(dir) / "metrics.json").string(),
                                  eval.json.dump(2) + "\n");

          int failed = eval.json["failed_objects"].get<int>();
          int converged = 0;
          std::vector<double> errs;
          for (const auto& o : eval.json["objects"]) {
            converged += o["converged"].get<bool>();
            errs.push_back(o["error"].get<double>());
          }
          std::sort(errs.begin(), errs.end());
          double median = errs[errs.size() / 2];
          if (errs.size() % 2 == 0) median = 0.5 * (median + errs[errs.size() / 2 - 1]);
          bool all_failed = failed == static_cast<int>(eval.json["objects"].size());
          std::snprintf(row, sizeof(row), "%s,%s,%llu,%s,%zu,%d,%d,%.17g,%.17g,%.17g\n",
                        setting.c_str(), preset.c_str(),
                        static_cast<unsigned long long>(seed), all_failed ? "failed" : "ok",
                        eval.json["objects"].size(), failed, converged,
                        static_cast<double>(converged) / eval.json["objects"].size(), median,
                        eval.json["curve"]["auc"].get<double>());
        } catch (const std::exception& e) {
          std::cerr << "cell " << cell << " failed: " << e.what() << "\n";
          std::snprintf(row, sizeof(row), "%s,%s,%llu,failed,,,,,,\n", setting.c_str(),
                        preset.c_str(), static_cast<unsigned long long>(seed));
        }
        csv += row;
      }
    }
  }
  std::string out_csv = (fs::path(args.out) / "sweep.csv").string();
  detail::write_text_file(out_csv, csv);
  std::cout << "wrote " << out_csv << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"posefit: generative 6-DoF pose estimation on synthetic depth scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(posefit::kVersion));

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic scene bundle");
  synth_cmd->add_option("--out", synth.out, "bundle output directory")->required();
  synth_cmd->add_option("--objects", synth.objects, "number of objects (1-3)")
      ->check(CLI::Range(1, 3));
  synth_cmd->add_option("--setting", synth.setting, "scene setting")
      ->check(CLI::IsMember({"base", "dark", "occlusion"}));
  synth_cmd->add_option("--seed", synth.seed, "scene seed");
  synth_cmd->add_flag("--no-table", synth.no_table, "omit the table surface");

  PriorArgs prior;
  CLI::App* prior_cmd =
      app.add_subcommand("prior", "derive a (possibly corrupted) detection prior from a bundle");
  prior_cmd->add_option("--bundle", prior.bundle, "scene bundle directory")->required();
  prior_cmd->add_option("--preset", prior.preset, "corruption preset")
      ->check(CLI::IsMember({"clean", "jitter", "falsepos", "dropout", "dark"}));
  prior_cmd->add_option("--out", prior.out, "output path (default <bundle>/prior.json)");
  prior_cmd->add_option("--seed", prior.seed, "corruption seed");
  prior_cmd->add_option("--jitter", prior.jitter, "center jitter sigma, fraction of box size");
  prior_cmd->add_option("--scale-jitter", prior.scale_jitter, "size jitter sigma, fraction");
  prior_cmd->add_option("--drop", prior.drop, "true-box drop probability");
  prior_cmd->add_option("--false-positives", prior.false_positives, "spurious boxes per class");
  prior_cmd->add_option("--conf-noise", prior.conf_noise, "confidence noise sigma");

  EstimateArgs est;
  CLI::App* est_cmd = app.add_subcommand("estimate", "run the pose filter on a bundle");
  est_cmd->add_option("--bundle", est.bundle, "scene bundle directory")->required();
  est_cmd->add_option("--prior", est.prior, "prior path (default <bundle>/prior.json)");
  est_cmd->add_option("--out", est.out, "output path (default <bundle>/estimate.json)");
  est_cmd->add_option("--samples", est.samples, "hypotheses per iteration");
  est_cmd->add_option("--iters", est.iters, "iteration budget");
  est_cmd->add_option("--epsilon", est.epsilon, "inlier distance, meters");
  est_cmd->add_option("--wbar", est.wbar, "convergence weight threshold");
  est_cmd->add_option("--presence", est.presence, "presence weight threshold");
  est_cmd->add_option("--sigma-t", est.sigma_t, "initial translation noise, meters");
  est_cmd->add_option("--sigma-r", est.sigma_r, "initial rotation noise, radians");
  est_cmd->add_option("--alphas", est.alphas, "likelihood coefficients box,b,r,e,p")
      ->delimiter(',')
      ->expected(1, 5);
  est_cmd->add_option("--seed", est.seed, "filter seed");
  est_cmd->add_option("--workers", est.workers, "scoring threads")->check(CLI::PositiveNumber);
  est_cmd->add_option("--downsample", est.downsample, "score at observation resolution / k")
      ->check(CLI::PositiveNumber);
  est_cmd->add_option("--classes", est.classes, "restrict to these classes")->delimiter(',');

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "score estimates against ground truth");
  eval_cmd->add_option("--bundle", eval.bundle, "scene bundle directory")->required();
  eval_cmd->add_option("--estimate", eval.estimate, "estimate path (default <bundle>/estimate.json)");
  eval_cmd->add_option("--out", eval.out, "metrics path (default <bundle>/metrics.json)");
  eval_cmd->add_option("--csv", eval.csv, "curve CSV path (default <bundle>/curve.csv)");
  eval_cmd->add_option("--tmax", eval.t_max, "curve threshold range, meters");
  eval_cmd->add_option("--steps", eval.steps, "curve grid points");

  SweepArgs sweep;
  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "grid of synth/prior/estimate/eval runs with a summary CSV");
  sweep_cmd->add_option("--out", sweep.out, "sweep output directory")->required();
  sweep_cmd->add_option("--settings", sweep.settings, "scene settings")->delimiter(',');
  sweep_cmd->add_option("--presets", sweep.presets, "corruption presets")->delimiter(',');
  sweep_cmd->add_option("--seeds", sweep.seeds, "seeds per cell")->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--seed-base", sweep.seed_base, "first seed value");
  sweep_cmd->add_option("--objects", sweep.objects, "objects per scene")->check(CLI::Range(1, 3));
  sweep_cmd->add_option("--samples", sweep.estimate.samples, "hypotheses per iteration");
  sweep_cmd->add_option("--iters", sweep.estimate.iters, "iteration budget");
  sweep_cmd->add_option("--workers", sweep.estimate.workers, "scoring threads")
      ->check(CLI::PositiveNumber);
  sweep_cmd->add_option("--jitter", sweep.prior_overrides.jitter,
                        "center jitter sigma, fraction of box size");
  sweep_cmd->add_option("--drop", sweep.prior_overrides.drop, "true-box drop probability");
  sweep_cmd->add_option("--false-positives", sweep.prior_overrides.false_positives,
                        "spurious boxes per class");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth);
    if (prior_cmd->parsed()) return cmd_prior(prior);
    if (est_cmd->parsed()) return cmd_estimate(est);
    if (eval_cmd->parsed()) return cmd_eval(eval);
    if (sweep_cmd->parsed()) return cmd_sweep(sweep);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const posefit::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
