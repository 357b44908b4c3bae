// Iterated likelihood weighting: annealing schedule, initialization,
// systematic resampling, annealed diffusion, and full filter runs.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <vector>

#include "posefit/filter.hpp"
#include "posefit/metrics.hpp"
#include "posefit/synth.hpp"

using namespace posefit;
using Catch::Approx;

namespace {

CameraIntrinsics cam96() {
  CameraIntrinsics k;
  k.fx = k.fy = 250.0;
  k.cx = k.cy = 47.5;
  k.width = k.height = 96;
  return k;
}

// Close-range single-object scene used by the end-to-end runs.
SceneGenConfig close_scene_config() {
  SceneGenConfig cfg;
  cfg.object_count = 1;
  cfg.with_table = false;
  cfg.intrinsics = cam96();
  cfg.placement_x = 0.04;
  cfg.placement_y = 0.03;
  cfg.plane_y = 0.03;
  cfg.plane_z = 0.62;
  return cfg;
}

bool same_box(const BoundingBox& a, const BoundingBox& b) {
  return a.u_min == b.u_min && a.v_min == b.v_min && a.u_max == b.u_max && a.v_max == b.v_max &&
         a.confidence == b.confidence;
}

bool same_report(const EstimateReport& a, const EstimateReport& b) {
  return a.object_class == b.object_class && a.best_pose == b.best_pose &&
         same_box(a.best_box, b.best_box) && a.best_weight == b.best_weight &&
         a.breakdown == b.breakdown && a.iterations_run == b.iterations_run &&
         a.converged == b.converged && a.present == b.present &&
         a.weight_trace == b.weight_trace && a.failed == b.failed;
}

}  // namespace

TEST_CASE("annealing schedule values", "[filter]") {
  // Full noise below the knee, polynomial decay above it.
  CHECK(anneal_factor(0.0) == 1.0);
  CHECK(anneal_factor(0.5) == 1.0);
  CHECK(anneal_factor(0.6) == 1.0);  // ((1-0.6)/0.4)^5
  CHECK(std::abs(anneal_factor(0.7) - 0.2373046875) < 1e-12);    // (0.75)^5
  CHECK(std::abs(anneal_factor(0.75) - 0.095367431640625) < 1e-12);  // (0.625)^5
  CHECK(std::abs(anneal_factor(0.9) - 0.0009765625) < 1e-12);    // (0.25)^5
  CHECK(anneal_factor(1.0) == 0.0);
  // Out-of-range weights clamp.
  CHECK(anneal_factor(-0.3) == 1.0);
  CHECK(anneal_factor(1.7) == 0.0);
  // Alternative knee/power.
  CHECK(anneal_factor(0.5, 0.4, 2.0) == Approx((0.5 / 0.6) * (0.5 / 0.6)).margin(1e-15));
}

TEST_CASE("config validation", "[filter]") {
  FilterConfig c;
  CHECK_NOTHROW(c.validate());
  c.num_samples = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = {};
  c.convergence_threshold = 1.2;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = {};
  c.anneal_knee = 1.0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = {};
  c.workspace_z_min = 3.0;  // above z max
  CHECK_THROWS_AS(c.validate(), InputError);
  c = {};
  c.workers = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c = {};
  c.weights.alpha_r = 0.9;
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("initialization samples inside the box frustum and depth band", "[filter]") {
  CameraIntrinsics k = cam96();
  // Observation: depth plane patch at z = 0.62 under the left box only.
  OrganizedCloud obs(k);
  for (int v = 20; v <= 50; ++v)
    for (int u = 10; u <= 40; ++u) obs.set(u, v, backproject(k, u, v, 0.62));

  std::vector<BoundingBox> boxes = {{10.0, 20.0, 40.0, 50.0, 0.9},   // over the patch
                                    {60.0, 60.0, 90.0, 90.0, 0.1}};  // over void
  FilterConfig config;
  config.num_samples = 2000;
  config.rng_seed = 31;
  double diameter = 0.13;
  std::vector<Hypothesis> samples = init_samples(boxes, obs, diameter, config);
  REQUIRE(samples.size() == 2000);

  int in_a = 0, in_b = 0;
  for (const Hypothesis& h : samples) {
    CHECK(h.weight == 0.0);
    auto px = project(k, h.pose.translation);
    REQUIRE(px.has_value());
    double z = h.pose.translation.z;
    if (boxes[0].contains(px->u, px->v) && same_box(h.box, boxes[0])) {
      ++in_a;
      // Depth band: observed range padded by the diameter.
      CHECK(z >= 0.62 - diameter - 1e-9);
      CHECK(z <= 0.62 + diameter + 1e-9);
    } else {
      REQUIRE(boxes[1].contains(px->u, px->v));
      REQUIRE(same_box(h.box, boxes[1]));
      ++in_b;
      // No depth under this box: the whole workspace is fair game.
      CHECK(z >= 0.3 - 1e-9);
      CHECK(z <= 2.5 + 1e-9);
    }
  }
  // Box choice is confidence-proportional (0.9 : 0.1).
  CHECK(in_a > 1700);
  CHECK(in_b > 100);

  std::vector<Hypothesis> again = init_samples(boxes, obs, diameter, config);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(again[i].pose == samples[i].pose);
    CHECK(same_box(again[i].box, samples[i].box));
  }

  CHECK_THROWS_AS(init_samples({}, obs, diameter, config), InputError);
}

TEST_CASE("all-zero confidences fall back to a uniform box choice", "[filter]") {
  CameraIntrinsics k = cam96();
  OrganizedCloud obs(k);
  std::vector<BoundingBox> boxes = {{10.0, 20.0, 40.0, 50.0, 0.0}, {60.0, 60.0, 90.0, 90.0, 0.0}};
  FilterConfig config;
  config.num_samples = 1000;
  config.rng_seed = 8;
  std::vector<Hypothesis> samples = init_samples(boxes, obs, 0.13, config);
  int in_a = 0;
  for (const Hypothesis& h : samples) in_a += same_box(h.box, boxes[0]);
  CHECK(in_a > 400);
  CHECK(in_a < 600);
}

TEST_CASE("box depth range falls back to the workspace", "[filter]") {
  CameraIntrinsics k = cam96();
  OrganizedCloud obs(k);
  for (int v = 40; v <= 45; ++v)
    for (int u = 40; u <= 45; ++u) obs.set(u, v, backproject(k, u, v, 0.8));

  BoundingBox covering{35.0, 35.0, 50.0, 50.0, 1.0};
  detail::BoxDepthRange r = detail::box_depth_range(covering, obs, 0.1, 0.3, 2.5);
  CHECK(r.lo == Approx(0.7));
  CHECK(r.hi == Approx(0.9));

  BoundingBox void_box{5.0, 5.0, 20.0, 20.0, 1.0};
  detail::BoxDepthRange w = detail::box_depth_range(void_box, obs, 0.1, 0.3, 2.5);
  CHECK(w.lo == 0.3);
  CHECK(w.hi == 2.5);

  // Clipping to the workspace.
  detail::BoxDepthRange clipped = detail::box_depth_range(covering, obs, 1.0, 0.3, 1.2);
  CHECK(clipped.lo == 0.3);
  CHECK(clipped.hi == 1.2);
}

TEST_CASE("systematic resampling hand traces", "[filter]") {
  auto mk = [](double w) {
    Hypothesis h;
    h.weight = w;
    h.pose.translation.x = w;  // tag to identify provenance
    return h;
  };

  SECTION("equal weights reproduce the set exactly once each") {
    std::vector<Hypothesis> in = {mk(0.25), mk(0.25), mk(0.25), mk(0.25)};
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(seed, {1});
      bool degenerate = true;
      std::vector<Hypothesis> out = resample(in, 4, rng, &degenerate);
      CHECK_FALSE(degenerate);
      REQUIRE(out.size() == 4);
      for (int i = 0; i < 4; ++i) CHECK(out[i].pose.translation.x == in[i].pose.translation.x);
    }
  }

  SECTION("zero-weight samples are never selected") {
    std::vector<Hypothesis> in = {mk(0.0), mk(0.0), mk(1.0), mk(0.0)};
    Rng rng(3, {1});
    std::vector<Hypothesis> out = resample(in, 8, rng);
    for (const Hypothesis& h : out) CHECK(h.pose.translation.x == 1.0);
  }

  SECTION("2:1 weights give 2:1 multiplicities at any phase") {
    std::vector<Hypothesis> in = {mk(2.0), mk(1.0)};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed, {2});
      std::vector<Hypothesis> out = resample(in, 3, rng);
      int first = 0;
      for (const Hypothesis& h : out) first += h.pose.translation.x == 2.0;
      CHECK(first == 2);
    }
  }

  SECTION("all-zero weights degrade to round robin") {
    std::vector<Hypothesis> in = {mk(0.0), mk(0.0), mk(0.0)};
    in[0].pose.translation.y = 10;
    in[1].pose.translation.y = 20;
    in[2].pose.translation.y = 30;
    Rng rng(4, {1});
    bool degenerate = false;
    std::vector<Hypothesis> out = resample(in, 5, rng, &degenerate);
    CHECK(degenerate);
    REQUIRE(out.size() == 5);
    CHECK(out[0].pose.translation.y == 10);
    CHECK(out[1].pose.translation.y == 20);
    CHECK(out[2].pose.translation.y == 30);
    CHECK(out[3].pose.translation.y == 10);
    CHECK(out[4].pose.translation.y == 20);
  }

  SECTION("empty input throws") {
    Rng rng(0, {1});
    std::vector<Hypothesis> none;
    CHECK_THROWS_AS(resample(none, 4, rng), std::invalid_argument);
  }

  SECTION("resampling consumes exactly one uniform") {
    std::vector<Hypothesis> in = {mk(1.0), mk(1.0)};
    Rng a(9, {5});
    resample(in, 2, a);
    Rng b(9, {5});
    b.uniform();
    CHECK(a.next() == b.next());
  }
}

TEST_CASE("diffusion with zero noise scale is a no-op", "[filter]") {
  CameraIntrinsics k = cam96();
  FilterConfig config;
  config.rng_seed = 5;
  OrganizedCloud obs(k);
  std::vector<BoundingBox> boxes = {{20.0, 20.0, 70.0, 70.0, 1.0}};
  config.num_samples = 16;
  std::vector<Hypothesis> samples = init_samples(boxes, obs, 0.13, config);
  std::vector<Hypothesis> before = samples;
  diffuse(samples, 0.0, config, k, 0.3, 2.5, 1);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(samples[i].pose == before[i].pose);
    CHECK(same_box(samples[i].box, before[i].box));
  }
}

TEST_CASE("diffusion is deterministic in (seed, iteration, index)", "[filter]") {
  CameraIntrinsics k = cam96();
  FilterConfig config;
  config.rng_seed = 5;
  config.num_samples = 32;
  OrganizedCloud obs(k);
  std::vector<BoundingBox> boxes = {{20.0, 20.0, 70.0, 70.0, 1.0}};
  std::vector<Hypothesis> before = init_samples(boxes, obs, 0.13, config);
  std::vector<Hypothesis> a = before;
  std::vector<Hypothesis> b = before;
  std::vector<Hypothesis> c = before;
  diffuse(a, 0.8, config, k, 0.3, 2.5, 3);
  diffuse(b, 0.8, config, k, 0.3, 2.5, 3);
  diffuse(c, 0.8, config, k, 0.3, 2.5, 4);
  bool any_moved = false, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].pose == b[i].pose);
    CHECK(same_box(a[i].box, b[i].box));
    if (!(a[i].pose == c[i].pose)) differs = true;
    if (!(a[i].pose.translation == before[i].pose.translation)) any_moved = true;
  }
  CHECK(any_moved);
  CHECK(differs);
}

TEST_CASE("diffusion keeps samples in the depth band and the frame", "[filter]") {
  CameraIntrinsics k = cam96();
  FilterConfig config;
  config.rng_seed = 17;
  config.sigma_t0 = 0.5;  // violent kicks so clamps trigger constantly
  config.box_diffusion_frac = 0.5;
  double z_lo = 0.6, z_hi = 0.8;

  std::vector<Hypothesis> samples(64);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].pose.translation = {0.0, 0.0, 0.7};
    samples[i].pose.rotation = Rotation::identity();
    samples[i].box = {30.0, 30.0, 60.0, 60.0, 1.0};
  }
  for (int iter = 1; iter <= 20; ++iter) diffuse(samples, 1.0, config, k, z_lo, z_hi, iter);

  for (const Hypothesis& h : samples) {
    CHECK(h.pose.translation.z >= z_lo);
    CHECK(h.pose.translation.z <= z_hi);
    auto px = project(k, h.pose.translation);
    REQUIRE(px.has_value());
    CHECK(px->u >= config.image_margin_px);
    CHECK(px->u <= k.width - 1.0 - config.image_margin_px);
    CHECK(px->v >= config.image_margin_px);
    CHECK(px->v <= k.height - 1.0 - config.image_margin_px);
    CHECK_NOTHROW(h.box.validate(k.width, k.height));
    CHECK(h.pose.rotation.angle() > 0.0);  // rotation still perturbs
  }
}

TEST_CASE("filter converges on a pinned noiseless scene", "[filter]") {
  // Self-generated cylinder scene with the exact ground-truth box as prior.
  SceneSpec spec = generate_scene(close_scene_config(), 1000);
  REQUIRE(spec.objects.size() == 1);
  const SceneObject& obj = spec.objects[0];
  REQUIRE(obj.class_name == "cylinder");
  OrganizedCloud obs = render_scene(spec);

  DetectionPrior prior;
  prior.width = 96;
  prior.height = 96;
  prior.detections[obj.class_name] = {gt_box_from_pose(obj.mesh, obj.pose, spec.intrinsics)};

  FilterConfig config;
  config.num_samples = 256;
  config.max_iterations = 400;
  config.rng_seed = 7000;
  config.workers = 8;
  config.feature_pixel_window = 2;
  config.weights = {0.1, 0.1, 0.5, 0.15, 0.15};

  EstimateReport rep = run_filter(obj.class_name, obj.mesh, prior, obs, config);
  CHECK(rep.converged);
  CHECK(rep.present);
  CHECK_FALSE(rep.failed);
  CHECK(rep.best_weight >= 0.9);
  CHECK(rep.iterations_run == 138);  // deterministic to the iteration
  CHECK(adds_error(obj.mesh, obj.pose, rep.best_pose) < 0.005);

  // Trace: one entry per scoring pass, monotone non-decreasing (all-time best).
  REQUIRE(rep.weight_trace.size() == static_cast<std::size_t>(rep.iterations_run) + 1);
  for (std::size_t i = 1; i < rep.weight_trace.size(); ++i)
    CHECK(rep.weight_trace[i] >= rep.weight_trace[i - 1]);
  CHECK(rep.weight_trace.back() == rep.best_weight);
  CHECK(rep.breakdown.total == rep.best_weight);
}

TEST_CASE("querying an empty scene stays below the presence bar", "[filter]") {
  CameraIntrinsics k = cam96();
  OrganizedCloud obs(k);  // nothing observed anywhere
  TriangleMesh mesh = make_primitive(PrimitiveKind::kBox, {0.07, 0.05, 0.10});
  DetectionPrior prior;
  prior.width = 96;
  prior.height = 96;
  prior.detections["box"] = {{30.0, 30.0, 65.0, 65.0, 1.0}};

  FilterConfig config;
  config.num_samples = 64;
  config.max_iterations = 30;
  config.rng_seed = 3;
  config.workers = 4;
  config.feature_pixel_window = 2;
  config.weights = {0.1, 0.1, 0.5, 0.15, 0.15};

  EstimateReport rep = run_filter("box", mesh, prior, obs, config);
  CHECK_FALSE(rep.converged);
  CHECK_FALSE(rep.present);
  CHECK(rep.iterations_run == 30);  // budget exhausted without convergence
  // No observed point can be an inlier and no observed feature can match, so
  // the weight is capped by alpha_box + alpha_e + alpha_p.
  CHECK(rep.best_weight <= 0.4 + 1e-12);
}

TEST_CASE("report is identical across worker counts", "[filter]") {
  SceneSpec spec = generate_scene(close_scene_config(), 1001);
  const SceneObject& obj = spec.objects[0];
  OrganizedCloud obs = render_scene(spec);
  DetectionPrior prior;
  prior.width = 96;
  prior.height = 96;
  prior.detections[obj.class_name] = {gt_box_from_pose(obj.mesh, obj.pose, spec.intrinsics)};

  FilterConfig config;
  config.num_samples = 64;
  config.max_iterations = 12;
  config.rng_seed = 77;
  config.feature_pixel_window = 2;
  config.weights = {0.1, 0.1, 0.5, 0.15, 0.15};

  config.workers = 1;
  EstimateReport one = run_filter(obj.class_name, obj.mesh, prior, obs, config);
  config.workers = 4;
  EstimateReport four = run_filter(obj.class_name, obj.mesh, prior, obs, config);
  config.workers = 8;
  EstimateReport eight = run_filter(obj.class_name, obj.mesh, prior, obs, config);
  CHECK(same_report(one, four));
  CHECK(same_report(one, eight));
}

TEST_CASE("max_iterations zero scores the prior draw only", "[filter]") {
  CameraIntrinsics k = cam96();
  OrganizedCloud obs(k);
  TriangleMesh mesh = make_primitive(PrimitiveKind::kBox, {0.07, 0.05, 0.10});
  DetectionPrior prior;
  prior.width = 96;
  prior.height = 96;
  prior.detections["box"] = {{30.0, 30.0, 65.0, 65.0, 0.5}};
  FilterConfig config;
  config.num_samples = 16;
  config.max_iterations = 0;
  EstimateReport rep = run_filter("box", mesh, prior, obs, config);
  CHECK(rep.iterations_run == 0);
  CHECK(rep.weight_trace.size() == 1);
}

TEST_CASE("observer sees every scoring pass", "[filter]") {
  CameraIntrinsics k = cam96();
  OrganizedCloud obs(k);
  TriangleMesh mesh = make_primitive(PrimitiveKind::kBox, {0.07, 0.05, 0.10});
  DetectionPrior prior;
  prior.width = 96;
  prior.height = 96;
  prior.detections["box"] = {{30.0, 30.0, 65.0, 65.0, 1.0}};
  FilterConfig config;
  config.num_samples = 8;
  config.max_iterations = 5;

  std::vector<int> seen;
  std::vector<double> weights;
  EstimateReport rep = run_filter("box", mesh, prior, obs, config,
                                  [&](int iteration, const Hypothesis& best) {
                                    seen.push_back(iteration);
                                    weights.push_back(best.weight);
                                  });
  REQUIRE(seen.size() == static_cast<std::size_t>(rep.iterations_run) + 1);
  for (std::size_t i = 0; i < seen.size(); ++i) {
    CHECK(seen[i] == static_cast<int>(i));
    CHECK(weights[i] == rep.weight_trace[i]);
  }
}

TEST_CASE("filter rejects mismatched inputs", "[filter]") {
  CameraIntrinsics k = cam96();
  OrganizedCloud obs(k);
  TriangleMesh mesh = make_primitive(PrimitiveKind::kBox, {0.07, 0.05, 0.10});
  DetectionPrior prior;
  prior.width = 160;  // wrong size
  prior.height = 120;
  prior.detections["box"] = {{30.0, 30.0, 65.0, 65.0, 1.0}};
  FilterConfig config;
  config.num_samples = 4;
  CHECK_THROWS_AS(run_filter("box", mesh, prior, obs, config), InputError);

  prior.width = 96;
  prior.height = 96;
  CHECK_THROWS_AS(run_filter("cylinder", mesh, prior, obs, config), InputError);
}

TEST_CASE("scene runs isolate per-class failures", "[filter]") {
  SceneSpec spec = generate_scene(close_scene_config(), 1002);
  const SceneObject& obj = spec.objects[0];
  OrganizedCloud obs = render_scene(spec);
  DetectionPrior prior;
  prior.width = 96;
  prior.height = 96;
  prior.detections[obj.class_name] = {gt_box_from_pose(obj.mesh, obj.pose, spec.intrinsics)};

  FilterConfig config;
  config.num_samples = 32;
  config.max_iterations = 5;
  config.rng_seed = 50;
  std::map<std::string, TriangleMesh> meshes = {{obj.class_name, obj.mesh}};

  // "ghost" has no mesh and no detections: its report fails, the real class
  // is untouched and equal to a solo run (per-class seeds are name-derived).
  std::vector<EstimateReport> both = run_scene({obj.class_name, "ghost"}, meshes, prior, obs, config);
  REQUIRE(both.size() == 2);
  CHECK_FALSE(both[0].failed);
  CHECK(both[1].failed);
  CHECK_FALSE(both[1].error.empty());

  std::vector<EstimateReport> solo = run_scene({obj.class_name}, meshes, prior, obs, config);
  REQUIRE(solo.size() == 1);
  CHECK(same_report(both[0], solo[0]));

  CHECK_THROWS_AS(run_scene({"box", "box"}, meshes, prior, obs, config), InputError);
}
