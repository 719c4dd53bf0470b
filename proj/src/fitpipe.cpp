// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsir/fitpipe.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <utility>
#include <variant>

#include "json.hpp"
#include "lsir/imageio.hpp"
#include "lsir/reflectance.hpp"
#include "lsir/rng.hpp"

namespace lsir {

namespace {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

double elapsed_seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// ---------------------------------------------------------------------------
// Gradient accumulation

void add_grad(std::map<std::string, VecX>* acc, const std::string& name,
              const VecX& g, double scale = 1.0) {
  if (g.size() == 0) return;
  auto it = acc->find(name);
  if (it == acc->end()) {
    (*acc)[name] = scale * g;
    return;
  }
  if (it->second.size() != g.size())
    throw ValidationError("gradient size mismatch for group '" + name + "'");
  it->second += scale * g;
}

void merge_grads(std::map<std::string, VecX>* acc,
                 const std::map<std::string, VecX>& in, double scale = 1.0) {
  for (const auto& [name, g] : in) add_grad(acc, name, g, scale);
}

// ---------------------------------------------------------------------------
// Group bookkeeping shared by the stages

struct Optimizer {
  std::vector<ParamGroup> groups;
  std::vector<AdamState> states;

  ParamGroup& add(const std::string& name, VecX initial) {
    ParamGroup g;
    g.name = name;
    g.lr = default_learning_rate(name);
    g.values = std::move(initial);
    groups.push_back(std::move(g));
    states.emplace_back();
    return groups.back();
  }

  ParamGroup& find(const std::string& name) {
    for (auto& g : groups)
      if (g.name == name) return g;
    throw ValidationError("no parameter group '" + name + "'");
  }

  void step(const std::map<std::string, VecX>& grads) {
    for (size_t i = 0; i < groups.size(); ++i) {
      auto it = grads.find(groups[i].name);
      if (it == grads.end()) continue;
      adam_step(states[i], groups[i], it->second);
    }
  }
};

VecX pack_pose(const SceneParams& params) {
  VecX pose = VecX::Zero(6);
  pose.segment<3>(3) = params.T;
  return pose;
}

// The pose group carries [axis-angle increment; translation]. The
// increment w lives in the tangent space at the current rotation, so after
// a step we fold it into R and reset the slots for the next iteration.
void apply_pose(ParamGroup* pose, SceneParams* params) {
  Vec3 w = pose->values.segment<3>(0);
  params->R = orthonormalize(params->R * rodrigues<double>(Vec3(w)));
  params->T = pose->values.segment<3>(3);
  pose->values.segment<3>(0).setZero();
}

// Unpacking sanitizes (distance/area/intensity floors, anchor clamping);
// re-packing keeps the optimizer state on the sanitized point.
void apply_lights(ParamGroup* lights, SceneParams* params) {
  illum_unpack(lights->values, &params->illum);
  lights->values = illum_pack(params->illum);
}

std::string format_terms(const std::string& stage, int iteration,
                         std::initializer_list<double> values) {
  if (stage.empty() || stage.find(',') != std::string::npos)
    throw ValidationError("stage label must be non-empty and comma-free");
  std::ostringstream os;
  os << stage << ',' << iteration << std::setprecision(12);
  for (double v : values) os << ',' << v;
  return os.str();
}

// Landmark-loss value at the scene's current parameters (used for traces).
double posed_landmark_value(const Scene& scene, const LandmarkSet& landmarks) {
  FaceMesh mesh =
      apply_expression(synth_identity(*scene.model, scene.params.alpha),
                       *scene.model, scene.params.delta);
  return landmark_loss(mesh.vertices, scene.posed_camera(), landmarks);
}

void check_observations(const Scene& scene, const Observations& obs,
                        const FitConfig& config) {
  obs.landmarks.validate(*scene.model, scene.camera.width,
                         scene.camera.height);
  if (obs.image.width != config.settings.width ||
      obs.image.height != config.settings.height || obs.image.channels != 3)
    throw ValidationError("observed image does not match the render size");
}

Image uniform_map(int size, double value) {
  Image img(size, size, 1);
  std::fill(img.data.begin(), img.data.end(), value);
  return img;
}

VecX image_as_vector(const Image& img) {
  return Eigen::Map<const VecX>(img.data.data(),
                                static_cast<Eigen::Index>(img.data.size()));
}

// Copies optimizer values into a texture map, projecting onto the
// renderer's valid texel range and writing the projection back so the
// optimizer state stays on the feasible point (the soft box penalties keep
// values off the walls; the projection guarantees validity after an
// overshoot).
void vector_into_image(ParamGroup* group, Image* img, double lo, double hi) {
  VecX& values = group->values;
  if (values.size() != static_cast<Eigen::Index>(img->data.size()))
    throw ValidationError("texture parameter count changed during the fit");
  values = values.cwiseMax(lo).cwiseMin(hi);
  std::copy(values.data(), values.data() + values.size(), img->data.begin());
}

json vecx_to_json(const VecX& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

}  // namespace

// ---------------------------------------------------------------------------
// Adam

void ParamGroup::validate() const {
  if (name.empty()) throw ValidationError("parameter group needs a name");
  if (!(lr > 0.0) || !std::isfinite(lr))
    throw ValidationError("learning rate must be positive and finite");
}

double default_learning_rate(const std::string& group) {
  if (group == "lights") return 1e-3;
  if (group == "albedo") return 0.02;
  if (group == "shape") return 0.01;
  if (group == "pose" || group == "expression") return 1e-3;
  if (group == "diffuse_map" || group == "specular_map" ||
      group == "roughness_map")
    return 0.005;
  throw ValidationError("unknown parameter group '" + group + "'");
}

void adam_step(AdamState& state, ParamGroup& group, const VecX& grad) {
  group.validate();
  const Eigen::Index n = group.values.size();
  if (grad.size() != n)
    throw ValidationError("gradient/parameter shape mismatch in group '" +
                          group.name + "'");
  if (!grad.allFinite())
    throw NumericalError("non-finite gradient in group '" + group.name + "'");
  if (state.step == 0 && state.m.size() == 0) {
    state.m = VecX::Zero(n);
    state.v = VecX::Zero(n);
  }
  if (state.m.size() != n || state.v.size() != n)
    throw ValidationError("Adam moment shape mismatch in group '" +
                          group.name + "'");
  state.step += 1;
  state.m = kAdamBeta1 * state.m + (1.0 - kAdamBeta1) * grad;
  state.v = kAdamBeta2 * state.v + (1.0 - kAdamBeta2) * grad.cwiseAbs2();
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(kAdamBeta1, t);
  const double bias2 = 1.0 - std::pow(kAdamBeta2, t);
  VecX update =
      (state.m.array() / bias1) /
      ((state.v.array() / bias2).sqrt() + kAdamEps);
  group.values -= group.lr * update.matrix();
}

// ---------------------------------------------------------------------------
// Configuration

void FitConfig::validate() const {
  if (init_iterations < 0 || stage1_iterations < 0 || stage2_iterations < 0)
    throw ValidationError("iteration budgets must be non-negative");
  if (texture_size <= 0) throw ValidationError("texture size must be > 0");
  weights.validate();
  settings.validate();
}

std::string trace_csv_header() {
  return "stage,iteration,photo,landmark,stat_prior,light_prior,symmetry,"
         "consistency,smoothness,box,total";
}

std::string trace_row(const std::string& stage, int iteration,
                      const Stage1Terms& t) {
  return format_terms(stage, iteration,
                      {t.photo, t.landmark, t.stat_prior, t.light_prior, 0.0,
                       0.0, 0.0, t.box, t.total});
}

std::string trace_row(const std::string& stage, int iteration,
                      const Stage2Terms& t) {
  return format_terms(stage, iteration,
                      {t.photo, t.landmark, 0.0, 0.0, t.symmetry,
                       t.consistency, t.smoothness, t.box, t.total});
}

// ---------------------------------------------------------------------------
// Landmark-only initialization

StageResult fit_init(const Scene& scene, const LandmarkSet& landmarks,
                     const FitConfig& config) {
  const auto start = Clock::now();
  config.validate();
  scene.validate();
  landmarks.validate(*scene.model, scene.camera.width, scene.camera.height);

  StageResult result;
  result.params = scene.params;

  // The visible detections must span a genuinely 2-D patch; a line (or
  // fewer than three points) leaves the pose unconstrained.
  Vec2 mean = Vec2::Zero();
  int visible = 0;
  for (const Landmark& lm : landmarks.points) {
    if (!lm.visible) continue;
    mean += lm.pixel;
    ++visible;
  }
  if (visible < 3) {
    result.ok = false;
    result.failure = "degenerate landmarks: fewer than three visible points";
    result.seconds = elapsed_seconds(start);
    return result;
  }
  mean /= visible;
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const Landmark& lm : landmarks.points) {
    if (!lm.visible) continue;
    Vec2 d = lm.pixel - mean;
    cov += d * d.transpose();
  }
  cov /= visible;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(cov);
  const double lo = eig.eigenvalues()[0];
  const double hi = eig.eigenvalues()[1];
  if (lo <= 1e-8 * std::max(1.0, hi)) {
    result.ok = false;
    result.failure = "degenerate landmarks: visible points are collinear";
    result.seconds = elapsed_seconds(start);
    return result;
  }

  Scene work = scene;
  Optimizer opt;
  opt.add("pose", pack_pose(work.params));
  opt.add("expression", work.params.delta);

  GradientRequest request;
  request.pose = true;
  request.expression = true;

  for (int iter = 0; iter < config.init_iterations; ++iter) {
    Stage1Terms terms;
    terms.landmark =
        config.weights.landmark * posed_landmark_value(work, landmarks);
    terms.box = stage1_box(work.params, config.weights);
    terms.total = terms.landmark + terms.box;
    result.trace.push_back(trace_row("init", iter, terms));

    std::map<std::string, VecX> grads;
    merge_grads(&grads, landmark_gradients(work, landmarks, request),
                config.weights.landmark);
    auto box = stage1_box_gradients(work.params, config.weights);
    add_grad(&grads, "expression", box.at("expression"));
    opt.step(grads);

    apply_pose(&opt.find("pose"), &work.params);
    work.params.delta = opt.find("expression").values;
  }

  result.params = work.params;
  result.seconds = elapsed_seconds(start);
  return result;
}

// ---------------------------------------------------------------------------
// Stage I: statistical coefficients, lights, pose

StageResult fit_stage1(const Scene& scene, const Observations& obs,
                       const FitConfig& config) {
  const auto start = Clock::now();
  config.validate();
  scene.validate();
  if (scene.use_textures())
    throw ValidationError(
        "the statistical stage runs without personalized textures");
  check_observations(scene, obs, config);

  StageResult result;
  Scene work = scene;
  const MorphableModel& model = *work.model;

  Optimizer opt;
  opt.add("lights", illum_pack(work.params.illum));
  opt.add("shape", work.params.alpha);
  opt.add("expression", work.params.delta);
  VecX albedo(model.kr() + model.kb());
  albedo.head(model.kr()) = work.params.beta;
  albedo.tail(model.kb()) = work.params.gamma;
  opt.add("albedo", std::move(albedo));
  opt.add("pose", pack_pose(work.params));

  GradientRequest interior;
  interior.lights = true;
  interior.shape = true;
  interior.expression = true;
  interior.albedo = true;
  interior.pose = true;
  GradientRequest geometric;
  geometric.shape = true;
  geometric.expression = true;
  geometric.pose = true;

  const ImageLoss photo = photo_loss_fn(obs.image, obs.mask);

  for (int iter = 0; iter < config.stage1_iterations; ++iter) {
    RenderSettings settings = config.settings;
    settings.seed = mix64(config.seed, 2 * static_cast<uint64_t>(iter));

    RenderGradients rg =
        render_with_gradients(work, settings, photo, interior);
    result.trace.push_back(trace_row(
        "stage1", iter,
        stage1_objective(work, rg.output, obs, config.weights)));

    std::map<std::string, VecX> grads;
    merge_grads(&grads, rg.groups);
    merge_grads(&grads,
                edge_sample_gradients(work, settings, photo, geometric));
    merge_grads(&grads, landmark_gradients(work, obs.landmarks, geometric),
                config.weights.landmark);
    merge_grads(&grads,
                stat_prior_gradients(work.params, model, config.weights));
    add_grad(&grads, "lights",
             light_prior_grad(work.params.illum, config.weights));
    merge_grads(&grads, stage1_box_gradients(work.params, config.weights));
    opt.step(grads);

    apply_lights(&opt.find("lights"), &work.params);
    work.params.alpha = opt.find("shape").values;
    work.params.delta = opt.find("expression").values;
    const VecX& ab = opt.find("albedo").values;
    work.params.beta = ab.head(model.kr());
    work.params.gamma = ab.tail(model.kb());
    apply_pose(&opt.find("pose"), &work.params);
  }

  result.params = work.params;
  result.textures.diffuse = statistical_diffuse_texture(
      model, work.params.beta, config.texture_size);
  result.textures.specular = statistical_specular_texture(
      model, work.params.gamma, config.texture_size);
  result.textures.roughness =
      uniform_map(config.texture_size, work.base_roughness);
  result.seconds = elapsed_seconds(start);
  return result;
}

// ---------------------------------------------------------------------------
// Stage II: personalized texture maps

StageResult fit_stage2(const Scene& scene, const StageResult& stage1,
                       const Observations& obs, const FitConfig& config) {
  const auto start = Clock::now();
  config.validate();
  if (stage1.textures.diffuse.width == 0)
    throw ValidationError("the Stage I result carries no baked textures");
  stage1.textures.validate();

  Scene work = scene;
  work.params = stage1.params;
  work.textures = stage1.textures;
  work.validate();
  check_observations(work, obs, config);
  const TextureSet& reference = stage1.textures;
  const LossWeights& w = config.weights;

  StageResult result;
  result.params = work.params;

  Optimizer opt;
  opt.add("diffuse_map", image_as_vector(work.textures.diffuse));
  opt.add("specular_map", image_as_vector(work.textures.specular));
  opt.add("roughness_map", image_as_vector(work.textures.roughness));

  GradientRequest request;
  request.textures = true;

  const ImageLoss photo = photo_loss_fn(obs.image, obs.mask);

  for (int iter = 0; iter < config.stage2_iterations; ++iter) {
    RenderSettings settings = config.settings;
    settings.seed = mix64(config.seed, 2 * static_cast<uint64_t>(iter) + 1);

    RenderGradients rg =
        render_with_gradients(work, settings, photo, request);
    result.trace.push_back(trace_row(
        "stage2", iter,
        stage2_objective(work, rg.output, obs, reference, w)));

    const TextureSet& tex = work.textures;
    std::map<std::string, VecX> grads;
    merge_grads(&grads, rg.groups);
    add_grad(&grads, "diffuse_map", symmetry_loss_grad(tex.diffuse),
             w.symmetry);
    add_grad(&grads, "diffuse_map",
             consistency_loss_grad(tex.diffuse, reference.diffuse),
             w.consistency);
    add_grad(&grads, "diffuse_map", smoothness_loss_grad(tex.diffuse),
             w.smoothness);
    add_grad(&grads, "specular_map", symmetry_loss_grad(tex.specular),
             w.symmetry);
    add_grad(&grads, "specular_map",
             consistency_loss_grad(tex.specular, reference.specular),
             w.consistency);
    add_grad(&grads, "specular_map", smoothness_loss_grad(tex.specular),
             w.smoothness);
    add_grad(&grads, "specular_map", texture_box_grad(tex.specular, w.box));
    add_grad(&grads, "roughness_map", smoothness_loss_grad(tex.roughness),
             w.smoothness);
    add_grad(&grads, "roughness_map",
             texture_box_grad(tex.roughness, w.box));
    opt.step(grads);

    vector_into_image(&opt.find("diffuse_map"), &work.textures.diffuse, 0.0,
                      1.0);
    vector_into_image(&opt.find("specular_map"), &work.textures.specular,
                      0.0, 1.0);
    vector_into_image(&opt.find("roughness_map"), &work.textures.roughness,
                      kMinRoughness, 1.0);
  }

  result.params = work.params;
  result.textures = work.textures;
  result.seconds = elapsed_seconds(start);
  return result;
}

// ---------------------------------------------------------------------------
// Full pipeline

FitReport fit(const Observations& obs, const MorphableModel& model,
              const Camera& camera, const FitConfig& config) {
  config.validate();
  model.validate();
  camera.validate();

  FitReport report;

  Scene scene;
  scene.model = &model;
  scene.camera = camera;
  scene.params.illum = make_default_stage();
  scene.params.alpha = VecX::Zero(model.ks());
  scene.params.delta = VecX::Zero(model.ke());
  scene.params.beta = VecX::Zero(model.kr());
  scene.params.gamma = VecX::Zero(model.kb());

  // Back the camera off along -z far enough to frame the mean face.
  const int n = model.vertex_count();
  Vec3 centroid = Vec3::Zero();
  for (int i = 0; i < n; ++i)
    centroid += Vec3(model.mean_shape.segment<3>(3 * i));
  centroid /= std::max(1, n);
  double radius = 1e-3;
  for (int i = 0; i < n; ++i) {
    Vec3 v = model.mean_shape.segment<3>(3 * i);
    radius = std::max(radius, (v - centroid).norm());
  }
  scene.params.T =
      Vec3(centroid.x(), centroid.y(), centroid.z() - 4.0 * radius);
  report.params = scene.params;

  StageResult init = fit_init(scene, obs.landmarks, config);
  report.trace.insert(report.trace.end(), init.trace.begin(),
                      init.trace.end());
  report.init_seconds = init.seconds;
  if (!init.ok) {
    report.failure_stage = "init";
    report.failure = init.failure;
    return report;
  }
  scene.params = init.params;
  report.params = init.params;

  StageResult stage1;
  try {
    stage1 = fit_stage1(scene, obs, config);
  } catch (const std::exception& e) {
    report.failure_stage = "stage1";
    report.failure = e.what();
    return report;
  }
  report.trace.insert(report.trace.end(), stage1.trace.begin(),
                      stage1.trace.end());
  report.stage1_seconds = stage1.seconds;
  report.params = stage1.params;
  report.statistical = stage1.textures;
  scene.params = stage1.params;

  StageResult stage2;
  try {
    stage2 = fit_stage2(scene, stage1, obs, config);
  } catch (const std::exception& e) {
    report.failure_stage = "stage2";
    report.failure = e.what();
    return report;
  }
  report.trace.insert(report.trace.end(), stage2.trace.begin(),
                      stage2.trace.end());
  report.stage2_seconds = stage2.seconds;
  report.params = stage2.params;
  report.textures = stage2.textures;

  if (const auto* stage = std::get_if<LightStage>(&report.params.illum)) {
    report.envmap = stage_to_envmap(*stage, 128, 64);
  } else if (const auto* env =
                 std::get_if<EnvironmentMap>(&report.params.illum)) {
    report.envmap = env->map;
  } else if (const auto* fixed =
                 std::get_if<FixedLightStage>(&report.params.illum)) {
    report.envmap = stage_to_envmap(fixed->stage, 128, 64);
  }

  report.ok = true;
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

void write_fit_report(const FitReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(dir) / name,
                      std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot write " + name + " in " + dir);
    return out;
  };

  json params;
  params["illumination"] = json::parse(illum_to_json(report.params.illum));
  params["alpha"] = vecx_to_json(report.params.alpha);
  params["delta"] = vecx_to_json(report.params.delta);
  params["beta"] = vecx_to_json(report.params.beta);
  params["gamma"] = vecx_to_json(report.params.gamma);
  json rows = json::array();
  for (int r = 0; r < 3; ++r)
    rows.push_back(json::array({report.params.R(r, 0), report.params.R(r, 1),
                                report.params.R(r, 2)}));
  params["R"] = rows;
  params["T"] = json::array(
      {report.params.T.x(), report.params.T.y(), report.params.T.z()});
  {
    auto out = open("params.json");
    out << params.dump(2) << '\n';
  }

  auto dump_map = [&](const Image& img, const std::string& base,
                      bool gamma_encode) {
    if (img.width == 0) return;
    write_png16((fs::path(dir) / (base + ".png")).string(), img,
                gamma_encode);
    write_pfm((fs::path(dir) / (base + ".pfm")).string(), img);
  };
  dump_map(report.textures.diffuse, "diffuse", true);
  dump_map(report.textures.specular, "specular", true);
  dump_map(report.textures.roughness, "roughness", false);
  if (report.envmap.width > 0)
    write_png16((fs::path(dir) / "envmap.png").string(), report.envmap,
                true);

  {
    auto out = open("trace.csv");
    out << trace_csv_header() << '\n';
    for (const std::string& row : report.trace) out << row << '\n';
  }

  json summary;
  summary["ok"] = report.ok;
  summary["failure_stage"] = report.failure_stage;
  summary["failure"] = report.failure;
  summary["init_seconds"] = report.init_seconds;
  summary["stage1_seconds"] = report.stage1_seconds;
  summary["stage2_seconds"] = report.stage2_seconds;
  summary["trace_rows"] = report.trace.size();
  {
    auto out = open("report.json");
    out << summary.dump(2) << '\n';
  }
}

}  // namespace lsir
