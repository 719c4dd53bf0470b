// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsir/objective.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <variant>

#include "lsir/ad.hpp"

namespace lsir {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Floors matching the renderer's light sanitation, so the soft boxes
// activate exactly where hard clamping would otherwise kick in.
constexpr double kMinLightDistance = 1e-3;
constexpr double kMinLightArea = 1e-4;
constexpr double kBaryMargin = 0.01;
constexpr double kBaryMax = 0.98;

constexpr double kChromaEps = 1e-4;

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Shared accumulation for photo_loss and its ImageLoss packaging: mean L1
// over selected pixels; optionally writes the subgradient into `grad`.
double photo_eval(const Image& rgb, const Image& coverage, const Image& real,
                  const Image& mask, Image* grad) {
  if (!rgb.same_shape(real))
    throw ValidationError("photo loss: image dimensions differ");
  if (coverage.width != rgb.width || coverage.height != rgb.height ||
      coverage.channels != 1)
    throw ValidationError("photo loss: coverage mask has the wrong shape");
  if (!mask.data.empty() &&
      (mask.width != rgb.width || mask.height != rgb.height))
    throw ValidationError("photo loss: observation mask has the wrong shape");

  long count = 0;
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      if (coverage.at(x, y, 0) < 0.5) continue;
      if (!mask.data.empty() && mask.at(x, y, 0) < 0.5) continue;
      ++count;
    }
  if (grad) *grad = Image(rgb.width, rgb.height, rgb.channels);
  if (count == 0) return 0.0;

  double sum = 0.0;
  for (int y = 0; y < rgb.height; ++y)
    for (int x = 0; x < rgb.width; ++x) {
      if (coverage.at(x, y, 0) < 0.5) continue;
      if (!mask.data.empty() && mask.at(x, y, 0) < 0.5) continue;
      for (int c = 0; c < rgb.channels; ++c) {
        double diff = rgb.at(x, y, c) - real.at(x, y, c);
        sum += std::abs(diff);
        if (grad) grad->at(x, y, c) = sign(diff) / count;
      }
    }
  return sum / count;
}

// Intensity prior over a shared light list; `stride`/`offset` describe
// where each light's rgb lives in the flat pack layout.
double intensity_prior(const std::vector<AreaLight>& lights, double weight,
                       int stride, int offset, VecX* grad) {
  if (lights.empty()) return 0.0;
  Vec3 mean = Vec3::Zero();
  for (const AreaLight& l : lights) mean += l.i;
  mean /= static_cast<double>(lights.size());
  double sum = 0.0;
  for (size_t j = 0; j < lights.size(); ++j) {
    Vec3 d = lights[j].i - mean;
    sum += d.squaredNorm();
    if (grad)
      for (int c = 0; c < 3; ++c)
        (*grad)[static_cast<int>(j) * stride + offset + c] =
            weight * 2.0 * d[c];
  }
  return weight * sum;
}

// Box terms for one stage light, written into the [d, a, u, v, r, g, b]
// pack slots when `grad` is given.
double light_box(const AreaLight& l, double k, double* grad7) {
  double u = l.p.x(), v = l.p.y();
  double sum = box_penalty(l.d, kMinLightDistance, kInf, k) +
               box_penalty(l.a, kMinLightArea, 1.0, k) +
               box_penalty(u, kBaryMargin, kBaryMax, k) +
               box_penalty(v, kBaryMargin, kBaryMax, k) +
               box_penalty(u + v, -kInf, kBaryMax, k);
  for (int c = 0; c < 3; ++c) sum += box_penalty(l.i[c], 0.0, kInf, k);
  if (grad7) {
    double edge = box_penalty_grad(u + v, -kInf, kBaryMax, k);
    grad7[0] = box_penalty_grad(l.d, kMinLightDistance, kInf, k);
    grad7[1] = box_penalty_grad(l.a, kMinLightArea, 1.0, k);
    grad7[2] = box_penalty_grad(u, kBaryMargin, kBaryMax, k) + edge;
    grad7[3] = box_penalty_grad(v, kBaryMargin, kBaryMax, k) + edge;
    for (int c = 0; c < 3; ++c)
      grad7[4 + c] = box_penalty_grad(l.i[c], 0.0, kInf, k);
  }
  return sum;
}

void check_prior_sigmas(const VecX& coeffs, const VecX& sigma,
                        const char* name) {
  if (coeffs.size() > sigma.size())
    throw ValidationError(std::string("prior: more ") + name +
                          " coefficients than sigmas");
  for (int k = 0; k < coeffs.size(); ++k)
    if (sigma[k] <= 0.0)
      throw ValidationError(std::string("prior: non-positive ") + name +
                            " sigma");
}

struct TapeScope {
  Tape tape;
  TapeScope() { Tape::active() = &tape; }
  ~TapeScope() { Tape::active() = nullptr; }
};

}  // namespace

void LossWeights::validate() const {
  const double all[] = {landmark,    shape_prior, diffuse_prior,
                        spec_prior,  light_prior, symmetry,
                        consistency, smoothness,  box};
  for (double w : all)
    if (!(w >= 0.0)) throw ValidationError("loss weights must be >= 0");
}

void LandmarkSet::validate(const MorphableModel& model, int width,
                           int height) const {
  if (points.size() != static_cast<size_t>(kLandmarkCount))
    throw ValidationError("landmark set must hold exactly 68 points");
  int n_vertices = static_cast<int>(model.mean_shape.size() / 3);
  for (const Landmark& lm : points) {
    if (lm.vertex < 0 || lm.vertex >= n_vertices)
      throw ValidationError("landmark vertex id out of range");
    if (lm.confidence < 0.0 || lm.confidence > 1.0)
      throw ValidationError("landmark confidence outside [0, 1]");
    if (lm.visible && width > 0 && height > 0 &&
        (lm.pixel.x() < 0.0 || lm.pixel.x() >= width || lm.pixel.y() < 0.0 ||
         lm.pixel.y() >= height))
      throw ValidationError("visible landmark outside the image");
  }
}

// ---------------------------------------------------------------------------
// Data terms

double photo_loss(const RenderOutput& synth, const Image& real,
                  const Image& mask) {
  return photo_eval(synth.rgb, synth.mask, real, mask, nullptr);
}

ImageLoss photo_loss_fn(Image real, Image mask) {
  ImageLoss loss;
  loss.value = [real, mask](const Image& rgb, const Image& coverage) {
    return photo_eval(rgb, coverage, real, mask, nullptr);
  };
  loss.grad = [real, mask](const Image& rgb, const Image& coverage) {
    Image g;
    photo_eval(rgb, coverage, real, mask, &g);
    return g;
  };
  return loss;
}

double landmark_loss(const std::vector<Vec3>& world_vertices,
                     const Camera& cam, const LandmarkSet& landmarks) {
  double sum = 0.0;
  for (const Landmark& lm : landmarks.points) {
    if (!lm.visible || lm.confidence <= 0.0) continue;
    if (lm.vertex < 0 ||
        lm.vertex >= static_cast<int>(world_vertices.size()))
      throw ValidationError("landmark vertex id out of range");
    Vec3 vc = camera_transform(cam, world_vertices[lm.vertex]);
    if (vc.z() <= 1e-9) continue;  // behind the camera: no constraint
    Vec2 p = project(cam, vc);
    sum += lm.confidence * (p - lm.pixel).squaredNorm();
  }
  return sum;
}

std::map<std::string, VecX> landmark_gradients(const Scene& scene,
                                               const LandmarkSet& landmarks,
                                               const GradientRequest& request) {
  if (!request.pose && !request.shape && !request.expression)
    throw ValidationError(
        "landmark gradients need a geometric group (pose, shape, or "
        "expression)");
  if (!scene.model) throw ValidationError("scene has no model");
  const MorphableModel& model = *scene.model;
  const SceneParams& params = scene.params;
  int n_shape = static_cast<int>(params.alpha.size());
  int n_expr = static_cast<int>(params.delta.size());

  TapeScope scope;
  std::vector<int32_t> idx_pose, idx_shape, idx_expr;
  auto leaf = [](double v, bool enabled, std::vector<int32_t>* idx) {
    if (!enabled) return Var(v);
    Var x = Var::leaf(v);
    idx->push_back(x.idx);
    return x;
  };

  Vector3<Var> w, T;
  for (int k = 0; k < 3; ++k) {
    w[k] = leaf(0.0, request.pose, &idx_pose);  // rotation increment
  }
  for (int k = 0; k < 3; ++k)
    T[k] = leaf(params.T[k], request.pose, &idx_pose);
  Eigen::Matrix<Var, 3, 3> R0;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) R0(r, c) = Var(params.R(r, c));
  Eigen::Matrix<Var, 3, 3> R = R0 * rodrigues<Var>(w);

  std::vector<Var> alpha(n_shape), delta(n_expr);
  for (int k = 0; k < n_shape; ++k)
    alpha[k] = leaf(params.alpha[k], request.shape, &idx_shape);
  for (int k = 0; k < n_expr; ++k)
    delta[k] = leaf(params.delta[k], request.expression, &idx_expr);

  int n_vertices = static_cast<int>(model.mean_shape.size() / 3);
  Var total(0.0);
  for (const Landmark& lm : landmarks.points) {
    if (!lm.visible || lm.confidence <= 0.0) continue;
    if (lm.vertex < 0 || lm.vertex >= n_vertices)
      throw ValidationError("landmark vertex id out of range");
    Vector3<Var> v;
    for (int a = 0; a < 3; ++a) {
      int row = 3 * lm.vertex + a;
      Var coord(model.mean_shape[row]);
      for (int k = 0; k < n_shape; ++k) {
        double b = model.shape_basis(row, k);
        if (b != 0.0) coord = coord + alpha[k] * Var(b);
      }
      for (int k = 0; k < n_expr; ++k) {
        double b = model.expr_basis(row, k);
        if (b != 0.0) coord = coord + delta[k] * Var(b);
      }
      v[a] = coord;
    }
    Vector3<Var> vc = camera_transform<Var>(R, T, v);
    if (value(vc.z()) <= 1e-9) continue;
    Vector2<Var> p = project<Var>(scene.camera, vc);
    Var dx = p.x() - Var(lm.pixel.x());
    Var dy = p.y() - Var(lm.pixel.y());
    total = total + Var(lm.confidence) * (dx * dx + dy * dy);
  }

  std::vector<double> adj;
  if (total.idx >= 0) adj = scope.tape.gradient(total.idx);
  auto collect = [&adj](const std::vector<int32_t>& idx) {
    VecX g = VecX::Zero(static_cast<int>(idx.size()));
    if (!adj.empty())
      for (size_t k = 0; k < idx.size(); ++k) g[static_cast<int>(k)] = adj[idx[k]];
    return g;
  };

  std::map<std::string, VecX> out;
  if (request.pose) out["pose"] = collect(idx_pose);
  if (request.shape) out["shape"] = collect(idx_shape);
  if (request.expression) out["expression"] = collect(idx_expr);
  return out;
}

// ---------------------------------------------------------------------------
// Priors

double stat_prior(const SceneParams& params, const MorphableModel& model,
                  const LossWeights& weights, bool squared) {
  check_prior_sigmas(params.alpha, model.shape_sigma, "shape");
  check_prior_sigmas(params.beta, model.diffuse_sigma, "diffuse");
  check_prior_sigmas(params.gamma, model.spec_sigma, "specular");
  auto term = [squared](const VecX& x, const VecX& sigma) {
    double sum = 0.0;
    for (int k = 0; k < x.size(); ++k) {
      double r = x[k] / sigma[k];
      sum += squared ? r * r : r;
    }
    return sum;
  };
  return weights.shape_prior * term(params.alpha, model.shape_sigma) +
         weights.diffuse_prior * term(params.beta, model.diffuse_sigma) +
         weights.spec_prior * term(params.gamma, model.spec_sigma);
}

std::map<std::string, VecX> stat_prior_gradients(const SceneParams& params,
                                                 const MorphableModel& model,
                                                 const LossWeights& weights) {
  check_prior_sigmas(params.alpha, model.shape_sigma, "shape");
  check_prior_sigmas(params.beta, model.diffuse_sigma, "diffuse");
  check_prior_sigmas(params.gamma, model.spec_sigma, "specular");
  auto grad = [](const VecX& x, const VecX& sigma, double w, VecX* out,
                 int offset) {
    for (int k = 0; k < x.size(); ++k)
      (*out)[offset + k] = 2.0 * w * x[k] / (sigma[k] * sigma[k]);
  };
  std::map<std::string, VecX> out;
  VecX shape = VecX::Zero(params.alpha.size());
  grad(params.alpha, model.shape_sigma, weights.shape_prior, &shape, 0);
  out["shape"] = shape;
  VecX albedo = VecX::Zero(params.beta.size() + params.gamma.size());
  grad(params.beta, model.diffuse_sigma, weights.diffuse_prior, &albedo, 0);
  grad(params.gamma, model.spec_sigma, weights.spec_prior, &albedo,
       static_cast<int>(params.beta.size()));
  out["albedo"] = albedo;
  return out;
}

double light_prior(const IlluminationModel& illum, const LossWeights& weights) {
  return std::visit(
      [&](const auto& m) -> double {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LightStage>)
          return intensity_prior(m.lights, weights.light_prior, 7, 4, nullptr);
        else if constexpr (std::is_same_v<M, FixedLightStage>)
          return intensity_prior(m.stage.lights, weights.light_prior, 3, 0,
                                 nullptr);
        else
          return 0.0;
      },
      illum);
}

VecX light_prior_grad(const IlluminationModel& illum,
                      const LossWeights& weights) {
  VecX grad = VecX::Zero(illum_pack(illum).size());
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LightStage>)
          intensity_prior(m.lights, weights.light_prior, 7, 4, &grad);
        else if constexpr (std::is_same_v<M, FixedLightStage>)
          intensity_prior(m.stage.lights, weights.light_prior, 3, 0, &grad);
      },
      illum);
  return grad;
}

// ---------------------------------------------------------------------------
// Soft box penalties

double box_penalty(double value, double lo, double hi, double k) {
  if (!(lo < hi)) throw ValidationError("box penalty needs lo < hi");
  double below = std::max(0.0, lo - value);
  double above = std::max(0.0, value - hi);
  return k * (below * below + above * above);
}

double box_penalty_grad(double value, double lo, double hi, double k) {
  if (!(lo < hi)) throw ValidationError("box penalty needs lo < hi");
  return 2.0 * k *
         (std::max(0.0, value - hi) - std::max(0.0, lo - value));
}

double stage1_box(const SceneParams& params, const LossWeights& weights) {
  double k = weights.box;
  double sum = 0.0;
  for (int e = 0; e < params.delta.size(); ++e)
    sum += box_penalty(params.delta[e], 0.0, 1.0, k);
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LightStage>) {
          for (const AreaLight& l : m.lights) sum += light_box(l, k, nullptr);
        } else if constexpr (std::is_same_v<M, FixedLightStage>) {
          for (const AreaLight& l : m.stage.lights)
            for (int c = 0; c < 3; ++c)
              sum += box_penalty(l.i[c], 0.0, kInf, k);
        }
      },
      params.illum);
  return sum;
}

std::map<std::string, VecX> stage1_box_gradients(const SceneParams& params,
                                                 const LossWeights& weights) {
  double k = weights.box;
  std::map<std::string, VecX> out;
  VecX expr = VecX::Zero(params.delta.size());
  for (int e = 0; e < params.delta.size(); ++e)
    expr[e] = box_penalty_grad(params.delta[e], 0.0, 1.0, k);
  out["expression"] = expr;

  VecX lights = VecX::Zero(illum_pack(params.illum).size());
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, LightStage>) {
          for (size_t j = 0; j < m.lights.size(); ++j)
            light_box(m.lights[j], k, lights.data() + 7 * j);
        } else if constexpr (std::is_same_v<M, FixedLightStage>) {
          for (size_t j = 0; j < m.stage.lights.size(); ++j)
            for (int c = 0; c < 3; ++c)
              lights[3 * j + c] =
                  box_penalty_grad(m.stage.lights[j].i[c], 0.0, kInf, k);
        }
      },
      params.illum);
  out["lights"] = lights;
  return out;
}

double texture_box(const Image& tex, double k) {
  if (tex.data.empty()) return 0.0;
  double sum = 0.0;
  for (double v : tex.data) sum += box_penalty(v, 0.0, 1.0, k);
  return sum / tex.data.size();
}

VecX texture_box_grad(const Image& tex, double k) {
  VecX grad = VecX::Zero(tex.data.size());
  if (tex.data.empty()) return grad;
  double inv = 1.0 / tex.data.size();
  for (size_t n = 0; n < tex.data.size(); ++n)
    grad[static_cast<int>(n)] =
        inv * box_penalty_grad(tex.data[n], 0.0, 1.0, k);
  return grad;
}

// ---------------------------------------------------------------------------
// Texture regularizers

double symmetry_loss(const Image& tex) {
  if (tex.width != tex.height)
    throw ValidationError("symmetry loss needs a square texture");
  if (tex.data.empty()) return 0.0;
  double sum = 0.0;
  for (int y = 0; y < tex.height; ++y)
    for (int x = 0; x < tex.width; ++x)
      for (int c = 0; c < tex.channels; ++c)
        sum += std::abs(tex.at(x, y, c) - tex.at(tex.width - 1 - x, y, c));
  return sum / tex.data.size();
}

VecX symmetry_loss_grad(const Image& tex) {
  if (tex.width != tex.height)
    throw ValidationError("symmetry loss needs a square texture");
  VecX grad = VecX::Zero(tex.data.size());
  if (tex.data.empty()) return grad;
  double inv = 2.0 / tex.data.size();
  size_t n = 0;
  for (int y = 0; y < tex.height; ++y)
    for (int x = 0; x < tex.width; ++x)
      for (int c = 0; c < tex.channels; ++c, ++n)
        grad[static_cast<int>(n)] =
            inv * sign(tex.at(x, y, c) - tex.at(tex.width - 1 - x, y, c));
  return grad;
}

namespace {

Vec3 chroma(const Image& img, int x, int y) {
  Vec3 p(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2));
  return p / (p.sum() + kChromaEps);
}

void check_chroma_pair(const Image& personal, const Image& statistical) {
  if (!personal.same_shape(statistical))
    throw ValidationError("consistency loss: texture resolutions differ");
  if (personal.channels != 3)
    throw ValidationError("consistency loss needs 3-channel textures");
}

}  // namespace

double consistency_loss(const Image& personal, const Image& statistical) {
  check_chroma_pair(personal, statistical);
  if (personal.data.empty()) return 0.0;
  double sum = 0.0;
  for (int y = 0; y < personal.height; ++y)
    for (int x = 0; x < personal.width; ++x)
      sum += (chroma(personal, x, y) - chroma(statistical, x, y))
                 .cwiseAbs()
                 .sum();
  long texels = static_cast<long>(personal.width) * personal.height;
  return sum / texels;
}

VecX consistency_loss_grad(const Image& personal, const Image& statistical) {
  check_chroma_pair(personal, statistical);
  VecX grad = VecX::Zero(personal.data.size());
  if (personal.data.empty()) return grad;
  long texels = static_cast<long>(personal.width) * personal.height;
  double inv = 1.0 / texels;
  for (int y = 0; y < personal.height; ++y)
    for (int x = 0; x < personal.width; ++x) {
      Vec3 p(personal.at(x, y, 0), personal.at(x, y, 1), personal.at(x, y, 2));
      double s = p.sum() + kChromaEps;
      Vec3 kp = p / s;
      Vec3 kq = chroma(statistical, x, y);
      size_t base = (static_cast<size_t>(y) * personal.width + x) * 3;
      for (int b = 0; b < 3; ++b) {
        double g = 0.0;
        for (int c = 0; c < 3; ++c) {
          double dk = ((c == b ? s : 0.0) - p[c]) / (s * s);
          g += sign(kp[c] - kq[c]) * dk;
        }
        grad[static_cast<int>(base + b)] = inv * g;
      }
    }
  return grad;
}

double smoothness_loss(const Image& tex) {
  long pairs = static_cast<long>(tex.width - 1) * tex.height +
               static_cast<long>(tex.width) * (tex.height - 1);
  if (pairs <= 0) return 0.0;
  double sum = 0.0;
  for (int y = 0; y < tex.height; ++y)
    for (int x = 0; x < tex.width; ++x)
      for (int c = 0; c < tex.channels; ++c) {
        double v = tex.at(x, y, c);
        if (x + 1 < tex.width) sum += sqr(tex.at(x + 1, y, c) - v);
        if (y + 1 < tex.height) sum += sqr(tex.at(x, y + 1, c) - v);
      }
  return sum / pairs;
}

VecX smoothness_loss_grad(const Image& tex) {
  VecX grad = VecX::Zero(tex.data.size());
  long pairs = static_cast<long>(tex.width - 1) * tex.height +
               static_cast<long>(tex.width) * (tex.height - 1);
  if (pairs <= 0) return grad;
  double inv = 2.0 / pairs;
  auto at = [&tex](int x, int y, int c) -> size_t {
    return (static_cast<size_t>(y) * tex.width + x) * tex.channels + c;
  };
  for (int y = 0; y < tex.height; ++y)
    for (int x = 0; x < tex.width; ++x)
      for (int c = 0; c < tex.channels; ++c) {
        double v = tex.at(x, y, c);
        if (x + 1 < tex.width) {
          double d = v - tex.at(x + 1, y, c);
          grad[static_cast<int>(at(x, y, c))] += inv * d;
          grad[static_cast<int>(at(x + 1, y, c))] -= inv * d;
        }
        if (y + 1 < tex.height) {
          double d = v - tex.at(x, y + 1, c);
          grad[static_cast<int>(at(x, y, c))] += inv * d;
          grad[static_cast<int>(at(x, y + 1, c))] -= inv * d;
        }
      }
  return grad;
}

// ---------------------------------------------------------------------------
// Stage objectives

namespace {

double posed_landmark_loss(const Scene& scene, const Observations& obs) {
  VecX e = synth_identity(*scene.model, scene.params.alpha);
  FaceMesh mesh = apply_expression(e, *scene.model, scene.params.delta);
  return landmark_loss(mesh.vertices, scene.posed_camera(), obs.landmarks);
}

}  // namespace

Stage1Terms stage1_objective(const Scene& scene, const RenderOutput& synth,
                             const Observations& obs,
                             const LossWeights& weights) {
  if (!scene.model) throw ValidationError("scene has no model");
  weights.validate();
  Stage1Terms t;
  t.photo = photo_loss(synth, obs.image, obs.mask);
  t.landmark = weights.landmark * posed_landmark_loss(scene, obs);
  t.stat_prior = stat_prior(scene.params, *scene.model, weights);
  t.light_prior = light_prior(scene.params.illum, weights);
  t.box = stage1_box(scene.params, weights);
  t.total = t.photo + t.landmark + t.stat_prior + t.light_prior + t.box;
  return t;
}

Stage2Terms stage2_objective(const Scene& scene, const RenderOutput& synth,
                             const Observations& obs,
                             const TextureSet& reference,
                             const LossWeights& weights) {
  if (!scene.model) throw ValidationError("scene has no model");
  if (!scene.use_textures())
    throw ValidationError("stage II objective needs texture mode");
  weights.validate();
  const TextureSet& tex = scene.textures;
  Stage2Terms t;
  t.photo = photo_loss(synth, obs.image, obs.mask);
  t.landmark = weights.landmark * posed_landmark_loss(scene, obs);
  t.symmetry = weights.symmetry *
               (symmetry_loss(tex.diffuse) + symmetry_loss(tex.specular));
  t.consistency =
      weights.consistency * (consistency_loss(tex.diffuse, reference.diffuse) +
                             consistency_loss(tex.specular, reference.specular));
  t.smoothness =
      weights.smoothness * (smoothness_loss(tex.diffuse) +
                            smoothness_loss(tex.specular) +
                            smoothness_loss(tex.roughness));
  t.box = texture_box(tex.specular, weights.box) +
          texture_box(tex.roughness, weights.box);
  t.total = t.photo + t.landmark + t.symmetry + t.consistency + t.smoothness +
            t.box;
  return t;
}

// ---------------------------------------------------------------------------
// Trace streaming

namespace {

std::string join_row(std::initializer_list<double> values, int iteration) {
  std::ostringstream os;
  os << iteration;
  os << std::setprecision(12);
  for (double v : values) os << ',' << v;
  return os.str();
}

}  // namespace

std::string stage1_csv_header() {
  return "iteration,photo,landmark,stat_prior,light_prior,box,total";
}

std::string csv_row(int iteration, const Stage1Terms& t) {
  return join_row(
      {t.photo, t.landmark, t.stat_prior, t.light_prior, t.box, t.total},
      iteration);
}

std::string stage2_csv_header() {
  return "iteration,photo,landmark,symmetry,consistency,smoothness,box,total";
}

std::string csv_row(int iteration, const Stage2Terms& t) {
  return join_row({t.photo, t.landmark, t.symmetry, t.consistency,
                   t.smoothness, t.box, t.total},
                  iteration);
}

}  // namespace lsir
