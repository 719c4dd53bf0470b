// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "lsir/core.hpp"
#include "lsir/facemodel.hpp"
#include "lsir/illum.hpp"
#include "lsir/reflectance.hpp"

namespace lsir {

// Monte Carlo estimator knobs. `width`/`height` set the output resolution
// (the camera intrinsics must agree when they carry a size); `env_rays`
// applies only to the infinite-light models (spherical harmonics and
// environment map), which are sampled with cosine-weighted hemisphere rays.
struct RenderSettings {
  int width = 128;
  int height = 128;
  int spp = 16;           // stratified camera samples per pixel
  int light_samples = 1;  // area-light samples per camera sample per light
  bool blur = true;       // 3x3 sigma=1 Gaussian on the synthesized image
  uint64_t seed = 0;
  int edge_samples = 0;  // silhouette samples; 0 means 4*width
  int env_rays = 16;     // hemisphere rays per camera sample (SH / envmap)
  Vec3 background = Vec3::Zero();

  void validate() const;
};

struct RenderOutput {
  Image rgb;   // W x H x 3, linear radiance, >= 0
  Image mask;  // W x H x 1, fraction of camera samples that hit the face
};

// Which parameter groups a gradient call differentiates. `albedo` covers
// the statistical color coefficients; `textures` the personalized maps.
struct GradientRequest {
  bool lights = false;
  bool shape = false;
  bool expression = false;
  bool albedo = false;
  bool pose = false;
  bool textures = false;

  bool any() const {
    return lights || shape || expression || albedo || pose || textures;
  }
  void validate() const;
};

// The full optimizable state: illumination, geometry coefficients,
// statistical albedo coefficients, and camera pose.
struct SceneParams {
  IlluminationModel illum = LightStage{};
  VecX alpha;  // identity shape coefficients
  VecX delta;  // expression blendshape coefficients
  VecX beta;   // diffuse albedo coefficients
  VecX gamma;  // specular albedo coefficients
  Mat3 R = Mat3::Identity();  // world-from-camera rotation
  Vec3 T = Vec3::Zero();      // camera position
};

// A renderable scene: the statistical model plus its parameter vector. When
// `textures` holds non-empty maps they replace the statistical per-vertex
// albedos (and the uniform `base_roughness`) during shading.
struct Scene {
  const MorphableModel* model = nullptr;
  SceneParams params;
  Camera camera;  // intrinsics; pose comes from params.R / params.T
  TextureSet textures;
  double base_roughness = 0.5;
  int fresnel_power = 1;

  bool use_textures() const { return textures.diffuse.width > 0; }
  Camera posed_camera() const;
  void validate() const;
};

// Camera with intrinsics rescaled to a new resolution (for pyramid fits).
Camera scaled_camera(const Camera& cam, int width, int height);

// ---------------------------------------------------------------------------
// Ray casting

struct RayHit {
  int tri = -1;
  double t = std::numeric_limits<double>::infinity();
  double u = 0.0, v = 0.0;  // barycentrics of vertices 1 and 2

  bool valid() const { return tri >= 0; }
};

// Binary BVH over triangle centroids (median split, longest axis).
struct Bvh {
  struct Node {
    Vec3 lo, hi;
    int32_t left = -1, right = -1;  // internal children
    int32_t first = 0;              // leaf: range into order
    int32_t count = 0;              // leaf if count > 0
  };
  std::vector<Node> nodes;
  std::vector<int32_t> order;
};

Bvh build_bvh(const std::vector<Vec3>& vertices,
              const std::vector<std::array<int, 3>>& triangles);

RayHit closest_hit(const Bvh& bvh, const std::vector<Vec3>& vertices,
                   const std::vector<std::array<int, 3>>& triangles,
                   const Vec3& orig, const Vec3& dir, double tmin,
                   double tmax);

bool any_hit(const Bvh& bvh, const std::vector<Vec3>& vertices,
             const std::vector<std::array<int, 3>>& triangles,
             const Vec3& orig, const Vec3& dir, double tmin, double tmax);

// ---------------------------------------------------------------------------
// Variance reduction

// 3x3 Gaussian (sigma = 1), normalized to sum 1, edge-clamped borders.
Image gaussian_smooth(const Image& img);

// Transpose of gaussian_smooth: pushes a gradient w.r.t. the smoothed image
// back to a gradient w.r.t. its input.
Image gaussian_smooth_adjoint(const Image& grad);

// ---------------------------------------------------------------------------
// Rendering

RenderOutput render(const Scene& scene, const RenderSettings& settings);

// Scalar objective over the (smoothed) synthesized image, with its
// per-pixel derivative. The mask passes coverage through to the loss.
struct ImageLoss {
  std::function<double(const Image& rgb, const Image& mask)> value;
  std::function<Image(const Image& rgb, const Image& mask)> grad;
};

// Gradients keyed by group name: "lights" (layout set by the illumination
// variant), "shape", "expression", "albedo" ([beta; gamma]), "pose"
// ([axis-angle increment; translation]), and "diffuse_map"/"specular_map"/
// "roughness_map" for texture mode. Only requested groups appear.
struct RenderGradients {
  RenderOutput output;
  double loss = 0.0;
  std::map<std::string, VecX> groups;
};

// Interior-path gradients: every arithmetic step of shading is recorded on
// the tape; shadow-ray visibility and hit selection are held fixed, so
// silhouette motion is invisible here (see edge_sample_gradients).
RenderGradients render_with_gradients(const Scene& scene,
                                      const RenderSettings& settings,
                                      const ImageLoss& loss,
                                      const GradientRequest& request);

// Boundary term the interior pass cannot see: Monte Carlo integral over
// camera-space silhouette edges of the radiance jump times the edge's
// screen velocity w.r.t. the geometric parameters. Returns corrections for
// the requested geometric groups only (pose / shape / expression).
std::map<std::string, VecX> edge_sample_gradients(
    const Scene& scene, const RenderSettings& settings, const ImageLoss& loss,
    const GradientRequest& request);

// ---------------------------------------------------------------------------
// Parameter packing (shared with the optimizer)

// Flat layout per variant: LightStage packs [d, a, u, v, r, g, b] per
// light; FixedLightStage packs [r, g, b]; SH packs its coefficients; the
// environment map packs its texels.
VecX illum_pack(const IlluminationModel& illum);
void illum_unpack(const VecX& flat, IlluminationModel* illum);

}  // namespace lsir
