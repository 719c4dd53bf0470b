// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <string>
#include <vector>

#include "lsir/core.hpp"
#include "lsir/facemodel.hpp"
#include "lsir/illum.hpp"
#include "lsir/reflectance.hpp"
#include "lsir/tracer.hpp"

namespace lsir {

// Relative weight of every objective term. The data terms, priors, and
// texture regularizers are all mean-normalized where they aggregate over
// pixels or texels, so these defaults stay meaningful across resolutions.
struct LossWeights {
  double landmark = 1.0;          // squared-pixel landmark term
  double shape_prior = 0.0025;    // identity coefficients
  double diffuse_prior = 0.0025;  // statistical diffuse albedo coefficients
  double spec_prior = 0.0025;     // statistical specular albedo coefficients
  double light_prior = 0.01;      // pull stage intensities toward their mean
  double symmetry = 0.3;          // texture horizontal-mirror term
  double consistency = 0.3;       // texture chromaticity anchor term
  double smoothness = 0.0002;     // texture neighbor-difference term
  double box = 10.0;              // stiffness of every soft box penalty

  void validate() const;  // all weights >= 0
};

// The fixed facial-landmark convention: detectors emit exactly 68 points.
inline constexpr int kLandmarkCount = 68;

struct Landmark {
  int vertex = -1;            // index into the face model's vertex list
  Vec2 pixel = Vec2::Zero();  // observed position, pixels
  double confidence = 1.0;    // detector confidence in [0, 1]
  bool visible = true;        // occluded detections carry no constraint
};

// One detection set. validate() enforces the 68-point convention, vertex
// ids within the model, confidences in [0, 1], and - when an image size is
// given - visible pixels inside the frame.
struct LandmarkSet {
  std::vector<Landmark> points;

  void validate(const MorphableModel& model, int width = 0,
                int height = 0) const;
};

// The measured inputs of a fit: one photograph in linear RGB, an optional
// single-channel validity mask (empty means everywhere valid), and the
// detected landmarks.
struct Observations {
  Image image;
  Image mask;
  LandmarkSet landmarks;
};

// ---------------------------------------------------------------------------
// Data terms

// Mean absolute difference per covered pixel: a pixel counts when the
// synthesis covers it (coverage >= 0.5) and the observation mask keeps it
// (mask >= 0.5 wherever a mask is present). Returns 0 when nothing is
// covered. Throws on dimension mismatches.
double photo_loss(const RenderOutput& synth, const Image& real,
                  const Image& mask);

// The same objective packaged for gradient rendering. The returned
// gradient image is the L1 subgradient sign(synth - real) / count on
// selected pixels and zero elsewhere. Arguments are captured by value.
ImageLoss photo_loss_fn(Image real, Image mask);

// Confidence-weighted sum of squared pixel distances between projected
// landmark vertices and their detections. Invisible landmarks and points
// behind the camera contribute nothing.
double landmark_loss(const std::vector<Vec3>& world_vertices,
                     const Camera& cam, const LandmarkSet& landmarks);

// Derivative of landmark_loss at the scene's parameters for the requested
// geometric groups, keyed like the renderer's gradients: "pose" is
// [axis-angle increment; translation], "shape" and "expression" are the
// coefficient vectors. Throws unless at least one of those is requested.
std::map<std::string, VecX> landmark_gradients(const Scene& scene,
                                               const LandmarkSet& landmarks,
                                               const GradientRequest& request);

// ---------------------------------------------------------------------------
// Priors

// Weighted squared coefficient-to-sigma ratios of the statistical model:
//   shape_prior * sum (alpha/sigma)^2 + diffuse_prior * sum (beta/sigma)^2
//   + spec_prior * sum (gamma/sigma)^2.
// `squared = false` switches to the signed linear sums (kept for
// comparison; sign-indefinite, so not used by the fitting stages).
double stat_prior(const SceneParams& params, const MorphableModel& model,
                  const LossWeights& weights, bool squared = true);

// d(stat_prior)/d{alpha, [beta; gamma]}, keyed "shape" and "albedo".
std::map<std::string, VecX> stat_prior_gradients(const SceneParams& params,
                                                 const MorphableModel& model,
                                                 const LossWeights& weights);

// light_prior * sum_j |I_j - mean(I)|^2 over the stage lights, pulling the
// stage toward uniform illumination. Zero for the infinite-light models.
double light_prior(const IlluminationModel& illum, const LossWeights& weights);

// Gradient of light_prior in the illumination's flat pack layout (zeros on
// the geometric light parameters and for the infinite-light models).
VecX light_prior_grad(const IlluminationModel& illum,
                      const LossWeights& weights);

// ---------------------------------------------------------------------------
// Soft box penalties

// k * (max(0, lo - value)^2 + max(0, value - hi)^2). One-sided bounds use
// +-infinity. Zero, with zero gradient, strictly inside the box.
double box_penalty(double value, double lo, double hi, double k);
double box_penalty_grad(double value, double lo, double hi, double k);

// Soft feasibility of the Stage I parameter set: expression coefficients
// in [0, 1]; for stage illumination additionally light distance and area
// above their floors, area at most 1, intensities >= 0, and anchor
// barycentrics inside their margins.
double stage1_box(const SceneParams& params, const LossWeights& weights);

// Gradients of stage1_box, keyed "expression" and (for stage variants)
// "lights" in the pack layout.
std::map<std::string, VecX> stage1_box_gradients(const SceneParams& params,
                                                 const LossWeights& weights);

// Mean per-entry soft [0, 1] penalty over a texture, and its gradient in
// Image::data layout.
double texture_box(const Image& tex, double k);
VecX texture_box_grad(const Image& tex, double k);

// ---------------------------------------------------------------------------
// Texture regularizers (all mean-normalized; gradients in Image::data
// layout)

// Mean |T - mirror(T)| over all entries, mirroring left-right in UV space.
// Requires a square texture.
double symmetry_loss(const Image& tex);
VecX symmetry_loss_grad(const Image& tex);

// Mean per-texel L1 distance between chromaticities kappa(p) =
// p / (p_r + p_g + p_b + 1e-4), anchoring the personalized texture's hue
// to its statistical reference while leaving brightness free.
double consistency_loss(const Image& personal, const Image& statistical);
VecX consistency_loss_grad(const Image& personal, const Image& statistical);

// Mean squared difference between 4-neighbors (each unordered pair counted
// once via right/down offsets).
double smoothness_loss(const Image& tex);
VecX smoothness_loss_grad(const Image& tex);

// ---------------------------------------------------------------------------
// Stage objectives

// Each field holds that term's weighted contribution, so total is their
// exact sum.
struct Stage1Terms {
  double photo = 0.0;
  double landmark = 0.0;
  double stat_prior = 0.0;
  double light_prior = 0.0;
  double box = 0.0;
  double total = 0.0;
};

// Stage I: photometric + landmark data terms over the statistical
// parameters, plus the coefficient and light priors and the box penalties
// on expressions and stage lights.
Stage1Terms stage1_objective(const Scene& scene, const RenderOutput& synth,
                             const Observations& obs,
                             const LossWeights& weights);

struct Stage2Terms {
  double photo = 0.0;
  double landmark = 0.0;
  double symmetry = 0.0;
  double consistency = 0.0;
  double smoothness = 0.0;
  double box = 0.0;
  double total = 0.0;
};

// Stage II: the same data terms over the personalized textures, plus
// symmetry (diffuse + specular), chromaticity consistency against the
// Stage I reference textures, smoothness (all three maps), and [0, 1]
// boxes on the specular and roughness maps. Requires texture mode.
Stage2Terms stage2_objective(const Scene& scene, const RenderOutput& synth,
                             const Observations& obs,
                             const TextureSet& reference,
                             const LossWeights& weights);

// CSV streaming of optimization traces: a header line and one row per
// evaluation, "iteration,<terms...>,total".
std::string stage1_csv_header();
std::string csv_row(int iteration, const Stage1Terms& terms);
std::string stage2_csv_header();
std::string csv_row(int iteration, const Stage2Terms& terms);

}  // namespace lsir
