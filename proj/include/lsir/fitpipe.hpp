// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lsir/objective.hpp"
#include "lsir/tracer.hpp"

namespace lsir {

// ---------------------------------------------------------------------------
// Adam optimizer

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

// One optimizable parameter block with its own step size.
struct ParamGroup {
  std::string name;
  double lr = 1e-3;
  VecX values;

  void validate() const;  // non-empty name, lr > 0
};

// Step size per group name: lights 0.001, statistical albedo coefficients
// 0.02, identity shape 0.01, pose and expression blendshapes 0.001, and
// the personalized texture maps 0.005. Unknown names throw.
double default_learning_rate(const std::string& group);

// Per-group first/second moment estimates. Moments are sized on the first
// step and must keep the parameter shape afterwards.
struct AdamState {
  VecX m;
  VecX v;
  int64_t step = 0;
};

// One bias-corrected Adam update of `group.values` in place. Throws
// NumericalError (naming the group) when the gradient has a non-finite
// entry, ValidationError on shape mismatch.
void adam_step(AdamState& state, ParamGroup& group, const VecX& grad);

// ---------------------------------------------------------------------------
// Configuration and results

// Budgets, loss weights and estimator settings for a full fit. Zero
// iterations for a stage returns its initial state unchanged.
struct FitConfig {
  int init_iterations = 200;    // landmark-only pose/expression fit
  int stage1_iterations = 800;  // statistical coefficients + lights
  int stage2_iterations = 400;  // personalized texture maps
  LossWeights weights;
  RenderSettings settings;
  uint64_t seed = 0;
  int texture_size = 128;  // UV resolution of the baked and fitted maps

  void validate() const;
};

// Outcome of one optimization stage. `params` is the complete parameter
// state after the stage (untouched groups copied through). `textures` is
// empty after init, the statistical bake after Stage I, and the
// personalized maps after Stage II. `trace` holds one trace_row per
// iteration, evaluated at the pre-step state.
struct StageResult {
  bool ok = true;
  std::string failure;  // diagnostic, set when ok == false
  SceneParams params;
  TextureSet textures;
  std::vector<std::string> trace;
  double seconds = 0.0;
};

// Unified trace stream shared by every stage: a stage label plus every
// objective column, zero where a stage lacks the term.
std::string trace_csv_header();
std::string trace_row(const std::string& stage, int iteration,
                      const Stage1Terms& t);
std::string trace_row(const std::string& stage, int iteration,
                      const Stage2Terms& t);

// ---------------------------------------------------------------------------
// Stages

// Landmark-only estimate of camera pose and expression coefficients:
// minimizes the weighted landmark loss plus the expression box penalty
// over R, T and delta; every other parameter is untouched. Returns a
// failure report (never throws) when the visible landmarks are degenerate
// (fewer than three, or all collinear).
StageResult fit_init(const Scene& scene, const LandmarkSet& landmarks,
                     const FitConfig& config);

// Statistical stage: optimizes lights, identity, expression, albedo
// coefficients and pose against the Stage I objective with interior plus
// silhouette gradients. The scene must be in statistical (texture-free)
// mode. Returns the refined parameters and the statistical albedo maps
// rasterized at config.texture_size (uniform roughness), ready to seed
// Stage II. Optimizer aborts propagate as exceptions.
StageResult fit_stage1(const Scene& scene, const Observations& obs,
                       const FitConfig& config);

// Personalization stage: optimizes only the diffuse/specular/roughness
// maps, initialized from the Stage I bake, against the Stage II objective
// with stage1.textures as the consistency anchor. Geometry, pose and
// lights stay bit-identical to stage1.params.
StageResult fit_stage2(const Scene& scene, const StageResult& stage1,
                       const Observations& obs, const FitConfig& config);

// ---------------------------------------------------------------------------
// Full pipeline

struct FitReport {
  bool ok = false;
  std::string failure_stage;  // "init" / "stage1" / "stage2" when not ok
  std::string failure;        // diagnostic from the failing stage
  SceneParams params;
  TextureSet statistical;  // Stage I bake (the Stage II consistency anchor)
  TextureSet textures;     // final personalized maps
  Image envmap;            // final illumination as a lat-long radiance map
  std::vector<std::string> trace;  // all stages, trace_csv_header order
  double init_seconds = 0.0;
  double stage1_seconds = 0.0;
  double stage2_seconds = 0.0;
};

// init -> Stage I -> Stage II from a fresh default parameter state (default
// light stage, zero coefficients, camera backed away to frame the mean
// face). A failing stage yields a partial report naming it; completed
// stages keep their results. Deterministic given config.seed.
FitReport fit(const Observations& obs, const MorphableModel& model,
              const Camera& camera, const FitConfig& config);

// Writes params.json, diffuse/specular/roughness textures (PNG + PFM),
// envmap.png, trace.csv and report.json into `dir` (created if missing).
void write_fit_report(const FitReport& report, const std::string& dir);

}  // namespace lsir
