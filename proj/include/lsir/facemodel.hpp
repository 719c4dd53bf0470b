// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

#include "lsir/ad.hpp"
#include "lsir/core.hpp"

namespace lsir {

// Linear statistical face model: identity/expression geometry bases and
// diffuse/specular per-vertex color bases around their means, plus mesh
// topology, UV chart and the 68 landmark vertices.
struct MorphableModel {
  VecX mean_shape;             // 3N, xyz interleaved
  MatX shape_basis;            // 3N x K_s
  VecX shape_sigma;            // K_s, > 0
  MatX expr_basis;             // 3N x K_e
  VecX diffuse_mean;           // 3N, rgb interleaved, in [0,1]
  MatX diffuse_basis;          // 3N x K_r
  VecX diffuse_sigma;          // K_r, > 0
  VecX spec_mean;              // 3N
  MatX spec_basis;             // 3N x K_b
  VecX spec_sigma;             // K_b, > 0
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec2> uv;        // per vertex, in [0,1]^2
  std::vector<int> landmark_vertex_ids;  // exactly 68

  int vertex_count() const { return static_cast<int>(mean_shape.size() / 3); }
  int ks() const { return static_cast<int>(shape_basis.cols()); }
  int ke() const { return static_cast<int>(expr_basis.cols()); }
  int kr() const { return static_cast<int>(diffuse_basis.cols()); }
  int kb() const { return static_cast<int>(spec_basis.cols()); }

  void validate() const;  // throws ValidationError on any broken invariant
};

// Pinhole camera. Camera space looks down +z; pixels have origin at the
// top-left corner with y growing downward. Intrinsics are fixed inputs;
// only R and T are ever optimized.
struct Camera {
  Mat3 R = Mat3::Identity();  // world-from-camera rotation, det +1
  Vec3 T = Vec3::Zero();      // camera position in world units
  double focal = 500.0;       // pixels
  double cx = 0.0, cy = 0.0;  // principal point, pixels
  int width = 0, height = 0;

  void validate() const;
};

struct FaceMesh {
  std::vector<Vec3> vertices;
  std::vector<Vec3> normals;  // unit, area-weighted
  std::vector<std::array<int, 3>> triangles;
  std::vector<Vec2> uv;
};

// e = a_s + shape_basis * alpha
VecX synth_identity(const MorphableModel& model, const VecX& alpha);

// vertices = e + expr_basis * delta, normals recomputed
FaceMesh apply_expression(const VecX& e, const MorphableModel& model,
                          const VecX& delta);

// Area-weighted average of incident face normals, normalized. Throws on
// degenerate triangles and isolated vertices.
std::vector<Vec3> vertex_normals(
    const std::vector<Vec3>& vertices,
    const std::vector<std::array<int, 3>>& triangles);

// Gamma(v) = R^-1 (v - T). Templated so the pose can carry derivative
// scalars during optimization.
template <class S>
Vector3<S> camera_transform(const Eigen::Matrix<S, 3, 3>& R,
                            const Vector3<S>& T, const Vector3<S>& v) {
  return R.transpose() * (v - T);
}

inline Vec3 camera_transform(const Camera& cam, const Vec3& v) {
  return camera_transform<double>(cam.R, cam.T, v);
}

// Perspective projection of a camera-space point to pixel coordinates.
template <class S>
Vector2<S> project(const Camera& cam, const Vector3<S>& v_cam) {
  if (value(v_cam.z()) <= 1e-9)
    throw ValidationError("projected point is behind the camera");
  S inv_z = S(1.0) / v_cam.z();
  return Vector2<S>(S(cam.focal) * v_cam.x() * inv_z + S(cam.cx),
                    S(cam.focal) * v_cam.y() * inv_z + S(cam.cy));
}

// Rodrigues: axis-angle (magnitude = radians) to rotation matrix. Templated
// so a local rotation increment can be differentiated.
template <class S>
Eigen::Matrix<S, 3, 3> rodrigues(const Vector3<S>& w) {
  using Mat = Eigen::Matrix<S, 3, 3>;
  using std::cos;
  using std::sin;
  using std::sqrt;
  S theta2 = w.squaredNorm();
  Mat K;
  K << S(0.0), -w.z(), w.y(), w.z(), S(0.0), -w.x(), -w.y(), w.x(), S(0.0);
  if (value(theta2) < 1e-16) {
    // Second-order Taylor keeps derivatives exact at the identity.
    return Mat::Identity() + K + K * K * S(0.5);
  }
  S theta = sqrt(theta2);
  Mat K2 = K * K;
  return Mat::Identity() + K * (sin(theta) / theta) +
         K2 * ((S(1.0) - cos(theta)) / theta2);
}

// Projects an approximate rotation back onto SO(3) (nearest orthonormal
// matrix with det +1).
Mat3 orthonormalize(const Mat3& R);

// Deterministic synthetic face model: a deformed hemispheric "face blob"
// with a protruding nose ridge (a reliable hard-shadow caster), smooth
// mutually orthogonal basis fields, geometrically decaying sigmas, a regular
// UV chart, and 68 marked vertices. Stands in for licensed scan data.
MorphableModel make_toy_model(int n_vertices, int ks, int ke, int kr, int kb,
                              uint64_t seed);

void save_model(const std::string& path, const MorphableModel& model);
MorphableModel load_model(const std::string& path);

void write_obj(const std::string& path, const FaceMesh& mesh);
FaceMesh read_obj(const std::string& path);

}  // namespace lsir
