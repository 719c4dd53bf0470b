// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "lsir/ad.hpp"
#include "lsir/core.hpp"

namespace lsir {

// One area light living inside a homothetic copy of its stage face.
//   d: distance scale (homothety factor, units of face-scale radius)
//   a: area as a fraction of the homothetic face, in (0,1]
//   p: barycentric (u,v) of the light's center inside the face
//   i: perceived intensity per channel (the optimizer's variable)
struct AreaLight {
  double d = 4.0;
  double a = 0.5;
  Vec2 p = Vec2(1.0 / 3.0, 1.0 / 3.0);
  Vec3 i = Vec3(0.5, 0.5, 0.5);
};

// Convex polyhedron with unit circumradius; faces wound so their normals
// point at the origin (lights shine inward).
struct StageGeometry {
  std::string name;
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
};

StageGeometry stage_base_geometry(const std::string& name);
StageGeometry icosahedron_base();

struct LightStage {
  StageGeometry base;
  std::vector<AreaLight> lights;  // one per base face

  void validate() const;
};

// Default initialization: every light at the face centroid, d=4, a=0.5,
// mid-gray intensity.
LightStage make_default_stage(const std::string& geometry = "icosahedron");

// Radiance-only real spherical harmonics; bands in {3,7,9,11} and
// 3*bands^2 coefficients (rgb interleaved per basis function).
struct SphericalHarmonics {
  int bands = 3;
  VecX coeffs;

  void validate() const;
};

// 32x32 equirectangular radiance map: light at infinity.
struct EnvironmentMap {
  Image map;  // width 32, height 32, 3 channels

  void validate() const;
};

// Ablation variant: the stage geometry parameters (d, a, p) are frozen and
// only the perceived intensities are optimized.
struct FixedLightStage {
  LightStage stage;
};

using IlluminationModel =
    std::variant<LightStage, SphericalHarmonics, EnvironmentMap,
                 FixedLightStage>;

// World-space light triangle: the base face scaled about the origin by d
// (the homothetic face), then shrunk about the barycentric point p by
// sqrt(a), giving area a * (homothetic face area). Templated over the
// scalar so light parameters can carry derivatives.
template <class S>
struct LightTriangleT {
  Vector3<S> v0, v1, v2;
  Vector3<S> normal;  // unit, faces the origin
  S area;
};

template <class S>
LightTriangleT<S> light_world_geometry_t(const StageGeometry& base, int j,
                                         const S& d, const S& a,
                                         const Vector2<S>& p) {
  using std::sqrt;
  const auto& f = base.faces[j];
  // Homothetic face: the base face scaled from the origin by d.
  Vector3<S> b0 = to_vector3<S>(base.vertices[f[0]]) * d;
  Vector3<S> b1 = to_vector3<S>(base.vertices[f[1]]) * d;
  Vector3<S> b2 = to_vector3<S>(base.vertices[f[2]]) * d;
  // Barycentric center with weights (u, v, 1-u-v).
  Vector3<S> q = b0 * p.x() + b1 * p.y() + b2 * (S(1.0) - p.x() - p.y());
  S shrink = sqrt(a);
  LightTriangleT<S> tri;
  tri.v0 = q + (b0 - q) * shrink;
  tri.v1 = q + (b1 - q) * shrink;
  tri.v2 = q + (b2 - q) * shrink;
  Vector3<S> cr = (tri.v1 - tri.v0).cross(tri.v2 - tri.v0);
  S two_area = cr.norm();
  tri.area = two_area * S(0.5);
  tri.normal = cr / two_area;
  return tri;
}

using LightTriangle = LightTriangleT<double>;

LightTriangle light_world_geometry(const LightStage& stage, int j);

// Physical intensity, the decoupled emission variable: I = (d^2/a) * i.
template <class S>
Vector3<S> physical_intensity_t(const S& d, const S& a, const Vector3<S>& i) {
  if (!(value(a) > 0.0)) throw ValidationError("light area must be > 0");
  if (!(value(d) > 0.0)) throw ValidationError("light distance must be > 0");
  return i * (d * d / a);
}

Vec3 physical_intensity(const AreaLight& light);

// Emitted radiance toward the scene: I / d^2 = i / a. Constant radiance
// over a light whose solid angle is fixed by construction, which is what
// decouples received light from d and a.
template <class S>
Vector3<S> light_radiance_t(const S& a, const Vector3<S>& i) {
  return i / a;
}

Vec3 light_radiance(const AreaLight& light);

// Uniform point on the light triangle; pdf is 1/area (area measure).
template <class S>
std::pair<Vector3<S>, S> sample_light_t(const LightTriangleT<S>& tri,
                                        double u1, double u2) {
  using std::sqrt;
  double su1 = std::sqrt(u1);
  double b0 = 1.0 - su1;
  double b1 = u2 * su1;
  Vector3<S> pt = tri.v0 * S(b0) + tri.v1 * S(b1) +
                  tri.v2 * S(1.0 - b0 - b1);
  return {pt, S(1.0) / tri.area};
}

std::pair<Vec3, double> sample_light(const LightStage& stage, int j,
                                     double u1, double u2);

// Real spherical harmonics basis values for every (l,m) with l < bands,
// flat index l*(l+1)+m, z as the polar axis, Condon-Shortley phase folded
// into the associated Legendre recurrence. Works on differentiable scalars.
template <class S>
void sh_basis(int bands, const Vector3<S>& dir, std::vector<S>* out) {
  using std::sqrt;
  out->assign(static_cast<size_t>(bands) * bands, S(0.0));
  const S x = dir.z();  // cos(theta)
  S sin_theta2 = S(1.0) - x * x;
  S sin_theta = value(sin_theta2) > 0.0 ? S(sqrt(sin_theta2)) : S(0.0);
  // Azimuth via (cos, sin) pairs; at the poles the m>0 terms vanish with
  // sin(theta)^m, so the arbitrary phase there is harmless.
  S cphi(1.0), sphi(0.0);
  double rim = std::sqrt(value(dir.x()) * value(dir.x()) +
                         value(dir.y()) * value(dir.y()));
  if (rim > 1e-12) {
    S inv = S(1.0) / sqrt(dir.x() * dir.x() + dir.y() * dir.y());
    cphi = dir.x() * inv;
    sphi = dir.y() * inv;
  }

  // P(m,m) ladder, then upward recurrence in l for each m.
  std::vector<S> pmm_cache(bands), cos_m(bands), sin_m(bands);
  S pmm(1.0);
  double fact = 1.0;
  for (int m = 0; m < bands; ++m) {
    pmm_cache[m] = pmm;
    cos_m[m] = m == 0 ? S(1.0) : (cos_m[m - 1] * cphi - sin_m[m - 1] * sphi);
    sin_m[m] = m == 0 ? S(0.0) : (sin_m[m - 1] * cphi + cos_m[m - 1] * sphi);
    pmm = pmm * S(-fact) * sin_theta;
    fact += 2.0;
  }

  auto emit = [&](int l, int m, const S& p) {
    // K(l,m) = sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!)
    double k2 = (2.0 * l + 1.0) / (4.0 * kPi);
    for (int k = l - m + 1; k <= l + m; ++k) k2 /= k;
    double K = std::sqrt(k2);
    if (m == 0) {
      (*out)[l * (l + 1)] = S(K) * p;
    } else {
      S scaled = S(std::sqrt(2.0) * K) * p;
      (*out)[l * (l + 1) + m] = scaled * cos_m[m];
      (*out)[l * (l + 1) - m] = scaled * sin_m[m];
    }
  };

  for (int m = 0; m < bands; ++m) {
    S p_prev = pmm_cache[m];  // P(m, m)
    emit(m, m, p_prev);
    if (m + 1 >= bands) continue;
    S p_curr = x * S(2.0 * m + 1.0) * p_prev;  // P(m+1, m)
    emit(m + 1, m, p_curr);
    for (int l = m + 2; l < bands; ++l) {
      S p_next = (x * S(2.0 * l - 1.0) * p_curr - S(l + m - 1.0) * p_prev) /
                 S(static_cast<double>(l - m));
      p_prev = p_curr;
      p_curr = p_next;
      emit(l, m, p_curr);
    }
  }
}

// Basis dotted with rgb-interleaved coefficients, clamped at 0.
Vec3 sh_radiance(const SphericalHarmonics& sh, const Vec3& dir);

// Equirectangular direction -> continuous texel coordinates (u,v in [0,1]):
// u from atan2(x, z), v from asin(y) with +y mapping to the top row.
Vec2 envmap_uv(const Vec3& dir);
Vec3 envmap_direction(double u, double v);

Vec3 envmap_radiance(const EnvironmentMap& env, const Vec3& dir);

// Rasterizes each light's emitted radiance into an equirectangular map for
// visualization (direction = from origin toward the light surface).
Image stage_to_envmap(const LightStage& stage, int width, int height);

// JSON (de)serialization of every illumination variant.
std::string illum_to_json(const IlluminationModel& illum);
IlluminationModel illum_from_json(const std::string& text);

}  // namespace lsir
