// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "lsir/ad.hpp"
#include "lsir/core.hpp"
#include "lsir/facemodel.hpp"

namespace lsir {

// Per-texel skin attribute maps. Diffuse/specular are rgb in [0,1];
// roughness is a single channel in (0,1] (the Blinn-Phong exponent 2/r
// requires r > 0; parameters are floored at 1e-3).
struct TextureSet {
  Image diffuse;    // M x M x 3
  Image specular;   // M x M x 3
  Image roughness;  // M x M x 1

  int size() const { return diffuse.width; }
  void validate() const;
};

inline constexpr double kMinRoughness = 1e-3;

struct ShadingPoint {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 diffuse = Vec3::Zero();   // c_i
  Vec3 specular = Vec3::Zero();  // s_i
  double roughness = 0.5;        // r_i
};

// (l + o) / |l + o| for unit l, o.
template <class S>
Vector3<S> half_vector(const Vector3<S>& l, const Vector3<S>& o) {
  using std::sqrt;
  Vector3<S> sum = l + o;
  S n2 = sum.squaredNorm();
  if (value(n2) < 1e-18)
    throw ValidationError("degenerate half vector: l and o are antiparallel");
  return sum / sqrt(n2);
}

// Blinn-Phong normal distribution: ((2/r + 2)/(2*pi)) * (n.h)^(2/r - 2).
template <class S>
S ndf_blinn_phong(const S& ndoth, const S& r) {
  using std::pow;
  if (!(value(r) > 0.0)) throw ValidationError("roughness must be > 0");
  S expo = S(2.0) / r - S(2.0);
  S base = value(ndoth) <= 0.0 ? S(0.0) : ndoth;
  // 0^0 = 1 so that r=1 yields the constant lobe 2/pi for every angle.
  S p = value(expo) == 0.0 ? S(1.0) : pow(base, expo);
  return (S(2.0) / r + S(2.0)) / S(2.0 * kPi) * p;
}

// Mono-directional Smith shadowing with the rational approximation in
// a = 1/(r*tan(acos(n.v))); the step factor blocks sidefacing half vectors.
template <class S>
S smith_g1(const Vector3<S>& n, const Vector3<S>& v, const Vector3<S>& h,
           const S& r) {
  using std::sqrt;
  S ndotv = n.dot(v);
  if (value(ndotv) == 0.0) return S(0.0);  // grazing: treated as blocked
  if (value(h.dot(v)) / value(ndotv) <= 0.0) return S(0.0);
  S sin2 = S(1.0) - ndotv * ndotv;
  if (value(sin2) <= 0.0) return S(1.0);  // normal incidence: a = infinity
  S a = ndotv / (r * sqrt(sin2));         // 1/(r*tan(acos(n.v)))
  if (value(a) >= 1.6) return S(1.0);
  return (S(3.535) * a + S(2.181) * a * a) /
         (S(1.0) + S(2.276) * a + S(2.577) * a * a);
}

template <class S>
S smith_g_bidir(const Vector3<S>& n, const Vector3<S>& o, const Vector3<S>& l,
                const Vector3<S>& h, const S& r) {
  return smith_g1(n, o, h, r) * smith_g1(n, l, h, r);
}

// Schlick-style Fresnel, linear by default as the reflectance model states
// it: F = s + (1 - s) * (1 - o.h)^power with power in {1, 5}.
template <class S>
Vector3<S> fresnel_schlick(const Vector3<S>& s, const S& odoth,
                           int power = 1) {
  if (power != 1 && power != 5)
    throw ValidationError("fresnel power must be 1 or 5");
  S base = S(1.0) - odoth;
  S f = base;
  for (int i = 1; i < power; ++i) f = f * base;
  Vector3<S> one(S(1.0), S(1.0), S(1.0));
  return s + (one - s) * f;
}

// Full reflectance: Lambertian diffuse plus Cook-Torrance specular,
//   f = c/pi + D*G*F / (4 (o.n)(l.n)).
// The caller guarantees l.n > 0 and o.n > 0; a grazing denominator below
// 1e-9 zeroes the specular term instead of dividing by it.
template <class S>
Vector3<S> brdf_core(const Vector3<S>& n, const Vector3<S>& l,
                     const Vector3<S>& o, const Vector3<S>& c,
                     const Vector3<S>& s, const S& r, int fresnel_power = 1) {
  Vector3<S> diffuse = c / S(kPi);
  S ndotl = n.dot(l);
  S ndoto = n.dot(o);
  S denom = S(4.0) * ndoto * ndotl;
  if (value(denom) < 1e-9) return diffuse;
  Vector3<S> h = half_vector(l, o);
  S d = ndf_blinn_phong(S(n.dot(h)), r);
  S g = smith_g_bidir(n, o, l, h, r);
  Vector3<S> f = fresnel_schlick(s, S(o.dot(h)), fresnel_power);
  return diffuse + f * (d * g / denom);
}

// Double-precision entry point with precondition checks.
Vec3 brdf_eval(const ShadingPoint& pt, const Vec3& l, const Vec3& o,
               int fresnel_power = 1);

// Texel -> (triangle, barycentric weights) lookup for rasterizing
// per-vertex quantities into the UV chart. Texels covered by no UV triangle
// have triangle index -1.
struct UvRasterMap {
  int size = 0;
  std::vector<int32_t> triangle;  // size*size
  std::vector<Vec3> weights;      // size*size

  int index(int x, int y) const { return y * size + x; }
};

UvRasterMap build_uv_raster(const std::vector<Vec2>& uv,
                            const std::vector<std::array<int, 3>>& triangles,
                            int size);

// c = a_r + diffuse_basis * beta rasterized into UV space, clamped to [0,1].
// Uncovered texels hold the mean of the model's mean albedo.
Image statistical_diffuse_texture(const MorphableModel& model, const VecX& beta,
                                  int size);
Image statistical_specular_texture(const MorphableModel& model,
                                   const VecX& gamma, int size);

// Shared rasterization core used by both statistical maps. Uncovered
// texels take the mean of mean_colors.
Image rasterize_vertex_colors(const MorphableModel& model,
                              const UvRasterMap& raster, const VecX& colors,
                              const VecX& mean_colors);

// Bilinear, edge-clamped texture fetch; texel centers sit at
// ((i+0.5)/M, (j+0.5)/M). 1-channel maps replicate across rgb.
Vec3 sample_texture(const Image& map, double u, double v);

// Weights and texel indices of the bilinear fetch, for differentiable reads.
struct BilinearTap {
  int x[2], y[2];
  double w[4];  // (x0,y0), (x1,y0), (x0,y1), (x1,y1)
};
BilinearTap bilinear_tap(int size_x, int size_y, double u, double v);

}  // namespace lsir
