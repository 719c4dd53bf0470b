// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsir/reflectance.hpp"

#include <algorithm>
#include <cmath>

namespace lsir {

void TextureSet::validate() const {
  const int m = diffuse.width;
  if (m <= 0 || diffuse.height != m || diffuse.channels != 3)
    throw ValidationError("diffuse map must be square M x M x 3");
  if (specular.width != m || specular.height != m || specular.channels != 3)
    throw ValidationError("specular map must match diffuse resolution");
  if (roughness.width != m || roughness.height != m || roughness.channels != 1)
    throw ValidationError("roughness map must be M x M x 1");
  for (double v : diffuse.data)
    if (v < 0.0 || v > 1.0)
      throw ValidationError("diffuse texels must lie in [0,1]");
  for (double v : specular.data)
    if (v < 0.0 || v > 1.0)
      throw ValidationError("specular texels must lie in [0,1]");
  for (double v : roughness.data)
    if (!(v > 0.0) || v > 1.0)
      throw ValidationError("roughness texels must lie in (0,1]");
}

Vec3 brdf_eval(const ShadingPoint& pt, const Vec3& l, const Vec3& o,
               int fresnel_power) {
  if (pt.normal.dot(l) <= 0.0 || pt.normal.dot(o) <= 0.0)
    throw ValidationError("brdf_eval requires l and o in the upper hemisphere");
  if (!(pt.roughness > 0.0))
    throw ValidationError("roughness must be > 0");
  return brdf_core<double>(pt.normal, l, o, pt.diffuse, pt.specular,
                           pt.roughness, fresnel_power);
}

namespace {

double edge_fn(const Vec2& a, const Vec2& b, const Vec2& p) {
  return (p.x() - a.x()) * (b.y() - a.y()) - (p.y() - a.y()) * (b.x() - a.x());
}

// Top-left fill rule against CCW edges: points exactly on an edge count as
// inside only for top and left edges, so texels on shared edges rasterize
// exactly once.
bool edge_accepts(const Vec2& a, const Vec2& b, double e) {
  if (e > 0.0) return true;
  if (e < 0.0) return false;
  bool top = a.y() == b.y() && b.x() < a.x();
  bool left = b.y() > a.y();
  return top || left;
}

}  // namespace

UvRasterMap build_uv_raster(const std::vector<Vec2>& uv,
                            const std::vector<std::array<int, 3>>& triangles,
                            int size) {
  if (size <= 0) throw ValidationError("raster size must be positive");
  UvRasterMap map;
  map.size = size;
  map.triangle.assign(static_cast<size_t>(size) * size, -1);
  map.weights.assign(static_cast<size_t>(size) * size, Vec3::Zero());

  for (size_t t = 0; t < triangles.size(); ++t) {
    Vec2 p0 = uv[triangles[t][0]];
    Vec2 p1 = uv[triangles[t][1]];
    Vec2 p2 = uv[triangles[t][2]];
    double area = edge_fn(p0, p1, p2);
    if (area == 0.0) continue;  // degenerate in UV space
    if (area < 0.0) {           // normalize to CCW for the fill rule
      std::swap(p1, p2);
      area = -area;
    }
    double lo_u = std::min({p0.x(), p1.x(), p2.x()});
    double hi_u = std::max({p0.x(), p1.x(), p2.x()});
    double lo_v = std::min({p0.y(), p1.y(), p2.y()});
    double hi_v = std::max({p0.y(), p1.y(), p2.y()});
    int x0 = std::max(0, static_cast<int>(std::floor(lo_u * size - 0.5)));
    int x1 = std::min(size - 1, static_cast<int>(std::ceil(hi_u * size - 0.5)));
    int y0 = std::max(0, static_cast<int>(std::floor(lo_v * size - 0.5)));
    int y1 = std::min(size - 1, static_cast<int>(std::ceil(hi_v * size - 0.5)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        Vec2 p((x + 0.5) / size, (y + 0.5) / size);
        double e0 = edge_fn(p1, p2, p);  // weight of vertex 0
        double e1 = edge_fn(p2, p0, p);
        double e2 = edge_fn(p0, p1, p);
        if (!edge_accepts(p1, p2, e0) || !edge_accepts(p2, p0, e1) ||
            !edge_accepts(p0, p1, e2))
          continue;
        int idx = map.index(x, y);
        if (map.triangle[idx] >= 0) continue;  // first triangle wins
        map.triangle[idx] = static_cast<int32_t>(t);
        Vec3 w(e0 / area, e1 / area, e2 / area);
        // Weights follow the possibly swapped order; undo the swap.
        if (edge_fn(uv[triangles[t][0]], uv[triangles[t][1]],
                    uv[triangles[t][2]]) < 0.0)
          std::swap(w.y(), w.z());
        map.weights[idx] = w;
      }
    }
  }
  return map;
}

Image rasterize_vertex_colors(const MorphableModel& model,
                              const UvRasterMap& raster, const VecX& colors,
                              const VecX& mean_colors) {
  const int m = raster.size;
  Image out(m, m, 3);
  const int n = model.vertex_count();
  // Uncovered texels hold the mean of the model mean albedo: constant,
  // coefficient-independent, so gradients of covered texels are unaffected.
  Vec3 model_mean = Vec3::Zero();
  for (int i = 0; i < n; ++i)
    model_mean += Vec3(mean_colors[3 * i], mean_colors[3 * i + 1],
                       mean_colors[3 * i + 2]);
  model_mean /= n;
  for (int y = 0; y < m; ++y) {
    for (int x = 0; x < m; ++x) {
      int idx = raster.index(x, y);
      int t = raster.triangle[idx];
      Vec3 c;
      if (t < 0) {
        c = model_mean;
      } else {
        const auto& tri = model.triangles[t];
        const Vec3& w = raster.weights[idx];
        c = Vec3::Zero();
        for (int k = 0; k < 3; ++k)
          c += w[k] * Vec3(colors[3 * tri[k]], colors[3 * tri[k] + 1],
                           colors[3 * tri[k] + 2]);
      }
      for (int ch = 0; ch < 3; ++ch) out.at(x, y, ch) = clamp01(c[ch]);
    }
  }
  return out;
}

Image statistical_diffuse_texture(const MorphableModel& model,
                                  const VecX& beta, int size) {
  if (beta.size() != model.diffuse_basis.cols())
    throw ValidationError("diffuse coefficient count differs from K_r");
  UvRasterMap raster = build_uv_raster(model.uv, model.triangles, size);
  VecX colors = model.diffuse_mean + model.diffuse_basis * beta;
  return rasterize_vertex_colors(model, raster, colors, model.diffuse_mean);
}

Image statistical_specular_texture(const MorphableModel& model,
                                   const VecX& gamma, int size) {
  if (gamma.size() != model.spec_basis.cols())
    throw ValidationError("specular coefficient count differs from K_b");
  UvRasterMap raster = build_uv_raster(model.uv, model.triangles, size);
  VecX colors = model.spec_mean + model.spec_basis * gamma;
  return rasterize_vertex_colors(model, raster, colors, model.spec_mean);
}

BilinearTap bilinear_tap(int size_x, int size_y, double u, double v) {
  double x = clamp01(u) * size_x - 0.5;
  double y = clamp01(v) * size_y - 0.5;
  double fx = std::floor(x), fy = std::floor(y);
  double ax = x - fx, ay = y - fy;
  BilinearTap tap;
  tap.x[0] = std::clamp(static_cast<int>(fx), 0, size_x - 1);
  tap.x[1] = std::clamp(static_cast<int>(fx) + 1, 0, size_x - 1);
  tap.y[0] = std::clamp(static_cast<int>(fy), 0, size_y - 1);
  tap.y[1] = std::clamp(static_cast<int>(fy) + 1, 0, size_y - 1);
  tap.w[0] = (1.0 - ax) * (1.0 - ay);
  tap.w[1] = ax * (1.0 - ay);
  tap.w[2] = (1.0 - ax) * ay;
  tap.w[3] = ax * ay;
  return tap;
}

Vec3 sample_texture(const Image& map, double u, double v) {
  BilinearTap tap = bilinear_tap(map.width, map.height, u, v);
  Vec3 out = Vec3::Zero();
  const int pairs[4][2] = {{tap.x[0], tap.y[0]},
                           {tap.x[1], tap.y[0]},
                           {tap.x[0], tap.y[1]},
                           {tap.x[1], tap.y[1]}};
  for (int k = 0; k < 4; ++k) {
    for (int c = 0; c < 3; ++c) {
      int ch = map.channels == 1 ? 0 : c;
      out[c] += tap.w[k] * map.at(pairs[k][0], pairs[k][1], ch);
    }
  }
  return out;
}

}  // namespace lsir
