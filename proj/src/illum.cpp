// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsir/illum.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"
#include "lsir/reflectance.hpp"

namespace lsir {

namespace {

using nlohmann::json;

StageGeometry orient_inward(StageGeometry g) {
  for (auto& f : g.faces) {
    const Vec3& a = g.vertices[f[0]];
    Vec3 center = (a + g.vertices[f[1]] + g.vertices[f[2]]) / 3.0;
    Vec3 n = (g.vertices[f[1]] - a).cross(g.vertices[f[2]] - a);
    if (n.dot(-center) < 0.0) std::swap(f[1], f[2]);
  }
  return g;
}

StageGeometry tetrahedron_base() {
  StageGeometry g;
  g.name = "tetrahedron";
  double s = 1.0 / std::sqrt(3.0);
  g.vertices = {Vec3(1, 1, 1) * s, Vec3(1, -1, -1) * s, Vec3(-1, 1, -1) * s,
                Vec3(-1, -1, 1) * s};
  g.faces = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
  return orient_inward(std::move(g));
}

StageGeometry octahedron_base() {
  StageGeometry g;
  g.name = "octahedron";
  g.vertices = {Vec3(1, 0, 0),  Vec3(-1, 0, 0), Vec3(0, 1, 0),
                Vec3(0, -1, 0), Vec3(0, 0, 1),  Vec3(0, 0, -1)};
  g.faces = {{0, 2, 4}, {2, 1, 4}, {1, 3, 4}, {3, 0, 4},
             {2, 0, 5}, {1, 2, 5}, {3, 1, 5}, {0, 3, 5}};
  return orient_inward(std::move(g));
}

StageGeometry icosahedron_base_impl() {
  StageGeometry g;
  g.name = "icosahedron";
  const double p = (1.0 + std::sqrt(5.0)) / 2.0;
  const double inv = 1.0 / std::sqrt(1.0 + p * p);
  auto v = [&](double a, double b, double c) -> Vec3 {
    return Vec3(a, b, c) * inv;
  };
  g.vertices = {v(-1, p, 0), v(1, p, 0),  v(-1, -p, 0), v(1, -p, 0),
                v(0, -1, p), v(0, 1, p),  v(0, -1, -p), v(0, 1, -p),
                v(p, 0, -1), v(p, 0, 1),  v(-p, 0, -1), v(-p, 0, 1)};
  g.faces = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
             {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
             {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
             {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  return orient_inward(std::move(g));
}

// One 4-way subdivision of the icosahedron with vertices pushed back onto
// the unit sphere: 80 faces.
StageGeometry sphere_base() {
  StageGeometry ico = icosahedron_base_impl();
  StageGeometry g;
  g.name = "sphere";
  g.vertices = ico.vertices;
  std::map<std::pair<int, int>, int> midpoint;
  auto mid = [&](int a, int b) {
    std::pair<int, int> key = std::minmax(a, b);
    auto it = midpoint.find(key);
    if (it != midpoint.end()) return it->second;
    Vec3 m = (g.vertices[a] + g.vertices[b]).normalized();
    g.vertices.push_back(m);
    int idx = static_cast<int>(g.vertices.size()) - 1;
    midpoint[key] = idx;
    return idx;
  };
  for (const auto& f : ico.faces) {
    int ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
    g.faces.push_back({f[0], ab, ca});
    g.faces.push_back({f[1], bc, ab});
    g.faces.push_back({f[2], ca, bc});
    g.faces.push_back({ab, bc, ca});
  }
  return orient_inward(std::move(g));
}

}  // namespace

StageGeometry icosahedron_base() { return icosahedron_base_impl(); }

StageGeometry stage_base_geometry(const std::string& name) {
  if (name == "tetrahedron") return tetrahedron_base();
  if (name == "octahedron") return octahedron_base();
  if (name == "icosahedron") return icosahedron_base_impl();
  if (name == "sphere") return sphere_base();
  throw ValidationError(
      "unknown stage geometry '" + name +
      "' (want tetrahedron, octahedron, icosahedron, or sphere)");
}

void LightStage::validate() const {
  if (lights.size() != base.faces.size())
    throw ValidationError("stage needs exactly one light per base face");
  for (const AreaLight& l : lights) {
    if (!(l.d > 0.0)) throw ValidationError("light distance must be > 0");
    if (!(l.a > 0.0) || l.a > 1.0)
      throw ValidationError("light area fraction must lie in (0,1]");
    if (l.i.minCoeff() < 0.0)
      throw ValidationError("light intensity must be >= 0");
  }
}

LightStage make_default_stage(const std::string& geometry) {
  LightStage stage;
  stage.base = stage_base_geometry(geometry);
  stage.lights.assign(stage.base.faces.size(), AreaLight{});
  return stage;
}

void SphericalHarmonics::validate() const {
  if (bands != 3 && bands != 7 && bands != 9 && bands != 11)
    throw ValidationError("SH bands must be one of 3, 7, 9, 11");
  if (coeffs.size() != 3 * bands * bands)
    throw ValidationError("SH coefficient count must be 3*bands^2");
}

void EnvironmentMap::validate() const {
  if (map.width != 32 || map.height != 32 || map.channels != 3)
    throw ValidationError("environment map must be 32x32x3");
  for (double v : map.data)
    if (v < 0.0) throw ValidationError("environment radiance must be >= 0");
}

LightTriangle light_world_geometry(const LightStage& stage, int j) {
  if (j < 0 || j >= static_cast<int>(stage.lights.size()))
    throw ValidationError("light index out of range");
  const AreaLight& l = stage.lights[j];
  return light_world_geometry_t<double>(stage.base, j, l.d, l.a, l.p);
}

Vec3 physical_intensity(const AreaLight& light) {
  return physical_intensity_t<double>(light.d, light.a, light.i);
}

Vec3 light_radiance(const AreaLight& light) {
  return light_radiance_t<double>(light.a, light.i);
}

std::pair<Vec3, double> sample_light(const LightStage& stage, int j,
                                     double u1, double u2) {
  return sample_light_t<double>(light_world_geometry(stage, j), u1, u2);
}

Vec3 sh_radiance(const SphericalHarmonics& sh, const Vec3& dir) {
  sh.validate();
  std::vector<double> basis;
  sh_basis(sh.bands, dir, &basis);
  Vec3 out = Vec3::Zero();
  for (size_t k = 0; k < basis.size(); ++k)
    for (int c = 0; c < 3; ++c) out[c] += sh.coeffs[3 * k + c] * basis[k];
  return out.cwiseMax(0.0);
}

Vec2 envmap_uv(const Vec3& dir) {
  double u = 0.5 + std::atan2(dir.x(), dir.z()) / (2.0 * kPi);
  double v = 0.5 - std::asin(std::clamp(dir.y(), -1.0, 1.0)) / kPi;
  return Vec2(u, v);
}

Vec3 envmap_direction(double u, double v) {
  double lon = (u - 0.5) * 2.0 * kPi;
  double lat = (0.5 - v) * kPi;
  return Vec3(std::cos(lat) * std::sin(lon), std::sin(lat),
              std::cos(lat) * std::cos(lon));
}

Vec3 envmap_radiance(const EnvironmentMap& env, const Vec3& dir) {
  const Image& m = env.map;
  Vec2 uv = envmap_uv(dir);
  double x = uv.x() * m.width - 0.5;
  double y = std::clamp(uv.y() * m.height - 0.5, 0.0,
                        static_cast<double>(m.height - 1));
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  double ax = x - x0, ay = y - y0;
  int y1 = std::min(y0 + 1, m.height - 1);
  auto wrap = [&](int xi) { return ((xi % m.width) + m.width) % m.width; };
  Vec3 out = Vec3::Zero();
  for (int c = 0; c < 3; ++c) {
    double v00 = m.at(wrap(x0), y0, c), v10 = m.at(wrap(x0 + 1), y0, c);
    double v01 = m.at(wrap(x0), y1, c), v11 = m.at(wrap(x0 + 1), y1, c);
    out[c] = (1 - ax) * (1 - ay) * v00 + ax * (1 - ay) * v10 +
             (1 - ax) * ay * v01 + ax * ay * v11;
  }
  return out;
}

Image stage_to_envmap(const LightStage& stage, int width, int height) {
  stage.validate();
  Image out(width, height, 3);
  std::vector<LightTriangle> tris;
  std::vector<Vec3> radiance;
  for (size_t j = 0; j < stage.lights.size(); ++j) {
    tris.push_back(light_world_geometry(stage, static_cast<int>(j)));
    radiance.push_back(light_radiance(stage.lights[j]));
  }
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      Vec3 dir = envmap_direction((x + 0.5) / width, (y + 0.5) / height);
      for (size_t j = 0; j < tris.size(); ++j) {
        // Moller-Trumbore against the light triangle, origin at 0.
        const LightTriangle& t = tris[j];
        Vec3 e1 = t.v1 - t.v0, e2 = t.v2 - t.v0;
        Vec3 pv = dir.cross(e2);
        double det = e1.dot(pv);
        if (std::abs(det) < 1e-12) continue;
        Vec3 tv = -t.v0;
        double u = tv.dot(pv) / det;
        if (u < 0.0 || u > 1.0) continue;
        Vec3 qv = tv.cross(e1);
        double v = dir.dot(qv) / det;
        if (v < 0.0 || u + v > 1.0) continue;
        double dist = e2.dot(qv) / det;
        if (dist <= 0.0) continue;
        for (int c = 0; c < 3; ++c) out.at(x, y, c) += radiance[j][c];
      }
    }
  }
  return out;
}

namespace {

json stage_fields(const LightStage& stage) {
  json lights = json::array();
  for (const AreaLight& l : stage.lights)
    lights.push_back({{"d", l.d},
                      {"a", l.a},
                      {"p", {l.p.x(), l.p.y()}},
                      {"i", {l.i.x(), l.i.y(), l.i.z()}}});
  return json{{"geometry", stage.base.name}, {"lights", lights}};
}

LightStage stage_from_fields(const json& j) {
  LightStage stage;
  stage.base = stage_base_geometry(j.at("geometry").get<std::string>());
  for (const auto& lj : j.at("lights")) {
    AreaLight l;
    l.d = lj.at("d").get<double>();
    l.a = lj.at("a").get<double>();
    l.p = Vec2(lj.at("p")[0].get<double>(), lj.at("p")[1].get<double>());
    l.i = Vec3(lj.at("i")[0].get<double>(), lj.at("i")[1].get<double>(),
               lj.at("i")[2].get<double>());
    stage.lights.push_back(l);
  }
  stage.validate();
  return stage;
}

}  // namespace

std::string illum_to_json(const IlluminationModel& illum) {
  json j;
  if (const auto* stage = std::get_if<LightStage>(&illum)) {
    j = stage_fields(*stage);
  } else if (const auto* fixed = std::get_if<FixedLightStage>(&illum)) {
    j = stage_fields(fixed->stage);
    j["fixed"] = true;
  } else if (const auto* sh = std::get_if<SphericalHarmonics>(&illum)) {
    j["bands"] = sh->bands;
    j["coeffs"] = std::vector<double>(sh->coeffs.data(),
                                      sh->coeffs.data() + sh->coeffs.size());
  } else if (const auto* env = std::get_if<EnvironmentMap>(&illum)) {
    j["width"] = env->map.width;
    j["height"] = env->map.height;
    j["data"] = env->map.data;
  }
  return j.dump(2);
}

IlluminationModel illum_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("bad illumination JSON: ") + e.what());
  }
  try {
    if (j.contains("geometry")) {
      LightStage stage = stage_from_fields(j);
      if (j.value("fixed", false)) return FixedLightStage{std::move(stage)};
      return stage;
    }
    if (j.contains("bands")) {
      SphericalHarmonics sh;
      sh.bands = j.at("bands").get<int>();
      auto c = j.at("coeffs").get<std::vector<double>>();
      sh.coeffs = Eigen::Map<const VecX>(c.data(), c.size());
      sh.validate();
      return sh;
    }
    if (j.contains("data")) {
      EnvironmentMap env;
      env.map = Image(j.at("width").get<int>(), j.at("height").get<int>(), 3);
      auto d = j.at("data").get<std::vector<double>>();
      if (d.size() != env.map.size())
        throw ValidationError("environment map data size mismatch");
      env.map.data = std::move(d);
      env.validate();
      return env;
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad illumination JSON: ") + e.what());
  }
  throw ValidationError("unrecognized illumination JSON document");
}

}  // namespace lsir
