// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "lsir/facemodel.hpp"
#include "lsir/illum.hpp"
#include "lsir/reflectance.hpp"
#include "lsir/rng.hpp"
#include "lsir/tracer.hpp"

using namespace lsir;

namespace {

// --------------------------------------------------------------------------
// Scene builders

// Flat quad [-2,2]^2 in the z=0 plane, normals toward -z, constant skin.
// Shape basis columns: 0 = translate every vertex +x, 1 = scale x about 0.
MorphableModel make_quad_model() {
  MorphableModel m;
  const double P[4][2] = {{-2, -2}, {2, -2}, {-2, 2}, {2, 2}};
  const int n = 4;
  m.mean_shape.resize(3 * n);
  m.diffuse_mean.resize(3 * n);
  m.spec_mean.resize(3 * n);
  m.uv.resize(n);
  for (int i = 0; i < n; ++i) {
    m.mean_shape[3 * i] = P[i][0];
    m.mean_shape[3 * i + 1] = P[i][1];
    m.mean_shape[3 * i + 2] = 0.0;
    m.diffuse_mean[3 * i] = 0.6;
    m.diffuse_mean[3 * i + 1] = 0.5;
    m.diffuse_mean[3 * i + 2] = 0.4;
    for (int c = 0; c < 3; ++c) m.spec_mean[3 * i + c] = 0.04;
    m.uv[i] = Vec2((P[i][0] + 2.0) / 4.0, (P[i][1] + 2.0) / 4.0);
  }
  m.triangles = {{0, 3, 1}, {0, 2, 3}};
  m.shape_basis = MatX::Zero(3 * n, 2);
  for (int i = 0; i < n; ++i) {
    m.shape_basis(3 * i, 0) = 1.0;            // rigid +x
    m.shape_basis(3 * i, 1) = P[i][0] / 2.0;  // x stretch
  }
  m.expr_basis = MatX::Zero(3 * n, 1);
  for (int i = 0; i < n; ++i) m.expr_basis(3 * i + 1, 0) = 1.0;  // rigid +y
  m.diffuse_basis = MatX::Zero(3 * n, 1);
  for (int i = 0; i < n; ++i) m.diffuse_basis(3 * i, 0) = 1.0;  // red shift
  m.spec_basis = MatX::Zero(3 * n, 1);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) m.spec_basis(3 * i + c, 0) = 1.0;
  m.shape_sigma = VecX::Ones(2);
  m.diffuse_sigma = VecX::Ones(1);
  m.spec_sigma = VecX::Ones(1);
  m.landmark_vertex_ids = {0, 1, 2, 3};
  return m;
}

SceneParams zero_params(const MorphableModel& m) {
  SceneParams p;
  p.alpha = VecX::Zero(m.ks());
  p.delta = VecX::Zero(m.ke());
  p.beta = VecX::Zero(m.kr());
  p.gamma = VecX::Zero(m.kb());
  return p;
}

Camera front_camera(int w, int h, double focal, double dist) {
  Camera cam;
  cam.focal = focal;
  cam.cx = w / 2.0;
  cam.cy = h / 2.0;
  cam.width = w;
  cam.height = h;
  cam.T = Vec3(0, 0, -dist);  // looks along +z toward the face at the origin
  return cam;
}

// One-light stage whose single base face is given verbatim (d=1 keeps the
// world triangle equal to the base homothety; winding must already face the
// subject).
LightStage single_light_stage(const Vec3& v0, const Vec3& v1, const Vec3& v2,
                              double a, const Vec3& intensity) {
  LightStage stage;
  stage.base.vertices = {v0, v1, v2};
  stage.base.faces = {{0, 1, 2}};
  AreaLight l;
  l.d = 1.0;
  l.a = a;
  l.p = Vec2(1.0 / 3.0, 1.0 / 3.0);
  l.i = intensity;
  stage.lights = {l};
  return stage;
}

// Icosahedral stage with full-face lights (a=1) tiling the whole sphere, so
// each interior point receives the same radiance from every direction and
// a Lambertian surface shades to exactly albedo * radiance.
LightStage uniform_enclosing_stage(double radiance) {
  LightStage stage;
  stage.base = stage_base_geometry("icosahedron");
  AreaLight proto;
  proto.d = 2.0;
  proto.a = 1.0;
  proto.p = Vec2(1.0 / 3.0, 1.0 / 3.0);
  proto.i = Vec3::Constant(radiance);  // emitted radiance = i / a = i
  stage.lights.assign(stage.base.faces.size(), proto);
  return stage;
}

// --------------------------------------------------------------------------
// Losses

// 0.5 * sum v^2 over a pixel window (whole image when the window is empty).
ImageLoss window_sq_loss(int x0 = 0, int y0 = 0, int x1 = -1, int y1 = -1) {
  auto inside = [=](int x, int y, const Image& img) {
    if (x1 < 0) return true;
    (void)img;
    return x >= x0 && x < x1 && y >= y0 && y < y1;
  };
  ImageLoss loss;
  loss.value = [inside](const Image& rgb, const Image&) {
    double s = 0.0;
    for (int y = 0; y < rgb.height; ++y)
      for (int x = 0; x < rgb.width; ++x)
        if (inside(x, y, rgb))
          for (int c = 0; c < 3; ++c) s += 0.5 * sqr(rgb.at(x, y, c));
    return s;
  };
  loss.grad = [inside](const Image& rgb, const Image&) {
    Image g(rgb.width, rgb.height, 3);
    for (int y = 0; y < rgb.height; ++y)
      for (int x = 0; x < rgb.width; ++x)
        if (inside(x, y, rgb))
          for (int c = 0; c < 3; ++c) g.at(x, y, c) = rgb.at(x, y, c);
    return g;
  };
  return loss;
}

// k * sum of the red channel; its gradient image is constant.
ImageLoss red_sum_loss(double k = 1.0) {
  ImageLoss loss;
  loss.value = [k](const Image& rgb, const Image&) {
    double s = 0.0;
    for (int y = 0; y < rgb.height; ++y)
      for (int x = 0; x < rgb.width; ++x) s += rgb.at(x, y, 0);
    return k * s;
  };
  loss.grad = [k](const Image& rgb, const Image&) {
    Image g(rgb.width, rgb.height, 3);
    for (int y = 0; y < rgb.height; ++y)
      for (int x = 0; x < rgb.width; ++x) g.at(x, y, 0) = k;
    return g;
  };
  return loss;
}

double eval_loss(const Scene& scene, const RenderSettings& st,
                 const ImageLoss& loss) {
  RenderOutput out = render(scene, st);
  return loss.value(out.rgb, out.mask);
}

// --------------------------------------------------------------------------
// Independent ray-triangle oracle: plane intersection plus barycentric test
// solved with dot products (a different formulation than the renderer's).

double brute_tri_hit(const Vec3& a, const Vec3& b, const Vec3& c,
                     const Vec3& o, const Vec3& d) {
  Vec3 n = (b - a).cross(c - a);
  double denom = n.dot(d);
  if (std::abs(denom) < 1e-12) return std::numeric_limits<double>::infinity();
  double t = n.dot(a - o) / denom;
  if (t <= 1e-6) return std::numeric_limits<double>::infinity();
  Vec3 p = o + t * d;
  Vec3 v0 = b - a, v1 = c - a, v2 = p - a;
  double d00 = v0.dot(v0), d01 = v0.dot(v1), d11 = v1.dot(v1);
  double d20 = v2.dot(v0), d21 = v2.dot(v1);
  double det = d00 * d11 - d01 * d01;
  if (std::abs(det) < 1e-18) return std::numeric_limits<double>::infinity();
  double u = (d11 * d20 - d01 * d21) / det;
  double v = (d00 * d21 - d01 * d20) / det;
  if (u < -1e-9 || v < -1e-9 || u + v > 1.0 + 1e-9)
    return std::numeric_limits<double>::infinity();
  return t;
}

}  // namespace

// ===========================================================================

TEST_CASE("bvh closest hit matches a brute force sweep") {
  MorphableModel m = make_toy_model(220, 2, 2, 2, 2, 77);
  const int n = m.vertex_count();
  std::vector<Vec3> verts(n);
  for (int i = 0; i < n; ++i)
    verts[i] = Vec3(m.mean_shape[3 * i], m.mean_shape[3 * i + 1],
                    m.mean_shape[3 * i + 2]);
  Bvh bvh = build_bvh(verts, m.triangles);

  Pcg32 rng(123, 45);
  int hits = 0;
  for (int k = 0; k < 4000; ++k) {
    // Origins on a shell, directions toward a jittered interior point.
    double z = 2.0 * rng.next_double() - 1.0;
    double phi = 2.0 * kPi * rng.next_double();
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    Vec3 orig = 3.0 * Vec3(r * std::cos(phi), r * std::sin(phi), z);
    Vec3 target(rng.next_double() - 0.5, rng.next_double() - 0.5,
                rng.next_double() - 0.5);
    Vec3 dir = (target - orig).normalized();

    RayHit hit = closest_hit(bvh, verts, m.triangles, orig, dir, 1e-6,
                             std::numeric_limits<double>::infinity());
    double best = std::numeric_limits<double>::infinity();
    for (const auto& t : m.triangles)
      best = std::min(best, brute_tri_hit(verts[t[0]], verts[t[1]],
                                          verts[t[2]], orig, dir));
    if (std::isinf(best)) {
      CHECK_FALSE(hit.valid());
    } else {
      REQUIRE(hit.valid());
      CHECK(hit.t == doctest::Approx(best).epsilon(1e-9));
      ++hits;
    }
    // any_hit agrees with closest_hit on existence.
    CHECK(any_hit(bvh, verts, m.triangles, orig, dir, 1e-6,
                  std::numeric_limits<double>::infinity()) == hit.valid());
  }
  CHECK(hits > 500);  // the sweep exercised real intersections

  // Rays that miss the bounding box entirely.
  for (int k = 0; k < 100; ++k) {
    Vec3 orig(10.0 + rng.next_double(), -10.0, 0.0);
    Vec3 dir = Vec3(0.0, 0.0, 1.0);
    CHECK_FALSE(closest_hit(bvh, verts, m.triangles, orig, dir, 1e-6,
                            std::numeric_limits<double>::infinity())
                    .valid());
  }

  CHECK_THROWS_AS(build_bvh(verts, {}), ValidationError);
}

TEST_CASE("gaussian smoothing kernel, invariants, and adjoint pairing") {
  // Center weight of the normalized 3x3 sigma-1 kernel.
  const double expect_center = 1.0 / (1.0 + 4.0 * std::exp(-0.5) + 4.0 * std::exp(-1.0));
  Image delta(5, 5, 1);
  delta.at(2, 2, 0) = 1.0;
  Image sm = gaussian_smooth(delta);
  CHECK(sm.at(2, 2, 0) == doctest::Approx(expect_center).epsilon(1e-12));
  CHECK(expect_center == doctest::Approx(0.2041799555716581).epsilon(1e-9));
  // Off-center taps follow the Gaussian ratios.
  CHECK(sm.at(1, 2, 0) ==
        doctest::Approx(expect_center * std::exp(-0.5)).epsilon(1e-12));
  CHECK(sm.at(1, 1, 0) ==
        doctest::Approx(expect_center * std::exp(-1.0)).epsilon(1e-12));

  // A constant image is a fixed point (edge clamping preserves it).
  Image flat(9, 7, 3);
  for (double& v : flat.data) v = 0.7;
  Image smf = gaussian_smooth(flat);
  for (double v : smf.data) CHECK(v == doctest::Approx(0.7).epsilon(1e-12));

  // <smooth(A), B> == <A, adjoint(B)> for random images.
  Pcg32 rng(5, 6);
  Image A(9, 7, 3), B(9, 7, 3);
  for (double& v : A.data) v = rng.next_double() - 0.5;
  for (double& v : B.data) v = rng.next_double() - 0.5;
  Image SA = gaussian_smooth(A), StB = gaussian_smooth_adjoint(B);
  double lhs = 0.0, rhs = 0.0;
  for (size_t k = 0; k < A.data.size(); ++k) {
    lhs += SA.data[k] * B.data[k];
    rhs += A.data[k] * StB.data[k];
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("render reports coverage, background, and dark lights") {
  MorphableModel m = make_quad_model();
  Scene scene;
  scene.model = &m;
  scene.params = zero_params(m);
  scene.params.illum = single_light_stage(
      Vec3(0, 0.5, -3), Vec3(-0.4, -0.3, -3), Vec3(0.4, -0.3, -3), 0.25,
      Vec3::Zero());
  scene.camera = front_camera(32, 32, 30, 5);
  scene.params.T = scene.camera.T;

  RenderSettings st;
  st.width = st.height = 32;
  st.spp = 4;
  st.blur = false;
  st.background = Vec3(0.2, 0.3, 0.4);

  RenderOutput out = render(scene, st);
  // Quad spans +-12 px about the center: interior pixel fully covered.
  CHECK(out.mask.at(16, 16, 0) == doctest::Approx(1.0));
  CHECK(out.mask.at(1, 1, 0) == doctest::Approx(0.0));
  // Dark light: zero radiance over coverage, background elsewhere.
  for (int c = 0; c < 3; ++c) {
    CHECK(out.rgb.at(16, 16, c) == doctest::Approx(0.0));
    CHECK(out.rgb.at(1, 1, c) == doctest::Approx(st.background[c]));
  }
  for (double v : out.mask.data) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }

  // Determinism: identical settings give bit-identical images; a different
  // seed gives a different one.
  scene.params.illum = single_light_stage(
      Vec3(0, 0.5, -3), Vec3(-0.4, -0.3, -3), Vec3(0.4, -0.3, -3), 0.25,
      Vec3(0.8, 0.7, 0.6));
  RenderOutput a = render(scene, st);
  RenderOutput b = render(scene, st);
  CHECK(a.rgb.data == b.rgb.data);
  CHECK(a.mask.data == b.mask.data);
  st.seed = 99;
  RenderOutput c = render(scene, st);
  CHECK(a.rgb.data != c.rgb.data);

  CHECK_THROWS_AS(render(Scene{}, st), ValidationError);
  RenderSettings bad = st;
  bad.spp = 0;
  CHECK_THROWS_AS(render(scene, bad), ValidationError);
}

TEST_CASE("adding a light never darkens any pixel") {
  MorphableModel m = make_toy_model(220, 2, 2, 2, 2, 11);
  Scene scene;
  scene.model = &m;
  scene.params = zero_params(m);
  scene.camera = front_camera(32, 32, 40, 4);
  scene.params.T = scene.camera.T;

  LightStage stage = make_default_stage();
  for (auto& l : stage.lights) l.i = Vec3::Zero();
  // Light a front face only.
  int lit = -1;
  for (size_t j = 0; j < stage.lights.size(); ++j) {
    Vec3 centroid = Vec3::Zero();
    for (int v : stage.base.faces[j]) centroid += stage.base.vertices[v];
    if (centroid.z() < -1.5) {
      lit = static_cast<int>(j);
      break;
    }
  }
  REQUIRE(lit >= 0);
  stage.lights[lit].i = Vec3::Constant(0.6);
  scene.params.illum = stage;

  RenderSettings st;
  st.width = st.height = 32;
  st.spp = 4;
  st.blur = false;
  Image one = render(scene, st).rgb;

  // Turn on a second front light (one behind the head would add exactly
  // zero): every pixel can only brighten, and at least one must.
  int lit2 = -1;
  for (size_t j = 0; j < stage.lights.size(); ++j) {
    if (static_cast<int>(j) == lit) continue;
    Vec3 centroid = Vec3::Zero();
    for (int v : stage.base.faces[j]) centroid += stage.base.vertices[v];
    if (centroid.z() < -1.5) {
      lit2 = static_cast<int>(j);
      break;
    }
  }
  REQUIRE(lit2 >= 0);
  stage.lights[lit2].i = Vec3::Constant(0.4);
  scene.params.illum = stage;
  Image two = render(scene, st).rgb;
  double grew = 0.0;
  for (size_t k = 0; k < one.data.size(); ++k) {
    CHECK(two.data[k] >= one.data[k] - 1e-12);
    grew += two.data[k] - one.data[k];
  }
  CHECK(grew > 0.0);
  for (double v : two.data) CHECK(std::isfinite(v));
}

TEST_CASE("pixel radiance matches direct quadrature of the light integral") {
  MorphableModel m = make_quad_model();
  const double kAlbedoR = 0.6;  // quad diffuse mean, red channel
  Scene scene;
  scene.model = &m;
  scene.params = zero_params(m);
  // Kill the specular lobe so the expected integrand is pure Lambert.
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c) m.spec_mean[3 * i + c] = 0.0;
  LightStage stage = single_light_stage(Vec3(0.0, 0.4, -3.0),
                                        Vec3(-0.35, -0.2, -3.0),
                                        Vec3(0.35, -0.2, -3.0), 0.09,
                                        Vec3(0.9, 0.9, 0.9));
  scene.params.illum = stage;
  scene.camera = front_camera(8, 8, 6, 3);
  scene.params.T = scene.camera.T;

  RenderSettings st;
  st.width = st.height = 8;
  st.spp = 1;
  st.light_samples = 4096;
  st.blur = false;
  RenderOutput out = render(scene, st);

  // Reconstruct the exact primary ray of pixel (4,4), sample 0.
  const int px_i = 4, py_i = 4;
  uint64_t pid = static_cast<uint64_t>(py_i) * st.width + px_i;
  Pcg32 jrng(mix64(st.seed, pid), 0);
  double px = px_i + jrng.next_double();
  double py = py_i + jrng.next_double();
  Vec3 dir = Vec3((px - scene.camera.cx) / scene.camera.focal,
                  (py - scene.camera.cy) / scene.camera.focal, 1.0)
                 .normalized();
  Vec3 orig = scene.params.T;
  double t_plane = -orig.z() / dir.z();  // quad lives in z = 0
  Vec3 x = orig + t_plane * dir;
  REQUIRE(std::abs(x.x()) < 2.0);
  REQUIRE(std::abs(x.y()) < 2.0);
  Vec3 n(0, 0, -1);

  // Midpoint quadrature over the world-space light triangle.
  LightTriangle tri = light_world_geometry(stage, 0);
  Vec3 L = light_radiance(stage.lights[0]);
  const int N = 256;
  double integral = 0.0;
  auto point = [&](double b1, double b2) -> Vec3 {
    return tri.v0 * (1.0 - b1 - b2) + tri.v1 * b1 + tri.v2 * b2;
  };
  auto integrand = [&](const Vec3& q) {
    Vec3 lv = q - x;
    double r2 = lv.squaredNorm();
    Vec3 l = lv / std::sqrt(r2);
    double cs = n.dot(l);
    double cl = tri.normal.dot(-l);
    if (cs <= 0.0 || cl <= 0.0) return 0.0;
    return (kAlbedoR / kPi) * L.x() * cs * cl / r2;
  };
  double cell = tri.area / (N * N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < N - i; ++j) {
      // Upward sub-triangle centroid.
      integral += integrand(point((i + 1.0 / 3.0) / N, (j + 1.0 / 3.0) / N)) * cell;
      if (i + j < N - 1)  // downward companion
        integral += integrand(point((i + 2.0 / 3.0) / N, (j + 2.0 / 3.0) / N)) * cell;
    }
  }
  CHECK(out.rgb.at(px_i, py_i, 0) ==
        doctest::Approx(integral).epsilon(0.01));
}

TEST_CASE("an occluder between light and surface casts a full shadow") {
  // Face quad at z=0 plus a vertical strip plate at z=-1 covering
  // x in [-0.5, 0.5]. The light sits at (3, 0, -3): surface points on the
  // left see it through the plate (shadowed), points on the right do not.
  auto build = [](bool with_plate) {
    MorphableModel m = make_quad_model();
    if (with_plate) {
      int base = m.vertex_count();
      const double P[4][2] = {{-0.5, -2}, {0.5, -2}, {-0.5, 2}, {0.5, 2}};
      m.mean_shape.conservativeResize(3 * (base + 4));
      m.diffuse_mean.conservativeResize(3 * (base + 4));
      m.spec_mean.conservativeResize(3 * (base + 4));
      for (int i = 0; i < 4; ++i) {
        m.mean_shape[3 * (base + i)] = P[i][0];
        m.mean_shape[3 * (base + i) + 1] = P[i][1];
        m.mean_shape[3 * (base + i) + 2] = -1.0;
        for (int c = 0; c < 3; ++c) {
          m.diffuse_mean[3 * (base + i) + c] = 0.5;
          m.spec_mean[3 * (base + i) + c] = 0.0;
        }
        m.uv.push_back(Vec2(0.5, 0.5));
      }
      m.triangles.push_back({base, base + 3, base + 1});
      m.triangles.push_back({base, base + 2, base + 3});
      MatX grow = MatX::Zero(3 * (base + 4), m.ks());
      grow.topRows(3 * base) = m.shape_basis;
      m.shape_basis = grow;
      grow = MatX::Zero(3 * (base + 4), m.ke());
      grow.topRows(3 * base) = m.expr_basis;
      m.expr_basis = grow;
      grow = MatX::Zero(3 * (base + 4), m.kr());
      grow.topRows(3 * base) = m.diffuse_basis;
      m.diffuse_basis = grow;
      grow = MatX::Zero(3 * (base + 4), m.kb());
      grow.topRows(3 * base) = m.spec_basis;
      m.spec_basis = grow;
    }
    return m;
  };

  MorphableModel with = build(true), without = build(false);
  auto shade_row = [&](MorphableModel& m) {
    Scene scene;
    scene.model = &m;
    scene.params = zero_params(m);
    scene.params.illum = single_light_stage(
        Vec3(3.0, 0.5, -3.0), Vec3(2.6, -0.4, -3.0), Vec3(3.4, -0.4, -3.0),
        0.25, Vec3::Constant(3.0));
    scene.camera = front_camera(48, 48, 60, 5);
    scene.params.T = scene.camera.T;
    RenderSettings st;
    st.width = st.height = 48;
    st.spp = 4;
    st.light_samples = 8;
    st.blur = false;
    return render(scene, st);
  };

  RenderOutput occluded = shade_row(with), open = shade_row(without);
  // Pixel x=8 maps to world x ~ -1.33 (shadow side), x=40 to +1.33 (lit).
  double shadowed = occluded.rgb.at(8, 24, 0);
  double lit = occluded.rgb.at(40, 24, 0);
  double control = open.rgb.at(8, 24, 0);
  CHECK(occluded.mask.at(8, 24, 0) == doctest::Approx(1.0));
  CHECK(lit > 0.01);
  CHECK(control > 0.002);
  CHECK(shadowed < 0.02 * control);
}

TEST_CASE("light parameter gradients match finite differences") {
  MorphableModel m = make_quad_model();
  Scene scene;
  scene.model = &m;
  scene.params = zero_params(m);
  LightStage stage = single_light_stage(Vec3(3.0, 0.5, -3.0),
                                        Vec3(2.6, -0.4, -3.0),
                                        Vec3(3.4, -0.4, -3.0), 0.25,
                                        Vec3(0.9, 0.8, 0.7));
  stage.lights[0].d = 1.2;
  stage.lights[0].p = Vec2(0.3, 0.4);
  scene.params.illum = stage;
  scene.camera = front_camera(32, 32, 30, 5);
  scene.params.T = scene.camera.T;

  RenderSettings st;
  st.width = st.height = 32;
  st.spp = 4;
  st.light_samples = 2;
  st.blur = true;
  ImageLoss loss = window_sq_loss();

  GradientRequest req;
  req.lights = true;
  RenderGradients g = render_with_gradients(scene, st, loss, req);
  REQUIRE(g.groups.count("lights") == 1);
  REQUIRE(g.groups["lights"].size() == 7);
  CHECK(g.loss == doctest::Approx(eval_loss(scene, st, loss)));

  auto fd = [&](int slot, double h) {
    VecX flat = illum_pack(scene.params.illum);
    Scene plus = scene, minus = scene;
    VecX fp = flat, fm = flat;
    fp[slot] += h;
    fm[slot] -= h;
    illum_unpack(fp, &plus.params.illum);
    illum_unpack(fm, &minus.params.illum);
    return (eval_loss(plus, st, loss) - eval_loss(minus, st, loss)) / (2 * h);
  };

  // Geometry knobs d, a, u, v: smooth under common random numbers (no
  // occluder in this scene, so no visibility flips).
  const char* names[4] = {"d", "a", "u", "v"};
  for (int slot = 0; slot < 4; ++slot) {
    INFO("light parameter ", names[slot]);
    double expect = fd(slot, 1e-4);
    double got = g.groups["lights"][slot];
    CHECK(got == doctest::Approx(expect).epsilon(2e-3));
  }
  // Intensity: the image is linear in i, so central differences are exact.
  for (int c = 0; c < 3; ++c) {
    double expect = fd(4 + c, 1e-3);
    double got = g.groups["lights"][4 + c];
    CHECK(got == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("spherical harmonic and environment gradients match finite differences") {
  MorphableModel m = make_quad_model();
  Scene base;
  base.model = &m;
  base.params = zero_params(m);
  base.camera = front_camera(16, 16, 15, 5);
  base.params.T = base.camera.T;

  RenderSettings st;
  st.width = st.height = 16;
  st.spp = 2;
  st.env_rays = 8;
  st.blur = true;
  ImageLoss loss = window_sq_loss();
  GradientRequest req;
  req.lights = true;

  auto fd_slot = [&](const Scene& scene, int slot, double h) {
    VecX flat = illum_pack(scene.params.illum);
    Scene plus = scene, minus = scene;
    VecX fp = flat, fm = flat;
    fp[slot] += h;
    fm[slot] -= h;
    illum_unpack(fp, &plus.params.illum);
    illum_unpack(fm, &minus.params.illum);
    return (eval_loss(plus, st, loss) - eval_loss(minus, st, loss)) / (2 * h);
  };

  SUBCASE("spherical harmonics") {
    SphericalHarmonics sh;
    sh.bands = 3;
    sh.coeffs = VecX::Zero(27);
    for (int c = 0; c < 3; ++c) sh.coeffs[c] = 2.0 - 0.3 * c;  // bright DC
    sh.coeffs[3 * 2 + 1] = 0.4;  // a band-1 lobe
    Scene scene = base;
    scene.params.illum = sh;

    RenderGradients g = render_with_gradients(scene, st, loss, req);
    REQUIRE(g.groups["lights"].size() == 27);
    // DC coefficients must matter; radiance is linear in them while the
    // positivity floor stays inactive.
    for (int slot : {0, 1, 2, 7}) {
      double expect = fd_slot(scene, slot, 1e-3);
      double got = g.groups["lights"][slot];
      INFO("sh coefficient ", slot);
      CHECK(got == doctest::Approx(expect).epsilon(1e-6));
    }
    CHECK(std::abs(g.groups["lights"][0]) > 1e-6);
  }

  SUBCASE("environment map") {
    EnvironmentMap env;
    env.map = Image(32, 32, 3);
    for (double& v : env.map.data) v = 0.4;
    Scene scene = base;
    scene.params.illum = env;

    RenderGradients g = render_with_gradients(scene, st, loss, req);
    REQUIRE(g.groups["lights"].size() == 32 * 32 * 3);
    // Probe the most influential texel (sampling only covers one
    // hemisphere, so many texels legitimately have zero gradient).
    int slot = 0;
    for (int k = 0; k < g.groups["lights"].size(); ++k)
      if (std::abs(g.groups["lights"][k]) >
          std::abs(g.groups["lights"][slot]))
        slot = k;
    REQUIRE(std::abs(g.groups["lights"][slot]) > 1e-9);
    double expect = fd_slot(scene, slot, 1e-3);
    CHECK(g.groups["lights"][slot] ==
          doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("albedo, pose, and shape gradients match finite differences") {
  MorphableModel m = make_quad_model();
  Scene scene;
  scene.model = &m;
  scene.params = zero_params(m);
  scene.params.beta[0] = 0.05;
  scene.params.gamma[0] = 0.5;
  scene.params.illum = single_light_stage(Vec3(3.0, 0.5, -3.0),
                                          Vec3(2.6, -0.4, -3.0),
                                          Vec3(3.4, -0.4, -3.0), 0.25,
                                          Vec3(0.9, 0.8, 0.7));
  scene.camera = front_camera(48, 48, 60, 5);
  scene.params.T = scene.camera.T;

  RenderSettings st;
  st.width = st.height = 48;
  st.spp = 4;
  st.light_samples = 2;
  st.blur = false;
  // Interior window: silhouette pixels never enter the loss, so frozen hit
  // selection and finite differences see the same smooth function.
  ImageLoss loss = window_sq_loss(16, 16, 32, 32);

  GradientRequest req;
  req.albedo = req.pose = req.shape = req.expression = true;
  RenderGradients g = render_with_gradients(scene, st, loss, req);
  REQUIRE(g.groups.count("albedo") == 1);
  REQUIRE(g.groups.count("pose") == 1);
  REQUIRE(g.groups.count("shape") == 1);
  REQUIRE(g.groups["albedo"].size() == 2);  // [beta; gamma]
  REQUIRE(g.groups["pose"].size() == 6);
  REQUIRE(g.groups["shape"].size() == 2);
  REQUIRE(g.groups["expression"].size() == 1);

  SUBCASE("albedo coefficients (linear, exact)") {
    for (int k = 0; k < 2; ++k) {
      Scene plus = scene, minus = scene;
      double h = 1e-3;
      if (k == 0) {
        plus.params.beta[0] += h;
        minus.params.beta[0] -= h;
      } else {
        plus.params.gamma[0] += h;
        minus.params.gamma[0] -= h;
      }
      double expect =
          (eval_loss(plus, st, loss) - eval_loss(minus, st, loss)) / (2 * h);
      INFO("albedo slot ", k);
      CHECK(g.groups["albedo"][k] ==
            doctest::Approx(expect).epsilon(1e-6));
    }
  }

  SUBCASE("camera translation") {
    for (int c = 0; c < 3; ++c) {
      Scene plus = scene, minus = scene;
      double h = 1e-5;
      plus.params.T[c] += h;
      minus.params.T[c] -= h;
      double expect =
          (eval_loss(plus, st, loss) - eval_loss(minus, st, loss)) / (2 * h);
      INFO("translation axis ", c);
      CHECK(g.groups["pose"][3 + c] ==
            doctest::Approx(expect).epsilon(1e-2));
    }
  }

  SUBCASE("camera rotation increment") {
    for (int c = 0; c < 3; ++c) {
      double h = 1e-5;
      Vec3 w = Vec3::Zero();
      Scene plus = scene, minus = scene;
      w[c] = h;
      plus.params.R = scene.params.R * rodrigues<double>(w);
      w[c] = -h;
      minus.params.R = scene.params.R * rodrigues<double>(w);
      double expect =
          (eval_loss(plus, st, loss) - eval_loss(minus, st, loss)) / (2 * h);
      INFO("rotation axis ", c);
      CHECK(g.groups["pose"][c] == doctest::Approx(expect).epsilon(1e-2));
    }
  }

  SUBCASE("shape and expression coefficients") {
    for (int k = 0; k < 2; ++k) {
      Scene plus = scene, minus = scene;
      double h = 1e-5;
      plus.params.alpha[k] += h;
      minus.params.alpha[k] -= h;
      double expect =
          (eval_loss(plus, st, loss) - eval_loss(minus, st, loss)) / (2 * h);
      INFO("shape slot ", k);
      CHECK(g.groups["shape"][k] == doctest::Approx(expect).epsilon(1e-2));
    }
    Scene plus = scene, minus = scene;
    double h = 1e-5;
    plus.params.delta[0] += h;
    minus.params.delta[0] -= h;
    double expect =
        (eval_loss(plus, st, loss) - eval_loss(minus, st, loss)) / (2 * h);
    CHECK(g.groups["expression"][0] ==
          doctest::Approx(expect).epsilon(1e-2));
  }
}

TEST_CASE("texture gradients match finite differences") {
  MorphableModel m = make_quad_model();
  Scene scene;
  scene.model = &m;
  scene.params = zero_params(m);
  scene.params.illum = single_light_stage(Vec3(3.0, 0.5, -3.0),
                                          Vec3(2.6, -0.4, -3.0),
                                          Vec3(3.4, -0.4, -3.0), 0.25,
                                          Vec3(0.9, 0.8, 0.7));
  scene.camera = front_camera(32, 32, 30, 5);
  scene.params.T = scene.camera.T;
  const int M = 8;
  scene.textures.diffuse = Image(M, M, 3);
  scene.textures.specular = Image(M, M, 3);
  scene.textures.roughness = Image(M, M, 1);
  Pcg32 rng(3, 4);
  for (double& v : scene.textures.diffuse.data)
    v = 0.4 + 0.3 * rng.next_double();
  for (double& v : scene.textures.specular.data)
    v = 0.05 + 0.1 * rng.next_double();
  for (double& v : scene.textures.roughness.data)
    v = 0.3 + 0.3 * rng.next_double();
  REQUIRE(scene.use_textures());

  RenderSettings st;
  st.width = st.height = 32;
  st.spp = 2;
  st.light_samples = 2;
  st.blur = true;
  ImageLoss loss = window_sq_loss();
  GradientRequest req;
  req.textures = true;
  req.albedo = true;  // must be ignored while texture maps are active

  RenderGradients g = render_with_gradients(scene, st, loss, req);
  REQUIRE(g.groups.count("diffuse_map") == 1);
  REQUIRE(g.groups.count("specular_map") == 1);
  REQUIRE(g.groups.count("roughness_map") == 1);
  CHECK(g.groups.count("albedo") == 0);
  REQUIRE(g.groups["diffuse_map"].size() == M * M * 3);
  REQUIRE(g.groups["roughness_map"].size() == M * M);

  auto argmax = [](const VecX& v) {
    int best = 0;
    for (int k = 0; k < v.size(); ++k)
      if (std::abs(v[k]) > std::abs(v[best])) best = k;
    return best;
  };

  // Diffuse texel: shading is linear in it, finite differences are exact.
  {
    int slot = argmax(g.groups["diffuse_map"]);
    REQUIRE(std::abs(g.groups["diffuse_map"][slot]) > 1e-9);
    double h = 1e-3;
    Scene plus = scene, minus = scene;
    plus.textures.diffuse.data[slot] += h;
    minus.textures.diffuse.data[slot] -= h;
    double expect =
        (eval_loss(plus, st, loss) - eval_loss(minus, st, loss)) / (2 * h);
    CHECK(g.groups["diffuse_map"][slot] ==
          doctest::Approx(expect).epsilon(1e-6));
  }
  // Roughness texel: strongly nonlinear lobe shape, coarser agreement.
  {
    int slot = argmax(g.groups["roughness_map"]);
    REQUIRE(std::abs(g.groups["roughness_map"][slot]) > 1e-12);
    double h = 1e-3;
    Scene plus = scene, minus = scene;
    plus.textures.roughness.data[slot] += h;
    minus.textures.roughness.data[slot] -= h;
    double expect =
        (eval_loss(plus, st, loss) - eval_loss(minus, st, loss)) / (2 * h);
    CHECK(g.groups["roughness_map"][slot] ==
          doctest::Approx(expect).epsilon(2e-2));
  }
}

TEST_CASE("gradient groups honor the request and scale with the loss") {
  MorphableModel m = make_toy_model(150, 3, 2, 2, 2, 5);
  Scene scene;
  scene.model = &m;
  scene.params = zero_params(m);
  LightStage stage = make_default_stage();
  scene.params.illum = stage;
  scene.camera = front_camera(24, 24, 30, 4);
  scene.params.T = scene.camera.T;

  RenderSettings st;
  st.width = st.height = 24;
  st.spp = 2;
  st.blur = true;

  GradientRequest req;
  req.shape = req.pose = true;
  RenderGradients g1 = render_with_gradients(scene, st, red_sum_loss(1.0), req);
  CHECK(g1.groups.size() == 2);
  CHECK(g1.groups.count("shape") == 1);
  CHECK(g1.groups.count("pose") == 1);
  CHECK(g1.groups.count("lights") == 0);
  CHECK(g1.groups["shape"].size() == 3);

  RenderGradients g2 = render_with_gradients(scene, st, red_sum_loss(2.0), req);
  for (const char* key : {"shape", "pose"}) {
    const VecX& a = g1.groups[key];
    const VecX& b = g2.groups[key];
    for (int k = 0; k < a.size(); ++k)
      CHECK(b[k] == doctest::Approx(2.0 * a[k]).epsilon(1e-9));
  }

  GradientRequest none;
  CHECK_THROWS_AS(render_with_gradients(scene, st, red_sum_loss(), none),
                  ValidationError);
}

// ===========================================================================
// Silhouette (edge) gradients. The scene is a single triangle inside a
// sphere-tiling stage of uniform radiance: the shading is then a smooth,
// nearly constant function of the view angle alone (computable by hemisphere
// quadrature), so the loss derivative w.r.t. geometry is carried almost
// entirely by silhouette motion and reduces to a boundary integral over the
// swept screen area.

namespace {

struct TriSceneParts {
  MorphableModel model;
  Scene scene;  // callers must point scene.model at this->model

  Scene& ready() {
    scene.model = &model;
    return scene;
  }
};

// One right triangle in the z=0 plane; shape basis column 0 moves vertex 1
// (the +x leg end) along world x.
TriSceneParts make_tri_scene() {
  TriSceneParts parts;
  MorphableModel& m = parts.model;
  const double P[3][2] = {{-0.8, -0.8}, {0.8, -0.8}, {-0.8, 0.8}};
  m.mean_shape.resize(9);
  m.diffuse_mean.resize(9);
  m.spec_mean.resize(9);
  for (int i = 0; i < 3; ++i) {
    m.mean_shape[3 * i] = P[i][0];
    m.mean_shape[3 * i + 1] = P[i][1];
    m.mean_shape[3 * i + 2] = 0.0;
    m.diffuse_mean[3 * i] = 0.8;
    m.diffuse_mean[3 * i + 1] = 0.6;
    m.diffuse_mean[3 * i + 2] = 0.4;
    for (int c = 0; c < 3; ++c) m.spec_mean[3 * i + c] = 0.0;
    m.uv.push_back(Vec2(0.5, 0.5));
  }
  m.triangles = {{0, 1, 2}};
  m.shape_basis = MatX::Zero(9, 1);
  m.shape_basis(3 * 1 + 0, 0) = 1.0;  // vertex 1, world x
  m.expr_basis = MatX::Zero(9, 1);
  m.diffuse_basis = MatX::Zero(9, 1);
  m.spec_basis = MatX::Zero(9, 1);
  m.shape_sigma = VecX::Ones(1);
  m.diffuse_sigma = VecX::Ones(1);
  m.spec_sigma = VecX::Ones(1);
  m.landmark_vertex_ids = {0, 1, 2};

  Scene& scene = parts.scene;
  scene.params = zero_params(m);
  scene.params.illum = uniform_enclosing_stage(0.5);
  scene.camera = front_camera(64, 64, 80, 5);
  scene.params.T = scene.camera.T;
  return parts;  // scene.model is bound by ready() at the use site
}

// Radiance leaving a surface point that is fully enclosed by a uniform
// emitter of radiance L, toward the unit eye direction `wo`: midpoint
// hemisphere quadrature of brdf * cos. Note the Schlick factor keeps a
// grazing specular lobe alive even at zero specular albedo, so this is
// strictly above the Lambertian value diffuse * L.
Vec3 enclosed_radiance(const ShadingPoint& sp, const Vec3& wo, double L) {
  const int nt = 128, np = 256;
  Vec3 nrm = sp.normal;
  Vec3 t0 = std::abs(nrm.x()) < 0.9 ? Vec3(nrm.cross(Vec3::UnitX()))
                                    : Vec3(nrm.cross(Vec3::UnitY()));
  t0.normalize();
  Vec3 t1 = nrm.cross(t0);
  Vec3 sum = Vec3::Zero();
  for (int i = 0; i < nt; ++i) {
    double th = (i + 0.5) * (kPi / 2) / nt;
    double ct = std::cos(th), sth = std::sin(th);
    for (int j = 0; j < np; ++j) {
      double ph = (j + 0.5) * (2.0 * kPi) / np;
      Vec3 l = sth * std::cos(ph) * t0 + sth * std::sin(ph) * t1 + ct * nrm;
      sum += brdf_eval(sp, l, wo) * (ct * sth);
    }
  }
  return Vec3(sum * (L * (kPi / 2) * (2.0 * kPi) / (double(nt) * np)));
}

// Radiance of the tri scene's plane (normal flipped toward the camera at
// (0,0,-5)) seen from that camera at the given world point.
Vec3 tri_scene_radiance(const Vec3& world_point) {
  ShadingPoint sp;
  sp.position = world_point;
  sp.normal = Vec3(0, 0, -1);
  sp.diffuse = Vec3(0.8, 0.6, 0.4);
  sp.specular = Vec3::Zero();
  sp.roughness = 0.5;
  Vec3 wo = (Vec3(0, 0, -5) - world_point).normalized();
  return enclosed_radiance(sp, wo, 0.5);
}

}  // namespace

TEST_CASE("uniform enclosing stage matches the hemisphere-quadrature radiance") {
  TriSceneParts parts = make_tri_scene();
  Scene& scene = parts.ready();
  RenderSettings st;
  st.width = st.height = 64;
  st.spp = 16;
  st.light_samples = 64;
  st.blur = false;
  RenderOutput out = render(scene, st);
  // Interior pixel (24,24): ray through its center hits the plane at
  // 5 * (px - 32, py - 32) / 80. Screen footprint: P0 -> (19.2, 19.2),
  // legs 25.6 px, so the pixel is fully covered.
  CHECK(out.mask.at(24, 24, 0) == doctest::Approx(1.0));
  Vec3 hit = 5.0 / 80.0 * Vec3(24.5 - 32.0, 24.5 - 32.0, 0.0);
  Vec3 expect = tri_scene_radiance(hit);
  // The red channel exceeds the Lambertian 0.8 * 0.5 by the grazing
  // specular tail (about 14% here).
  CHECK(expect.x() > 0.42);
  for (int c = 0; c < 3; ++c)
    CHECK(std::abs(out.rgb.at(24, 24, c) - expect[c]) < 0.012);
}

TEST_CASE("silhouette gradients recover the exact screen-area derivative") {
  TriSceneParts parts = make_tri_scene();
  Scene& scene = parts.ready();

  RenderSettings st;
  st.width = st.height = 64;
  st.spp = 4;
  st.light_samples = 4;
  st.blur = false;
  st.edge_samples = 8192;
  ImageLoss loss = red_sum_loss();

  GradientRequest req;
  req.shape = true;
  req.pose = true;

  // Boundary-integral target: the shape basis moves world vertex 1 by +1
  // in x, i.e. its screen x by focal/dist = 80/5 = 16 px. Only the
  // hypotenuse sweeps area (the bottom edge slides along itself), with
  // screen velocity (1-t) * (16, 0) from vertex 1 (t=0) to vertex 2 (t=1)
  // and outward normal (1,1)/sqrt(2), length 25.6 * sqrt(2):
  //   dLoss = 16 * 25.6 * int_0^1 radiance_red(p(t)) * (1 - t) dt.
  // With constant radiance this is the screen-area derivative
  // radiance * 0.5 * 16 * 25.6; the quadrature keeps the ~1% view-angle
  // variation along the edge.
  const Vec3 kV1(0.8, -0.8, 0.0), kV2(-0.8, 0.8, 0.0);
  double edge_integral = 0.0;
  const int nq = 64;
  for (int k = 0; k < nq; ++k) {
    double t = (k + 0.5) / nq;
    Vec3 p = Vec3(kV1 + t * (kV2 - kV1));
    edge_integral += tri_scene_radiance(p).x() * (1.0 - t) / nq;
  }
  const double expect_alpha = 16.0 * 25.6 * edge_integral;
  CHECK(expect_alpha > 80.0);  // sanity: above the Lambertian-only value

  std::map<std::string, VecX> edge =
      edge_sample_gradients(scene, st, loss, req);
  REQUIRE(edge.count("shape") == 1);
  REQUIRE(edge.count("pose") == 1);
  CHECK(edge["shape"][0] == doctest::Approx(expect_alpha).epsilon(0.05));

  // Interior gradients barely react: the shading is constant over the
  // surface, so geometric loss sensitivity lives on the silhouette alone.
  RenderGradients interior = render_with_gradients(scene, st, loss, req);
  CHECK(std::abs(interior.groups["shape"][0]) < 0.2 * expect_alpha);

  // Rigid x translation of the camera shifts the whole (closed) silhouette:
  // the boundary integral cancels to the screen-area derivative of zero.
  CHECK(std::abs(edge["pose"][3]) < 0.15 * expect_alpha);
}

TEST_CASE("doubling the silhouette sample count halves the estimator variance") {
  TriSceneParts parts = make_tri_scene();
  Scene& scene = parts.ready();
  ImageLoss loss = red_sum_loss();
  GradientRequest req;
  req.shape = true;

  auto variance_at = [&](int n_samples) {
    std::vector<double> vals;
    for (uint64_t seed = 1; seed <= 48; ++seed) {
      RenderSettings st;
      st.width = st.height = 64;
      st.spp = 2;
      st.light_samples = 1;
      st.blur = false;
      st.edge_samples = n_samples;
      st.seed = seed;
      vals.push_back(edge_sample_gradients(scene, st, loss, req)["shape"][0]);
    }
    double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
    double var = 0.0;
    for (double v : vals) var += sqr(v - mean);
    return var / (vals.size() - 1);
  };

  // Independent uniform edge sampling: variance ~ 1/N. An 8x sample ratio
  // separates the expected factor-8 drop from the 48-run sampling error of
  // the variance estimates themselves.
  double v1 = variance_at(48);
  double v2 = variance_at(384);
  REQUIRE(v1 > 0.0);
  REQUIRE(v2 > 0.0);
  CHECK(v1 / v2 > 2.5);
  CHECK(v1 / v2 < 25.0);
}

TEST_CASE("silhouette corrections vanish for an insensitive loss") {
  TriSceneParts parts = make_tri_scene();
  Scene& scene = parts.ready();
  ImageLoss constant;
  constant.value = [](const Image&, const Image&) { return 3.0; };
  constant.grad = [](const Image& rgb, const Image&) {
    return Image(rgb.width, rgb.height, 3);
  };
  RenderSettings st;
  st.width = st.height = 64;
  st.spp = 2;
  st.blur = false;
  st.edge_samples = 128;
  GradientRequest req;
  req.shape = req.expression = req.pose = true;
  auto edge = edge_sample_gradients(scene, st, constant, req);
  for (const auto& [name, vec] : edge) {
    INFO("group ", name);
    for (int k = 0; k < vec.size(); ++k) CHECK(vec[k] == 0.0);
  }

  GradientRequest photometric_only;
  photometric_only.lights = true;
  CHECK_THROWS_AS(
      edge_sample_gradients(scene, st, constant, photometric_only),
      ValidationError);
}

TEST_CASE("illumination parameters pack and unpack consistently") {
  SUBCASE("area light stage") {
    LightStage stage = make_default_stage();
    stage.lights[3].d = 2.5;
    stage.lights[3].a = 0.7;
    stage.lights[3].p = Vec2(0.2, 0.3);
    stage.lights[3].i = Vec3(0.1, 0.2, 0.3);
    IlluminationModel illum = stage;
    VecX flat = illum_pack(illum);
    REQUIRE(flat.size() == static_cast<int>(7 * stage.lights.size()));
    CHECK(flat[7 * 3 + 0] == 2.5);
    CHECK(flat[7 * 3 + 1] == 0.7);
    CHECK(flat[7 * 3 + 2] == 0.2);
    CHECK(flat[7 * 3 + 6] == 0.3);

    flat[7 * 3 + 0] = -4.0;  // distance must stay positive
    flat[7 * 3 + 1] = 1.8;   // area fraction capped at 1
    flat[7 * 3 + 4] = -0.5;  // intensity floored at 0
    flat[7 * 5 + 2] = 1.4;   // barycentric u pulled into the face
    illum_unpack(flat, &illum);
    const LightStage& round = std::get<LightStage>(illum);
    CHECK(round.lights[3].d > 0.0);
    CHECK(round.lights[3].a == 1.0);
    CHECK(round.lights[3].i.x() == 0.0);
    CHECK(round.lights[5].p.x() + round.lights[5].p.y() <= 0.99);
    round.validate();

    VecX wrong = VecX::Zero(flat.size() + 1);
    CHECK_THROWS_AS(illum_unpack(wrong, &illum), ValidationError);
  }

  SUBCASE("fixed stage exposes intensities only") {
    FixedLightStage fixed{make_default_stage()};
    IlluminationModel illum = fixed;
    VecX flat = illum_pack(illum);
    REQUIRE(flat.size() == static_cast<int>(3 * fixed.stage.lights.size()));
    flat[4] = 0.9;
    illum_unpack(flat, &illum);
    CHECK(std::get<FixedLightStage>(illum).stage.lights[1].i.y() == 0.9);
    CHECK(std::get<FixedLightStage>(illum).stage.lights[1].d ==
          fixed.stage.lights[1].d);
  }

  SUBCASE("spherical harmonics and environment map") {
    SphericalHarmonics sh;
    sh.bands = 3;
    sh.coeffs = VecX::LinSpaced(27, -1.0, 1.0);
    IlluminationModel illum = sh;
    VecX flat = illum_pack(illum);
    CHECK((flat - sh.coeffs).norm() == 0.0);
    flat[5] = -2.0;  // SH coefficients may be negative
    illum_unpack(flat, &illum);
    CHECK(std::get<SphericalHarmonics>(illum).coeffs[5] == -2.0);

    EnvironmentMap env;
    env.map = Image(32, 32, 3);
    for (double& v : env.map.data) v = 0.25;
    illum = env;
    flat = illum_pack(illum);
    REQUIRE(flat.size() == 32 * 32 * 3);
    flat[10] = -1.0;
    illum_unpack(flat, &illum);
    CHECK(std::get<EnvironmentMap>(illum).map.data[10] == 0.0);  // floored
    CHECK(std::get<EnvironmentMap>(illum).map.data[11] == 0.25);
  }
}
