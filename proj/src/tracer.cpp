// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsir/tracer.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <variant>

#include "lsir/ad.hpp"
#include "lsir/rng.hpp"

namespace lsir {

// ---------------------------------------------------------------------------
// Validation and small utilities

void RenderSettings::validate() const {
  if (width < 1 || height < 1)
    throw ValidationError("render size must be at least 1x1");
  if (spp < 1) throw ValidationError("spp must be >= 1");
  if (light_samples < 1) throw ValidationError("light_samples must be >= 1");
  if (env_rays < 1) throw ValidationError("env_rays must be >= 1");
  if (edge_samples < 0) throw ValidationError("edge_samples must be >= 0");
}

void GradientRequest::validate() const {
  if (!any())
    throw ValidationError("gradient request selects no parameter group");
}

Camera Scene::posed_camera() const {
  Camera c = camera;
  c.R = params.R;
  c.T = params.T;
  return c;
}

void Scene::validate() const {
  if (model == nullptr) throw ValidationError("scene has no face model");
  if (model->vertex_count() == 0) throw ValidationError("face model is empty");
  auto check_dim = [](const VecX& v, int want, const char* name) {
    if (v.size() != want)
      throw ValidationError(std::string(name) + " coefficient count mismatch");
  };
  check_dim(params.alpha, model->ks(), "shape");
  check_dim(params.delta, model->ke(), "expression");
  check_dim(params.beta, model->kr(), "diffuse albedo");
  check_dim(params.gamma, model->kb(), "specular albedo");
  if (!(base_roughness > 0.0))
    throw ValidationError("base roughness must be > 0");
  if (fresnel_power != 1 && fresnel_power != 5)
    throw ValidationError("fresnel power must be 1 or 5");
  if (use_textures()) textures.validate();
  std::visit(
      [](const auto& m) {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>,
                                     FixedLightStage>)
          m.stage.validate();
        else
          m.validate();
      },
      params.illum);
}

Camera scaled_camera(const Camera& cam, int width, int height) {
  if (cam.width <= 0 || cam.height <= 0)
    throw ValidationError("camera has no reference resolution to scale from");
  Camera out = cam;
  double sx = static_cast<double>(width) / cam.width;
  double sy = static_cast<double>(height) / cam.height;
  out.focal = cam.focal * sx;
  out.cx = cam.cx * sx;
  out.cy = cam.cy * sy;
  out.width = width;
  out.height = height;
  return out;
}

// ---------------------------------------------------------------------------
// Parameter packing

VecX illum_pack(const IlluminationModel& illum) {
  if (const auto* stage = std::get_if<LightStage>(&illum)) {
    VecX flat(7 * stage->lights.size());
    for (size_t j = 0; j < stage->lights.size(); ++j) {
      const AreaLight& l = stage->lights[j];
      flat.segment<7>(7 * j) << l.d, l.a, l.p.x(), l.p.y(), l.i.x(), l.i.y(),
          l.i.z();
    }
    return flat;
  }
  if (const auto* fixed = std::get_if<FixedLightStage>(&illum)) {
    VecX flat(3 * fixed->stage.lights.size());
    for (size_t j = 0; j < fixed->stage.lights.size(); ++j)
      flat.segment<3>(3 * j) = fixed->stage.lights[j].i;
    return flat;
  }
  if (const auto* sh = std::get_if<SphericalHarmonics>(&illum))
    return sh->coeffs;
  const auto& env = std::get<EnvironmentMap>(illum);
  return Eigen::Map<const VecX>(env.map.data.data(), env.map.data.size());
}

namespace {

// Hard floors keeping a stage renderable no matter what an optimizer step
// produced; the soft box penalties do the real constraining.
void sanitize_light(AreaLight* l) {
  l->d = std::max(l->d, 1e-3);
  l->a = std::min(std::max(l->a, 1e-4), 1.0);
  double u = std::min(std::max(l->p.x(), 0.01), 0.98);
  double v = std::min(std::max(l->p.y(), 0.01), 0.98);
  double s = u + v;
  if (s > 0.98) {
    u *= 0.98 / s;
    v *= 0.98 / s;
  }
  l->p = Vec2(u, v);
  l->i = l->i.cwiseMax(0.0);
}

}  // namespace

void illum_unpack(const VecX& flat, IlluminationModel* illum) {
  if (auto* stage = std::get_if<LightStage>(illum)) {
    if (flat.size() != static_cast<int>(7 * stage->lights.size()))
      throw ValidationError("light stage parameter vector size mismatch");
    for (size_t j = 0; j < stage->lights.size(); ++j) {
      AreaLight& l = stage->lights[j];
      l.d = flat[7 * j + 0];
      l.a = flat[7 * j + 1];
      l.p = Vec2(flat[7 * j + 2], flat[7 * j + 3]);
      l.i = Vec3(flat[7 * j + 4], flat[7 * j + 5], flat[7 * j + 6]);
      sanitize_light(&l);
    }
    return;
  }
  if (auto* fixed = std::get_if<FixedLightStage>(illum)) {
    if (flat.size() != static_cast<int>(3 * fixed->stage.lights.size()))
      throw ValidationError("fixed stage parameter vector size mismatch");
    for (size_t j = 0; j < fixed->stage.lights.size(); ++j) {
      fixed->stage.lights[j].i = flat.segment<3>(3 * j).cwiseMax(0.0);
    }
    return;
  }
  if (auto* sh = std::get_if<SphericalHarmonics>(illum)) {
    if (flat.size() != sh->coeffs.size())
      throw ValidationError("SH parameter vector size mismatch");
    sh->coeffs = flat;
    return;
  }
  auto& env = std::get<EnvironmentMap>(*illum);
  if (flat.size() != static_cast<int>(env.map.data.size()))
    throw ValidationError("environment map parameter vector size mismatch");
  for (size_t k = 0; k < env.map.data.size(); ++k)
    env.map.data[k] = std::max(flat[k], 0.0);
}

// ---------------------------------------------------------------------------
// Gaussian smoothing

// 3x3, sigma = 1, normalized: w(d) = exp(-d^2/2) / sum.
static const std::array<double, 9>& blur_weights() {
  static const std::array<double, 9> w = [] {
    std::array<double, 9> k{};
    double sum = 0.0;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        k[(dy + 1) * 3 + dx + 1] = std::exp(-0.5 * (dx * dx + dy * dy));
        sum += k[(dy + 1) * 3 + dx + 1];
      }
    for (double& v : k) v /= sum;
    return k;
  }();
  return w;
}

Image gaussian_smooth(const Image& img) {
  const auto& k = blur_weights();
  Image out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int dy = -1; dy <= 1; ++dy) {
        int sy = std::clamp(y + dy, 0, img.height - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          int sx = std::clamp(x + dx, 0, img.width - 1);
          double w = k[(dy + 1) * 3 + dx + 1];
          for (int c = 0; c < img.channels; ++c)
            out.at(x, y, c) += w * img.at(sx, sy, c);
        }
      }
    }
  }
  return out;
}

Image gaussian_smooth_adjoint(const Image& grad) {
  const auto& k = blur_weights();
  Image out(grad.width, grad.height, grad.channels);
  for (int y = 0; y < grad.height; ++y) {
    for (int x = 0; x < grad.width; ++x) {
      for (int dy = -1; dy <= 1; ++dy) {
        int sy = std::clamp(y + dy, 0, grad.height - 1);
        for (int dx = -1; dx <= 1; ++dx) {
          int sx = std::clamp(x + dx, 0, grad.width - 1);
          double w = k[(dy + 1) * 3 + dx + 1];
          for (int c = 0; c < grad.channels; ++c)
            out.at(sx, sy, c) += w * grad.at(x, y, c);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Templated scene context: the same shading code runs on plain doubles for
// the forward pass and on tape scalars for the gradient pass.

namespace {

template <class S>
S param_leaf(double v, bool enabled, std::vector<int32_t>* idx) {
  if constexpr (std::is_same_v<S, Var>) {
    if (enabled) {
      Var leaf = Var::leaf(v);
      if (idx) idx->push_back(leaf.idx);
      return leaf;
    }
    return Var(v);
  } else {
    (void)enabled;
    (void)idx;
    return v;
  }
}

template <class S>
S clamp01_t(const S& v) {
  if (value(v) < 0.0) return S(0.0);
  if (value(v) > 1.0) return S(1.0);
  return v;
}

template <class S>
S floor_at(const S& v, double lo) {
  return value(v) < lo ? S(lo) : v;
}

template <class S>
Vector3<S> normalize_t(const Vector3<S>& v) {
  using std::sqrt;
  S n2 = v.squaredNorm();
  if (value(n2) < 1e-30) return Vector3<S>(S(0.0), S(0.0), S(1.0));
  return v / sqrt(n2);
}

// Tape indices of every leaf, in the packing order of its group.
struct LeafIndex {
  std::vector<int32_t> lights;
  std::vector<int32_t> shape, expression, albedo, pose;
  std::vector<int32_t> dmap, smap, rmap;
};

template <class S>
struct ShadeContext {
  // Geometry, world space
  std::vector<Vector3<S>> verts;
  std::vector<Vector3<S>> normals;
  std::vector<std::array<int, 3>> tris;
  std::vector<Vec2> uv;

  // Statistical per-vertex albedo (texture-less mode)
  std::vector<Vector3<S>> diffuse_v;
  std::vector<Vector3<S>> specular_v;
  S roughness_const = S(0.5);

  // Personalized texture maps
  bool use_textures = false;
  int tex_size = 0;
  std::vector<S> tex_diffuse, tex_specular, tex_roughness;

  // Illumination: 0 = area-light stage, 1 = SH, 2 = environment map
  int illum_kind = 0;
  std::vector<LightTriangleT<S>> light_tris;
  std::vector<Vector3<S>> light_rad;
  int sh_bands = 0;
  std::vector<S> sh_coeffs;
  int env_width = 0, env_height = 0;
  std::vector<S> env_texels;

  // Camera pose
  Eigen::Matrix<S, 3, 3> R;
  Vector3<S> T;
  int fresnel_power = 1;

  // Double-precision mirrors for ray casting
  std::vector<Vec3> verts_d;
  Bvh bvh;
  double shadow_eps = 1e-6;
};

template <class S>
ShadeContext<S> build_context(const Scene& scene, const GradientRequest& req,
                              LeafIndex* leaves) {
  const MorphableModel& m = *scene.model;
  const SceneParams& p = scene.params;
  ShadeContext<S> ctx;
  ctx.tris = m.triangles;
  ctx.uv = m.uv;
  ctx.fresnel_power = scene.fresnel_power;

  // Illumination leaves, packed exactly like illum_pack.
  if (const auto* stage = std::get_if<LightStage>(&p.illum)) {
    ctx.illum_kind = 0;
    for (const AreaLight& l : stage->lights) {
      S d = param_leaf<S>(l.d, req.lights, leaves ? &leaves->lights : nullptr);
      S a = param_leaf<S>(l.a, req.lights, leaves ? &leaves->lights : nullptr);
      Vector2<S> pp(
          param_leaf<S>(l.p.x(), req.lights, leaves ? &leaves->lights : nullptr),
          param_leaf<S>(l.p.y(), req.lights, leaves ? &leaves->lights : nullptr));
      Vector3<S> i;
      for (int c = 0; c < 3; ++c)
        i[c] = param_leaf<S>(l.i[c], req.lights,
                             leaves ? &leaves->lights : nullptr);
      ctx.light_tris.push_back(light_world_geometry_t<S>(
          stage->base, static_cast<int>(ctx.light_tris.size()), d, a, pp));
      Vector3<S> rad = light_radiance_t<S>(a, i);
      for (int c = 0; c < 3; ++c) rad[c] = floor_at(rad[c], 0.0);
      ctx.light_rad.push_back(rad);
    }
  } else if (const auto* fixed = std::get_if<FixedLightStage>(&p.illum)) {
    ctx.illum_kind = 0;
    for (const AreaLight& l : fixed->stage.lights) {
      S d = S(l.d), a = S(l.a);
      Vector2<S> pp(S(l.p.x()), S(l.p.y()));
      Vector3<S> i;
      for (int c = 0; c < 3; ++c)
        i[c] = param_leaf<S>(l.i[c], req.lights,
                             leaves ? &leaves->lights : nullptr);
      ctx.light_tris.push_back(light_world_geometry_t<S>(
          fixed->stage.base, static_cast<int>(ctx.light_tris.size()), d, a,
          pp));
      Vector3<S> rad = light_radiance_t<S>(a, i);
      for (int c = 0; c < 3; ++c) rad[c] = floor_at(rad[c], 0.0);
      ctx.light_rad.push_back(rad);
    }
  } else if (const auto* sh = std::get_if<SphericalHarmonics>(&p.illum)) {
    ctx.illum_kind = 1;
    ctx.sh_bands = sh->bands;
    ctx.sh_coeffs.reserve(sh->coeffs.size());
    for (int k = 0; k < sh->coeffs.size(); ++k)
      ctx.sh_coeffs.push_back(param_leaf<S>(
          sh->coeffs[k], req.lights, leaves ? &leaves->lights : nullptr));
  } else {
    const auto& env = std::get<EnvironmentMap>(p.illum);
    ctx.illum_kind = 2;
    ctx.env_width = env.map.width;
    ctx.env_height = env.map.height;
    ctx.env_texels.reserve(env.map.data.size());
    for (double v : env.map.data)
      ctx.env_texels.push_back(
          param_leaf<S>(v, req.lights, leaves ? &leaves->lights : nullptr));
  }

  // Geometry coefficients.
  const int n = m.vertex_count();
  std::vector<S> alpha(m.ks()), delta(m.ke());
  for (int k = 0; k < m.ks(); ++k)
    alpha[k] = param_leaf<S>(p.alpha[k], req.shape,
                             leaves ? &leaves->shape : nullptr);
  for (int k = 0; k < m.ke(); ++k)
    delta[k] = param_leaf<S>(p.delta[k], req.expression,
                             leaves ? &leaves->expression : nullptr);
  ctx.verts.resize(n);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) {
      S v = S(m.mean_shape[3 * i + c]);
      for (int k = 0; k < m.ks(); ++k) {
        double b = m.shape_basis(3 * i + c, k);
        if (b != 0.0) v = v + S(b) * alpha[k];
      }
      for (int k = 0; k < m.ke(); ++k) {
        double b = m.expr_basis(3 * i + c, k);
        if (b != 0.0) v = v + S(b) * delta[k];
      }
      ctx.verts[i][c] = v;
    }
  }

  // Area-weighted vertex normals from the (possibly differentiable) verts.
  ctx.normals.assign(n, Vector3<S>(S(0.0), S(0.0), S(0.0)));
  for (const auto& t : ctx.tris) {
    Vector3<S> e1 = ctx.verts[t[1]] - ctx.verts[t[0]];
    Vector3<S> e2 = ctx.verts[t[2]] - ctx.verts[t[0]];
    Vector3<S> fn = e1.cross(e2);
    for (int k = 0; k < 3; ++k) ctx.normals[t[k]] += fn;
  }
  for (int i = 0; i < n; ++i) ctx.normals[i] = normalize_t(ctx.normals[i]);

  // Skin attributes.
  ctx.use_textures = scene.use_textures();
  if (ctx.use_textures) {
    const TextureSet& t = scene.textures;
    ctx.tex_size = t.size();
    auto fill = [&](const Image& img, std::vector<S>* out,
                    std::vector<int32_t>* idx) {
      out->reserve(img.data.size());
      for (double v : img.data)
        out->push_back(param_leaf<S>(v, req.textures, idx));
    };
    fill(t.diffuse, &ctx.tex_diffuse, leaves ? &leaves->dmap : nullptr);
    fill(t.specular, &ctx.tex_specular, leaves ? &leaves->smap : nullptr);
    fill(t.roughness, &ctx.tex_roughness, leaves ? &leaves->rmap : nullptr);
  } else {
    std::vector<S> beta(m.kr()), gamma(m.kb());
    for (int k = 0; k < m.kr(); ++k)
      beta[k] = param_leaf<S>(p.beta[k], req.albedo,
                              leaves ? &leaves->albedo : nullptr);
    for (int k = 0; k < m.kb(); ++k)
      gamma[k] = param_leaf<S>(p.gamma[k], req.albedo,
                               leaves ? &leaves->albedo : nullptr);
    ctx.diffuse_v.resize(n);
    ctx.specular_v.resize(n);
    for (int i = 0; i < n; ++i) {
      for (int c = 0; c < 3; ++c) {
        S cd = S(m.diffuse_mean[3 * i + c]);
        for (int k = 0; k < m.kr(); ++k) {
          double b = m.diffuse_basis(3 * i + c, k);
          if (b != 0.0) cd = cd + S(b) * beta[k];
        }
        ctx.diffuse_v[i][c] = clamp01_t(cd);
        S cs = S(m.spec_mean[3 * i + c]);
        for (int k = 0; k < m.kb(); ++k) {
          double b = m.spec_basis(3 * i + c, k);
          if (b != 0.0) cs = cs + S(b) * gamma[k];
        }
        ctx.specular_v[i][c] = clamp01_t(cs);
      }
    }
    ctx.roughness_const = S(scene.base_roughness);
  }

  // Camera pose: a differentiable increment about the current rotation.
  {
    Vector3<S> w(
        param_leaf<S>(0.0, req.pose, leaves ? &leaves->pose : nullptr),
        param_leaf<S>(0.0, req.pose, leaves ? &leaves->pose : nullptr),
        param_leaf<S>(0.0, req.pose, leaves ? &leaves->pose : nullptr));
    Vector3<S> t(
        param_leaf<S>(p.T.x(), req.pose, leaves ? &leaves->pose : nullptr),
        param_leaf<S>(p.T.y(), req.pose, leaves ? &leaves->pose : nullptr),
        param_leaf<S>(p.T.z(), req.pose, leaves ? &leaves->pose : nullptr));
    Eigen::Matrix<S, 3, 3> r0;
    for (int rr = 0; rr < 3; ++rr)
      for (int cc = 0; cc < 3; ++cc) r0(rr, cc) = S(p.R(rr, cc));
    ctx.R = r0 * rodrigues<S>(w);
    ctx.T = t;
  }

  // Ray-casting mirrors.
  ctx.verts_d.resize(n);
  Vec3 lo = Vec3::Constant(1e300), hi = -lo;
  for (int i = 0; i < n; ++i) {
    ctx.verts_d[i] =
        Vec3(value(ctx.verts[i][0]), value(ctx.verts[i][1]),
             value(ctx.verts[i][2]));
    lo = lo.cwiseMin(ctx.verts_d[i]);
    hi = hi.cwiseMax(ctx.verts_d[i]);
  }
  ctx.bvh = build_bvh(ctx.verts_d, ctx.tris);
  ctx.shadow_eps = 1e-4 * std::max((hi - lo).norm(), 1e-6);
  return ctx;
}

// Differentiable Moller-Trumbore for a triangle the caster already chose.
template <class S>
void intersect_triangle_t(const Vector3<S>& orig, const Vector3<S>& dir,
                          const Vector3<S>& a, const Vector3<S>& b,
                          const Vector3<S>& c, S* u, S* v) {
  Vector3<S> e1 = b - a, e2 = c - a;
  Vector3<S> pv = dir.cross(e2);
  S inv = S(1.0) / e1.dot(pv);
  Vector3<S> tv = orig - a;
  *u = tv.dot(pv) * inv;
  Vector3<S> qv = tv.cross(e1);
  *v = dir.dot(qv) * inv;
}

// Bilinear fetch from a flat channel-interleaved map of tape scalars; texel
// centers at (i+0.5)/M, edge-clamped, mirroring sample_texture.
template <class S, int C>
Eigen::Matrix<S, C, 1> sample_texels(const std::vector<S>& texels, int size,
                                     const S& u, const S& v) {
  S x = u * S(static_cast<double>(size)) - S(0.5);
  S y = v * S(static_cast<double>(size)) - S(0.5);
  if (value(x) < 0.0) x = S(0.0);
  if (value(x) > size - 1.0) x = S(size - 1.0);
  if (value(y) < 0.0) y = S(0.0);
  if (value(y) > size - 1.0) y = S(size - 1.0);
  int x0 = std::min(static_cast<int>(value(x)), size - 1);
  int y0 = std::min(static_cast<int>(value(y)), size - 1);
  int x1 = std::min(x0 + 1, size - 1);
  int y1 = std::min(y0 + 1, size - 1);
  S ax = x - S(static_cast<double>(x0));
  S ay = y - S(static_cast<double>(y0));
  auto texel = [&](int xx, int yy, int c) -> const S& {
    return texels[(static_cast<size_t>(yy) * size + xx) * C + c];
  };
  Eigen::Matrix<S, C, 1> out;
  for (int c = 0; c < C; ++c) {
    S top = texel(x0, y0, c) + ax * (texel(x1, y0, c) - texel(x0, y0, c));
    S bot = texel(x0, y1, c) + ax * (texel(x1, y1, c) - texel(x0, y1, c));
    out[c] = top + ay * (bot - top);
  }
  return out;
}

// Bilinear environment fetch (wrap-x, clamp-y) over tape scalars; the texel
// weights are plain doubles because the lookup direction is held constant.
template <class S>
Vector3<S> sample_env_texels(const std::vector<S>& texels, int width,
                             int height, const Vec3& dir) {
  Vec2 uv = envmap_uv(dir);
  double x = uv.x() * width - 0.5;
  double y = std::clamp(uv.y() * height - 0.5, 0.0,
                        static_cast<double>(height - 1));
  int x0 = static_cast<int>(std::floor(x));
  int y0 = static_cast<int>(std::floor(y));
  double ax = x - x0, ay = y - y0;
  int y1 = std::min(y0 + 1, height - 1);
  auto wrap = [&](int xi) { return ((xi % width) + width) % width; };
  auto texel = [&](int xx, int yy, int c) -> const S& {
    return texels[(static_cast<size_t>(yy) * width + xx) * 3 + c];
  };
  Vector3<S> out;
  for (int c = 0; c < 3; ++c) {
    out[c] = texel(wrap(x0), y0, c) * S((1 - ax) * (1 - ay)) +
             texel(wrap(x0 + 1), y0, c) * S(ax * (1 - ay)) +
             texel(wrap(x0), y1, c) * S((1 - ax) * ay) +
             texel(wrap(x0 + 1), y1, c) * S(ax * ay);
  }
  return out;
}

// Branchless orthonormal frame around a unit vector.
void make_frame(const Vec3& n, Vec3* t, Vec3* b) {
  double sign = std::copysign(1.0, n.z());
  double a = -1.0 / (sign + n.z());
  double bb = n.x() * n.y() * a;
  *t = Vec3(1.0 + sign * n.x() * n.x() * a, sign * bb, -sign * n.x());
  *b = Vec3(bb, sign + n.y() * n.y() * a, -n.y());
}

// Shades one camera sample through screen point (px, py). Light-sampling
// random numbers come from `rng` in a fixed draw order so that skipped
// contributions do not shift the stream. Returns false on a miss.
template <class S>
bool shade_camera_sample(const ShadeContext<S>& ctx, const Camera& cam,
                         const RenderSettings& st, double px, double py,
                         Pcg32& rng, Vector3<S>* out) {
  Vec3 dir_cam = Vec3((px - cam.cx) / cam.focal, (py - cam.cy) / cam.focal, 1.0)
                     .normalized();
  Vector3<S> orig = ctx.T;
  Vector3<S> dir = ctx.R * to_vector3<S>(dir_cam);
  Vec3 orig_d(value(orig[0]), value(orig[1]), value(orig[2]));
  Vec3 dir_d(value(dir[0]), value(dir[1]), value(dir[2]));

  RayHit hit = closest_hit(ctx.bvh, ctx.verts_d, ctx.tris, orig_d, dir_d,
                           1e-6, std::numeric_limits<double>::infinity());
  if (!hit.valid()) return false;

  const auto& tv = ctx.tris[hit.tri];
  const Vector3<S>&A = ctx.verts[tv[0]], &B = ctx.verts[tv[1]],
        &C = ctx.verts[tv[2]];
  S u, v;
  intersect_triangle_t<S>(orig, dir, A, B, C, &u, &v);
  S w0 = S(1.0) - u - v;
  Vector3<S> x = A * w0 + B * u + C * v;
  Vector3<S> n = normalize_t<S>(Vector3<S>(ctx.normals[tv[0]] * w0 +
                                           ctx.normals[tv[1]] * u +
                                           ctx.normals[tv[2]] * v));
  // Two-sided shading: orient the interpolated normal toward the viewer.
  if (value(n.dot(dir)) > 0.0) n = -n;
  Vector3<S> o = -dir;

  Vector3<S> albedo_d, albedo_s;
  S rough;
  if (ctx.use_textures) {
    Vector2<S> uvh = to_vector2<S>(ctx.uv[tv[0]]) * w0 +
                     to_vector2<S>(ctx.uv[tv[1]]) * u +
                     to_vector2<S>(ctx.uv[tv[2]]) * v;
    albedo_d = sample_texels<S, 3>(ctx.tex_diffuse, ctx.tex_size, uvh.x(),
                                   uvh.y());
    albedo_s = sample_texels<S, 3>(ctx.tex_specular, ctx.tex_size, uvh.x(),
                                   uvh.y());
    Eigen::Matrix<S, 1, 1> r1 =
        sample_texels<S, 1>(ctx.tex_roughness, ctx.tex_size, uvh.x(), uvh.y());
    rough = floor_at(r1[0], kMinRoughness);
  } else {
    albedo_d = ctx.diffuse_v[tv[0]] * w0 + ctx.diffuse_v[tv[1]] * u +
               ctx.diffuse_v[tv[2]] * v;
    albedo_s = ctx.specular_v[tv[0]] * w0 + ctx.specular_v[tv[1]] * u +
               ctx.specular_v[tv[2]] * v;
    rough = ctx.roughness_const;
  }

  Vec3 x_d(value(x[0]), value(x[1]), value(x[2]));
  Vector3<S> total(S(0.0), S(0.0), S(0.0));

  if (ctx.illum_kind == 0) {
    for (size_t j = 0; j < ctx.light_tris.size(); ++j) {
      for (int k = 0; k < st.light_samples; ++k) {
        double u1 = rng.next_double();
        double u2 = rng.next_double();
        const Vector3<S>& rad = ctx.light_rad[j];
        if (std::is_same_v<S, double> && value(rad[0]) == 0.0 &&
            value(rad[1]) == 0.0 && value(rad[2]) == 0.0)
          continue;  // dark light adds nothing on the forward pass
        auto [pt, pdf] = sample_light_t<S>(ctx.light_tris[j], u1, u2);
        Vector3<S> lvec = pt - x;
        S r2 = lvec.squaredNorm();
        if (value(r2) < 1e-12) continue;
        using std::sqrt;
        S dist = sqrt(r2);
        Vector3<S> l = lvec / dist;
        S cos_s = n.dot(l);
        if (value(cos_s) <= 0.0) continue;
        S cos_l = ctx.light_tris[j].normal.dot(-l);
        if (value(cos_l) <= 0.0) continue;  // one-sided emitter
        Vec3 l_d(value(l[0]), value(l[1]), value(l[2]));
        double dist_d = value(dist);
        double tmax = dist_d - 2.0 * ctx.shadow_eps;
        if (tmax > 0.0 &&
            any_hit(ctx.bvh, ctx.verts_d, ctx.tris,
                    x_d + l_d * ctx.shadow_eps, l_d, 0.0, tmax))
          continue;
        Vector3<S> f = brdf_core<S>(n, l, o, albedo_d, albedo_s, rough,
                                    ctx.fresnel_power);
        S geom = cos_s * cos_l / (r2 * pdf * S(double(st.light_samples)));
        total += f.cwiseProduct(rad) * geom;
      }
    }
  } else {
    Vec3 n_d(value(n[0]), value(n[1]), value(n[2]));
    Vec3 tb, bb;
    make_frame(n_d, &tb, &bb);
    for (int k = 0; k < st.env_rays; ++k) {
      double u1 = rng.next_double();
      double u2 = rng.next_double();
      double z = std::sqrt(u1);  // cosine-weighted: pdf = cos/pi
      double r = std::sqrt(std::max(0.0, 1.0 - u1));
      double phi = 2.0 * kPi * u2;
      Vec3 wdir = (tb * (r * std::cos(phi)) + bb * (r * std::sin(phi)) +
                   n_d * z)
                      .normalized();
      double cos_d = n_d.dot(wdir);
      if (cos_d < 1e-9) continue;
      if (any_hit(ctx.bvh, ctx.verts_d, ctx.tris,
                  x_d + wdir * ctx.shadow_eps, wdir, 0.0, 1e30))
        continue;
      Vector3<S> L;
      if (ctx.illum_kind == 1) {
        std::vector<double> basis;
        sh_basis(ctx.sh_bands, wdir, &basis);
        for (int c = 0; c < 3; ++c) {
          S acc(0.0);
          for (size_t q = 0; q < basis.size(); ++q)
            if (basis[q] != 0.0) acc = acc + S(basis[q]) * ctx.sh_coeffs[3 * q + c];
          L[c] = floor_at(acc, 0.0);
        }
      } else {
        L = sample_env_texels<S>(ctx.env_texels, ctx.env_width,
                                 ctx.env_height, wdir);
        for (int c = 0; c < 3; ++c) L[c] = floor_at(L[c], 0.0);
      }
      Vector3<S> l = to_vector3<S>(wdir);
      S cos_s = n.dot(l);
      if (value(cos_s) <= 0.0) continue;
      Vector3<S> f = brdf_core<S>(n, l, o, albedo_d, albedo_s, rough,
                                  ctx.fresnel_power);
      // cos_s / pdf == pi at the value level; keeping the ratio explicit
      // preserves the shading normal's derivative.
      total += f.cwiseProduct(L) * cos_s *
               S(kPi / (cos_d * static_cast<double>(st.env_rays)));
    }
  }
  *out = total;
  return true;
}

int strata_count(int spp) {
  int n = 1;
  while (n * n < spp) ++n;
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward rendering

RenderOutput render(const Scene& scene, const RenderSettings& settings) {
  scene.validate();
  settings.validate();
  const Camera& cam = scene.camera;
  if (cam.width > 0 &&
      (cam.width != settings.width || cam.height != settings.height))
    throw ValidationError("camera intrinsics disagree with render size");

  ShadeContext<double> ctx = build_context<double>(scene, GradientRequest{}, nullptr);

  RenderOutput out;
  out.rgb = Image(settings.width, settings.height, 3);
  out.mask = Image(settings.width, settings.height, 1);
  const int n = strata_count(settings.spp);
  for (int y = 0; y < settings.height; ++y) {
    for (int x = 0; x < settings.width; ++x) {
      uint64_t pixel_id = static_cast<uint64_t>(y) * settings.width + x;
      Vec3 acc = Vec3::Zero();
      int hits = 0;
      for (int s = 0; s < settings.spp; ++s) {
        Pcg32 rng(mix64(settings.seed, pixel_id), static_cast<uint64_t>(s));
        double jx = rng.next_double(), jy = rng.next_double();
        double px = x + (s % n + jx) / n;
        double py = y + (s / n + jy) / n;
        Vector3<double> radiance;
        if (shade_camera_sample<double>(ctx, cam, settings, px, py, rng,
                                        &radiance)) {
          acc += Vec3(radiance[0], radiance[1], radiance[2]);
          ++hits;
        } else {
          acc += settings.background;
        }
      }
      for (int c = 0; c < 3; ++c) out.rgb.at(x, y, c) = acc[c] / settings.spp;
      out.mask.at(x, y, 0) = static_cast<double>(hits) / settings.spp;
    }
  }
  if (settings.blur) out.rgb = gaussian_smooth(out.rgb);
  return out;
}

// ---------------------------------------------------------------------------
// Interior-path gradients

namespace {

// Forward render plus the loss gradient pulled back through the smoothing
// to the pre-blur image.
Image loss_seed_image(const Scene& scene, const RenderSettings& settings,
                      const ImageLoss& loss, RenderOutput* out,
                      double* loss_value) {
  *out = render(scene, settings);
  if (loss_value) *loss_value = loss.value(out->rgb, out->mask);
  Image g = loss.grad(out->rgb, out->mask);
  if (!g.same_shape(out->rgb))
    throw ValidationError("loss gradient image has the wrong shape");
  return settings.blur ? gaussian_smooth_adjoint(g) : g;
}

VecX gather(const std::vector<double>& adj, const std::vector<int32_t>& idx) {
  VecX out(idx.size());
  for (size_t k = 0; k < idx.size(); ++k) out[k] = adj[idx[k]];
  return out;
}

}  // namespace

RenderGradients render_with_gradients(const Scene& scene,
                                      const RenderSettings& settings,
                                      const ImageLoss& loss,
                                      const GradientRequest& request) {
  request.validate();
  RenderGradients result;
  Image seeds =
      loss_seed_image(scene, settings, loss, &result.output, &result.loss);

  Tape tape;
  Tape::active() = &tape;
  LeafIndex leaves;
  ShadeContext<Var> ctx;
  try {
    ctx = build_context<Var>(scene, request, &leaves);
  } catch (...) {
    Tape::active() = nullptr;
    throw;
  }
  const size_t watermark = tape.size();
  std::vector<double> prefix_adj(watermark, 0.0), scratch;

  const Camera& cam = scene.camera;
  const int n = strata_count(settings.spp);
  const double inv_spp = 1.0 / settings.spp;
  for (int y = 0; y < settings.height; ++y) {
    for (int x = 0; x < settings.width; ++x) {
      double s0 = seeds.at(x, y, 0), s1 = seeds.at(x, y, 1),
             s2 = seeds.at(x, y, 2);
      if (s0 == 0.0 && s1 == 0.0 && s2 == 0.0) continue;
      uint64_t pixel_id = static_cast<uint64_t>(y) * settings.width + x;
      Var weighted(0.0);
      for (int s = 0; s < settings.spp; ++s) {
        Pcg32 rng(mix64(settings.seed, pixel_id), static_cast<uint64_t>(s));
        double jx = rng.next_double(), jy = rng.next_double();
        double px = x + (s % n + jx) / n;
        double py = y + (s / n + jy) / n;
        Vector3<Var> radiance;
        if (shade_camera_sample<Var>(ctx, cam, settings, px, py, rng,
                                     &radiance)) {
          weighted = weighted + radiance[0] * Var(s0 * inv_spp) +
                     radiance[1] * Var(s1 * inv_spp) +
                     radiance[2] * Var(s2 * inv_spp);
        }
        // Misses contribute a constant background with zero derivative.
      }
      if (weighted.idx >= 0)
        tape.backprop_tail(weighted.idx, 1.0, watermark, prefix_adj, scratch);
      else
        tape.truncate(watermark);
    }
  }
  tape.backprop_prefix(watermark, prefix_adj);
  Tape::active() = nullptr;

  if (request.lights) result.groups["lights"] = gather(prefix_adj, leaves.lights);
  if (request.shape) result.groups["shape"] = gather(prefix_adj, leaves.shape);
  if (request.expression)
    result.groups["expression"] = gather(prefix_adj, leaves.expression);
  if (request.albedo && !scene.use_textures())
    result.groups["albedo"] = gather(prefix_adj, leaves.albedo);
  if (request.pose) result.groups["pose"] = gather(prefix_adj, leaves.pose);
  if (request.textures && scene.use_textures()) {
    result.groups["diffuse_map"] = gather(prefix_adj, leaves.dmap);
    result.groups["specular_map"] = gather(prefix_adj, leaves.smap);
    result.groups["roughness_map"] = gather(prefix_adj, leaves.rmap);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Edge sampling

namespace {

struct EdgeRecord {
  int v0, v1;
  int faces[2] = {-1, -1};
  int count = 0;
};

// Per-vertex screen Jacobian w.r.t. the enabled geometric parameters, in
// canonical column order [pose(6) | shape | expression].
struct ScreenJacobian {
  VecX dx, dy;
};

ScreenJacobian project_jacobian(const Scene& scene, int vertex,
                                const GradientRequest& req) {
  const MorphableModel& m = *scene.model;
  const SceneParams& p = scene.params;
  Tape tape;
  Tape::active() = &tape;
  std::vector<int32_t> order;

  Vector3<Var> w, t;
  for (int c = 0; c < 3; ++c)
    w[c] = req.pose ? Var::leaf(0.0) : Var(0.0);
  for (int c = 0; c < 3; ++c)
    t[c] = req.pose ? Var::leaf(p.T[c]) : Var(p.T[c]);
  if (req.pose)
    for (int c = 0; c < 3; ++c) order.push_back(w[c].idx);
  if (req.pose)
    for (int c = 0; c < 3; ++c) order.push_back(t[c].idx);

  std::vector<Var> alpha(m.ks()), delta(m.ke());
  for (int k = 0; k < m.ks(); ++k) {
    alpha[k] = req.shape ? Var::leaf(p.alpha[k]) : Var(p.alpha[k]);
    if (req.shape) order.push_back(alpha[k].idx);
  }
  for (int k = 0; k < m.ke(); ++k) {
    delta[k] = req.expression ? Var::leaf(p.delta[k]) : Var(p.delta[k]);
    if (req.expression) order.push_back(delta[k].idx);
  }

  Vector3<Var> vw;
  for (int c = 0; c < 3; ++c) {
    Var v(m.mean_shape[3 * vertex + c]);
    for (int k = 0; k < m.ks(); ++k) {
      double b = m.shape_basis(3 * vertex + c, k);
      if (b != 0.0) v = v + Var(b) * alpha[k];
    }
    for (int k = 0; k < m.ke(); ++k) {
      double b = m.expr_basis(3 * vertex + c, k);
      if (b != 0.0) v = v + Var(b) * delta[k];
    }
    vw[c] = v;
  }

  Eigen::Matrix<Var, 3, 3> r0;
  for (int rr = 0; rr < 3; ++rr)
    for (int cc = 0; cc < 3; ++cc) r0(rr, cc) = Var(p.R(rr, cc));
  Eigen::Matrix<Var, 3, 3> R = r0 * rodrigues<Var>(w);
  Vector3<Var> v_cam = camera_transform<Var>(R, t, vw);
  Vector2<Var> screen = project<Var>(scene.camera, v_cam);

  ScreenJacobian jac;
  auto adjx = tape.gradient(screen.x().idx);
  auto adjy = tape.gradient(screen.y().idx);
  jac.dx.resize(order.size());
  jac.dy.resize(order.size());
  for (size_t k = 0; k < order.size(); ++k) {
    jac.dx[k] = order[k] >= 0 ? adjx[order[k]] : 0.0;
    jac.dy[k] = order[k] >= 0 ? adjy[order[k]] : 0.0;
  }
  Tape::active() = nullptr;
  return jac;
}

}  // namespace

std::map<std::string, VecX> edge_sample_gradients(
    const Scene& scene, const RenderSettings& settings, const ImageLoss& loss,
    const GradientRequest& request) {
  if (!(request.pose || request.shape || request.expression))
    throw ValidationError(
        "edge sampling requires a geometric gradient group (pose, shape, or "
        "expression)");
  scene.validate();
  settings.validate();

  const MorphableModel& m = *scene.model;
  const int n_pose = request.pose ? 6 : 0;
  const int n_shape = request.shape ? m.ks() : 0;
  const int n_expr = request.expression ? m.ke() : 0;
  const int n_params = n_pose + n_shape + n_expr;

  auto package = [&](const VecX& flat) {
    std::map<std::string, VecX> out;
    int off = 0;
    if (request.pose) {
      out["pose"] = flat.segment(off, 6);
      off += 6;
    }
    if (request.shape) {
      out["shape"] = flat.segment(off, m.ks());
      off += m.ks();
    }
    if (request.expression) out["expression"] = flat.segment(off, m.ke());
    return out;
  };
  VecX corr = VecX::Zero(n_params);

  RenderOutput fwd;
  Image seeds = loss_seed_image(scene, settings, loss, &fwd, nullptr);

  ShadeContext<double> ctx =
      build_context<double>(scene, GradientRequest{}, nullptr);
  const Camera cam = scene.camera;
  const Vec3 cam_pos = scene.params.T;

  // Face orientation and projected vertices.
  const int nv = m.vertex_count();
  std::vector<Vec2> screen(nv);
  std::vector<char> projectable(nv, 0);
  for (int i = 0; i < nv; ++i) {
    Vec3 vc = camera_transform<double>(scene.params.R, scene.params.T,
                                       ctx.verts_d[i]);
    if (vc.z() > 1e-6) {
      screen[i] = project<double>(cam, vc);
      projectable[i] = 1;
    }
  }
  std::vector<char> front(ctx.tris.size(), 0);
  for (size_t f = 0; f < ctx.tris.size(); ++f) {
    const auto& t = ctx.tris[f];
    Vec3 fn = (ctx.verts_d[t[1]] - ctx.verts_d[t[0]])
                  .cross(ctx.verts_d[t[2]] - ctx.verts_d[t[0]]);
    Vec3 center =
        (ctx.verts_d[t[0]] + ctx.verts_d[t[1]] + ctx.verts_d[t[2]]) / 3.0;
    front[f] = fn.dot(cam_pos - center) > 0.0 ? 1 : 0;
  }

  // Edge adjacency.
  std::unordered_map<int64_t, EdgeRecord> edges;
  edges.reserve(ctx.tris.size() * 3);
  for (size_t f = 0; f < ctx.tris.size(); ++f) {
    const auto& t = ctx.tris[f];
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      int lo = std::min(a, b), hi = std::max(a, b);
      int64_t key = static_cast<int64_t>(lo) << 32 | hi;
      EdgeRecord& rec = edges[key];
      rec.v0 = lo;
      rec.v1 = hi;
      if (rec.count < 2) rec.faces[rec.count] = static_cast<int>(f);
      ++rec.count;
    }
  }

  // Silhouette extraction: boundary edges plus front/back sign flips.
  struct SilEdge {
    int v0, v1;
    Vec2 p0, p1;
    double len;
  };
  std::vector<SilEdge> sil;
  double total_len = 0.0;
  for (const auto& [key, rec] : edges) {
    (void)key;
    bool is_sil = false;
    if (rec.count == 1)
      is_sil = true;
    else if (rec.count == 2)
      is_sil = front[rec.faces[0]] != front[rec.faces[1]];
    if (!is_sil) continue;
    if (!projectable[rec.v0] || !projectable[rec.v1]) continue;
    SilEdge e{rec.v0, rec.v1, screen[rec.v0], screen[rec.v1], 0.0};
    e.len = (e.p1 - e.p0).norm();
    if (e.len < 1e-9) continue;
    sil.push_back(e);
    total_len += e.len;
  }
  if (sil.empty() || total_len <= 0.0) return package(corr);

  // Sort for determinism (the unordered_map iteration order is not).
  std::sort(sil.begin(), sil.end(), [](const SilEdge& a, const SilEdge& b) {
    return a.v0 != b.v0 ? a.v0 < b.v0 : a.v1 < b.v1;
  });
  std::vector<double> cdf(sil.size());
  double run = 0.0;
  for (size_t i = 0; i < sil.size(); ++i) {
    run += sil[i].len;
    cdf[i] = run;
  }

  std::unordered_map<int, ScreenJacobian> jac_cache;
  auto jac_of = [&](int vertex) -> const ScreenJacobian& {
    auto it = jac_cache.find(vertex);
    if (it == jac_cache.end())
      it = jac_cache.emplace(vertex, project_jacobian(scene, vertex, request))
               .first;
    return it->second;
  };

  const int n_samples =
      settings.edge_samples > 0 ? settings.edge_samples : 4 * settings.width;
  const double kOffset = 1e-3;  // pixels, across the edge
  for (int i = 0; i < n_samples; ++i) {
    Pcg32 rng(mix64(settings.seed ^ 0x9e3779b97f4a7c15ull,
                    static_cast<uint64_t>(i)),
              1u);
    double pick = rng.next_double() * total_len;
    size_t e_idx =
        std::lower_bound(cdf.begin(), cdf.end(), pick) - cdf.begin();
    if (e_idx >= sil.size()) e_idx = sil.size() - 1;
    const SilEdge& e = sil[e_idx];
    double s = rng.next_double();
    Vec2 p = e.p0 + (e.p1 - e.p0) * s;
    int px = static_cast<int>(std::floor(p.x()));
    int py = static_cast<int>(std::floor(p.y()));
    if (px < 0 || px >= settings.width || py < 0 || py >= settings.height)
      continue;
    Vec3 A(seeds.at(px, py, 0), seeds.at(px, py, 1), seeds.at(px, py, 2));
    if (A.isZero(0.0)) continue;

    Vec2 edge_dir = (e.p1 - e.p0) / e.len;
    Vec2 nrm(edge_dir.y(), -edge_dir.x());  // points toward the "plus" side

    // Common random numbers on both sides keep the difference low-variance.
    Pcg32 shade_rng(mix64(settings.seed ^ 0x6a09e667f3bcc909ull,
                          static_cast<uint64_t>(i)),
                    2u);
    Pcg32 rng_plus = shade_rng, rng_minus = shade_rng;
    Vector3<double> l_plus = Vec3::Zero(), l_minus = Vec3::Zero();
    Vec2 pp = p + nrm * kOffset, pm = p - nrm * kOffset;
    Vector3<double> shade_out;
    if (shade_camera_sample<double>(ctx, cam, settings, pp.x(), pp.y(),
                                    rng_plus, &shade_out))
      l_plus = shade_out;
    else
      l_plus = settings.background;
    if (shade_camera_sample<double>(ctx, cam, settings, pm.x(), pm.y(),
                                    rng_minus, &shade_out))
      l_minus = shade_out;
    else
      l_minus = settings.background;
    Vec3 delta_l = l_minus - l_plus;  // inside minus outside w.r.t. nrm
    double a_dot = A.dot(delta_l);
    if (a_dot == 0.0) continue;

    const ScreenJacobian& j0 = jac_of(e.v0);
    const ScreenJacobian& j1 = jac_of(e.v1);
    // Velocity of the edge point projected on the screen normal.
    for (int q = 0; q < n_params; ++q) {
      double vx = (1.0 - s) * j0.dx[q] + s * j1.dx[q];
      double vy = (1.0 - s) * j0.dy[q] + s * j1.dy[q];
      corr[q] += a_dot * (vx * nrm.x() + vy * nrm.y()) * total_len / n_samples;
    }
  }
  return package(corr);
}

}  // namespace lsir
