// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsir/facemodel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "lsir/container.hpp"
#include "lsir/rng.hpp"

namespace lsir {

void MorphableModel::validate() const {
  const int n3 = static_cast<int>(mean_shape.size());
  if (n3 <= 0 || n3 % 3 != 0)
    throw ValidationError("mean shape must hold 3N coordinates");
  auto check_rows = [&](const MatX& m, const char* name) {
    if (m.rows() != n3)
      throw ValidationError(std::string(name) + " row count differs from 3N");
    if (m.cols() < 1)
      throw ValidationError(std::string(name) + " needs at least one column");
  };
  check_rows(shape_basis, "shape basis");
  check_rows(expr_basis, "expression basis");
  check_rows(diffuse_basis, "diffuse basis");
  check_rows(spec_basis, "specular basis");
  if (diffuse_mean.size() != n3 || spec_mean.size() != n3)
    throw ValidationError("albedo means must hold 3N values");
  auto check_sigma = [&](const VecX& s, Eigen::Index k, const char* name) {
    if (s.size() != k)
      throw ValidationError(std::string(name) + " sigma count differs from K");
    for (Eigen::Index i = 0; i < s.size(); ++i)
      if (!(s[i] > 0.0))
        throw ValidationError(std::string(name) + " sigma entries must be > 0");
  };
  check_sigma(shape_sigma, shape_basis.cols(), "shape");
  check_sigma(diffuse_sigma, diffuse_basis.cols(), "diffuse");
  check_sigma(spec_sigma, spec_basis.cols(), "specular");
  const int n = n3 / 3;
  for (const auto& t : triangles)
    for (int idx : t)
      if (idx < 0 || idx >= n)
        throw ValidationError("triangle index out of range");
  if (static_cast<int>(uv.size()) != n)
    throw ValidationError("uv count differs from vertex count");
  for (const Vec2& c : uv)
    if (c.x() < 0.0 || c.x() > 1.0 || c.y() < 0.0 || c.y() > 1.0)
      throw ValidationError("uv coordinates must lie in [0,1]");
  if (landmark_vertex_ids.size() != 68)
    throw ValidationError("expected exactly 68 landmark vertex ids, got " +
                          std::to_string(landmark_vertex_ids.size()));
  for (int id : landmark_vertex_ids)
    if (id < 0 || id >= n) throw ValidationError("landmark id out of range");
}

void Camera::validate() const {
  if (!(focal > 0.0)) throw ValidationError("camera focal must be > 0");
  if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9)
    throw ValidationError("camera rotation is not orthonormal");
  if (R.determinant() < 0.0)
    throw ValidationError("camera rotation must have det +1");
  if (width <= 0 || height <= 0)
    throw ValidationError("camera image size must be positive");
}

VecX synth_identity(const MorphableModel& model, const VecX& alpha) {
  if (alpha.size() != model.shape_basis.cols())
    throw ValidationError("identity coefficient count differs from K_s");
  return model.mean_shape + model.shape_basis * alpha;
}

std::vector<Vec3> vertex_normals(
    const std::vector<Vec3>& vertices,
    const std::vector<std::array<int, 3>>& triangles) {
  std::vector<Vec3> accum(vertices.size(), Vec3::Zero());
  std::vector<char> touched(vertices.size(), 0);
  for (const auto& t : triangles) {
    const Vec3& a = vertices[t[0]];
    Vec3 cr = (vertices[t[1]] - a).cross(vertices[t[2]] - a);
    if (cr.norm() < 2e-12)
      throw ValidationError("degenerate triangle (area below 1e-12)");
    for (int idx : t) {
      accum[idx] += cr;  // |cr| = 2*area: area weighting for free
      touched[idx] = 1;
    }
  }
  std::vector<Vec3> normals(vertices.size());
  for (size_t i = 0; i < vertices.size(); ++i) {
    if (!touched[i])
      throw ValidationError("isolated vertex " + std::to_string(i) +
                            " has no incident triangle");
    normals[i] = accum[i].normalized();
  }
  return normals;
}

FaceMesh apply_expression(const VecX& e, const MorphableModel& model,
                          const VecX& delta) {
  if (delta.size() != model.expr_basis.cols())
    throw ValidationError("expression coefficient count differs from K_e");
  VecX v = e + model.expr_basis * delta;
  FaceMesh mesh;
  const int n = model.vertex_count();
  mesh.vertices.resize(n);
  for (int i = 0; i < n; ++i)
    mesh.vertices[i] = Vec3(v[3 * i], v[3 * i + 1], v[3 * i + 2]);
  mesh.triangles = model.triangles;
  mesh.uv = model.uv;
  mesh.normals = vertex_normals(mesh.vertices, mesh.triangles);
  return mesh;
}

Mat3 orthonormalize(const Mat3& R) {
  Eigen::JacobiSVD<Mat3> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    out = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return out;
}

namespace {

// Smooth low-frequency scalar field over the (s,t) chart: a short sum of
// random sinusoids. Smoothness keeps basis deformations from folding the
// mesh at plausible coefficient magnitudes.
struct SmoothField {
  struct Wave {
    double amp, fs, ft, phase;
  };
  std::vector<Wave> waves;

  static SmoothField draw(Pcg32& rng) {
    SmoothField f;
    for (int m = 0; m < 3; ++m) {
      Wave w;
      w.amp = 0.3 + 0.7 * rng.next_double();
      w.fs = 0.3 + 1.5 * rng.next_double();
      w.ft = 0.3 + 1.5 * rng.next_double();
      w.phase = 2.0 * kPi * rng.next_double();
      f.waves.push_back(w);
    }
    return f;
  }

  double operator()(double s, double t) const {
    double v = 0.0;
    for (const Wave& w : waves)
      v += w.amp * std::sin(2.0 * kPi * (w.fs * s + w.ft * t) + w.phase);
    return v;
  }
};

// Columns: smooth random vector fields, then twice-iterated modified
// Gram-Schmidt for machine-precision pairwise orthogonality, unit norm.
MatX orthogonal_smooth_basis(int n3, int k, const std::vector<Vec2>& chart,
                             uint64_t stream_seed, double window_center,
                             double window_width) {
  const int n = n3 / 3;
  MatX basis(n3, k);
  int produced = 0;
  int attempt = 0;
  const int max_attempts = 4 * k + 16;
  while (produced < k) {
    if (attempt >= max_attempts)
      throw ValidationError(
          "vertex count too small to build an orthogonal basis of size " +
          std::to_string(k));
    Pcg32 rng(stream_seed, static_cast<uint64_t>(attempt));
    ++attempt;
    VecX col(n3);
    for (int c = 0; c < 3; ++c) {
      SmoothField field = SmoothField::draw(rng);
      for (int i = 0; i < n; ++i) {
        double s = chart[i].x(), t = chart[i].y();
        double w = window_width > 0.0
                       ? std::exp(-sqr((t - window_center) / window_width))
                       : 1.0;
        col[3 * i + c] = w * field(s, t);
      }
    }
    for (int pass = 0; pass < 2; ++pass)
      for (int j = 0; j < produced; ++j)
        col -= basis.col(j).dot(col) * basis.col(j);
    double norm = col.norm();
    if (norm < 1e-8) continue;  // linearly dependent draw; redraw
    basis.col(produced++) = col / norm;
  }
  return basis;
}

VecX geometric_sigma(int k, double base, double ratio) {
  VecX s(k);
  double v = base;
  for (int i = 0; i < k; ++i, v *= ratio) s[i] = v;
  return s;
}

}  // namespace

MorphableModel make_toy_model(int n_vertices, int ks, int ke, int kr, int kb,
                              uint64_t seed) {
  if (n_vertices < 1 || ks < 1 || ke < 1 || kr < 1 || kb < 1)
    throw ValidationError("toy model sizes must be >= 1");

  // Grid covering at least the requested vertex count, wider than tall.
  int nu = std::max(2, static_cast<int>(std::ceil(std::sqrt(n_vertices * 4.0 / 3.0))));
  int nv = std::max(2, (n_vertices + nu - 1) / nu);
  const int n = nu * nv;

  MorphableModel model;
  model.mean_shape.resize(3 * n);
  model.diffuse_mean.resize(3 * n);
  model.spec_mean.resize(3 * n);
  model.uv.resize(n);
  std::vector<Vec2> chart(n);

  for (int j = 0; j < nv; ++j) {
    for (int i = 0; i < nu; ++i) {
      int vidx = j * nu + i;
      double s = nu > 1 ? static_cast<double>(i) / (nu - 1) : 0.5;
      double t = nv > 1 ? static_cast<double>(j) / (nv - 1) : 0.5;
      chart[vidx] = Vec2(s, t);
      model.uv[vidx] = Vec2(s, t);

      // Ellipsoidal patch, front toward -z, up +y; unit-scale face.
      double phi = (s - 0.5) * 1.5;
      double theta = (t - 0.5) * 1.8;
      double x = 0.95 * std::sin(phi) * std::cos(theta);
      double y = 1.05 * std::sin(theta);
      double z = -0.85 * std::cos(phi) * std::cos(theta);
      // Protruding nose ridge: narrow bump toward the camera. Its flanks
      // cast the hard self-shadows the fitting tests rely on.
      double nose = std::exp(-(sqr(s - 0.5) + sqr(t - 0.45)) / (2.0 * sqr(0.055)));
      z -= 0.35 * nose;
      // Gentle brow ridge and cheekbones for normal variation.
      z -= 0.05 * std::exp(-sqr((t - 0.62) / 0.06)) * std::cos(phi);
      z -= 0.04 * (std::exp(-(sqr(s - 0.28) + sqr(t - 0.38)) / (2.0 * sqr(0.09))) +
                   std::exp(-(sqr(s - 0.72) + sqr(t - 0.38)) / (2.0 * sqr(0.09))));
      model.mean_shape[3 * vidx] = x;
      model.mean_shape[3 * vidx + 1] = y;
      model.mean_shape[3 * vidx + 2] = z;

      // Skin-like diffuse mean with lip and brow patches.
      double r = 0.72 + 0.05 * std::sin(3.1 * t + 0.4);
      double g = 0.52 + 0.04 * std::sin(2.3 * s + 1.1) * std::cos(1.7 * t);
      double b = 0.42 + 0.04 * std::cos(2.9 * s * t);
      double lips = std::exp(-(sqr(s - 0.5) + sqr(t - 0.18)) / (2.0 * sqr(0.07)));
      g -= 0.18 * lips;
      b -= 0.20 * lips;
      double brows = std::exp(-(sqr(s - 0.32) + sqr(t - 0.66)) / (2.0 * sqr(0.05))) +
                     std::exp(-(sqr(s - 0.68) + sqr(t - 0.66)) / (2.0 * sqr(0.05)));
      r -= 0.30 * brows;
      g -= 0.28 * brows;
      b -= 0.22 * brows;
      model.diffuse_mean[3 * vidx] = std::clamp(r, 0.05, 0.95);
      model.diffuse_mean[3 * vidx + 1] = std::clamp(g, 0.05, 0.95);
      model.diffuse_mean[3 * vidx + 2] = std::clamp(b, 0.05, 0.95);

      double sp = 0.04 + 0.015 * std::sin(5.0 * s) * std::sin(4.0 * t);
      for (int c = 0; c < 3; ++c) model.spec_mean[3 * vidx + c] = sp;
    }
  }

  // Grid quads split into two triangles, wound so normals face -z (outward).
  for (int j = 0; j + 1 < nv; ++j) {
    for (int i = 0; i + 1 < nu; ++i) {
      int a = j * nu + i;
      int b = j * nu + i + 1;
      int c = (j + 1) * nu + i + 1;
      int d = (j + 1) * nu + i;
      model.triangles.push_back({a, c, b});
      model.triangles.push_back({a, d, c});
    }
  }

  model.shape_basis = orthogonal_smooth_basis(3 * n, ks, chart,
                                              mix64(seed, 0x5eed01), 0.0, 0.0);
  model.expr_basis = orthogonal_smooth_basis(3 * n, ke, chart,
                                             mix64(seed, 0x5eed02), 0.25, 0.35);
  model.diffuse_basis = orthogonal_smooth_basis(3 * n, kr, chart,
                                                mix64(seed, 0x5eed03), 0.0, 0.0);
  model.spec_basis = orthogonal_smooth_basis(3 * n, kb, chart,
                                             mix64(seed, 0x5eed04), 0.0, 0.0);
  model.shape_sigma = geometric_sigma(ks, 0.20, 0.85);
  model.diffuse_sigma = geometric_sigma(kr, 0.15, 0.85);
  model.spec_sigma = geometric_sigma(kb, 0.04, 0.85);

  // 68 landmark vertices: golden-ratio spread over the face interior,
  // deduplicated so pose estimation sees well-separated points.
  std::set<int> used;
  for (int k = 0; k < 68; ++k) {
    double fi = std::fmod(0.6180339887498949 * (k + 1), 1.0);
    double fj = (k + 0.5) / 68.0;
    int i = static_cast<int>(std::lround((0.12 + 0.76 * fi) * (nu - 1)));
    int j = static_cast<int>(std::lround((0.12 + 0.76 * fj) * (nv - 1)));
    int id = j * nu + i;
    while (used.count(id) && static_cast<int>(used.size()) < n) id = (id + 1) % n;
    used.insert(id);
    model.landmark_vertex_ids.push_back(id);
  }

  model.validate();
  return model;
}

void save_model(const std::string& path, const MorphableModel& model) {
  auto vec_chunk = [](const VecX& v) {
    ArrayChunk c;
    c.dims = {static_cast<uint32_t>(v.size())};
    c.data.resize(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i)
      c.data[i] = static_cast<float>(v[i]);
    return c;
  };
  auto mat_chunk = [](const MatX& m) {
    ArrayChunk c;
    c.dims = {static_cast<uint32_t>(m.rows()), static_cast<uint32_t>(m.cols())};
    c.data.resize(static_cast<size_t>(m.rows()) * m.cols());
    for (Eigen::Index r = 0; r < m.rows(); ++r)  // row-major flattening
      for (Eigen::Index col = 0; col < m.cols(); ++col)
        c.data[r * m.cols() + col] = static_cast<float>(m(r, col));
    return c;
  };
  ArrayChunk tris;
  tris.dims = {static_cast<uint32_t>(model.triangles.size()), 3};
  for (const auto& t : model.triangles)
    for (int idx : t) tris.data.push_back(static_cast<float>(idx));
  ArrayChunk uv;
  uv.dims = {static_cast<uint32_t>(model.uv.size()), 2};
  for (const Vec2& c : model.uv) {
    uv.data.push_back(static_cast<float>(c.x()));
    uv.data.push_back(static_cast<float>(c.y()));
  }
  ArrayChunk lm;
  lm.dims = {static_cast<uint32_t>(model.landmark_vertex_ids.size())};
  for (int id : model.landmark_vertex_ids)
    lm.data.push_back(static_cast<float>(id));

  write_container(path, {
    {"mean_shape", vec_chunk(model.mean_shape)},
    {"shape_basis", mat_chunk(model.shape_basis)},
    {"shape_sigma", vec_chunk(model.shape_sigma)},
    {"expr_basis", mat_chunk(model.expr_basis)},
    {"diffuse_mean", vec_chunk(model.diffuse_mean)},
    {"diffuse_basis", mat_chunk(model.diffuse_basis)},
    {"diffuse_sigma", vec_chunk(model.diffuse_sigma)},
    {"spec_mean", vec_chunk(model.spec_mean)},
    {"spec_basis", mat_chunk(model.spec_basis)},
    {"spec_sigma", vec_chunk(model.spec_sigma)},
    {"triangles", tris},
    {"uv", uv},
    {"landmarks", lm},
  });
}

MorphableModel load_model(const std::string& path) {
  auto chunks = chunk_map(read_container(path));
  auto need = [&](const char* name) -> const ArrayChunk& {
    auto it = chunks.find(name);
    if (it == chunks.end())
      throw ValidationError("model container missing chunk '" +
                            std::string(name) + "': " + path);
    return it->second;
  };
  auto to_vec = [](const ArrayChunk& c) {
    VecX v(c.data.size());
    for (size_t i = 0; i < c.data.size(); ++i) v[i] = c.data[i];
    return v;
  };
  auto to_mat = [&](const ArrayChunk& c, const char* name) {
    if (c.dims.size() != 2)
      throw ValidationError("chunk '" + std::string(name) +
                            "' must be rank 2: " + path);
    MatX m(c.dims[0], c.dims[1]);
    for (uint32_t r = 0; r < c.dims[0]; ++r)
      for (uint32_t col = 0; col < c.dims[1]; ++col)
        m(r, col) = c.data[static_cast<size_t>(r) * c.dims[1] + col];
    return m;
  };
  MorphableModel model;
  model.mean_shape = to_vec(need("mean_shape"));
  model.shape_basis = to_mat(need("shape_basis"), "shape_basis");
  model.shape_sigma = to_vec(need("shape_sigma"));
  model.expr_basis = to_mat(need("expr_basis"), "expr_basis");
  model.diffuse_mean = to_vec(need("diffuse_mean"));
  model.diffuse_basis = to_mat(need("diffuse_basis"), "diffuse_basis");
  model.diffuse_sigma = to_vec(need("diffuse_sigma"));
  model.spec_mean = to_vec(need("spec_mean"));
  model.spec_basis = to_mat(need("spec_basis"), "spec_basis");
  model.spec_sigma = to_vec(need("spec_sigma"));
  const ArrayChunk& tris = need("triangles");
  for (size_t i = 0; i + 2 < tris.data.size() + 1; i += 3)
    model.triangles.push_back({static_cast<int>(tris.data[i]),
                               static_cast<int>(tris.data[i + 1]),
                               static_cast<int>(tris.data[i + 2])});
  const ArrayChunk& uv = need("uv");
  for (size_t i = 0; i + 1 < uv.data.size() + 1; i += 2)
    model.uv.emplace_back(uv.data[i], uv.data[i + 1]);
  for (float f : need("landmarks").data)
    model.landmark_vertex_ids.push_back(static_cast<int>(f));
  model.validate();
  return model;
}

void write_obj(const std::string& path, const FaceMesh& mesh) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open for write: " + path);
  out.precision(9);
  for (const Vec3& v : mesh.vertices)
    out << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const Vec2& t : mesh.uv)
    out << "vt " << t.x() << " " << t.y() << "\n";
  for (const Vec3& n : mesh.normals)
    out << "vn " << n.x() << " " << n.y() << " " << n.z() << "\n";
  for (const auto& t : mesh.triangles) {
    out << "f";
    for (int idx : t) {
      int i = idx + 1;
      out << " " << i << "/" << i << "/" << i;
    }
    out << "\n";
  }
  if (!out) throw ValidationError("short write: " + path);
}

FaceMesh read_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open: " + path);
  FaceMesh mesh;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      ss >> x >> y >> z;
      mesh.vertices.emplace_back(x, y, z);
    } else if (tag == "vt") {
      double u, v;
      ss >> u >> v;
      mesh.uv.emplace_back(u, v);
    } else if (tag == "f") {
      std::vector<int> ids;
      std::string tok;
      while (ss >> tok)
        ids.push_back(std::stoi(tok.substr(0, tok.find('/'))) - 1);
      if (ids.size() < 3)
        throw ValidationError("face with fewer than 3 vertices: " + path);
      for (size_t i = 1; i + 1 < ids.size(); ++i)  // fan-triangulate
        mesh.triangles.push_back({ids[0], ids[i], ids[i + 1]});
    }
  }
  if (mesh.vertices.empty())
    throw ValidationError("OBJ contains no vertices: " + path);
  if (mesh.uv.empty()) mesh.uv.assign(mesh.vertices.size(), Vec2::Zero());
  mesh.normals = vertex_normals(mesh.vertices, mesh.triangles);
  return mesh;
}

}  // namespace lsir
