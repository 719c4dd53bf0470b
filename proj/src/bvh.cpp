// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "lsir/tracer.hpp"

namespace lsir {

namespace {

struct TriInfo {
  Vec3 lo, hi, centroid;
};

// Slab test against [lo, hi]; inv_dir carries per-axis 1/d (inf on zeros,
// which IEEE handles correctly here as long as lo <= hi).
bool box_hit(const Vec3& lo, const Vec3& hi, const Vec3& orig,
             const Vec3& inv_dir, double tmin, double tmax) {
  for (int a = 0; a < 3; ++a) {
    double t0 = (lo[a] - orig[a]) * inv_dir[a];
    double t1 = (hi[a] - orig[a]) * inv_dir[a];
    if (t0 > t1) std::swap(t0, t1);
    tmin = std::max(tmin, t0);
    tmax = std::min(tmax, t1);
    if (tmin > tmax) return false;
  }
  return true;
}

// Moller-Trumbore. Returns t in [tmin, tmax] or infinity; u/v are the
// barycentric weights of vertices 1 and 2.
double tri_hit(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& orig,
               const Vec3& dir, double tmin, double tmax, double* u,
               double* v) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  Vec3 e1 = b - a, e2 = c - a;
  Vec3 pv = dir.cross(e2);
  double det = e1.dot(pv);
  if (std::abs(det) < 1e-14) return kInf;
  double inv = 1.0 / det;
  Vec3 tv = orig - a;
  double uu = tv.dot(pv) * inv;
  if (uu < 0.0 || uu > 1.0) return kInf;
  Vec3 qv = tv.cross(e1);
  double vv = dir.dot(qv) * inv;
  if (vv < 0.0 || uu + vv > 1.0) return kInf;
  double t = e2.dot(qv) * inv;
  if (t < tmin || t > tmax) return kInf;
  *u = uu;
  *v = vv;
  return t;
}

int build_node(Bvh* bvh, std::vector<TriInfo>& info, int first, int count) {
  Bvh::Node node;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  for (int k = first; k < first + count; ++k) {
    const TriInfo& ti = info[bvh->order[k]];
    node.lo = node.lo.cwiseMin(ti.lo);
    node.hi = node.hi.cwiseMax(ti.hi);
  }
  int idx = static_cast<int>(bvh->nodes.size());
  bvh->nodes.push_back(node);
  if (count <= 4) {
    bvh->nodes[idx].first = first;
    bvh->nodes[idx].count = count;
    return idx;
  }
  Vec3 extent = node.hi - node.lo;
  int axis = 0;
  if (extent.y() > extent.x()) axis = 1;
  if (extent.z() > extent[axis]) axis = 2;
  int mid = first + count / 2;
  std::nth_element(bvh->order.begin() + first, bvh->order.begin() + mid,
                   bvh->order.begin() + first + count,
                   [&](int32_t lhs, int32_t rhs) {
                     return info[lhs].centroid[axis] < info[rhs].centroid[axis];
                   });
  int left = build_node(bvh, info, first, mid - first);
  int right = build_node(bvh, info, mid, first + count - mid);
  bvh->nodes[idx].left = left;
  bvh->nodes[idx].right = right;
  return idx;
}

}  // namespace

Bvh build_bvh(const std::vector<Vec3>& vertices,
              const std::vector<std::array<int, 3>>& triangles) {
  if (triangles.empty()) throw ValidationError("cannot build BVH: empty mesh");
  std::vector<TriInfo> info(triangles.size());
  for (size_t i = 0; i < triangles.size(); ++i) {
    const auto& t = triangles[i];
    const Vec3 &a = vertices[t[0]], &b = vertices[t[1]], &c = vertices[t[2]];
    info[i].lo = a.cwiseMin(b).cwiseMin(c);
    info[i].hi = a.cwiseMax(b).cwiseMax(c);
    info[i].centroid = (a + b + c) / 3.0;
  }
  Bvh bvh;
  bvh.order.resize(triangles.size());
  for (size_t i = 0; i < triangles.size(); ++i)
    bvh.order[i] = static_cast<int32_t>(i);
  bvh.nodes.reserve(2 * triangles.size());
  build_node(&bvh, info, 0, static_cast<int>(triangles.size()));
  return bvh;
}

// The traversal is shared between the two query flavors via the early-out
// flag: any-hit returns on the first intersection in range.
namespace {

RayHit traverse(const Bvh& bvh, const std::vector<Vec3>& vertices,
                const std::vector<std::array<int, 3>>& triangles,
                const Vec3& orig, const Vec3& dir, double tmin, double tmax,
                bool first_hit_only) {
  RayHit hit;
  if (bvh.nodes.empty()) return hit;
  Vec3 inv_dir(1.0 / dir.x(), 1.0 / dir.y(), 1.0 / dir.z());
  int stack[64];
  int top = 0;
  stack[top++] = 0;
  double best = tmax;
  while (top > 0) {
    const Bvh::Node& node = bvh.nodes[stack[--top]];
    if (!box_hit(node.lo, node.hi, orig, inv_dir, tmin, best)) continue;
    if (node.count > 0) {
      for (int k = node.first; k < node.first + node.count; ++k) {
        int32_t ti = bvh.order[k];
        const auto& tr = triangles[ti];
        double u = 0.0, v = 0.0;
        double t = tri_hit(vertices[tr[0]], vertices[tr[1]], vertices[tr[2]],
                           orig, dir, tmin, best, &u, &v);
        if (t < best) {
          best = t;
          hit.tri = ti;
          hit.t = t;
          hit.u = u;
          hit.v = v;
          if (first_hit_only) return hit;
        }
      }
    } else {
      stack[top++] = node.right;
      stack[top++] = node.left;
    }
  }
  return hit;
}

}  // namespace

RayHit closest_hit(const Bvh& bvh, const std::vector<Vec3>& vertices,
                   const std::vector<std::array<int, 3>>& triangles,
                   const Vec3& orig, const Vec3& dir, double tmin,
                   double tmax) {
  return traverse(bvh, vertices, triangles, orig, dir, tmin, tmax, false);
}

bool any_hit(const Bvh& bvh, const std::vector<Vec3>& vertices,
             const std::vector<std::array<int, 3>>& triangles,
             const Vec3& orig, const Vec3& dir, double tmin, double tmax) {
  return traverse(bvh, vertices, triangles, orig, dir, tmin, tmax, true)
      .valid();
}

}  // namespace lsir
