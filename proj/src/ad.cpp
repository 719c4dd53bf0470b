// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#include "lsir/ad.hpp"

namespace lsir {

std::vector<double> Tape::gradient(int32_t output) const {
  std::vector<double> adj(nodes_.size(), 0.0);
  if (output < 0) return adj;
  adj[output] = 1.0;
  for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= 0; --i) {
    double a = adj[i];
    if (a == 0.0) continue;
    const Node& n = nodes_[i];
    if (n.p0 >= 0) adj[n.p0] += n.w0 * a;
    if (n.p1 >= 0) adj[n.p1] += n.w1 * a;
  }
  return adj;
}

void Tape::backprop_tail(int32_t output, double seed, size_t watermark,
                         std::vector<double>& prefix_adj,
                         std::vector<double>& scratch) {
  const int32_t wm = static_cast<int32_t>(watermark);
  if (output >= 0 && output < wm) {
    // Output already lives in the prefix (e.g. a constant-folded pixel).
    prefix_adj[output] += seed;
    nodes_.resize(watermark);
    return;
  }
  scratch.assign(nodes_.size() - watermark, 0.0);
  if (output >= 0) scratch[output - wm] = seed;
  for (int32_t i = static_cast<int32_t>(nodes_.size()) - 1; i >= wm; --i) {
    double a = scratch[i - wm];
    if (a == 0.0) continue;
    const Node& n = nodes_[i];
    if (n.p0 >= 0) {
      if (n.p0 >= wm)
        scratch[n.p0 - wm] += n.w0 * a;
      else
        prefix_adj[n.p0] += n.w0 * a;
    }
    if (n.p1 >= 0) {
      if (n.p1 >= wm)
        scratch[n.p1 - wm] += n.w1 * a;
      else
        prefix_adj[n.p1] += n.w1 * a;
    }
  }
  nodes_.resize(watermark);
}

void Tape::backprop_prefix(size_t watermark,
                           std::vector<double>& prefix_adj) const {
  for (int32_t i = static_cast<int32_t>(watermark) - 1; i >= 0; --i) {
    double a = prefix_adj[i];
    if (a == 0.0) continue;
    const Node& n = nodes_[i];
    if (n.p0 >= 0) prefix_adj[n.p0] += n.w0 * a;
    if (n.p1 >= 0) prefix_adj[n.p1] += n.w1 * a;
  }
}

}  // namespace lsir
