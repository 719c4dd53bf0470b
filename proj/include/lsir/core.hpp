// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lsir {

inline constexpr double kPi = 3.14159265358979323846;

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

template <class S>
using Vector2 = Eigen::Matrix<S, 2, 1>;
template <class S>
using Vector3 = Eigen::Matrix<S, 3, 1>;

// Invalid user input (bad config, malformed file, out-of-range argument).
// CLI maps this to exit code 1.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unrecoverable numerical failure (NaN loss, divergence). CLI exit code 2.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Row-major interleaved image, origin at the top-left corner, y grows
// downward. Values are linear radiance unless stated otherwise.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c) {
    if (w < 0 || h < 0 || c < 0)
      throw ValidationError("image dimensions must be non-negative");
    data.assign(static_cast<size_t>(w) * h * c, 0.0);
  }

  double& at(int x, int y, int c) {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  double at(int x, int y, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

template <class S>
Vector3<S> to_vector3(const Vec3& v) {
  return Vector3<S>(S(v.x()), S(v.y()), S(v.z()));
}
template <class S>
Vector2<S> to_vector2(const Vec2& v) {
  return Vector2<S>(S(v.x()), S(v.y()));
}

template <class S>
S clamp_lo(const S& v, double lo) {
  return v < S(lo) ? S(lo) : v;
}

inline double sqr(double v) { return v * v; }

}  // namespace lsir
