// Copyright 2026 The lsir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "lsir/core.hpp"

namespace lsir {

// Reverse-mode tape. Each node stores up to two parents with local partial
// derivatives; a backward sweep accumulates adjoints. Index -1 marks a
// constant (not on the tape), so arithmetic on plain constants never grows
// the tape.
class Tape {
 public:
  struct Node {
    int32_t p0, p1;
    double w0, w1;
  };

  // The tape arithmetic writes to. Thread-local so concurrent tiles can each
  // record onto their own tape.
  static Tape*& active() {
    thread_local Tape* t = nullptr;
    return t;
  }

  int32_t leaf() {
    nodes_.push_back({-1, -1, 0.0, 0.0});
    return static_cast<int32_t>(nodes_.size() - 1);
  }

  int32_t push1(int32_t p0, double w0) {
    nodes_.push_back({p0, -1, w0, 0.0});
    return static_cast<int32_t>(nodes_.size() - 1);
  }

  int32_t push2(int32_t p0, int32_t p1, double w0, double w1) {
    nodes_.push_back({p0, p1, w0, w1});
    return static_cast<int32_t>(nodes_.size() - 1);
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }
  void reserve(size_t n) { nodes_.reserve(n); }
  void truncate(size_t n) { nodes_.resize(n); }

  // Full sweep: returns one adjoint per node, seeded with d(output)=1.
  std::vector<double> gradient(int32_t output) const;

  // Streaming sweep for the region [watermark, size()): seeds node `output`
  // with `seed`, propagates down to the watermark, adds adjoints of nodes
  // below the watermark into `prefix_adj`, then discards the region. Lets a
  // renderer share one expensive prefix (scene expressions) across many
  // per-pixel suffixes without the tape growing with image size.
  void backprop_tail(int32_t output, double seed, size_t watermark,
                     std::vector<double>& prefix_adj,
                     std::vector<double>& scratch);

  // Final sweep over [0, watermark) starting from adjoints accumulated by
  // backprop_tail. Leaf adjoints are read out of `prefix_adj` afterwards.
  void backprop_prefix(size_t watermark, std::vector<double>& prefix_adj) const;

 private:
  std::vector<Node> nodes_;
};

// Differentiable scalar. Value plus tape index; index -1 means constant.
struct Var {
  double v = 0.0;
  int32_t idx = -1;

  Var() = default;
  Var(double value) : v(value) {}  // NOLINT: implicit constant lift
  Var(double value, int32_t index) : v(value), idx(index) {}

  static Var leaf(double value) {
    Tape* t = Tape::active();
    assert(t && "Var::leaf requires an active tape");
    return Var(value, t->leaf());
  }

  Var& operator+=(const Var& o);
  Var& operator-=(const Var& o);
  Var& operator*=(const Var& o);
  Var& operator/=(const Var& o);
  Var operator-() const;
};

inline double value(double x) { return x; }
inline double value(const Var& x) { return x.v; }

namespace detail {
inline Var unary(const Var& a, double v, double w) {
  if (a.idx < 0) return Var(v);
  return Var(v, Tape::active()->push1(a.idx, w));
}
inline Var binary(const Var& a, const Var& b, double v, double wa, double wb) {
  if (a.idx < 0 && b.idx < 0) return Var(v);
  if (b.idx < 0) return Var(v, Tape::active()->push1(a.idx, wa));
  if (a.idx < 0) return Var(v, Tape::active()->push1(b.idx, wb));
  return Var(v, Tape::active()->push2(a.idx, b.idx, wa, wb));
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) {
  return detail::binary(a, b, a.v + b.v, 1.0, 1.0);
}
inline Var operator-(const Var& a, const Var& b) {
  return detail::binary(a, b, a.v - b.v, 1.0, -1.0);
}
inline Var operator*(const Var& a, const Var& b) {
  return detail::binary(a, b, a.v * b.v, b.v, a.v);
}
inline Var operator/(const Var& a, const Var& b) {
  double inv = 1.0 / b.v;
  return detail::binary(a, b, a.v * inv, inv, -a.v * inv * inv);
}

inline Var operator+(const Var& a, double b) { return a + Var(b); }
inline Var operator+(double a, const Var& b) { return Var(a) + b; }
inline Var operator-(const Var& a, double b) { return a - Var(b); }
inline Var operator-(double a, const Var& b) { return Var(a) - b; }
inline Var operator*(const Var& a, double b) { return a * Var(b); }
inline Var operator*(double a, const Var& b) { return Var(a) * b; }
inline Var operator/(const Var& a, double b) { return a / Var(b); }
inline Var operator/(double a, const Var& b) { return Var(a) / b; }

inline Var Var::operator-() const { return detail::unary(*this, -v, -1.0); }
inline Var& Var::operator+=(const Var& o) { return *this = *this + o; }
inline Var& Var::operator-=(const Var& o) { return *this = *this - o; }
inline Var& Var::operator*=(const Var& o) { return *this = *this * o; }
inline Var& Var::operator/=(const Var& o) { return *this = *this / o; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }
inline bool operator==(const Var& a, const Var& b) { return a.v == b.v; }
inline bool operator!=(const Var& a, const Var& b) { return a.v != b.v; }
inline bool operator<(const Var& a, double b) { return a.v < b; }
inline bool operator>(const Var& a, double b) { return a.v > b; }
inline bool operator<=(const Var& a, double b) { return a.v <= b; }
inline bool operator>=(const Var& a, double b) { return a.v >= b; }

inline Var sqrt(const Var& a) {
  double r = std::sqrt(a.v);
  return detail::unary(a, r, r > 0.0 ? 0.5 / r : 0.0);
}
inline Var exp(const Var& a) {
  double r = std::exp(a.v);
  return detail::unary(a, r, r);
}
inline Var log(const Var& a) { return detail::unary(a, std::log(a.v), 1.0 / a.v); }
inline Var abs(const Var& a) {
  return detail::unary(a, std::abs(a.v), a.v < 0.0 ? -1.0 : 1.0);
}
inline Var sin(const Var& a) { return detail::unary(a, std::sin(a.v), std::cos(a.v)); }
inline Var cos(const Var& a) { return detail::unary(a, std::cos(a.v), -std::sin(a.v)); }
inline Var tan(const Var& a) {
  double c = std::cos(a.v);
  return detail::unary(a, std::tan(a.v), 1.0 / (c * c));
}
inline Var acos(const Var& a) {
  double d = 1.0 - a.v * a.v;
  return detail::unary(a, std::acos(a.v), d > 0.0 ? -1.0 / std::sqrt(d) : 0.0);
}
inline Var asin(const Var& a) {
  double d = 1.0 - a.v * a.v;
  return detail::unary(a, std::asin(a.v), d > 0.0 ? 1.0 / std::sqrt(d) : 0.0);
}
inline Var atan(const Var& a) {
  return detail::unary(a, std::atan(a.v), 1.0 / (1.0 + a.v * a.v));
}
inline Var pow(const Var& a, double e) {
  double r = std::pow(a.v, e);
  return detail::unary(a, r, e * std::pow(a.v, e - 1.0));
}
inline Var pow(const Var& a, const Var& e) {
  double r = std::pow(a.v, e.v);
  double wa = e.v * std::pow(a.v, e.v - 1.0);
  double we = a.v > 0.0 ? r * std::log(a.v) : 0.0;
  return detail::binary(a, e, r, wa, we);
}
inline Var max(const Var& a, const Var& b) { return a.v >= b.v ? a : b; }
inline Var min(const Var& a, const Var& b) { return a.v <= b.v ? a : b; }
inline Var abs2(const Var& a) { return a * a; }

inline bool isfinite_value(double x) { return std::isfinite(x); }
inline bool isfinite_value(const Var& x) { return std::isfinite(x.v); }

}  // namespace lsir

namespace Eigen {

template <>
struct NumTraits<lsir::Var> : GenericNumTraits<lsir::Var> {
  typedef lsir::Var Real;
  typedef lsir::Var NonInteger;
  typedef lsir::Var Nested;
  typedef double Literal;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 3,
    MulCost = 3,
  };
  static inline Real epsilon() { return lsir::Var(NumTraits<double>::epsilon()); }
  static inline Real dummy_precision() {
    return lsir::Var(NumTraits<double>::dummy_precision());
  }
  static inline Real highest() { return lsir::Var(NumTraits<double>::highest()); }
  static inline Real lowest() { return lsir::Var(NumTraits<double>::lowest()); }
  static inline int digits10() { return NumTraits<double>::digits10(); }
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<lsir::Var, double, BinaryOp> {
  typedef lsir::Var ReturnType;
};
template <typename BinaryOp>
struct ScalarBinaryOpTraits<double, lsir::Var, BinaryOp> {
  typedef lsir::Var ReturnType;
};

}  // namespace Eigen
