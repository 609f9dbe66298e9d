#pragma once

#include <span>
#include <vector>

#include "hdae/autodiff.hpp"

// Hyperbolic primitives composed from tape operations, mirroring the plain
// versions in geometry.hpp so gradients come out of the chain rule.
namespace hdae::ad {

// exp_0(v) = tanh(|v|) v / |v|. Below kTinyNorm the map is the identity to
// within O(|v|^3), which also dodges the 0/0 at the origin.
inline constexpr double kTinyNorm = 1e-12;

inline Var exp_map_0(Tape& t, Var v) {
  Var n = t.norm(v);
  if (t.value(n) < kTinyNorm) return t.affine(v, 1.0, 0.0);
  Var radius = t.clamp(t.tanh(n), -1.0, 1.0 - 1e-15);
  return t.smul(t.divs(radius, n), v);
}

inline Var log_map_0(Tape& t, Var x) {
  Var n = t.norm(x);
  if (t.value(n) < kTinyNorm) return t.affine(x, 1.0, 0.0);
  return t.smul(t.divs(t.artanh(n), n), x);
}

inline Var poincare_to_klein(Tape& t, Var x) {
  Var denom = t.affine(t.dot(x, x), 1.0, 1.0);  // 1 + |x|^2
  return t.divs(t.affine(x, 2.0, 0.0), denom);
}

inline Var klein_to_poincare(Tape& t, Var x) {
  Var root = t.sqrt(t.affine(t.dot(x, x), -1.0, 1.0));  // sqrt(1 - |x|^2)
  return t.divs(x, t.affine(root, 1.0, 1.0));
}

inline Var lorentz_factor(Tape& t, Var x) {
  Var root = t.sqrt(t.affine(t.dot(x, x), -1.0, 1.0));
  return t.divs(t.scalar(1.0), root);
}

inline Var poincare_distance(Tape& t, Var x, Var y) {
  Var diff = t.sub(x, y);
  Var denom = t.mul(t.affine(t.dot(x, x), -1.0, 1.0),
                    t.affine(t.dot(y, y), -1.0, 1.0));
  Var arg = t.affine(t.divs(t.dot(diff, diff), denom), 2.0, 1.0);
  return t.arcosh(arg);
}

inline Var dist_exp(Tape& t, Var u, Var v) {
  return poincare_distance(t, exp_map_0(t, u), exp_map_0(t, v));
}

// Einstein midpoint of Klein points under a vector of nonnegative weights.
inline Var einstein_midpoint(Tape& t, std::span<const Var> klein_points,
                             Var weights) {
  std::vector<Var> wg;
  wg.reserve(klein_points.size());
  for (std::size_t i = 0; i < klein_points.size(); ++i) {
    wg.push_back(t.mul(t.index(weights, static_cast<int>(i)),
                       lorentz_factor(t, klein_points[i])));
  }
  Var packed = t.pack(wg);
  Var coeffs = t.divs(packed, t.sum(packed));
  return t.blend(coeffs, klein_points);
}

}  // namespace hdae::ad
