#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

// Hyperbolic geometry on the unit Poincare ball and the Klein disk.
// Everything here is a pure function of its arguments; trainable vectors live
// in the tangent space at the origin and enter the ball only through
// exp_map_0, so no general-basepoint maps are provided.
namespace hdae::geo {

using Vec = std::vector<double>;

inline constexpr double kBallEps = 1e-5;      // open-ball safety margin
inline constexpr double kArcoshPad = 1e-15;   // derivative pad at arg = 1
inline constexpr double kDomainSlack = 1e-9;  // beyond this the caller has a bug

// A point strictly inside the unit Poincare ball.
struct BallPoint {
  Vec coords;
};

// A point strictly inside the unit Klein disk.
struct KleinPoint {
  Vec coords;
};

// A tangent vector at the origin; any finite norm.
struct TangentVec {
  Vec coords;
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

inline double sq_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

inline double norm(std::span<const double> v) { return std::sqrt(sq_norm(v)); }

namespace detail {
inline void require_finite(std::span<const double> v, const char* who) {
  if (!all_finite(v)) {
    throw std::invalid_argument(std::string(who) + ": non-finite input");
  }
}

inline void require_inside_unit(std::span<const double> v, const char* who) {
  require_finite(v, who);
  if (sq_norm(v) >= 1.0) {
    throw std::invalid_argument(std::string(who) + ": point has norm >= 1");
  }
}

inline double safe_arcosh(double arg, const char* who) {
  if (arg < 1.0 - kDomainSlack) {
    throw std::domain_error(std::string(who) + ": arcosh argument " +
                            std::to_string(arg) + " < 1");
  }
  return std::acosh(std::max(arg, 1.0));
}
}  // namespace detail

// Scales v back onto the sphere of radius 1-eps when it has escaped the ball.
// Points already inside are returned unchanged.
inline BallPoint project_to_ball(const Vec& v, double eps = kBallEps) {
  detail::require_finite(v, "project_to_ball");
  const double n = norm(v);
  if (n <= 1.0 - eps) return BallPoint{v};
  Vec out(v.size());
  const double scale = (1.0 - eps) / n;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * scale;
  return BallPoint{std::move(out)};
}

// d(x,y) = arcosh(1 + 2|x-y|^2 / ((1-|x|^2)(1-|y|^2)))
inline double poincare_distance(const BallPoint& x, const BallPoint& y) {
  detail::require_inside_unit(x.coords, "poincare_distance");
  detail::require_inside_unit(y.coords, "poincare_distance");
  if (x.coords.size() != y.coords.size()) {
    throw std::invalid_argument("poincare_distance: dimension mismatch");
  }
  double diff2 = 0.0;
  for (std::size_t i = 0; i < x.coords.size(); ++i) {
    const double d = x.coords[i] - y.coords[i];
    diff2 += d * d;
  }
  const double denom = (1.0 - sq_norm(x.coords)) * (1.0 - sq_norm(y.coords));
  return detail::safe_arcosh(1.0 + 2.0 * diff2 / denom, "poincare_distance");
}

// exp_0(v) = tanh(|v|) v / |v|, with the image kept strictly inside the ball.
inline BallPoint exp_map_0(const TangentVec& v) {
  detail::require_finite(v.coords, "exp_map_0");
  const double n = norm(v.coords);
  if (n == 0.0) return BallPoint{Vec(v.coords.size(), 0.0)};
  const double t = std::min(std::tanh(n), 1.0 - kArcoshPad);
  Vec out(v.coords.size());
  for (std::size_t i = 0; i < v.coords.size(); ++i) {
    out[i] = v.coords[i] * (t / n);
  }
  return BallPoint{std::move(out)};
}

// log_0(x) = artanh(|x|) x / |x|; inverse of exp_map_0 at the origin.
inline TangentVec log_map_0(const BallPoint& x) {
  detail::require_inside_unit(x.coords, "log_map_0");
  const double n = norm(x.coords);
  if (n == 0.0) return TangentVec{Vec(x.coords.size(), 0.0)};
  const double t = std::atanh(n);
  Vec out(x.coords.size());
  for (std::size_t i = 0; i < x.coords.size(); ++i) {
    out[i] = x.coords[i] * (t / n);
  }
  return TangentVec{std::move(out)};
}

// 2x / (1 + |x|^2)
inline KleinPoint poincare_to_klein(const BallPoint& x) {
  detail::require_inside_unit(x.coords, "poincare_to_klein");
  const double scale = 2.0 / (1.0 + sq_norm(x.coords));
  Vec out(x.coords.size());
  for (std::size_t i = 0; i < x.coords.size(); ++i) {
    out[i] = x.coords[i] * scale;
  }
  return KleinPoint{std::move(out)};
}

// x / (1 + sqrt(1 - |x|^2))
inline BallPoint klein_to_poincare(const KleinPoint& x) {
  detail::require_inside_unit(x.coords, "klein_to_poincare");
  const double scale = 1.0 / (1.0 + std::sqrt(1.0 - sq_norm(x.coords)));
  Vec out(x.coords.size());
  for (std::size_t i = 0; i < x.coords.size(); ++i) {
    out[i] = x.coords[i] * scale;
  }
  return BallPoint{std::move(out)};
}

// gamma(t) = 1 / sqrt(1 - |t|^2)
inline double lorentz_factor(const KleinPoint& x) {
  detail::require_inside_unit(x.coords, "lorentz_factor");
  return 1.0 / std::sqrt(1.0 - sq_norm(x.coords));
}

// Lorentz-factor-weighted aggregation of Klein points. Invariant under
// positive rescaling of the weights.
inline KleinPoint einstein_midpoint(const std::vector<KleinPoint>& points,
                                    const std::vector<double>& weights) {
  if (points.empty() || points.size() != weights.size()) {
    throw std::invalid_argument("einstein_midpoint: size mismatch or empty");
  }
  const std::size_t dim = points[0].coords.size();
  double total = 0.0;
  std::vector<double> wg(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (weights[i] < 0.0 || !std::isfinite(weights[i])) {
      throw std::invalid_argument("einstein_midpoint: bad weight");
    }
    wg[i] = weights[i] * lorentz_factor(points[i]);
    total += wg[i];
  }
  if (total <= 0.0) {
    throw std::invalid_argument("einstein_midpoint: all weights are zero");
  }
  Vec out(dim, 0.0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].coords.size() != dim) {
      throw std::invalid_argument("einstein_midpoint: dimension mismatch");
    }
    const double w = wg[i] / total;
    for (std::size_t k = 0; k < dim; ++k) out[k] += w * points[i].coords[k];
  }
  return KleinPoint{std::move(out)};
}

// Hyperbolic distance of tangent vectors after the exponential map.
inline double dist_exp(const TangentVec& u, const TangentVec& v) {
  return poincare_distance(exp_map_0(u), exp_map_0(v));
}

}  // namespace hdae::geo
