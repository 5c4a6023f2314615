#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include "core.hpp"

namespace twss {

/// Tolerance for the scatterer to count as vanished on and outside the support box.
inline constexpr double kDefaultSupportTol = 1e-12;

/// Real, lossless medium n(x) = sqrt(1 + q(x)) on a square support box.
class Medium {
 public:
  Medium() = default;
  Medium(Box support, std::function<double(const Vec2&)> q, std::string name)
      : support_(support), q_(std::move(q)), name_(std::move(name)) {}

  const Box& support() const { return support_; }
  const std::string& name() const { return name_; }
  bool homogeneous() const { return !q_; }

  double q(const Vec2& x) const { return q_ ? q_(x) : 0.0; }
  double n(const Vec2& x) const { return std::sqrt(1.0 + q(x)); }
  double n2(const Vec2& x) const { return 1.0 + q(x); }

 private:
  Box support_{-0.5, -0.5, 0.5, 0.5};
  std::function<double(const Vec2&)> q_;
  std::string name_ = "homogeneous";
};

inline Medium make_homogeneous(Box support = {-0.5, -0.5, 0.5, 0.5}) {
  return Medium(support, nullptr, "homogeneous");
}

/// q(x) = amplitude * exp(-|x - center|^2 / (2 width^2)).
/// The bump must have decayed below support_tol on the support boundary.
inline Medium make_gaussian_bump(double amplitude, double width, Vec2 center, Box support,
                                 double support_tol = kDefaultSupportTol) {
  if (!(amplitude > -1.0)) throw Error(ErrorCode::InvalidAmplitude, "amplitude must exceed -1");
  if (!(width > 0.0)) throw Error(ErrorCode::InvalidArgument, "width must be positive");
  if (!support.contains(center))
    throw Error(ErrorCode::SupportViolation, "bump center lies outside the support box");
  const double d = support.boundary_distance(center);
  const double edge = std::abs(amplitude) * std::exp(-d * d / (2.0 * width * width));
  if (edge > support_tol) {
    char msg[128];
    std::snprintf(msg, sizeof msg, "bump value %.3g on the support boundary exceeds %.3g", edge, support_tol);
    throw Error(ErrorCode::SupportViolation, msg);
  }
  const double inv = 1.0 / (2.0 * width * width);
  return Medium(
      support,
      [=](const Vec2& x) { return amplitude * std::exp(-(x - center).squaredNorm() * inv); },
      "gaussian");
}

inline std::vector<double> eval_n_grid(const Medium& m, const std::vector<Vec2>& pts) {
  std::vector<double> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(m.n(p));
  return out;
}

}  // namespace twss
