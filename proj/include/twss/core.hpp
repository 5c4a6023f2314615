#pragma once

#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace twss {

using cplx = std::complex<double>;
using Vec2 = Eigen::Vector2d;
using CMat = Eigen::MatrixXcd;
using CVec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kEulerGamma = 0.57721566490153286061;
inline constexpr cplx kI{0.0, 1.0};

// Library-wide sign of the Green's function, G = s (i/4) H0(k r).
inline constexpr int kGreenSign = +1;

enum class ErrorCode {
  InvalidArgument,
  InvalidAmplitude,
  SupportViolation,
  DomainError,
  InvalidCount,
  UnsupportedGeometry,
  NearResonance,
  DegenerateLeaf,
  EmptyBasis,
  InterfaceMismatch,
  EmptyMerge,
  ShapeMismatch,
  TargetOutsideLeaf,
  TargetInsideDomain,
  SourceOnBoundary,
  IllPosed,
  SingularSystem,
  NonConvergent,
  Precondition,
};

inline const char* to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidAmplitude: return "InvalidAmplitude";
    case ErrorCode::SupportViolation: return "SupportViolation";
    case ErrorCode::DomainError: return "DomainError";
    case ErrorCode::InvalidCount: return "InvalidCount";
    case ErrorCode::UnsupportedGeometry: return "UnsupportedGeometry";
    case ErrorCode::NearResonance: return "NearResonance";
    case ErrorCode::DegenerateLeaf: return "DegenerateLeaf";
    case ErrorCode::EmptyBasis: return "EmptyBasis";
    case ErrorCode::InterfaceMismatch: return "InterfaceMismatch";
    case ErrorCode::EmptyMerge: return "EmptyMerge";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::TargetOutsideLeaf: return "TargetOutsideLeaf";
    case ErrorCode::TargetInsideDomain: return "TargetInsideDomain";
    case ErrorCode::SourceOnBoundary: return "SourceOnBoundary";
    case ErrorCode::IllPosed: return "IllPosed";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::NonConvergent: return "NonConvergent";
    case ErrorCode::Precondition: return "Precondition";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(to_string(code)) + ": " + msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

struct WaveContext {
  double k = 1.0;
  double epsilon = 1e-10;

  WaveContext() = default;
  WaveContext(double k_, double eps_) : k(k_), epsilon(eps_) {
    if (!(k > 0.0)) throw Error(ErrorCode::InvalidArgument, "wavenumber must be positive");
    if (!(epsilon > 0.0 && epsilon < 1.0))
      throw Error(ErrorCode::InvalidArgument, "precision must lie in (0,1)");
  }
};

/// Axis-aligned rectangle [x0,x1] x [y0,y1].
struct Box {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  Vec2 center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }
  bool contains(const Vec2& p, double tol = 0.0) const {
    return p.x() >= x0 - tol && p.x() <= x1 + tol && p.y() >= y0 - tol && p.y() <= y1 + tol;
  }
  // Distance from p to the boundary (positive inside or outside).
  double boundary_distance(const Vec2& p) const {
    if (contains(p)) {
      return std::min(std::min(p.x() - x0, x1 - p.x()), std::min(p.y() - y0, y1 - p.y()));
    }
    double dx = std::max({x0 - p.x(), 0.0, p.x() - x1});
    double dy = std::max({y0 - p.y(), 0.0, p.y() - y1});
    return std::hypot(dx, dy);
  }
  // Counterclockwise corners starting at the south-west one.
  std::vector<Vec2> corners() const { return {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}; }
};

inline Box square_box(double x0, double y0, double side) { return {x0, y0, x0 + side, y0 + side}; }

}  // namespace twss
