#pragma once

// Dense volume-integral reference solver. Shares only the special functions with the
// rest of the library so that agreement between the two is meaningful.

#include <functional>

#include "linalg.hpp"
#include "medium.hpp"
#include "specfun.hpp"

namespace twss::oracle {

struct VolumeGrid {
  Box box;
  int n_side = 0;
  std::vector<Vec2> points;  // cell centers, row-major from the south-west
  double h = 0;
  double cell_area = 0;

  VolumeGrid() = default;
  VolumeGrid(const Box& b, int n) : box(b), n_side(n) {
    if (n < 2) throw Error(ErrorCode::InvalidCount, "grid needs at least 2 cells per side");
    if (std::abs(b.width() - b.height()) > 1e-14 * b.width())
      throw Error(ErrorCode::UnsupportedGeometry, "volume grid needs a square box");
    h = b.width() / n;
    cell_area = h * h;
    points.reserve(static_cast<size_t>(n) * n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) points.push_back({b.x0 + (i + 0.5) * h, b.y0 + (j + 0.5) * h});
  }
  Eigen::Index size() const { return static_cast<Eigen::Index>(points.size()); }
};

using Field = std::function<cplx(const Vec2&)>;

/// Integral of G(x, .) over the square cell of side h centered at x. The log term is
/// integrated exactly, the constant part of the small-argument expansion by midpoint.
inline cplx self_cell(double k, double h) {
  const double a = 0.5 * h;
  const double I = std::log(2.0) - 3.0 + 0.5 * kPi;  // int_{[0,1]^2} ln(x^2 + y^2)
  const double log_int = 2.0 * a * a * (I + 2.0 * std::log(a));
  const cplx c = 0.25 * kI - (std::log(0.5 * k) + kEulerGamma) / (2.0 * kPi);
  return double(kGreenSign) * (-log_int / (2.0 * kPi) + c * h * h);
}

inline cplx kernel(double k, const Vec2& x, const Vec2& y) {
  return double(kGreenSign) * 0.25 * kI * hankel01(k * (x - y).norm()).first;
}

/// sigma - k^2 q int G sigma = k^2 q u0, collocated at cell centers.
inline CVec solve_lippmann_schwinger(double k, const Medium& med, const VolumeGrid& grid, const Field& u0) {
  if (!(k > 0)) throw Error(ErrorCode::InvalidArgument, "wavenumber must be positive");
  const Eigen::Index N = grid.size();
  const double k2 = k * k, A = grid.cell_area;
  RVec q(N);
  CVec rhs(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    q(i) = med.q(grid.points[i]);
    rhs(i) = k2 * q(i) * u0(grid.points[i]);
  }
  if (q.cwiseAbs().maxCoeff() == 0.0) return CVec::Zero(N);

  CMat M(N, N);
  const cplx self = self_cell(k, grid.h);
  for (Eigen::Index j = 0; j < N; ++j) {
    M(j, j) = 1.0 - k2 * q(j) * self;
    for (Eigen::Index i = j + 1; i < N; ++i) {
      const cplx g = kernel(k, grid.points[i], grid.points[j]) * A;
      M(i, j) = -k2 * q(i) * g;
      M(j, i) = -k2 * q(j) * g;
    }
  }
  std::vector<lapack_int> piv(N);
  const lapack_int n = static_cast<lapack_int>(N);
  lapack_int info = LAPACKE_zgesv(LAPACK_COL_MAJOR, n, 1, M.data(), n, piv.data(), rhs.data(), n);
  if (info != 0) throw Error(ErrorCode::SingularSystem, "dense volume solve failed, info=" + std::to_string(info));
  return rhs;
}

/// v(x) = int G(x, .) sigma, midpoint rule with the self-cell value at grid nodes.
inline CVec eval_scattered_volume(double k, const VolumeGrid& grid, const CVec& sigma,
                                  const std::vector<Vec2>& targets) {
  if (sigma.size() != grid.size()) throw Error(ErrorCode::ShapeMismatch, "density length");
  CVec v = CVec::Zero(static_cast<Eigen::Index>(targets.size()));
  const cplx self = self_cell(k, grid.h);
  for (size_t t = 0; t < targets.size(); ++t) {
    cplx acc = 0;
    for (Eigen::Index j = 0; j < grid.size(); ++j) {
      if (sigma(j) == 0.0) continue;
      const double r = (targets[t] - grid.points[j]).norm();
      acc += (r == 0.0 ? self : kernel(k, targets[t], grid.points[j]) * grid.cell_area) * sigma(j);
    }
    v(static_cast<Eigen::Index>(t)) = acc;
  }
  return v;
}

struct SelfConvergence {
  std::vector<int> n_sides;
  std::vector<CVec> fields;         // scattered field at the probes, one per grid
  std::vector<double> differences;  // relative L2 difference between successive grids
  VolumeGrid finest;
  CVec finest_sigma;
};

inline double relative_l2(const CVec& a, const CVec& ref) {
  const double n = ref.norm();
  return n > 0 ? (a - ref).norm() / n : (a - ref).norm();
}

inline SelfConvergence oracle_self_convergence(double k, const Medium& med, const Box& domain, const Field& u0,
                                               const std::vector<int>& n_sides, const std::vector<Vec2>& probes) {
  if (n_sides.size() < 3) throw Error(ErrorCode::Precondition, "self-convergence needs at least 3 grid sizes");
  SelfConvergence out;
  out.n_sides = n_sides;
  for (int n : n_sides) {
    VolumeGrid g(domain, n);
    CVec sigma = solve_lippmann_schwinger(k, med, g, u0);
    out.fields.push_back(eval_scattered_volume(k, g, sigma, probes));
    out.finest = std::move(g);
    out.finest_sigma = std::move(sigma);
  }
  for (size_t i = 1; i < out.fields.size(); ++i) {
    const double scale = std::max(out.fields[i].norm(), 1e-300);
    out.differences.push_back((out.fields[i] - out.fields[i - 1]).norm() / scale);
  }
  for (size_t i = 1; i < out.differences.size(); ++i)
    if (out.differences[i] > out.differences[i - 1] && out.differences[i - 1] > 0)
      throw Error(ErrorCode::NonConvergent, "oracle differences do not decrease");
  return out;
}

/// Second-order extrapolation from two grids with n_fine > n_coarse.
inline CVec richardson(const CVec& coarse, int n_coarse, const CVec& fine, int n_fine) {
  const double r2 = double(n_fine) * n_fine / (double(n_coarse) * n_coarse);
  return (r2 * fine - coarse) / (r2 - 1.0);
}

}  // namespace twss::oracle
