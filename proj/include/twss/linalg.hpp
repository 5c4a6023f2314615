#pragma once

#include <algorithm>
#include <complex>

#ifndef lapack_complex_double
#define lapack_complex_double std::complex<double>
#endif
#ifndef lapack_complex_float
#define lapack_complex_float std::complex<float>
#endif
#include <lapacke.h>

#include <Eigen/SVD>

#include "core.hpp"

namespace twss {

struct Svd {
  CMat U;     // m x m (full) or m x min(m,n) (thin)
  RVec s;     // min(m,n), descending
  CMat V;     // n x n (full) or n x min(m,n) (thin); A = U diag(s) V^H
};

namespace detail {

// A few fixed probes catch a grossly wrong factorization for O(mn) work.
inline bool svd_reconstructs(const CMat& A, const CMat& U, const RVec& s, const CMat& V) {
  const Eigen::Index r = s.size();
  CMat X(A.cols(), 2);
  for (Eigen::Index i = 0; i < A.cols(); ++i) {
    X(i, 0) = cplx(std::cos(0.7 * i + 0.1), std::sin(1.3 * i));
    X(i, 1) = cplx(1.0 / (1.0 + i), std::cos(2.1 * i));
  }
  const CMat ref = A * X;
  const CMat rec = U.leftCols(r) * (s.cast<cplx>().asDiagonal() * (V.leftCols(r).adjoint() * X));
  return (ref - rec).norm() <= 1e-10 * std::max(ref.norm(), 1e-300);
}

inline Svd svd_eigen(const CMat& A, bool full) {
  const unsigned opts = full ? (Eigen::ComputeFullU | Eigen::ComputeFullV) : (Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::BDCSVD<CMat> d(A, opts);
  return {d.matrixU(), d.singularValues(), d.matrixV()};
}

}  // namespace detail

/// Dense SVD via LAPACK divide and conquer (zgesdd). The result is spot-checked and
/// recomputed with Eigen's BDCSVD when it does not reproduce A; some OpenBLAS builds
/// return garbage from zgesdd on AVX-512 hardware once min(m,n) reaches a few hundred.
inline Svd svd(const CMat& A, bool full) {
  const lapack_int m = static_cast<lapack_int>(A.rows());
  const lapack_int n = static_cast<lapack_int>(A.cols());
  const lapack_int mn = std::min(m, n);
  Svd out;
  out.s.resize(mn);
  if (m == 0 || n == 0) {
    out.U = CMat::Identity(m, full ? m : mn);
    out.V = CMat::Identity(n, full ? n : mn);
    return out;
  }
  CMat a = A;
  const char jobz = full ? 'A' : 'S';
  CMat U(m, full ? m : mn);
  CMat Vh(full ? n : mn, n);
  lapack_int info = LAPACKE_zgesdd(LAPACK_COL_MAJOR, jobz, m, n, a.data(), m, out.s.data(), U.data(),
                                   m, Vh.data(), static_cast<lapack_int>(Vh.rows()));
  if (info < 0) throw Error(ErrorCode::SingularSystem, "zgesdd failed, info=" + std::to_string(info));
  out.U = std::move(U);
  out.V = Vh.adjoint();
  if (info > 0 || !out.s.allFinite() || !detail::svd_reconstructs(A, out.U, out.s, out.V))
    return detail::svd_eigen(A, full);
  return out;
}

/// Orthonormal basis of the approximate null space of A.
/// Keeps right singular vectors with singular value <= tol_rel * sigma_max, plus the
/// trailing t - s directions when A is wide.
inline CMat numeric_nullspace(const CMat& A, double tol_rel) {
  if (A.rows() < 1 || A.cols() < 1) throw Error(ErrorCode::InvalidArgument, "empty matrix");
  if (!(tol_rel > 0 && tol_rel < 1)) throw Error(ErrorCode::InvalidArgument, "tol_rel in (0,1)");
  Svd d = svd(A, true);
  const double smax = d.s.size() ? d.s(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < d.s.size(); ++i)
    if (d.s(i) > tol_rel * smax) ++rank;
  return d.V.rightCols(A.cols() - rank);
}

/// Solve A X = B by LU with partial pivoting (zgesv). A is overwritten.
inline CMat lu_solve(CMat& A, const CMat& B) {
  if (A.rows() != A.cols() || A.rows() != B.rows())
    throw Error(ErrorCode::ShapeMismatch, "lu_solve dimensions");
  const lapack_int n = static_cast<lapack_int>(A.rows());
  CMat X = B;
  std::vector<lapack_int> piv(n);
  lapack_int info = LAPACKE_zgesv(LAPACK_COL_MAJOR, n, static_cast<lapack_int>(B.cols()), A.data(), n,
                                  piv.data(), X.data(), n);
  if (info != 0) throw Error(ErrorCode::SingularSystem, "zgesv failed, info=" + std::to_string(info));
  return X;
}

/// Smallest principal-angle sine between column spaces: max over columns of A of the
/// distance to span(B), after orthonormalizing both.
inline double subspace_distance(const CMat& A, const CMat& B) {
  Svd a = svd(A, false), b = svd(B, false);
  auto rank_of = [](const RVec& s) {
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i)
      if (s(i) > 1e-12 * s(0)) ++r;
    return r;
  };
  CMat Qa = a.U.leftCols(rank_of(a.s));
  CMat Qb = b.U.leftCols(rank_of(b.s));
  CMat R = Qa - Qb * (Qb.adjoint() * Qa);
  return R.cols() ? svd(R, false).s(0) : 0.0;
}

}  // namespace twss
