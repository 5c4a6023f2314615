#pragma once

#include <algorithm>
#include <string>

#include "boundary.hpp"
#include "medium.hpp"

namespace twss {

enum class LeafKind { FiniteDifference, Collocation };
enum class CollocationBasis { Chebyshev, PlaneWave };

/// Plane waves exp(i kappa (x - c) . (cos theta, sin theta)), every direction paired with
/// every wavenumber; c is the leaf center.
struct PlaneWaveBasisSpec {
  std::vector<double> directions;
  std::vector<double> wavenumbers;

  void validate() const {
    if (directions.empty() || wavenumbers.empty()) throw Error(ErrorCode::EmptyBasis, "empty plane-wave basis");
    for (size_t i = 0; i < directions.size(); ++i)
      for (size_t j = i + 1; j < directions.size(); ++j) {
        double d = std::remainder(directions[i] - directions[j], 2.0 * kPi);
        if (std::abs(d) < 1e-14) throw Error(ErrorCode::InvalidArgument, "duplicate plane-wave direction");
      }
  }
  static PlaneWaveBasisSpec equispaced(int ndir, std::vector<double> wavenumbers) {
    PlaneWaveBasisSpec s;
    for (int i = 0; i < ndir; ++i) s.directions.push_back(2.0 * kPi * i / ndir);
    s.wavenumbers = std::move(wavenumbers);
    return s;
  }
};

/// Total-wave solution space of one leaf square.
struct LeafBasis {
  Box box;
  LeafKind kind = LeafKind::Collocation;
  CollocationBasis basis = CollocationBasis::Chebyshev;

  // Finite differences: values on the m x m grid (ghosts excluded), one column per solution.
  // Chebyshev: values on the (p+1) x (p+1) tensor grid. Plane waves: coefficient matrix C.
  CMat interior;
  int grid = 0;  // m for finite differences, polynomial degree p for Chebyshev
  std::vector<double> pw_dir, pw_kappa;

  DNTrace trace;
  RVec singular_values;  // of the operator whose null space was taken
  std::vector<std::string> warnings;

  Eigen::Index rank() const { return trace.cols(); }
};

namespace detail {

/// Four-point Lagrange stencil on a uniform grid x0 + i h, i = 0..m-1.
struct Stencil4 {
  int i0;
  double w[4];
};

inline Stencil4 stencil4(double x0, double h, int m, double x) {
  int i0 = static_cast<int>(std::floor((x - x0) / h)) - 1;
  i0 = std::clamp(i0, 0, m - 4);
  Stencil4 s{i0, {}};
  for (int a = 0; a < 4; ++a) {
    double v = 1.0;
    const double xa = x0 + (i0 + a) * h;
    for (int b = 0; b < 4; ++b)
      if (b != a) v *= (x - (x0 + (i0 + b) * h)) / (xa - (x0 + (i0 + b) * h));
    s.w[a] = v;
  }
  return s;
}

inline double max_index(const Medium& med, const Box& box, int samples = 16) {
  double n = 0;
  for (int i = 0; i <= samples; ++i)
    for (int j = 0; j <= samples; ++j)
      n = std::max(n, med.n({box.x0 + box.width() * i / samples, box.y0 + box.height() * j / samples}));
  return n;
}

inline double min_index(const Medium& med, const Box& box, int samples = 16) {
  double n = 1e300;
  for (int i = 0; i <= samples; ++i)
    for (int j = 0; j <= samples; ++j)
      n = std::min(n, med.n({box.x0 + box.width() * i / samples, box.y0 + box.height() * j / samples}));
  return n;
}

/// Box edge with outward normal n: 0 south, 1 east, 2 north, 3 west.
inline int edge_of(const Vec2& n) {
  if (n.y() < -0.5) return 0;
  if (n.x() > 0.5) return 1;
  if (n.y() > 0.5) return 2;
  return 3;
}

}  // namespace detail

/// Five-point finite differences on an m x m grid including boundary points, with one ghost
/// layer outside each edge (4m ghosts). The null space of the m^2 x (m^2 + 4m) system is the
/// leaf's solution space.
inline LeafBasis build_leaf_fd(const WaveContext& ctx, const Medium& med, const Box& box, int m, int q,
                               double tol = 1e-10) {
  if (m < 3) throw Error(ErrorCode::InvalidCount, "finite-difference leaf needs m >= 3");
  if (std::abs(box.width() - box.height()) > 1e-14 * box.width())
    throw Error(ErrorCode::InvalidArgument, "leaf must be square");
  LeafBasis leaf;
  leaf.box = box;
  leaf.kind = LeafKind::FiniteDifference;
  leaf.grid = m;
  const double h = box.width() / (m - 1);
  const double ppw = 2.0 * kPi / (ctx.k * detail::max_index(med, box)) / h;
  if (ppw < 4.0)
    leaf.warnings.push_back("ResolutionWarning: " + std::to_string(ppw) + " points per wavelength");
  const int ng = m * m;
  auto G = [&](int i, int j) { return j * m + i; };
  auto ghost = [&](int i, int j) {
    if (j < 0) return ng + i;
    if (i >= m) return ng + m + j;
    if (j >= m) return ng + 2 * m + i;
    return ng + 3 * m + j;
  };
  auto idx = [&](int i, int j) { return (i >= 0 && i < m && j >= 0 && j < m) ? G(i, j) : ghost(i, j); };
  CMat A = CMat::Zero(ng, ng + 4 * m);
  for (int j = 0; j < m; ++j)
    for (int i = 0; i < m; ++i) {
      const int r = G(i, j);
      const Vec2 x(box.x0 + i * h, box.y0 + j * h);
      A(r, r) = -4.0 + h * h * ctx.k * ctx.k * med.n2(x);
      A(r, idx(i + 1, j)) += 1.0;
      A(r, idx(i - 1, j)) += 1.0;
      A(r, idx(i, j + 1)) += 1.0;
      A(r, idx(i, j - 1)) += 1.0;
    }
  CMat Z = numeric_nullspace(A, tol);
  leaf.singular_values = svd(A, false).s;
  if (Z.cols() != 4 * m)
    throw Error(ErrorCode::DegenerateLeaf,
                "null dimension " + std::to_string(Z.cols()) + " differs from 4m = " + std::to_string(4 * m));
  leaf.interior = Z.topRows(ng);

  auto bnd = std::make_shared<const BoundarySampling>(discretize_box_boundary(box, q));
  const Eigen::Index p = bnd->size();
  CMat T = CMat::Zero(2 * p, Z.cols());
  for (Eigen::Index a = 0; a < p; ++a) {
    const Vec2& x = bnd->nodes[a];
    const int e = detail::edge_of(bnd->normals[a]);
    const bool horiz = (e == 0 || e == 2);
    const double along = horiz ? x.x() : x.y();
    const auto st = detail::stencil4(horiz ? box.x0 : box.y0, h, m, along);
    for (int s = 0; s < 4; ++s) {
      const int t = st.i0 + s;
      int bi, bj, ii, ij, gi, gj;  // boundary point, inner neighbor, ghost
      switch (e) {
        case 0: bi = t, bj = 0, ii = t, ij = 1, gi = t, gj = -1; break;
        case 1: bi = m - 1, bj = t, ii = m - 2, ij = t, gi = m, gj = t; break;
        case 2: bi = t, bj = m - 1, ii = t, ij = m - 2, gi = t, gj = m; break;
        default: bi = 0, bj = t, ii = 1, ij = t, gi = -1, gj = t; break;
      }
      T.row(a) += st.w[s] * Z.row(G(bi, bj));
      T.row(p + a) += st.w[s] * (Z.row(idx(gi, gj)) - Z.row(G(ii, ij))) / (2.0 * h);
    }
  }
  leaf.trace = {bnd, T};
  return leaf;
}

/// Collocation with plane waves: A[i,j] = (k^2 n^2(x_i) - kappa_j^2) B_j(x_i); null vectors of A
/// are the coefficient columns.
inline LeafBasis build_leaf_collocation(const WaveContext& ctx, const Medium& med, const Box& box,
                                        const PlaneWaveBasisSpec& spec, const std::vector<Vec2>& colloc, int q,
                                        double tol_rel) {
  spec.validate();
  LeafBasis leaf;
  leaf.box = box;
  leaf.kind = LeafKind::Collocation;
  leaf.basis = CollocationBasis::PlaneWave;
  for (double kap : spec.wavenumbers)
    for (double th : spec.directions) {
      leaf.pw_dir.push_back(th);
      leaf.pw_kappa.push_back(kap);
    }
  const Eigen::Index nb = static_cast<Eigen::Index>(leaf.pw_dir.size());
  const Vec2 c = box.center();
  auto B = [&](Eigen::Index j, const Vec2& x) {
    const Vec2 d(std::cos(leaf.pw_dir[j]), std::sin(leaf.pw_dir[j]));
    return std::exp(kI * leaf.pw_kappa[j] * d.dot(x - c));
  };
  CMat A(static_cast<Eigen::Index>(colloc.size()), nb);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    const double kn2 = ctx.k * ctx.k * med.n2(colloc[i]);
    for (Eigen::Index j = 0; j < nb; ++j)
      A(i, j) = (kn2 - leaf.pw_kappa[j] * leaf.pw_kappa[j]) * B(j, colloc[i]);
  }
  CMat C = numeric_nullspace(A, tol_rel);
  leaf.singular_values = svd(A, false).s;
  if (C.cols() == 0) throw Error(ErrorCode::EmptyBasis, "no plane-wave combination solves the collocated PDE");
  leaf.interior = C;

  auto bnd = std::make_shared<const BoundarySampling>(discretize_box_boundary(box, q));
  const Eigen::Index p = bnd->size();
  CMat Bb(2 * p, nb);
  for (Eigen::Index a = 0; a < p; ++a)
    for (Eigen::Index j = 0; j < nb; ++j) {
      const Vec2 d(std::cos(leaf.pw_dir[j]), std::sin(leaf.pw_dir[j]));
      const cplx v = B(j, bnd->nodes[a]);
      Bb(a, j) = v;
      Bb(p + a, j) = kI * leaf.pw_kappa[j] * d.dot(bnd->normals[a]) * v;
    }
  leaf.trace = {bnd, Bb * C};
  return leaf;
}

/// Tensor Gauss-Legendre collocation points in a box.
inline std::vector<Vec2> tensor_gauss_points(const Box& box, int n) {
  const Rule& r = gauss_legendre(n);
  std::vector<Vec2> pts;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      pts.push_back({box.x0 + box.width() * 0.5 * (r.x[i] + 1), box.y0 + box.height() * 0.5 * (r.x[j] + 1)});
  return pts;
}

namespace detail {

struct ChebGrid {
  std::vector<double> xs, ys;  // physical nodes
  std::vector<double> bw;      // barycentric weights in reference coordinates
  std::vector<double> ref;
};

inline ChebGrid cheb_grid(const Box& box, int p) {
  ChebGrid g;
  g.ref = chebyshev_points(p);
  g.bw = barycentric_weights(g.ref);
  for (double s : g.ref) {
    g.xs.push_back(box.x0 + box.width() * 0.5 * (s + 1));
    g.ys.push_back(box.y0 + box.height() * 0.5 * (s + 1));
  }
  return g;
}

/// Row of the tensor interpolant at x: value = row . U, with U indexed j*(p+1)+i.
inline RVec cheb_row(const Box& box, const ChebGrid& g, const Vec2& x) {
  const int n = static_cast<int>(g.ref.size());
  std::vector<double> lx(n), ly(n);
  lagrange_row(g.ref, g.bw, 2.0 * (x.x() - box.x0) / box.width() - 1.0, lx.data());
  lagrange_row(g.ref, g.bw, 2.0 * (x.y() - box.y0) / box.height() - 1.0, ly.data());
  RVec row(n * n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) row(j * n + i) = ly[j] * lx[i];
  return row;
}

}  // namespace detail

/// Collocation with the tensor Lagrange polynomials of degree p on Chebyshev points: the PDE is
/// collocated at the (p-1)^2 interior nodes, leaving a 4p-dimensional null space.
inline LeafBasis build_leaf_chebyshev(const WaveContext& ctx, const Medium& med, const Box& box, int p, int q,
                                      double tol_rel) {
  if (p < 3) throw Error(ErrorCode::InvalidCount, "polynomial degree must be at least 3");
  LeafBasis leaf;
  leaf.box = box;
  leaf.kind = LeafKind::Collocation;
  leaf.basis = CollocationBasis::Chebyshev;
  leaf.grid = p;
  const int n = p + 1;
  auto g = detail::cheb_grid(box, p);
  const RMat D = differentiation_matrix(g.ref);
  const RMat Dx = D * (2.0 / box.width()), Dy = D * (2.0 / box.height());
  const RMat Dxx = Dx * Dx, Dyy = Dy * Dy;
  const int ni = (p - 1) * (p - 1);
  CMat A = CMat::Zero(ni, n * n);
  int r = 0;
  for (int j = 1; j < p; ++j)
    for (int i = 1; i < p; ++i, ++r) {
      for (int a = 0; a < n; ++a) {
        A(r, j * n + a) += Dxx(i, a);
        A(r, a * n + i) += Dyy(j, a);
      }
      A(r, j * n + i) += ctx.k * ctx.k * med.n2({g.xs[i], g.ys[j]});
    }
  Svd d = svd(A, true);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < d.s.size(); ++i)
    if (d.s(i) > tol_rel * d.s(0)) ++rank;
  const CMat Z = d.V.rightCols(A.cols() - rank);
  leaf.singular_values = d.s;
  if (Z.cols() == 0) throw Error(ErrorCode::EmptyBasis, "empty polynomial null space");
  leaf.interior = Z;

  // Gradient of every basis solution on the grid; column c reshaped is U(i, j) at (x_i, y_j).
  CMat Gx(n * n, Z.cols()), Gy(n * n, Z.cols());
  const CMat Dxc = Dx.cast<cplx>(), DyT = Dy.transpose().cast<cplx>();
  for (Eigen::Index c = 0; c < Z.cols(); ++c) {
    Eigen::Map<const CMat> U(Z.col(c).data(), n, n);
    Eigen::Map<CMat>(Gx.col(c).data(), n, n) = Dxc * U;
    Eigen::Map<CMat>(Gy.col(c).data(), n, n) = U * DyT;
  }
  auto bnd = std::make_shared<const BoundarySampling>(discretize_box_boundary(box, q));
  const Eigen::Index nb = bnd->size();
  CMat T(2 * nb, Z.cols());
  for (Eigen::Index a = 0; a < nb; ++a) {
    const Eigen::RowVectorXcd row = detail::cheb_row(box, g, bnd->nodes[a]).transpose().cast<cplx>();
    T.row(a) = row * Z;
    T.row(nb + a) = bnd->normals[a].x() * (row * Gx) + bnd->normals[a].y() * (row * Gy);
  }
  leaf.trace = {bnd, T};
  return leaf;
}

/// Weighted SVD of the trace; keeps directions with singular value >= eps * sigma_max and
/// makes the retained trace columns orthonormal in the weighted norm.
inline LeafBasis compress_basis(const LeafBasis& in, double eps, double k) {
  if (!(eps > 0 && eps < 1)) throw Error(ErrorCode::InvalidArgument, "eps must lie in (0,1)");
  const RVec w = trace_row_weights(*in.trace.boundary, k);
  Svd d = svd(w.asDiagonal() * in.trace.data, false);
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < d.s.size(); ++i)
    if (d.s(i) >= eps * d.s(0)) ++r;
  const CMat M = d.V.leftCols(r) * d.s.head(r).cwiseInverse().asDiagonal();
  LeafBasis out = in;
  out.trace.data = in.trace.data * M;
  out.interior = in.interior * M;
  return out;
}

/// Field of the leaf solution with coefficients gamma at targets inside the leaf box.
inline CVec reconstruct_interior(const LeafBasis& leaf, const CVec& gamma, const std::vector<Vec2>& targets) {
  if (gamma.size() != leaf.rank()) throw Error(ErrorCode::ShapeMismatch, "coefficient length differs from rank");
  const double tol = 1e-12 * std::max(1.0, leaf.box.width());
  for (const auto& x : targets)
    if (!leaf.box.contains(x, tol)) throw Error(ErrorCode::TargetOutsideLeaf, "target outside the leaf box");
  CVec out(static_cast<Eigen::Index>(targets.size()));
  if (leaf.kind == LeafKind::FiniteDifference) {
    const CVec u = leaf.interior * gamma;
    const int m = leaf.grid;
    const double h = leaf.box.width() / (m - 1);
    for (size_t t = 0; t < targets.size(); ++t) {
      const auto sx = detail::stencil4(leaf.box.x0, h, m, targets[t].x());
      const auto sy = detail::stencil4(leaf.box.y0, h, m, targets[t].y());
      cplx v = 0;
      for (int b = 0; b < 4; ++b)
        for (int a = 0; a < 4; ++a) v += sx.w[a] * sy.w[b] * u((sy.i0 + b) * m + sx.i0 + a);
      out(static_cast<Eigen::Index>(t)) = v;
    }
  } else if (leaf.basis == CollocationBasis::Chebyshev) {
    const CVec u = leaf.interior * gamma;
    auto g = detail::cheb_grid(leaf.box, leaf.grid);
    for (size_t t = 0; t < targets.size(); ++t)
      out(static_cast<Eigen::Index>(t)) = detail::cheb_row(leaf.box, g, targets[t]).cast<cplx>().dot(u);
  } else {
    const CVec c = leaf.interior * gamma;
    const Vec2 ctr = leaf.box.center();
    for (size_t t = 0; t < targets.size(); ++t) {
      cplx v = 0;
      for (Eigen::Index j = 0; j < c.size(); ++j) {
        const Vec2 d(std::cos(leaf.pw_dir[j]), std::sin(leaf.pw_dir[j]));
        v += c(j) * std::exp(kI * leaf.pw_kappa[j] * d.dot(targets[t] - ctr));
      }
      out(static_cast<Eigen::Index>(t)) = v;
    }
  }
  return out;
}

struct LeafConfig {
  LeafKind kind = LeafKind::Collocation;
  CollocationBasis basis = CollocationBasis::Chebyshev;
  int fd_m = 16;           // finite-difference grid points per side
  int degree = 16;         // Chebyshev polynomial degree
  int nodes_per_edge = 16; // Gauss-Legendre trace nodes per leaf edge
  int pw_directions = 64;
  std::vector<double> pw_wavenumber_factors;  // multiples of k; empty = {min n, 1, max n}
  int pw_colloc = 12;      // tensor Gauss collocation points per side
  double tol_rel = 1e-10;  // null-space threshold
  double compress_eps = 1e-13;
};

inline LeafBasis build_leaf(const WaveContext& ctx, const Medium& med, const Box& box, const LeafConfig& cfg) {
  LeafBasis leaf;
  if (cfg.kind == LeafKind::FiniteDifference) {
    leaf = build_leaf_fd(ctx, med, box, cfg.fd_m, cfg.nodes_per_edge, cfg.tol_rel);
  } else if (cfg.basis == CollocationBasis::Chebyshev) {
    leaf = build_leaf_chebyshev(ctx, med, box, cfg.degree, cfg.nodes_per_edge, cfg.tol_rel);
  } else {
    std::vector<double> ks;
    if (cfg.pw_wavenumber_factors.empty()) {
      const double lo = detail::min_index(med, box), hi = detail::max_index(med, box);
      for (double f : {lo, 1.0, hi})
        if (std::none_of(ks.begin(), ks.end(), [&](double v) { return std::abs(v - f * ctx.k) < 1e-12 * ctx.k; }))
          ks.push_back(f * ctx.k);
    } else {
      for (double f : cfg.pw_wavenumber_factors) ks.push_back(f * ctx.k);
    }
    auto spec = PlaneWaveBasisSpec::equispaced(cfg.pw_directions, ks);
    leaf = build_leaf_collocation(ctx, med, box, spec, tensor_gauss_points(box, cfg.pw_colloc), cfg.nodes_per_edge,
                                  cfg.tol_rel);
  }
  return compress_basis(leaf, cfg.compress_eps, ctx.k);
}

}  // namespace twss
