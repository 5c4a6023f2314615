#include "test_util.hpp"
#include "twss/leaf.hpp"

using namespace twss;
using twss::test::random_cmat;
using twss::test::uniform;

namespace {

const Box kUnit{-0.5, -0.5, 0.5, 0.5};

CVec plane_trace(const BoundarySampling& b, double k, double angle) {
  const Vec2 d(std::cos(angle), std::sin(angle));
  const Eigen::Index p = b.size();
  CVec t(2 * p);
  for (Eigen::Index i = 0; i < p; ++i) {
    const cplx u = std::exp(kI * k * d.dot(b.nodes[i]));
    t(i) = u;
    t(p + i) = kI * k * d.dot(b.normals[i]) * u;
  }
  return t;
}

struct Fit {
  CVec gamma;
  double rel = 0;
};

// Weighted least-squares fit of data by the columns of a leaf trace.
Fit fit(const LeafBasis& leaf, const CVec& data, double k) {
  const RVec w = trace_row_weights(*leaf.trace.boundary, k);
  const CMat A = w.asDiagonal() * leaf.trace.data;
  const CVec b = w.asDiagonal() * data;
  Fit f;
  f.gamma = A.completeOrthogonalDecomposition().solve(b);
  f.rel = (A * f.gamma - b).norm() / b.norm();
  return f;
}

std::vector<Vec2> random_points(const Box& b, int n) {
  std::vector<Vec2> pts;
  for (int i = 0; i < n; ++i) pts.push_back({uniform(b.x0, b.x1), uniform(b.y0, b.y1)});
  return pts;
}

}  // namespace

TEST(Linalg, NullspaceExamples) {
  CMat A(2, 2);
  A << 1, 0, 0, 0;
  CMat Z = numeric_nullspace(A, 1e-12);
  ASSERT_EQ(Z.cols(), 1);
  EXPECT_NEAR(std::abs(Z(0, 0)), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(Z(1, 0)), 1.0, 1e-15);

  CMat B = CMat::Ones(1, 3);
  CMat Y = numeric_nullspace(B, 1e-12);
  ASSERT_EQ(Y.cols(), 2);
  EXPECT_LE((Y.adjoint() * Y - CMat::Identity(2, 2)).norm(), 1e-14);
  EXPECT_LE((B * Y).norm(), 1e-14);

  CMat R = random_cmat(20, 30);
  CMat X = numeric_nullspace(R, 1e-12);
  EXPECT_EQ(X.cols(), 10);
  EXPECT_LE((R * X).norm(), 1e-12 * R.norm());
  EXPECT_TWSS_ERROR(numeric_nullspace(R, 0.0), ErrorCode::InvalidArgument);
  EXPECT_TWSS_ERROR(numeric_nullspace(R, 1.0), ErrorCode::InvalidArgument);
}

TEST(Linalg, NullspaceOfRankDeficientProduct) {
  CMat L = random_cmat(40, 12), Rm = random_cmat(12, 50);
  EXPECT_EQ(numeric_nullspace(L * Rm, 1e-10).cols(), 38);
}

TEST(Linalg, SvdReconstructsLargeMatrices) {
  // Sizes above ~256 exercise the reconstruction check and the fallback path.
  for (int n : {100, 300}) {
    CMat A = random_cmat(n + 20, n);
    Svd d = svd(A, false);
    ASSERT_EQ(d.s.size(), n);
    EXPECT_LE((d.U * d.s.cast<cplx>().asDiagonal() * d.V.adjoint() - A).norm(), 1e-11 * A.norm()) << n;
    for (Eigen::Index i = 1; i < d.s.size(); ++i) ASSERT_LE(d.s(i), d.s(i - 1));
  }
}

TEST(Linalg, SubspaceDistance) {
  CMat A = random_cmat(30, 5);
  CMat M = random_cmat(5, 5);
  EXPECT_LE(subspace_distance(A, A * M), 1e-12);
  CMat B = random_cmat(30, 5);
  EXPECT_GT(subspace_distance(A, B), 0.1);
}

TEST(FdLeaf, NullDimensionIsFourM) {
  const WaveContext ctx(2.0, 1e-10);
  Medium bump = make_gaussian_bump(0.5, 0.1, {0, 0}, kUnit, 1e-5);
  for (int m : {3, 4, 6, 8, 12}) {
    auto a = build_leaf_fd(ctx, make_homogeneous(), {0, 0, 0.25, 0.25}, m, 6);
    EXPECT_EQ(a.rank(), 4 * m) << m;
    auto b = build_leaf_fd(ctx, bump, {-0.125, -0.125, 0.125, 0.125}, m, 6);
    EXPECT_EQ(b.rank(), 4 * m) << m;
    EXPECT_EQ(b.interior.rows(), m * m);
    EXPECT_EQ(b.trace.data.rows(), 2 * 24);
  }
  EXPECT_TWSS_ERROR(build_leaf_fd(ctx, make_homogeneous(), {0, 0, 0.25, 0.25}, 2, 6), ErrorCode::InvalidCount);
  EXPECT_TWSS_ERROR(build_leaf_fd(ctx, make_homogeneous(), {0, 0, 0.25, 0.5}, 8, 6), ErrorCode::InvalidArgument);
}

TEST(FdLeaf, ColumnsSatisfyStencil) {
  const double k = 10.0;
  const WaveContext ctx(k, 1e-10);
  Medium bump = make_gaussian_bump(0.5, 0.1, {0, 0}, kUnit, 1e-5);
  const Box box{-0.1, -0.1, 0.15, 0.15};
  const int m = 10;
  auto leaf = build_leaf_fd(ctx, bump, box, m, 8);
  const double h = box.width() / (m - 1);
  for (Eigen::Index c = 0; c < leaf.interior.cols(); ++c) {
    auto U = [&](int i, int j) { return leaf.interior(j * m + i, c); };
    const double scale = leaf.interior.col(c).cwiseAbs().maxCoeff();
    for (int j = 1; j < m - 1; ++j)
      for (int i = 1; i < m - 1; ++i) {
        const Vec2 x(box.x0 + i * h, box.y0 + j * h);
        const cplx r = U(i + 1, j) + U(i - 1, j) + U(i, j + 1) + U(i, j - 1) + (-4.0 + h * h * k * k * bump.n2(x)) * U(i, j);
        ASSERT_LE(std::abs(r), 1e-10 * scale);
      }
  }
}

TEST(FdLeaf, PlaneWaveErrorIsSecondOrder) {
  const double k = 10.0;
  const WaveContext ctx(k, 1e-10);
  const Box box{0, 0, 0.25, 0.25};
  double prev = 0;
  for (int m : {12, 24}) {
    auto leaf = build_leaf_fd(ctx, make_homogeneous(), box, m, 8);
    const double e = fit(leaf, plane_trace(*leaf.trace.boundary, k, 0.6), k).rel;
    if (prev > 0) EXPECT_GT(prev / e, 3.0);
    prev = e;
  }
  EXPECT_LE(prev, 1e-2);
}

TEST(FdLeaf, ResolutionWarning) {
  auto coarse = build_leaf_fd(WaveContext(40.0, 1e-10), make_homogeneous(), kUnit, 6, 6);
  ASSERT_EQ(coarse.warnings.size(), 1u);
  EXPECT_NE(coarse.warnings[0].find("ResolutionWarning"), std::string::npos);
  auto fine = build_leaf_fd(WaveContext(2.0, 1e-10), make_homogeneous(), kUnit, 12, 6);
  EXPECT_TRUE(fine.warnings.empty());
}

TEST(PlaneWaveLeaf, HomogeneousKeepsEveryWave) {
  const double k = 5.0;
  const WaveContext ctx(k, 1e-10);
  const Box box{0, 0, 0.5, 0.5};
  auto spec = PlaneWaveBasisSpec::equispaced(16, {k});
  auto leaf = build_leaf_collocation(ctx, make_homogeneous(), box, spec, tensor_gauss_points(box, 8), 8, 1e-10);
  EXPECT_EQ(leaf.rank(), 16);
  auto off = PlaneWaveBasisSpec::equispaced(16, {1.5 * k});
  EXPECT_TWSS_ERROR(build_leaf_collocation(ctx, make_homogeneous(), box, off, tensor_gauss_points(box, 8), 8, 1e-10),
                    ErrorCode::EmptyBasis);
  PlaneWaveBasisSpec dup{{0.0, 2 * kPi}, {k}};
  EXPECT_TWSS_ERROR(dup.validate(), ErrorCode::InvalidArgument);
  EXPECT_TWSS_ERROR(PlaneWaveBasisSpec{}.validate(), ErrorCode::EmptyBasis);
}

TEST(PlaneWaveLeaf, ResidualBoundedByThreshold) {
  const double k = 10.0, tol = 1e-8;
  const WaveContext ctx(k, 1e-10);
  Medium bump = make_gaussian_bump(0.5, 0.1, {0, 0}, kUnit, 1e-5);
  const Box box{-0.05, -0.05, 0.25, 0.25};
  auto spec = PlaneWaveBasisSpec::equispaced(64, {k, 1.1 * k, std::sqrt(1.5) * k});
  auto leaf = build_leaf_collocation(ctx, bump, box, spec, tensor_gauss_points(box, 12), 12, tol);
  const double smax = leaf.singular_values(0);
  for (const Vec2& x : random_points(box, 200))
    for (Eigen::Index c = 0; c < leaf.interior.cols(); ++c) {
      cplx r = 0;
      for (Eigen::Index j = 0; j < leaf.interior.rows(); ++j) {
        const Vec2 d(std::cos(leaf.pw_dir[j]), std::sin(leaf.pw_dir[j]));
        r += leaf.interior(j, c) * (k * k * bump.n2(x) - leaf.pw_kappa[j] * leaf.pw_kappa[j]) *
             std::exp(kI * leaf.pw_kappa[j] * d.dot(x - box.center()));
      }
      ASSERT_LE(std::abs(r), 10 * tol * smax);
    }
}

TEST(PlaneWaveLeaf, HomogeneousSpaceContainsPlaneWaves) {
  const double k = 10.0;
  const WaveContext ctx(k, 1e-10);
  const Box box{0, 0, 0.25, 0.25};
  auto spec = PlaneWaveBasisSpec::equispaced(32, {k});
  auto leaf = compress_basis(
      build_leaf_collocation(ctx, make_homogeneous(), box, spec, tensor_gauss_points(box, 8), 10, 1e-10), 1e-13, k);
  for (int t = 0; t < 10; ++t) {
    auto f = fit(leaf, plane_trace(*leaf.trace.boundary, k, uniform(0, 2 * kPi)), k);
    EXPECT_LE(f.rel, 1e-8);
  }
}

TEST(ChebyshevLeaf, DimensionAndPlaneWaves) {
  const double k = 10.0;
  const WaveContext ctx(k, 1e-10);
  const Box box{-0.25, 0, 0, 0.25};
  auto leaf = build_leaf_chebyshev(ctx, make_homogeneous(), box, 12, 14, 1e-10);
  EXPECT_EQ(leaf.rank(), 48);
  for (int t = 0; t < 5; ++t) {
    const double ang = uniform(0, 2 * kPi);
    auto f = fit(leaf, plane_trace(*leaf.trace.boundary, k, ang), k);
    EXPECT_LE(f.rel, 1e-8);
    auto pts = random_points(box, 20);
    CVec u = reconstruct_interior(leaf, f.gamma, pts);
    for (size_t i = 0; i < pts.size(); ++i)
      EXPECT_LE(std::abs(u(i) - std::exp(kI * k * (std::cos(ang) * pts[i].x() + std::sin(ang) * pts[i].y()))), 1e-7);
  }
  EXPECT_TWSS_ERROR(build_leaf_chebyshev(ctx, make_homogeneous(), box, 2, 14, 1e-10), ErrorCode::InvalidCount);
}

// u = exp(-a |x - c|^2) solves the Helmholtz equation with q = (4a - 4a^2 r^2)/k^2 - 1.
struct Manufactured {
  double k, a;
  Vec2 c;
  Medium medium() const {
    const double kk = k, aa = a;
    const Vec2 cc = c;
    return Medium(kUnit, [=](const Vec2& x) { return (4 * aa - 4 * aa * aa * (x - cc).squaredNorm()) / (kk * kk) - 1; },
                  "manufactured");
  }
  cplx u(const Vec2& x) const { return std::exp(-a * (x - c).squaredNorm()); }
  CVec trace(const BoundarySampling& b) const {
    const Eigen::Index p = b.size();
    CVec t(2 * p);
    for (Eigen::Index i = 0; i < p; ++i) {
      t(i) = u(b.nodes[i]);
      t(p + i) = -2 * a * (b.nodes[i] - c).dot(b.normals[i]) * t(i);
    }
    return t;
  }
};

TEST(ChebyshevLeaf, ContainsManufacturedSolution) {
  const Box box{-0.25, -0.25, 0, 0};
  const Manufactured m{10.0, 30.0, box.center()};
  const Medium med = m.medium();
  for (const Vec2& x : random_points(box, 100)) ASSERT_GT(med.n2(x), 0.0);
  const WaveContext ctx(m.k, 1e-10);
  double prev = 1;
  for (int p : {10, 16}) {
    auto leaf = build_leaf_chebyshev(ctx, med, box, p, 16, 1e-10);
    auto f = fit(leaf, m.trace(*leaf.trace.boundary), m.k);
    auto pts = random_points(box, 30);
    CVec u = reconstruct_interior(leaf, f.gamma, pts);
    double err = 0;
    for (size_t i = 0; i < pts.size(); ++i) err = std::max(err, std::abs(u(i) - m.u(pts[i])));
    EXPECT_LT(err, prev) << p;
    prev = err;
  }
  EXPECT_LE(prev, 1e-8);
}

TEST(FdLeaf, ContainsManufacturedSolution) {
  const Box box{-0.25, -0.25, 0, 0};
  const Manufactured m{10.0, 30.0, box.center()};
  const Medium med = m.medium();
  const WaveContext ctx(m.k, 1e-10);
  double prev = 0;
  for (int mm : {10, 20}) {
    auto leaf = build_leaf_fd(ctx, med, box, mm, 16);
    const double e = fit(leaf, m.trace(*leaf.trace.boundary), m.k).rel;
    if (prev > 0) EXPECT_GT(prev / e, 3.0);
    prev = e;
  }
  EXPECT_LE(prev, 1e-2);
}

TEST(Compress, DropsDuplicatesAndOrthonormalizes) {
  const double k = 5.0;
  const WaveContext ctx(k, 1e-10);
  auto leaf = build_leaf_chebyshev(ctx, make_homogeneous(), {0, 0, 0.5, 0.5}, 8, 10, 1e-10);
  LeafBasis twice = leaf;
  twice.trace.data.conservativeResize(Eigen::NoChange, 2 * leaf.rank());
  twice.trace.data.rightCols(leaf.rank()) = 2.0 * leaf.trace.data;
  twice.interior.conservativeResize(Eigen::NoChange, 2 * leaf.rank());
  twice.interior.rightCols(leaf.rank()) = 2.0 * leaf.interior;
  auto a = compress_basis(leaf, 1e-13, k);
  auto b = compress_basis(twice, 1e-13, k);
  EXPECT_EQ(a.rank(), leaf.rank());
  EXPECT_EQ(b.rank(), leaf.rank());
  EXPECT_LE(subspace_distance(a.trace.data, b.trace.data), 1e-10);
  const RVec w = trace_row_weights(*a.trace.boundary, k);
  const CMat Q = w.asDiagonal() * a.trace.data;
  EXPECT_LE((Q.adjoint() * Q - CMat::Identity(a.rank(), a.rank())).norm(), 1e-10);
  auto again = compress_basis(a, 1e-15, k);
  EXPECT_EQ(again.rank(), a.rank());
  EXPECT_LE(subspace_distance(again.trace.data, a.trace.data), 1e-12);
  EXPECT_TWSS_ERROR(compress_basis(leaf, 0.0, k), ErrorCode::InvalidArgument);
}

TEST(Compress, TruncatesLowRankTraces) {
  const double k = 1.0;
  LeafBasis leaf = build_leaf_chebyshev(WaveContext(k, 1e-10), make_homogeneous(), {0, 0, 1, 1}, 6, 8, 1e-10);
  const CMat mix = random_cmat(leaf.rank(), 10) * random_cmat(10, 40);
  leaf.trace.data = leaf.trace.data * mix;
  leaf.interior = leaf.interior * mix;
  EXPECT_EQ(compress_basis(leaf, 1e-8, k).rank(), 10);
}

TEST(Reconstruct, Errors) {
  auto leaf = build_leaf_chebyshev(WaveContext(2.0, 1e-10), make_homogeneous(), {0, 0, 0.5, 0.5}, 6, 8, 1e-10);
  const CVec zero = CVec::Zero(leaf.rank());
  EXPECT_EQ(reconstruct_interior(leaf, zero, {{0.1, 0.2}, {0.4, 0.4}}).norm(), 0.0);
  EXPECT_TWSS_ERROR(reconstruct_interior(leaf, zero, {{0.6, 0.2}}), ErrorCode::TargetOutsideLeaf);
  EXPECT_TWSS_ERROR(reconstruct_interior(leaf, CVec::Zero(3), {{0.1, 0.2}}), ErrorCode::ShapeMismatch);
}

TEST(Leaf, BuildDispatch) {
  const WaveContext ctx(4.0, 1e-10);
  const Box box{0, 0, 0.25, 0.25};
  LeafConfig cfg;
  cfg.degree = 8;
  cfg.nodes_per_edge = 10;
  EXPECT_EQ(build_leaf(ctx, make_homogeneous(), box, cfg).basis, CollocationBasis::Chebyshev);
  cfg.kind = LeafKind::FiniteDifference;
  cfg.fd_m = 8;
  auto fd = build_leaf(ctx, make_homogeneous(), box, cfg);
  EXPECT_EQ(fd.kind, LeafKind::FiniteDifference);
  EXPECT_LE(fd.rank(), 32);
  cfg.kind = LeafKind::Collocation;
  cfg.basis = CollocationBasis::PlaneWave;
  cfg.pw_directions = 24;
  auto pw = build_leaf(ctx, make_homogeneous(), box, cfg);
  EXPECT_EQ(pw.basis, CollocationBasis::PlaneWave);
  EXPECT_EQ(tensor_gauss_points(box, 7).size(), 49u);
}
