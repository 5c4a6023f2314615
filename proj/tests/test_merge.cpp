#include "test_util.hpp"
#include "twss/merge.hpp"

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

Fit fit(const DNTrace& tr, const CVec& data, double k) {
  const RVec w = trace_row_weights(*tr.boundary, k);
  const CMat A = w.asDiagonal() * tr.data;
  const CVec b = w.asDiagonal() * data;
  Fit f;
  f.gamma = A.completeOrthogonalDecomposition().solve(b);
  f.rel = (A * f.gamma - b).norm() / b.norm();
  return f;
}

std::vector<LeafBasis> chebyshev_leaves(const Tree& t, double k, const Medium& med, int p) {
  std::vector<LeafBasis> out;
  for (int id : t.leaf_nodes)
    out.push_back(compress_basis(build_leaf_chebyshev(WaveContext(k, 1e-10), med, t.nodes[id].box, p,
                                                      t.nodes_per_edge, 1e-10),
                                 1e-13, k));
  return out;
}

DNTrace random_trace(const BoundaryPtr& b, Eigen::Index cols) { return {b, random_cmat(2 * b->size(), cols)}; }

double weighted_distance(const DNTrace& a, const DNTrace& b, double k) {
  const RVec w = trace_row_weights(*a.boundary, k);
  return subspace_distance(w.asDiagonal() * a.data, w.asDiagonal() * b.data);
}

}  // namespace

TEST(Quadtree, Structure) {
  Tree t1 = build_quadtree(kUnit, 1, 4);
  EXPECT_EQ(t1.nodes.size(), 7u);
  EXPECT_EQ(t1.leaf_nodes.size(), 4u);
  for (int id : t1.leaf_nodes) {
    EXPECT_DOUBLE_EQ(t1.nodes[id].box.width(), 0.5);
    EXPECT_EQ(t1.nodes[id].boundary->size(), 16);
  }
  const TreeNode& root = t1.nodes[t1.root()];
  EXPECT_EQ(root.parent, -1);
  EXPECT_EQ(root.boundary->size(), 32);
  EXPECT_NEAR(root.boundary->arclength, 4.0, 1e-15);

  Tree t2 = build_quadtree(kUnit, 2, 6);
  EXPECT_EQ(t2.nodes.size(), 31u);
  EXPECT_EQ(t2.leaf_nodes.size(), 16u);
  for (size_t i = 0; i + 1 < t2.nodes.size(); ++i) EXPECT_GT(t2.nodes[i].parent, static_cast<int>(i));
  EXPECT_EQ(t2.nodes[t2.root()].boundary->size(), 16 * 6);

  Tree q = build_quadtree(kUnit, 2, 6, MergeStrategy::Quad);
  EXPECT_EQ(q.nodes.size(), 21u);
  EXPECT_EQ(q.nodes[q.root()].children.size(), 4u);
  EXPECT_TWSS_ERROR(build_quadtree(kUnit, 0, 6), ErrorCode::InvalidArgument);
}

TEST(Quadtree, InterfacesAreBitIdentical) {
  Tree t = build_quadtree({-0.3, -0.7, 0.9, 0.5}, 3, 7);
  for (const TreeNode& n : t.nodes) {
    for (const auto& ip : n.pairs) {
      const auto& A = *t.nodes[n.children[ip.child_a]].boundary;
      const auto& B = *t.nodes[n.children[ip.child_b]].boundary;
      const Panel& pa = A.panels[ip.panel_a];
      const Panel& pb = B.panels[ip.panel_b];
      for (int j = 0; j < pa.order; ++j) {
        EXPECT_TRUE(A.nodes[pa.offset + j] == B.nodes[pb.offset + pa.order - 1 - j]);
        EXPECT_TRUE(A.normals[pa.offset + j] == -B.normals[pb.offset + pa.order - 1 - j]);
      }
    }
  }
  EXPECT_EQ(t.leaf_of({-0.29, -0.69}), 0);
  EXPECT_EQ(t.leaf_of({0.89, 0.49}), 63);
}

TEST(Quadtree, DisjointChildrenRejected) {
  Tree t = build_quadtree(kUnit, 1, 4);
  std::vector<TreeNode> nodes{t.nodes[t.leaf_nodes[0]], t.nodes[t.leaf_nodes[3]]};
  TreeNode par;
  par.box = kUnit;
  par.children = {0, 1};
  nodes.push_back(par);
  EXPECT_TWSS_ERROR(detail::link_children(nodes, 2), ErrorCode::InterfaceMismatch);
}

TEST(Merge, PairDimensions) {
  Tree t = build_quadtree(kUnit, 1, 4);
  const TreeNode& rect = t.nodes[4];
  ASSERT_EQ(rect.children.size(), 2u);
  DNTrace a = random_trace(t.nodes[rect.children[0]].boundary, 16);
  DNTrace b = random_trace(t.nodes[rect.children[1]].boundary, 16);
  auto r = merge_pair(rect, a, b, 1.0, 1e-12);
  EXPECT_EQ(r.diag.constraint_rows, 8);
  EXPECT_EQ(r.diag.constraint_cols, 32);
  EXPECT_EQ(r.diag.null_dim, 24);
  EXPECT_EQ(r.trace.data.rows(), 48);
  EXPECT_EQ(r.trace.cols(), 24);
  EXPECT_EQ(r.split_ops[0].rows(), 16);
  DNTrace small_a = random_trace(a.boundary, 4), small_b = random_trace(b.boundary, 4);
  EXPECT_TWSS_ERROR(merge_pair(rect, small_a, small_b, 1.0, 1e-12), ErrorCode::EmptyMerge);
  EXPECT_TWSS_ERROR(merge_quad(rect, {&a, &b, &a, &b}, 1.0, 1e-12), ErrorCode::ShapeMismatch);
  const TreeNode& root = t.nodes[t.root()];
  EXPECT_TWSS_ERROR(merge_pair(root, a, b, 1.0, 1e-12), ErrorCode::InterfaceMismatch);
}

TEST(Merge, QuadDimensions) {
  Tree t = build_quadtree(kUnit, 1, 4, MergeStrategy::Quad);
  const TreeNode& root = t.nodes[t.root()];
  std::vector<DNTrace> tr;
  for (int c : root.children) tr.push_back(random_trace(t.nodes[c].boundary, 16));
  auto r = merge_quad(root, {&tr[0], &tr[1], &tr[2], &tr[3]}, 1.0, 1e-12);
  EXPECT_EQ(r.diag.constraint_rows, 32);
  EXPECT_EQ(r.diag.constraint_cols, 64);
  EXPECT_EQ(r.diag.null_dim, 32);
  EXPECT_EQ(r.trace.data.rows(), 64);
}

TEST(Merge, DimensionIdentityOnRandomTraces) {
  Tree t = build_quadtree(kUnit, 2, 5);
  for (int trial = 0; trial < 20; ++trial)
    for (const TreeNode& n : t.nodes) {
      if (n.is_leaf() || trial % 4) continue;
      Eigen::Index g = 0;
      for (const auto& ip : n.pairs) g += t.nodes[n.children[ip.child_a]].boundary->panels[ip.panel_a].order;
      std::vector<DNTrace> tr;
      Eigen::Index r = 0;
      for (int c : n.children) {
        tr.push_back(random_trace(t.nodes[c].boundary, g + 1 + trial % 5));
        r += tr.back().cols();
      }
      auto m = merge_pair(n, tr[0], tr[1], 3.0, 1e-12);
      EXPECT_EQ(m.diag.null_dim, r - 2 * g);
    }
}

TEST(Merge, ContinuityOfSplitCoefficients) {
  Tree t = build_quadtree(kUnit, 1, 6);
  const TreeNode& rect = t.nodes[4];
  DNTrace a = random_trace(t.nodes[rect.children[0]].boundary, 20);
  DNTrace b = random_trace(t.nodes[rect.children[1]].boundary, 20);
  auto r = merge_pair(rect, a, b, 2.0, 1e-12);
  const CVec gamma = twss::test::random_cvec(r.trace.cols());
  const CVec ua = a.data * (r.split_ops[0] * gamma), ub = b.data * (r.split_ops[1] * gamma);
  const auto& ip = rect.pairs[0];
  const Panel& pa = a.boundary->panels[ip.panel_a];
  const Panel& pb = b.boundary->panels[ip.panel_b];
  for (int j = 0; j < pa.order; ++j) {
    const Eigen::Index ia = pa.offset + j, ib = pb.offset + pa.order - 1 - j;
    EXPECT_LE(std::abs(ua(ia) - ub(ib)), 1e-10 * gamma.norm());
    EXPECT_LE(std::abs(ua(a.nodes() + ia) + ub(b.nodes() + ib)), 1e-10 * gamma.norm());
  }
  // parent trace restricted to each child panel is that child's trace
  const CVec G = r.trace.data * gamma;
  const Eigen::Index n = r.trace.nodes();
  for (size_t pi = 0; pi < rect.child_panel[0].size(); ++pi) {
    const int tgt = rect.child_panel[0][pi];
    if (tgt < 0) continue;
    const Panel& src = a.boundary->panels[pi];
    const Panel& dst = rect.boundary->panels[tgt];
    EXPECT_LE((G.segment(dst.offset, dst.order) - ua.segment(src.offset, src.order)).norm(), 1e-12 * G.norm());
    EXPECT_LE((G.segment(n + dst.offset, dst.order) - ua.segment(a.nodes() + src.offset, src.order)).norm(),
              1e-12 * G.norm());
  }
}

TEST(Merge, OrderOfChildrenDoesNotMatter) {
  Tree t = build_quadtree(kUnit, 1, 6);
  const TreeNode& rect = t.nodes[4];
  DNTrace a = random_trace(t.nodes[rect.children[0]].boundary, 15);
  DNTrace b = random_trace(t.nodes[rect.children[1]].boundary, 15);
  auto r = merge_pair(rect, a, b, 2.0, 1e-12);
  std::vector<TreeNode> nodes{t.nodes[rect.children[1]], t.nodes[rect.children[0]]};
  TreeNode par;
  par.box = rect.box;
  par.children = {0, 1};
  nodes.push_back(par);
  detail::link_children(nodes, 2);
  auto s = merge_pair(nodes[2], b, a, 2.0, 1e-12);
  ASSERT_EQ(s.trace.cols(), r.trace.cols());
  EXPECT_LE(weighted_distance(r.trace, s.trace, 2.0), 1e-10);
}

TEST(Merge, PlaneWavesSurviveEveryLevel) {
  const double k = 10.0;
  Tree t = build_quadtree(kUnit, 2, 14);
  auto leaves = chebyshev_leaves(t, k, make_homogeneous(), 12);
  upward_pass(t, leaves, k, 1e-10);
  for (int trial = 0; trial < 3; ++trial) {
    const double ang = uniform(0, 2 * kPi);
    for (const TreeNode& n : t.nodes) EXPECT_LE(fit(n.trace, plane_trace(*n.boundary, k, ang), k).rel, 1e-8);
  }
}

TEST(Merge, QuadAndPairwiseAgree) {
  const double k = 6.0;
  Medium bump = make_gaussian_bump(0.5, 0.1, {0, 0}, kUnit, 1e-5);
  Tree a = build_quadtree(kUnit, 1, 10), b = build_quadtree(kUnit, 1, 10, MergeStrategy::Quad);
  auto la = chebyshev_leaves(a, k, bump, 9), lb = chebyshev_leaves(b, k, bump, 9);
  upward_pass(a, la, k, 1e-10);
  upward_pass(b, lb, k, 1e-10);
  const DNTrace& ra = a.nodes[a.root()].trace;
  const DNTrace& rb = b.nodes[b.root()].trace;
  EXPECT_EQ(ra.cols(), rb.cols());
  EXPECT_LE(weighted_distance(ra, rb, k), 1e-6);
}

TEST(Merge, RootDimensionGrowsWithK) {
  // Fixed points per wavelength: one more level per doubling of k.
  std::vector<double> dims;
  int levels = 1;
  for (double k : {5.0, 10.0, 20.0}) {
    Tree t = build_quadtree(kUnit, levels++, 10);
    auto leaves = chebyshev_leaves(t, k, make_gaussian_bump(0.5, 0.1, {0, 0}, kUnit, 1e-5), 8);
    upward_pass(t, leaves, k, 1e-10);
    dims.push_back(double(t.nodes[t.root()].trace.cols()));
  }
  EXPECT_NEAR(dims[1] / dims[0], 2.0, 0.4);
  EXPECT_NEAR(dims[2] / dims[1], 2.0, 0.4);
}

TEST(Split, DownwardPassIsLinear) {
  const double k = 5.0;
  Tree t = build_quadtree(kUnit, 2, 8);
  auto leaves = chebyshev_leaves(t, k, make_gaussian_bump(0.5, 0.1, {0, 0}, kUnit, 1e-5), 7);
  upward_pass(t, leaves, k, 1e-10);
  const Eigen::Index r = t.nodes[t.root()].trace.cols();
  const CVec a = twss::test::random_cvec(r), b = twss::test::random_cvec(r);
  const cplx alpha(0.3, -1.2);
  auto ga = downward_pass(t, a), gb = downward_pass(t, b), gc = downward_pass(t, alpha * a + b);
  auto gz = downward_pass(t, CVec::Zero(r));
  for (size_t i = 0; i < t.nodes.size(); ++i) {
    EXPECT_LE((gc[i] - alpha * ga[i] - gb[i]).norm(), 1e-12 * gc[i].norm() + 1e-14);
    EXPECT_EQ(gz[i].norm(), 0.0);
  }
  EXPECT_EQ(leaf_coefficients(t, ga).size(), 16u);
  EXPECT_TWSS_ERROR(split_coefficients(t.nodes[t.leaf_nodes[0]], a), ErrorCode::ShapeMismatch);
  EXPECT_TWSS_ERROR(split_coefficients(t.nodes[t.root()], CVec::Zero(r + 1)), ErrorCode::ShapeMismatch);
}

TEST(Split, LeafFieldsReproducePlaneWave) {
  const double k = 10.0;
  Tree t = build_quadtree(kUnit, 2, 14);
  auto leaves = chebyshev_leaves(t, k, make_homogeneous(), 12);
  upward_pass(t, leaves, k, 1e-10);
  const double ang = 0.9;
  const auto f = fit(t.nodes[t.root()].trace, plane_trace(*t.nodes[t.root()].boundary, k, ang), k);
  auto per_node = downward_pass(t, f.gamma);
  for (size_t i = 0; i < t.nodes.size(); ++i) {
    const CVec got = t.nodes[i].trace.data * per_node[i];
    const CVec want = plane_trace(*t.nodes[i].boundary, k, ang);
    EXPECT_LE((got - want).norm(), 1e-7 * want.norm()) << i;
  }
  std::vector<Vec2> pts;
  for (int i = 0; i < 50; ++i) pts.push_back({uniform(-0.5, 0.5), uniform(-0.5, 0.5)});
  const CVec u = evaluate_tree_field(t, leaves, leaf_coefficients(t, per_node), pts);
  for (size_t i = 0; i < pts.size(); ++i)
    EXPECT_LE(std::abs(u(i) - std::exp(kI * k * (std::cos(ang) * pts[i].x() + std::sin(ang) * pts[i].y()))), 1e-6);
  EXPECT_TWSS_ERROR(evaluate_tree_field(t, leaves, leaf_coefficients(t, per_node), {{0.7, 0.0}}),
                    ErrorCode::TargetOutsideLeaf);
}
