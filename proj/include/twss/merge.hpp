#pragma once

#include <array>
#include <chrono>
#include <map>

#include "leaf.hpp"

namespace twss {

enum class MergeStrategy { Pairwise, Quad };

/// Shared edge between two children: panel `panel_a` of child `child_a` is traversed in the
/// opposite direction as panel `panel_b` of child `child_b`.
struct InterfacePair {
  int child_a, panel_a, child_b, panel_b;
};

struct MergeDiagnostics {
  Eigen::Index constraint_rows = 0, constraint_cols = 0, null_dim = 0, compressed_dim = 0;
  double gap_kept = 0;     // largest singular value of the continuity matrix treated as null
  double gap_dropped = 0;  // smallest singular value treated as a constraint
  double seconds = 0;
};

struct TreeNode {
  Box box;
  int level = 0;  // 0 = root; rectangles carry the level of the squares they came from
  int parent = -1;
  std::vector<int> children;
  int leaf_index = -1;  // index into the leaf array, -1 for internal nodes
  int height = 0;       // merge generation, 0 for leaves

  BoundaryPtr boundary;                       // outer boundary, counterclockwise from the south edge
  BoundaryPtr interface;                      // shared edges (open), internal nodes only
  std::vector<InterfacePair> pairs;           // internal nodes only
  std::vector<std::vector<int>> child_panel;  // per child: parent panel index or -1 for interface

  DNTrace trace;
  std::vector<CMat> split_ops;  // T_c: parent coefficients -> child coefficients
  MergeDiagnostics diag;

  bool is_leaf() const { return children.empty(); }
};

struct Tree {
  Box domain;
  int levels = 0;
  int nodes_per_edge = 0;
  MergeStrategy strategy = MergeStrategy::Pairwise;
  std::vector<TreeNode> nodes;  // children precede parents; the root is last
  std::vector<int> leaf_nodes;  // leaf index -> node id, row-major from the south-west
  int root() const { return static_cast<int>(nodes.size()) - 1; }
  int leaves_per_side() const { return 1 << levels; }

  /// Leaf containing x (points on shared edges go to the north/east neighbor).
  int leaf_of(const Vec2& x) const {
    const int s = leaves_per_side();
    auto cell = [&](double v, double v0, double w) {
      return std::clamp(static_cast<int>(std::floor((v - v0) / w * s)), 0, s - 1);
    };
    const int i = cell(x.x(), domain.x0, domain.width()), j = cell(x.y(), domain.y0, domain.height());
    return j * s + i;
  }
  Box leaf_box(int i, int j) const {
    const int s = leaves_per_side();
    return {subdivision_coord(domain.x0, domain.width(), i, s), subdivision_coord(domain.y0, domain.height(), j, s),
            subdivision_coord(domain.x0, domain.width(), i + 1, s),
            subdivision_coord(domain.y0, domain.height(), j + 1, s)};
  }
};

namespace detail {

inline bool same_point(const Vec2& a, const Vec2& b) { return a.x() == b.x() && a.y() == b.y(); }

/// Counterclockwise position of a boundary point along the perimeter of a box, from its
/// south-west corner.
inline double perimeter_position(const Box& b, const Vec2& x) {
  const double W = b.width(), H = b.height();
  if (x.y() == b.y0) return x.x() - b.x0;
  if (x.x() == b.x1) return W + (x.y() - b.y0);
  if (x.y() == b.y1) return W + H + (b.x1 - x.x());
  return 2 * W + H + (b.y1 - x.y());
}

/// Links children into a parent node: finds shared panels, checks that their nodes coincide
/// bit for bit, and lays out the parent boundary.
inline void link_children(std::vector<TreeNode>& nodes, int parent_id) {
  TreeNode& par = nodes[parent_id];
  const int nc = static_cast<int>(par.children.size());
  par.child_panel.assign(nc, {});
  for (int c = 0; c < nc; ++c) par.child_panel[c].assign(nodes[par.children[c]].boundary->panels.size(), -2);
  for (int a = 0; a < nc; ++a)
    for (int b = a + 1; b < nc; ++b) {
      const auto& pa = nodes[par.children[a]].boundary->panels;
      const auto& pb = nodes[par.children[b]].boundary->panels;
      for (size_t i = 0; i < pa.size(); ++i)
        for (size_t j = 0; j < pb.size(); ++j)
          if (same_point(pa[i].a, pb[j].b) && same_point(pa[i].b, pb[j].a)) {
            par.pairs.push_back({a, static_cast<int>(i), b, static_cast<int>(j)});
            par.child_panel[a][i] = -1;
            par.child_panel[b][j] = -1;
          }
    }
  if (par.pairs.empty()) throw Error(ErrorCode::InterfaceMismatch, "children share no edge");
  // Interface sampling, verified node by node.
  std::vector<std::pair<Vec2, Vec2>> isegs;
  int order = 0;
  for (const auto& ip : par.pairs) {
    const auto& A = *nodes[par.children[ip.child_a]].boundary;
    const auto& B = *nodes[par.children[ip.child_b]].boundary;
    const Panel& pa = A.panels[ip.panel_a];
    const Panel& pb = B.panels[ip.panel_b];
    if (pa.order != pb.order) throw Error(ErrorCode::InterfaceMismatch, "panel orders differ across interface");
    for (int t = 0; t < pa.order; ++t)
      if (!same_point(A.nodes[pa.offset + t], B.nodes[pb.offset + pa.order - 1 - t]))
        throw Error(ErrorCode::InterfaceMismatch, "interface nodes are not shared exactly");
    isegs.push_back({pa.a, pa.b});
    order = pa.order;
  }
  par.interface = std::make_shared<const BoundarySampling>(make_panel_sampling(isegs, order, false));
  // Outer panels in counterclockwise order.
  struct Outer {
    double pos;
    int child, panel;
  };
  std::vector<Outer> outer;
  for (int c = 0; c < nc; ++c) {
    const auto& ps = nodes[par.children[c]].boundary->panels;
    for (size_t i = 0; i < ps.size(); ++i)
      if (par.child_panel[c][i] == -2)
        outer.push_back({perimeter_position(par.box, 0.5 * (ps[i].a + ps[i].b)), c, static_cast<int>(i)});
  }
  std::sort(outer.begin(), outer.end(), [](const Outer& x, const Outer& y) { return x.pos < y.pos; });
  std::vector<std::pair<Vec2, Vec2>> segs;
  for (size_t k = 0; k < outer.size(); ++k) {
    const Panel& p = nodes[par.children[outer[k].child]].boundary->panels[outer[k].panel];
    segs.push_back({p.a, p.b});
    par.child_panel[outer[k].child][outer[k].panel] = static_cast<int>(k);
  }
  par.boundary = std::make_shared<const BoundarySampling>(make_panel_sampling(segs, order, true));
}

}  // namespace detail

/// Balanced quadtree with 4^L leaves. Pairwise: squares merge east-west into rectangles, which
/// merge north-south into squares. Quad: four squares merge at once.
inline Tree build_quadtree(const Box& domain, int levels, int nodes_per_edge,
                           MergeStrategy strategy = MergeStrategy::Pairwise) {
  if (levels < 1) throw Error(ErrorCode::InvalidArgument, "tree needs at least one level");
  Tree tree;
  tree.domain = domain;
  tree.levels = levels;
  tree.nodes_per_edge = nodes_per_edge;
  tree.strategy = strategy;
  const int s = tree.leaves_per_side();
  std::map<std::pair<int, int>, int> cur;
  for (int j = 0; j < s; ++j)
    for (int i = 0; i < s; ++i) {
      TreeNode n;
      n.box = tree.leaf_box(i, j);
      n.level = levels;
      n.leaf_index = j * s + i;
      n.boundary = std::make_shared<const BoundarySampling>(discretize_box_boundary(n.box, nodes_per_edge));
      tree.leaf_nodes.push_back(static_cast<int>(tree.nodes.size()));
      cur[{i, j}] = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back(std::move(n));
    }
  auto make_parent = [&](std::vector<int> kids, int level, int height) {
    TreeNode n;
    n.level = level;
    n.height = height;
    n.children = kids;
    const Box& b0 = tree.nodes[kids.front()].box;
    n.box = b0;
    for (int c : kids) {
      const Box& b = tree.nodes[c].box;
      n.box.x0 = std::min(n.box.x0, b.x0);
      n.box.y0 = std::min(n.box.y0, b.y0);
      n.box.x1 = std::max(n.box.x1, b.x1);
      n.box.y1 = std::max(n.box.y1, b.y1);
    }
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back(std::move(n));
    for (int c : kids) tree.nodes[c].parent = id;
    detail::link_children(tree.nodes, id);
    return id;
  };
  int height = 0;
  for (int lev = levels; lev >= 1; --lev) {
    const int side = 1 << lev;
    std::map<std::pair<int, int>, int> next;
    if (strategy == MergeStrategy::Pairwise) {
      std::map<std::pair<int, int>, int> rect;
      ++height;
      for (int j = 0; j < side; ++j)
        for (int i = 0; i < side / 2; ++i)
          rect[{i, j}] = make_parent({cur[{2 * i, j}], cur[{2 * i + 1, j}]}, lev, height);
      ++height;
      for (int j = 0; j < side / 2; ++j)
        for (int i = 0; i < side / 2; ++i)
          next[{i, j}] = make_parent({rect[{i, 2 * j}], rect[{i, 2 * j + 1}]}, lev - 1, height);
    } else {
      ++height;
      for (int j = 0; j < side / 2; ++j)
        for (int i = 0; i < side / 2; ++i)
          next[{i, j}] = make_parent({cur[{2 * i, 2 * j}], cur[{2 * i + 1, 2 * j}], cur[{2 * i + 1, 2 * j + 1}],
                                      cur[{2 * i, 2 * j + 1}]},
                                     lev - 1, height);
    }
    cur = std::move(next);
  }
  return tree;
}

struct MergeResult {
  DNTrace trace;
  std::vector<CMat> split_ops;
  MergeDiagnostics diag;
};

/// Continuity matrix of the children across their shared edges: value rows scaled by
/// sqrt(w) enforce u_a - u_b = 0, derivative rows scaled by sqrt(w)/k enforce
/// d_na u_a + d_nb u_b = 0 (each child uses its own outward normal).
inline CMat continuity_matrix(const TreeNode& par, const std::vector<const DNTrace*>& kids, double k) {
  std::vector<Eigen::Index> col0(kids.size() + 1, 0);
  for (size_t c = 0; c < kids.size(); ++c) col0[c + 1] = col0[c] + kids[c]->cols();
  Eigen::Index g = 0;
  for (const auto& ip : par.pairs) g += kids[ip.child_a]->boundary->panels[ip.panel_a].order;
  CMat M = CMat::Zero(2 * g, col0.back());
  Eigen::Index row = 0;
  for (const auto& ip : par.pairs) {
    const DNTrace& A = *kids[ip.child_a];
    const DNTrace& B = *kids[ip.child_b];
    const Panel& pa = A.boundary->panels[ip.panel_a];
    const Panel& pb = B.boundary->panels[ip.panel_b];
    const Eigen::Index na = A.nodes(), nb = B.nodes();
    for (int t = 0; t < pa.order; ++t, ++row) {
      const Eigen::Index ia = pa.offset + t, ib = pb.offset + pa.order - 1 - t;
      const double sw = std::sqrt(A.boundary->weights[ia]);
      M.block(row, col0[ip.child_a], 1, A.cols()) = sw * A.data.row(ia);
      M.block(row, col0[ip.child_b], 1, B.cols()) = -sw * B.data.row(ib);
      M.block(g + row, col0[ip.child_a], 1, A.cols()) = (sw / k) * A.data.row(na + ia);
      M.block(g + row, col0[ip.child_b], 1, B.cols()) = (sw / k) * B.data.row(nb + ib);
    }
  }
  return M;
}

/// Merges the children of `par` by the null space of their continuity matrix and restricts
/// the result to the parent's outer boundary. Optional weighted compression at eps.
inline MergeResult merge_children(const TreeNode& par, const std::vector<const DNTrace*>& kids, double k,
                                  double tol_rel, double compress_eps = 0.0) {
  if (kids.size() != par.children.size()) throw Error(ErrorCode::ShapeMismatch, "child count");
  for (size_t c = 0; c < kids.size(); ++c) {
    kids[c]->validate();
    if (kids[c]->boundary->panels.size() != par.child_panel[c].size())
      throw Error(ErrorCode::InterfaceMismatch, "child trace does not match the node layout");
  }
  MergeResult out;
  const CMat M = continuity_matrix(par, kids, k);
  Svd d = svd(M, true);
  const double smax = d.s.size() ? d.s(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < d.s.size(); ++i)
    if (d.s(i) > tol_rel * smax) ++rank;
  CMat Z = d.V.rightCols(M.cols() - rank);
  out.diag.constraint_rows = M.rows();
  out.diag.constraint_cols = M.cols();
  out.diag.null_dim = Z.cols();
  out.diag.gap_dropped = rank > 0 ? d.s(rank - 1) / smax : 0.0;
  out.diag.gap_kept = rank < d.s.size() ? d.s(rank) / smax : 0.0;
  if (Z.cols() == 0) throw Error(ErrorCode::EmptyMerge, "continuity system has no null space");
  Eigen::Index c0 = 0;
  for (const auto* t : kids) {
    out.split_ops.push_back(Z.middleRows(c0, t->cols()));
    c0 += t->cols();
  }
  const auto& bnd = par.boundary;
  const Eigen::Index n = bnd->size();
  CMat G(2 * n, Z.cols());
  for (size_t c = 0; c < kids.size(); ++c) {
    const DNTrace& K = *kids[c];
    for (size_t pi = 0; pi < par.child_panel[c].size(); ++pi) {
      const int target = par.child_panel[c][pi];
      if (target < 0) continue;
      const Panel& src = K.boundary->panels[pi];
      const Panel& dst = bnd->panels[target];
      G.middleRows(dst.offset, dst.order) = K.data.middleRows(src.offset, src.order) * out.split_ops[c];
      G.middleRows(n + dst.offset, dst.order) = K.data.middleRows(K.nodes() + src.offset, src.order) * out.split_ops[c];
    }
  }
  if (compress_eps > 0) {
    const RVec w = trace_row_weights(*bnd, k);
    Svd e = svd(w.asDiagonal() * G, false);
    Eigen::Index r = 0;
    for (Eigen::Index i = 0; i < e.s.size(); ++i)
      if (e.s(i) >= compress_eps * e.s(0)) ++r;
    const CMat R = e.V.leftCols(r) * e.s.head(r).cwiseInverse().asDiagonal();
    G = G * R;
    for (auto& T : out.split_ops) T = T * R;
  }
  out.diag.compressed_dim = G.cols();
  out.trace = {bnd, G};
  return out;
}

/// Two-child merge of a tree node (square + square or rectangle + rectangle).
inline MergeResult merge_pair(const TreeNode& par, const DNTrace& G1, const DNTrace& G2, double k, double tol_rel,
                              double compress_eps = 0.0) {
  if (par.children.size() != 2) throw Error(ErrorCode::ShapeMismatch, "merge_pair needs two children");
  return merge_children(par, {&G1, &G2}, k, tol_rel, compress_eps);
}

/// Four-child merge with one null-space solve of the block-cyclic continuity system.
inline MergeResult merge_quad(const TreeNode& par, const std::array<const DNTrace*, 4>& G, double k, double tol_rel,
                              double compress_eps = 0.0) {
  if (par.children.size() != 4) throw Error(ErrorCode::ShapeMismatch, "merge_quad needs four children");
  return merge_children(par, {G[0], G[1], G[2], G[3]}, k, tol_rel, compress_eps);
}

/// Bottom-up merging. Nodes of one merge generation run concurrently.
inline void upward_pass(Tree& tree, const std::vector<LeafBasis>& leaves, double k, double tol_rel,
                        double compress_eps = 0.0) {
  if (leaves.size() != tree.leaf_nodes.size()) throw Error(ErrorCode::ShapeMismatch, "one basis per leaf required");
  for (size_t l = 0; l < leaves.size(); ++l) {
    TreeNode& n = tree.nodes[tree.leaf_nodes[l]];
    const auto& lb = *leaves[l].trace.boundary;
    for (Eigen::Index i = 0; i < lb.size(); ++i)
      if (!detail::same_point(lb.nodes[i], n.boundary->nodes[i]))
        throw Error(ErrorCode::InterfaceMismatch, "leaf sampling differs from the tree sampling");
    n.trace = {n.boundary, leaves[l].trace.data};
  }
  int hmax = 0;
  for (const auto& n : tree.nodes) hmax = std::max(hmax, n.height);
  for (int h = 1; h <= hmax; ++h) {
    std::vector<int> ids;
    for (size_t i = 0; i < tree.nodes.size(); ++i)
      if (tree.nodes[i].height == h) ids.push_back(static_cast<int>(i));
    parallel_for(static_cast<std::ptrdiff_t>(ids.size()), [&](std::ptrdiff_t t) {
      TreeNode& par = tree.nodes[ids[t]];
      std::vector<const DNTrace*> kids;
      for (int c : par.children) kids.push_back(&tree.nodes[c].trace);
      const auto t0 = std::chrono::steady_clock::now();
      MergeResult r = merge_children(par, kids, k, tol_rel, compress_eps);
      r.diag.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      par.trace = std::move(r.trace);
      par.split_ops = std::move(r.split_ops);
      par.diag = r.diag;
    });
  }
}

inline std::vector<CVec> split_coefficients(const TreeNode& node, const CVec& gamma) {
  if (node.is_leaf()) throw Error(ErrorCode::ShapeMismatch, "leaf nodes have no split operators");
  if (gamma.size() != node.trace.cols()) throw Error(ErrorCode::ShapeMismatch, "coefficient length");
  std::vector<CVec> out;
  for (const auto& T : node.split_ops) out.push_back(T * gamma);
  return out;
}

/// Top-down splitting; returns one coefficient vector per tree node.
inline std::vector<CVec> downward_pass(const Tree& tree, const CVec& gamma_root) {
  std::vector<CVec> g(tree.nodes.size());
  g[tree.root()] = gamma_root;
  for (int id = tree.root(); id >= 0; --id) {
    const TreeNode& n = tree.nodes[id];
    if (n.is_leaf()) continue;
    auto kids = split_coefficients(n, g[id]);
    for (size_t c = 0; c < kids.size(); ++c) g[n.children[c]] = std::move(kids[c]);
  }
  return g;
}

/// Leaf coefficient vectors in leaf order.
inline std::vector<CVec> leaf_coefficients(const Tree& tree, const std::vector<CVec>& per_node) {
  std::vector<CVec> out;
  for (int id : tree.leaf_nodes) out.push_back(per_node[id]);
  return out;
}

/// Total wave at arbitrary points of the domain from leaf coefficients.
inline CVec evaluate_tree_field(const Tree& tree, const std::vector<LeafBasis>& leaves,
                                const std::vector<CVec>& leaf_gamma, const std::vector<Vec2>& points) {
  std::vector<std::vector<size_t>> bucket(leaves.size());
  for (size_t t = 0; t < points.size(); ++t) {
    if (!tree.domain.contains(points[t], 1e-12)) throw Error(ErrorCode::TargetOutsideLeaf, "point outside domain");
    bucket[tree.leaf_of(points[t])].push_back(t);
  }
  CVec out(static_cast<Eigen::Index>(points.size()));
  parallel_for(static_cast<std::ptrdiff_t>(leaves.size()), [&](std::ptrdiff_t l) {
    if (bucket[l].empty()) return;
    std::vector<Vec2> pts;
    for (size_t t : bucket[l]) pts.push_back(points[t]);
    CVec v = reconstruct_interior(leaves[l], leaf_gamma[l], pts);
    for (size_t i = 0; i < pts.size(); ++i) out(static_cast<Eigen::Index>(bucket[l][i])) = v(static_cast<Eigen::Index>(i));
  });
  return out;
}

}  // namespace twss
