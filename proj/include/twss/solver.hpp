#pragma once

#include <chrono>
#include <map>

#include "merge.hpp"

namespace twss {

struct IncidentWave {
  enum class Kind { Plane, Monopole };
  Kind kind = Kind::Plane;
  double angle = 0.0;          // propagation direction of a plane wave
  Vec2 source = Vec2::Zero();  // monopole position
  cplx amplitude = 1.0;

  static IncidentWave plane(double angle, cplx amp = 1.0) { return {Kind::Plane, angle, Vec2::Zero(), amp}; }
  static IncidentWave monopole(const Vec2& src, cplx amp = 1.0) { return {Kind::Monopole, 0.0, src, amp}; }

  /// Monopoles must sit strictly outside the closed domain.
  void validate(const Box& domain) const {
    if (kind == Kind::Monopole && domain.contains(source))
      throw Error(ErrorCode::SourceOnBoundary, "monopole source must lie strictly outside the domain");
  }

  cplx value(const WaveContext& ctx, const Vec2& x) const {
    if (kind == Kind::Plane) {
      const Vec2 d(std::cos(angle), std::sin(angle));
      return amplitude * std::exp(kI * ctx.k * d.dot(x));
    }
    return amplitude * green(ctx, x, source);
  }

  cplx normal_derivative(const WaveContext& ctx, const Vec2& x, const Vec2& n) const {
    if (kind == Kind::Plane) {
      const Vec2 d(std::cos(angle), std::sin(angle));
      return amplitude * kI * ctx.k * d.dot(n) * std::exp(kI * ctx.k * d.dot(x));
    }
    const auto kp = green_pair(ctx, x, source);
    return amplitude * (kp.gradient_x(0) * n.x() + kp.gradient_x(1) * n.y());
  }
};

/// Dirichlet and Neumann data on a boundary.
struct DNPair {
  CVec u, un;
};

inline DNPair incident_trace(const IncidentWave& wave, const BoundarySampling& b, const WaveContext& ctx) {
  DNPair out{CVec(b.size()), CVec(b.size())};
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    if (wave.kind == IncidentWave::Kind::Monopole && (b.nodes[i] - wave.source).norm() < 1e-14)
      throw Error(ErrorCode::SourceOnBoundary, "monopole coincides with a boundary node");
    out.u(i) = wave.value(ctx, b.nodes[i]);
    out.un(i) = wave.normal_derivative(ctx, b.nodes[i], b.normals[i]);
  }
  return out;
}

enum class ProjectorMode { Half, Full };

/// G0 = P- G. In half mode only the value block of P- is applied and G0 has p rows.
inline CMat split_top(const DNTrace& root, const LayerOperators& ops, ProjectorMode mode) {
  if (ops.S.rows() != root.nodes()) throw Error(ErrorCode::ShapeMismatch, "projector and trace samplings differ");
  if (mode == ProjectorMode::Half) return projector_minus_values(ops) * root.data;
  return projectors(ops).P_minus * root.data;
}

/// Truncated-SVD least squares for G0 gamma = u0 in the weighted row norm. The SVD does not
/// depend on the incident wave, so one factor serves any number of solves.
struct CoefficientSolver {
  RVec w;
  Svd d;
  Eigen::Index kept = 0;
  double reg_tol = 0;

  CoefficientSolver() = default;
  CoefficientSolver(const CMat& G0, RVec weights, double reg) : w(std::move(weights)), reg_tol(reg) {
    if (w.size() != G0.rows()) throw Error(ErrorCode::ShapeMismatch, "weights and rows differ");
    d = svd(w.asDiagonal() * G0, false);
    for (Eigen::Index i = 0; i < d.s.size(); ++i)
      if (d.s(i) >= reg_tol * d.s(0)) ++kept;
  }
  Eigen::Index truncated() const { return d.s.size() - kept; }

  struct Result {
    CVec gamma;
    double residual = 0;
  };

  Result solve(const CVec& rhs) const {
    if (rhs.size() != w.size()) throw Error(ErrorCode::ShapeMismatch, "right-hand side length");
    const CVec b = w.asDiagonal() * rhs;
    const CVec c = d.U.leftCols(kept).adjoint() * b;
    Result r;
    r.gamma = d.V.leftCols(kept) * (c.array() / d.s.head(kept).array().cast<cplx>()).matrix();
    const double nb = b.norm();
    r.residual = nb > 0 ? (b - d.U.leftCols(kept) * c).norm() / nb : 0.0;
    return r;
  }
};

inline RVec split_row_weights(const BoundarySampling& b, double k, ProjectorMode mode) {
  RVec w = trace_row_weights(b, k);
  return mode == ProjectorMode::Half ? RVec(w.head(b.size())) : w;
}

inline CVec stack(const DNPair& t, ProjectorMode mode) {
  if (mode == ProjectorMode::Half) return t.u;
  CVec v(2 * t.u.size());
  v << t.u, t.un;
  return v;
}

struct CoefficientSolve {
  CVec gamma;
  double residual = 0;
  Eigen::Index truncated = 0;
};

inline CoefficientSolve solve_coefficients(const CMat& G0, const DNPair& u0, const BoundarySampling& b, double k,
                                           ProjectorMode mode, double reg_tol) {
  CoefficientSolver cs(G0, split_row_weights(b, k, mode), reg_tol);
  auto r = cs.solve(stack(u0, mode));
  if (r.residual > 1e-2) throw Error(ErrorCode::IllPosed, "incident wave not representable by the solution space");
  return {r.gamma, r.residual, cs.truncated()};
}

/// Scattered D&N data (G - G0) gamma. In half mode G0 carries no derivative block, and the
/// scattered normal derivative is the total one minus the analytic incident one.
inline DNPair scattered_trace(const DNTrace& root, const CMat& G0, const CVec& gamma, const DNPair& incident) {
  const Eigen::Index p = root.nodes();
  const CVec total = root.data * gamma;
  const CVec inc = G0 * gamma;
  DNPair v;
  v.u = total.head(p) - inc.head(p);
  v.un = G0.rows() == 2 * p ? CVec(total.tail(p) - inc.tail(p)) : CVec(total.tail(p) - incident.un);
  return v;
}

inline CVec evaluate_scattered_exterior(const WaveContext& ctx, const BoundarySampling& b, const Box& domain,
                                        const DNPair& scattered, const std::vector<Vec2>& targets) {
  for (const auto& x : targets)
    if (domain.contains(x)) throw Error(ErrorCode::TargetInsideDomain, "exterior target inside the domain");
  return eval_green_representation(ctx, b, scattered.u, scattered.un, targets, Side::Exterior).values;
}

struct SolverConfig {
  Box domain{-0.5, -0.5, 0.5, 0.5};
  int levels = 2;
  LeafConfig leaf;
  MergeStrategy strategy = MergeStrategy::Pairwise;
  ProjectorMode projector = ProjectorMode::Half;
  double merge_tol = 1e-10;
  double merge_compress_eps = 0.0;
  double reg_tol = 1e-9;
};

struct StageTimes {
  std::map<std::string, double> seconds;
  double total(const std::vector<std::string>& keys) const {
    double s = 0;
    for (const auto& k : keys)
      if (auto it = seconds.find(k); it != seconds.end()) s += it->second;
    return s;
  }
};

class Stopwatch {
 public:
  Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
  double lap() {
    auto t = std::chrono::steady_clock::now();
    double s = std::chrono::duration<double>(t - t0_).count();
    t0_ = t;
    return s;
  }

 private:
  std::chrono::steady_clock::time_point t0_;
};

/// Everything that does not depend on the incident wave: leaf spaces, merged tree, the
/// incident-part split of the root space, and the least-squares factor.
struct Factorization {
  WaveContext ctx;
  Medium medium;
  SolverConfig cfg;
  Tree tree;
  std::vector<LeafBasis> leaves;
  LayerOperators ops;
  ProjectorMode mode = ProjectorMode::Half;
  CMat G0;
  CoefficientSolver ls;
  StageTimes times;

  const DNTrace& root_trace() const { return tree.nodes[tree.root()].trace; }
  const BoundarySampling& root_boundary() const { return *tree.nodes[tree.root()].boundary; }
};

inline void prepare_split(Factorization& f, ProjectorMode mode) {
  Stopwatch sw;
  const bool need_T = mode == ProjectorMode::Full;
  if (!f.ops.boundary || (need_T && !f.ops.has_T))
    f.ops = assemble_layer_ops(f.ctx, f.tree.nodes[f.tree.root()].boundary, need_T);
  f.times.seconds["projector"] += sw.lap();
  f.mode = mode;
  f.G0 = split_top(f.root_trace(), f.ops, mode);
  f.ls = CoefficientSolver(f.G0, split_row_weights(f.root_boundary(), f.ctx.k, mode), f.cfg.reg_tol);
  f.times.seconds["split"] += sw.lap();
}

inline Factorization factorize(const WaveContext& ctx, const Medium& medium, const SolverConfig& cfg) {
  Factorization f;
  f.ctx = ctx;
  f.medium = medium;
  f.cfg = cfg;
  Stopwatch sw;
  f.tree = build_quadtree(cfg.domain, cfg.levels, cfg.leaf.nodes_per_edge, cfg.strategy);
  f.leaves.resize(f.tree.leaf_nodes.size());
  parallel_for(static_cast<std::ptrdiff_t>(f.leaves.size()), [&](std::ptrdiff_t l) {
    f.leaves[l] = build_leaf(ctx, medium, f.tree.nodes[f.tree.leaf_nodes[l]].box, cfg.leaf);
  });
  f.times.seconds["leaves"] = sw.lap();
  upward_pass(f.tree, f.leaves, ctx.k, cfg.merge_tol, cfg.merge_compress_eps);
  f.times.seconds["merge"] = sw.lap();
  prepare_split(f, cfg.projector);
  return f;
}

inline const std::vector<std::string>& factorization_stages() {
  static const std::vector<std::string> s{"leaves", "merge", "projector", "split"};
  return s;
}

struct ScatteringSolution {
  CVec gamma;
  DNPair total_trace, incident_trace, scattered_trace;
  double residual = 0;
  Eigen::Index truncated = 0;
  ProjectorMode mode = ProjectorMode::Half;
  std::vector<CVec> leaf_gamma;
  StageTimes times;
};

/// Per-wave work against a factorization: incident data, coefficients, scattered trace,
/// downward splitting.
inline ScatteringSolution solve_wave(Factorization& f, const IncidentWave& wave) {
  wave.validate(f.cfg.domain);
  Stopwatch sw;
  ScatteringSolution s;
  const auto& bnd = f.root_boundary();
  s.incident_trace = incident_trace(wave, bnd, f.ctx);
  s.times.seconds["incident"] = sw.lap();
  auto r = f.ls.solve(stack(s.incident_trace, f.mode));
  if (r.residual > 1e-2 && f.mode == ProjectorMode::Half) {
    prepare_split(f, ProjectorMode::Full);
    r = f.ls.solve(stack(s.incident_trace, f.mode));
  }
  if (r.residual > 1e-2)
    throw Error(ErrorCode::IllPosed, "coefficient solve residual " + std::to_string(r.residual));
  s.gamma = r.gamma;
  s.residual = r.residual;
  s.truncated = f.ls.truncated();
  s.mode = f.mode;
  s.times.seconds["coefficients"] = sw.lap();
  const CVec tot = f.root_trace().data * s.gamma;
  s.total_trace = {tot.head(bnd.size()), tot.tail(bnd.size())};
  s.scattered_trace = scattered_trace(f.root_trace(), f.G0, s.gamma, s.incident_trace);
  s.times.seconds["scattered"] = sw.lap();
  s.leaf_gamma = leaf_coefficients(f.tree, downward_pass(f.tree, s.gamma));
  s.times.seconds["downward"] = sw.lap();
  return s;
}

/// Total wave inside the domain (leaf reconstruction).
inline CVec interior_total_field(const Factorization& f, const ScatteringSolution& s, const std::vector<Vec2>& pts) {
  return evaluate_tree_field(f.tree, f.leaves, s.leaf_gamma, pts);
}

inline CVec exterior_scattered_field(const Factorization& f, const ScatteringSolution& s,
                                     const std::vector<Vec2>& pts) {
  return evaluate_scattered_exterior(f.ctx, f.root_boundary(), f.cfg.domain, s.scattered_trace, pts);
}

/// Uniform n x n grid of cell centers over a box, row-major from the south-west.
inline std::vector<Vec2> cell_center_grid(const Box& b, int n) {
  std::vector<Vec2> pts;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      pts.push_back({b.x0 + b.width() * (i + 0.5) / n, b.y0 + b.height() * (j + 0.5) / n});
  return pts;
}

inline std::vector<Vec2> circle_points(const Vec2& c, double radius, int n) {
  std::vector<Vec2> pts;
  for (int i = 0; i < n; ++i) {
    const double t = 2.0 * kPi * i / n;
    pts.push_back(c + radius * Vec2(std::cos(t), std::sin(t)));
  }
  return pts;
}

struct VspResult {
  ScatteringSolution solution;
  CVec interior_total;
  CVec exterior_scattered;
  StageTimes times;
};

/// Full pipeline: factorization, one solve, interior and exterior evaluation.
inline VspResult solve_vsp(const WaveContext& ctx, const Medium& medium, const SolverConfig& cfg,
                           const IncidentWave& wave, const std::vector<Vec2>& interior,
                           const std::vector<Vec2>& exterior) {
  Factorization f = factorize(ctx, medium, cfg);
  VspResult r;
  r.solution = solve_wave(f, wave);
  Stopwatch sw;
  r.interior_total = interior_total_field(f, r.solution, interior);
  r.exterior_scattered = exterior_scattered_field(f, r.solution, exterior);
  r.times = f.times;
  for (const auto& [k, v] : r.solution.times.seconds) r.times.seconds[k] += v;
  r.times.seconds["evaluate"] = sw.lap();
  return r;
}

}  // namespace twss
