#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <optional>

#include "linalg.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "specfun.hpp"

namespace twss {

/// Straight Gauss-Legendre panel traversed from a to b. Its nodes occupy
/// [offset, offset + order) in the owning sampling, ordered from a to b.
struct Panel {
  Vec2 a, b;
  int order = 0;
  int offset = 0;

  double length() const { return (b - a).norm(); }
  Vec2 tangent() const { return (b - a) / length(); }
  // Outward normal for counterclockwise traversal.
  Vec2 normal() const {
    Vec2 t = tangent();
    return {t.y(), -t.x()};
  }
  Vec2 point(double tau) const { return a + (b - a) * (0.5 * (tau + 1.0)); }
  double distance(const Vec2& x) const {
    const Vec2 d = b - a;
    double t = std::clamp((x - a).dot(d) / d.squaredNorm(), 0.0, 1.0);
    return (x - (a + t * d)).norm();
  }
};

struct BoundarySampling {
  enum class Shape { Circle, Panels };

  std::vector<Vec2> nodes;
  std::vector<Vec2> normals;
  std::vector<double> weights;
  bool closed = true;
  double arclength = 0.0;

  Shape shape = Shape::Panels;
  Vec2 center = Vec2::Zero();
  double radius = 0.0;
  std::vector<Panel> panels;

  Eigen::Index size() const { return static_cast<Eigen::Index>(nodes.size()); }
};

using BoundaryPtr = std::shared_ptr<const BoundarySampling>;

inline BoundarySampling discretize_circle(const Vec2& center, double radius, int p) {
  if (!(radius > 0)) throw Error(ErrorCode::InvalidArgument, "radius must be positive");
  if (p < 8 || p % 2) throw Error(ErrorCode::InvalidCount, "circle node count must be even and >= 8");
  BoundarySampling b;
  b.shape = BoundarySampling::Shape::Circle;
  b.center = center;
  b.radius = radius;
  b.closed = true;
  b.arclength = 2.0 * kPi * radius;
  for (int j = 0; j < p; ++j) {
    const double t = 2.0 * kPi * j / p;
    Vec2 e(std::cos(t), std::sin(t));
    b.nodes.push_back(center + radius * e);
    b.normals.push_back(e);
    b.weights.push_back(b.arclength / p);
  }
  return b;
}

/// Nodes of the panel a->b. They are generated from the lexicographically smaller endpoint
/// so that the two sides of a shared edge produce bit-identical coordinates.
inline std::vector<Vec2> panel_nodes(const Vec2& a, const Vec2& b, int order) {
  const Rule& r = gauss_legendre(order);
  const bool forward = std::make_pair(a.x(), a.y()) < std::make_pair(b.x(), b.y());
  const Vec2 lo = forward ? a : b, hi = forward ? b : a;
  std::vector<Vec2> pts(order);
  for (int j = 0; j < order; ++j) pts[j] = lo + (hi - lo) * ((r.x[j] + 1.0) / 2.0);
  if (!forward) std::reverse(pts.begin(), pts.end());
  return pts;
}

/// Sampling made of straight panels, each carrying `order` Gauss-Legendre nodes.
inline BoundarySampling make_panel_sampling(const std::vector<std::pair<Vec2, Vec2>>& segments, int order,
                                            bool closed) {
  if (order < 1) throw Error(ErrorCode::InvalidCount, "panel order must be positive");
  BoundarySampling s;
  s.shape = BoundarySampling::Shape::Panels;
  s.closed = closed;
  const Rule& r = gauss_legendre(order);
  for (const auto& [a, b] : segments) {
    Panel p{a, b, order, static_cast<int>(s.nodes.size())};
    auto pts = panel_nodes(a, b, order);
    const double len = p.length();
    for (int j = 0; j < order; ++j) {
      s.nodes.push_back(pts[j]);
      s.normals.push_back(p.normal());
      s.weights.push_back(0.5 * len * r.w[j]);
    }
    s.arclength += len;
    s.panels.push_back(p);
  }
  return s;
}

/// Coordinate of the i-th of P equal subdivisions of [x0, x0 + width]. Every caller uses
/// this one formula, so shared corners are bit-identical.
inline double subdivision_coord(double x0, double width, int i, int P) { return x0 + (width * i) / P; }

/// Counterclockwise edge panels of a box, starting with the south edge.
inline std::vector<std::pair<Vec2, Vec2>> box_segments(const Box& box, int panels_per_edge) {
  const int P = panels_per_edge;
  auto X = [&](int i) { return subdivision_coord(box.x0, box.width(), i, P); };
  auto Y = [&](int i) { return subdivision_coord(box.y0, box.height(), i, P); };
  std::vector<std::pair<Vec2, Vec2>> segs;
  for (int i = 0; i < P; ++i) segs.push_back({{X(i), Y(0)}, {X(i + 1), Y(0)}});
  for (int i = 0; i < P; ++i) segs.push_back({{X(P), Y(i)}, {X(P), Y(i + 1)}});
  for (int i = P; i > 0; --i) segs.push_back({{X(i), Y(P)}, {X(i - 1), Y(P)}});
  for (int i = P; i > 0; --i) segs.push_back({{X(0), Y(i)}, {X(0), Y(i - 1)}});
  return segs;
}

inline BoundarySampling discretize_box_boundary(const Box& box, int q, int panels_per_edge = 1) {
  if (q < 4) throw Error(ErrorCode::InvalidCount, "need at least 4 nodes per edge");
  if (panels_per_edge < 1) throw Error(ErrorCode::InvalidCount, "need at least one panel per edge");
  return make_panel_sampling(box_segments(box, panels_per_edge), q, true);
}

/// D&N data G = [U; U_n]: p value rows over p outward-normal-derivative rows.
struct DNTrace {
  BoundaryPtr boundary;
  CMat data;

  Eigen::Index nodes() const { return boundary ? boundary->size() : 0; }
  Eigen::Index cols() const { return data.cols(); }
  auto values() const { return data.topRows(nodes()); }
  auto derivatives() const { return data.bottomRows(nodes()); }
  void validate() const {
    if (!boundary || data.rows() != 2 * boundary->size())
      throw Error(ErrorCode::ShapeMismatch, "trace rows must be twice the node count");
    if (!data.allFinite()) throw Error(ErrorCode::InvalidArgument, "trace has non-finite entries");
  }
};

/// Row weights sqrt(w) on values and sqrt(w)/k on derivatives, balancing units.
inline RVec trace_row_weights(const BoundarySampling& b, double k) {
  const Eigen::Index p = b.size();
  RVec w(2 * p);
  for (Eigen::Index i = 0; i < p; ++i) {
    w(i) = std::sqrt(b.weights[i]);
    w(p + i) = w(i) / k;
  }
  return w;
}

/// Circle quadrature for S and K. Kress is accurate for resolved densities but aliases the
/// modes near p/2, which the symbol-exact T amplifies in the projector.
enum class CircleRule { Spectral, Kress };

struct LayerOperators {
  BoundaryPtr boundary;
  CMat S, K, Kp, T;
  bool has_T = false;
};

namespace detail {

/// Kress weights R_j(t_i) for the periodic log kernel, indexed by (i - j) mod p.
inline std::vector<double> kress_weights(int p) {
  const int n = p / 2;
  std::vector<double> R(p);
  for (int m = 0; m < p; ++m) {
    const double d = 2.0 * kPi * m / p;
    double s = 0;
    for (int j = 1; j < n; ++j) s += std::cos(j * d) / j;
    R[m] = -(2.0 * kPi / n) * s - (kPi / (double(n) * n)) * std::cos(n * d);
  }
  return R;
}

struct CircleSymbols {
  std::vector<cplx> S, K, T;
};

/// Fourier symbols of S, K (= K'), T on a circle of radius a, modes 0..nmax.
inline CircleSymbols circle_symbols(double k, double a, int nmax) {
  const double ka = k * a;
  auto J = bessel_j_array(nmax + 1, ka);
  auto H = hankel1_array(nmax + 1, ka);
  std::vector<cplx> Jc(J.begin(), J.end());
  CircleSymbols s;
  const double sg = kGreenSign;
  for (int n = 0; n <= nmax; ++n) {
    const cplx jn = J[n], hn = H[n];
    const cplx jd = cylinder_derivative(Jc, n), hd = cylinder_derivative(H, n);
    s.S.push_back(sg * kI * kPi * a / 2.0 * jn * hn);
    s.K.push_back(sg * kI * kPi * a * k / 4.0 * (jd * hn + jn * hd));
    s.T.push_back(sg * kI * kPi * a / 2.0 * k * k * jd * hd);
  }
  return s;
}

/// Matrix on p equispaced circle nodes acting on mode e^{in theta} by multiplication with sym[|n|].
inline CMat circulant_from_symbols(const std::vector<cplx>& sym, int p) {
  std::vector<cplx> row(p);
  for (int m = 0; m < p; ++m) {
    const double dth = 2.0 * kPi * m / p;
    cplx v = sym[0];
    for (int n = 1; n < p / 2; ++n) v += 2.0 * sym[n] * std::cos(n * dth);
    v += sym[p / 2] * std::cos((p / 2) * dth);
    row[m] = v / double(p);
  }
  CMat M(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) M(i, j) = row[((i - j) % p + p) % p];
  return M;
}

inline LayerOperators assemble_circle(const WaveContext& ctx, BoundaryPtr b, CircleRule rule) {
  const int p = static_cast<int>(b->size());
  const double a = b->radius, k = ctx.k, sg = kGreenSign;
  auto R = kress_weights(p);
  LayerOperators ops;
  ops.boundary = b;
  ops.S.resize(p, p);
  ops.K.resize(p, p);
  const cplx s_diag = sg * a * (0.25 * kI - (std::log(0.5 * k * a) + kEulerGamma) / (2.0 * kPi));
  const double k_diag = -sg / (4.0 * kPi);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      const int m = ((i - j) % p + p) % p;
      if (i == j) {
        ops.S(i, j) = R[0] * (-sg * a / (4.0 * kPi)) + (2.0 * kPi / p) * s_diag;
        ops.K(i, j) = (2.0 * kPi / p) * k_diag;
        continue;
      }
      const Vec2 d = b->nodes[i] - b->nodes[j];
      const double r = d.norm();
      const double ls = std::log(4.0 * std::pow(std::sin(kPi * m / p), 2));
      auto bj = bessel_j_array(1, k * r);
      auto [h0, h1] = hankel01(k * r);
      const double dn = d.dot(b->normals[j]) / r;
      const cplx sk = sg * 0.25 * kI * h0 * a;
      const double m1 = -sg * bj[0] * a / (4.0 * kPi);
      ops.S(i, j) = R[m] * m1 + (2.0 * kPi / p) * (sk - m1 * ls);
      const cplx kk = sg * 0.25 * kI * k * h1 * dn * a;
      const double l1 = -sg * k * bj[1] * dn * a / (4.0 * kPi);
      ops.K(i, j) = R[m] * l1 + (2.0 * kPi / p) * (kk - l1 * ls);
    }
  }
  // On a circle the kernels of K and K' coincide pointwise.
  ops.Kp = ops.K;
  const auto sym = circle_symbols(k, a, p / 2);
  ops.T = circulant_from_symbols(sym.T, p);
  if (rule == CircleRule::Spectral) {
    ops.S = circulant_from_symbols(sym.S, p);
    ops.K = circulant_from_symbols(sym.K, p);
    ops.Kp = ops.K;
  }
  ops.has_T = true;
  return ops;
}

/// Accumulated quadrature rows for one target against one panel, in the panel's node basis.
struct PanelRows {
  Eigen::RowVectorXcd S, K, Kp, Sn, St;
  explicit PanelRows(int q)
      : S(Eigen::RowVectorXcd::Zero(q)),
        K(Eigen::RowVectorXcd::Zero(q)),
        Kp(Eigen::RowVectorXcd::Zero(q)),
        Sn(Eigen::RowVectorXcd::Zero(q)),
        St(Eigen::RowVectorXcd::Zero(q)) {}
};

struct Target {
  Vec2 x;
  Vec2 n = Vec2::Zero();
  Vec2 t = Vec2::Zero();
  bool hyper = false;  // also accumulate the Maue parts Sn, St
  double self_tau = std::numeric_limits<double>::quiet_NaN();  // local coordinate when on the panel
};

struct PanelContext {
  const Panel* panel;
  std::vector<double> tau;  // panel nodes in local coordinate, ascending a->b
  std::vector<double> bw;
};

inline PanelContext panel_context(const Panel& p) {
  const Rule& r = gauss_legendre(p.order);
  PanelContext c{&p, r.x, {}};
  c.bw = barycentric_weights(c.tau);
  return c;
}

/// Adds kernel(x, xi(tau)) * weight * lagrange(tau) for one quadrature point.
inline void accumulate(const WaveContext& ctx, const Target& tg, const PanelContext& pc, double tau, double w,
                       PanelRows& rows, std::vector<double>& lag, bool with_k) {
  const Panel& p = *pc.panel;
  // On the target's own panel the offset is formed parametrically, so that it matches the
  // subtracted principal-value term to full relative precision as tau -> self_tau.
  const Vec2 d = std::isnan(tg.self_tau) ? Vec2(tg.x - p.point(tau)) : Vec2((p.b - p.a) * (0.5 * (tg.self_tau - tau)));
  const double r = d.norm();
  const double k = ctx.k;
  auto [h0, h1] = hankel01(k * r);
  const cplx c = double(kGreenSign) * 0.25 * kI;
  const cplx g = c * h0;
  const cplx g1 = -c * k * h1;  // dG/dr
  const Vec2 nxi = p.normal();
  const double jac = 0.5 * p.length();
  lagrange_row(pc.tau, pc.bw, tau, lag.data());
  const double ww = w * jac;
  const cplx fs = g * ww;
  cplx fk = 0, fkp = 0;
  if (with_k) {
    fk = -g1 * d.dot(nxi) / r * ww;
    fkp = g1 * d.dot(tg.n) / r * ww;
  }
  cplx fsn = 0, fst = 0;
  if (tg.hyper) {
    fsn = tg.n.dot(nxi) * g * ww;
    fst = g1 * d.dot(tg.t) / r * ww;
  }
  for (int j = 0; j < p.order; ++j) {
    rows.S(j) += fs * lag[j];
    if (with_k) {
      rows.K(j) += fk * lag[j];
      rows.Kp(j) += fkp * lag[j];
    }
    if (tg.hyper) {
      rows.Sn(j) += fsn * lag[j];
      rows.St(j) += fst * lag[j];
    }
  }
}

inline constexpr int kSubOrder = 16;
inline constexpr int kGradedOrder = 12;
inline constexpr int kGradedLevels = 40;

/// Adaptive subdivision toward a nearby (off-panel) target.
inline void integrate_near(const WaveContext& ctx, const Target& tg, const PanelContext& pc, double t0,
                           double t1, int depth, PanelRows& rows, std::vector<double>& lag) {
  const Panel& p = *pc.panel;
  const Panel sub{p.point(t0), p.point(t1), 0, 0};
  const double len = sub.length();
  if (sub.distance(tg.x) >= len || depth > 60) {
    const Rule& r = gauss_legendre(kSubOrder);
    for (int m = 0; m < kSubOrder; ++m) {
      const double tau = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * r.x[m];
      accumulate(ctx, tg, pc, tau, 0.5 * (t1 - t0) * r.w[m], rows, lag, true);
    }
    return;
  }
  const double tm = 0.5 * (t0 + t1);
  integrate_near(ctx, tg, pc, t0, tm, depth + 1, rows, lag);
  integrate_near(ctx, tg, pc, tm, t1, depth + 1, rows, lag);
}

/// Geometrically graded rule on [t0, t1] clustering at t0.
template <class F>
void graded(double t0, double t1, F&& f) {
  const Rule& r = gauss_legendre(kGradedOrder);
  double hi = 1.0;
  for (int lev = 0; lev < kGradedLevels; ++lev) {
    const double lo = 0.5 * hi;
    const double a = t0 + (t1 - t0) * lo, b = t0 + (t1 - t0) * hi;
    for (int m = 0; m < kGradedOrder; ++m) f(0.5 * (a + b) + 0.5 * (b - a) * r.x[m], 0.5 * (b - a) * r.w[m]);
    hi = lo;
  }
}

/// Target at node `local` of its own panel: log-singular S and Sn by graded rules on both
/// sides, Cauchy-singular St by subtraction plus the exact principal value. K and K' vanish
/// on a straight panel.
inline void integrate_self(const WaveContext& ctx, const Target& target, const PanelContext& pc, int local,
                           PanelRows& rows, std::vector<double>& lag) {
  const double t0 = pc.tau[local];
  Target tg = target;
  tg.self_tau = t0;
  const double half = 0.5 * pc.panel->length();
  const double c0 = -double(kGreenSign) / (2.0 * kPi);
  cplx pv_correction = 0;
  auto f = [&](double tau, double w) {
    accumulate(ctx, tg, pc, tau, w, rows, lag, false);
    if (tg.hyper) {
      const double ds = (t0 - tau) * half;  // s_x - s_xi
      pv_correction -= c0 / ds * w * half;
    }
  };
  graded(t0, 1.0, f);
  graded(t0, -1.0, [&](double tau, double w) { f(tau, -w); });
  if (tg.hyper) {
    const double sa = (t0 + 1.0) * half, sb = (1.0 - t0) * half;
    rows.St(local) += pv_correction + c0 * std::log(sa / sb);
  }
}

inline RMat panel_differentiation(const Panel& p) {
  const Rule& r = gauss_legendre(p.order);
  return differentiation_matrix(r.x) * (2.0 / p.length());
}

inline LayerOperators assemble_panels(const WaveContext& ctx, BoundaryPtr b, bool with_T) {
  const Eigen::Index n = b->size();
  LayerOperators ops;
  ops.boundary = b;
  ops.S = CMat::Zero(n, n);
  ops.K = CMat::Zero(n, n);
  ops.Kp = CMat::Zero(n, n);
  CMat Sn, St;
  if (with_T) {
    Sn = CMat::Zero(n, n);
    St = CMat::Zero(n, n);
  }
  std::vector<PanelContext> pcs;
  std::vector<int> owner(n), local(n);
  for (size_t pi = 0; pi < b->panels.size(); ++pi) {
    const Panel& p = b->panels[pi];
    pcs.push_back(panel_context(p));
    for (int j = 0; j < p.order; ++j) {
      owner[p.offset + j] = static_cast<int>(pi);
      local[p.offset + j] = j;
    }
  }
  parallel_for(n, [&](std::ptrdiff_t i) {
    const Panel& own = b->panels[owner[i]];
    Target tg{b->nodes[i], b->normals[i], own.tangent(), with_T};
    std::vector<double> lag(64);
    for (size_t pi = 0; pi < b->panels.size(); ++pi) {
      const Panel& p = b->panels[pi];
      const PanelContext& pc = pcs[pi];
      if (static_cast<int>(lag.size()) < p.order) lag.resize(p.order);
      PanelRows rows(p.order);
      if (static_cast<int>(pi) == owner[i]) {
        integrate_self(ctx, tg, pc, local[i], rows, lag);
      } else if (p.distance(tg.x) >= p.length()) {
        const Rule& r = gauss_legendre(p.order);
        for (int m = 0; m < p.order; ++m) accumulate(ctx, tg, pc, r.x[m], r.w[m], rows, lag, true);
      } else {
        integrate_near(ctx, tg, pc, -1.0, 1.0, 0, rows, lag);
      }
      ops.S.row(i).segment(p.offset, p.order) += rows.S;
      ops.K.row(i).segment(p.offset, p.order) += rows.K;
      ops.Kp.row(i).segment(p.offset, p.order) += rows.Kp;
      if (with_T) {
        Sn.row(i).segment(p.offset, p.order) += rows.Sn;
        St.row(i).segment(p.offset, p.order) += rows.St;
      }
    }
  });
  if (with_T) {
    // Maue: T phi = d/ds_x S(dphi/ds) + k^2 n_x . S(n phi).
    ops.T = ctx.k * ctx.k * Sn;
    for (const Panel& p : b->panels) {
      const CMat D = panel_differentiation(p).cast<cplx>();
      ops.T.middleCols(p.offset, p.order) += St.middleCols(p.offset, p.order) * D;
    }
    ops.has_T = true;
  }
  return ops;
}

}  // namespace detail

/// Nystrom matrices of S, K, K', T on a closed boundary. On circles T always comes from
/// the exact Fourier symbols; S and K come from the symbols too (Spectral) or from the Kress
/// split (Kress). Panel boundaries use target-specific quadrature and ignore `rule`.
inline LayerOperators assemble_layer_ops(const WaveContext& ctx, BoundaryPtr b, bool with_T = true,
                                         CircleRule rule = CircleRule::Spectral) {
  if (!b->closed) throw Error(ErrorCode::UnsupportedGeometry, "layer operators need a closed boundary");
  if (b->shape == BoundarySampling::Shape::Circle) return detail::assemble_circle(ctx, b, rule);
  return detail::assemble_panels(ctx, b, with_T);
}

inline LayerOperators assemble_layer_ops(const WaveContext& ctx, const BoundarySampling& b, bool with_T = true,
                                         CircleRule rule = CircleRule::Spectral) {
  return assemble_layer_ops(ctx, std::make_shared<const BoundarySampling>(b), with_T, rule);
}

struct Projectors {
  CMat P_minus, P_plus;
};

/// Q = [-K S; -T K'] in the standard-sign convention. P- = I/2 + Q maps D&N data of a
/// total wave to its incident part; P+ = I - P-.
inline CMat q_operator(const LayerOperators& ops) {
  if (!ops.has_T) throw Error(ErrorCode::InvalidArgument, "full projector needs T");
  const Eigen::Index p = ops.S.rows();
  CMat Q(2 * p, 2 * p);
  Q << -ops.K, ops.S, -ops.T, ops.Kp;
  return Q;
}

inline Projectors projectors(const LayerOperators& ops) {
  CMat Q = q_operator(ops);
  const Eigen::Index n = Q.rows();
  Projectors out;
  out.P_minus = 0.5 * CMat::Identity(n, n) + Q;
  out.P_plus = CMat::Identity(n, n) - out.P_minus;
  return out;
}

/// Value row block of P-: [I/2 - K, S].
inline CMat projector_minus_values(const LayerOperators& ops) {
  const Eigen::Index p = ops.S.rows();
  CMat B(p, 2 * p);
  B << 0.5 * CMat::Identity(p, p) - ops.K, ops.S;
  return B;
}

enum class Side { Interior, Exterior };

struct Representation {
  CVec values;
  std::vector<bool> too_close;
};

/// Green's representation from D&N data: interior u = S psi - D phi, exterior
/// v = D phi - S psi (S, D the single and double layer potentials).
inline Representation eval_green_representation(const WaveContext& ctx, const BoundarySampling& b, const CVec& phi,
                                                 const CVec& psi, const std::vector<Vec2>& targets, Side side) {
  if (phi.size() != b.size() || psi.size() != b.size())
    throw Error(ErrorCode::ShapeMismatch, "density length differs from node count");
  Representation out;
  out.values = CVec::Zero(static_cast<Eigen::Index>(targets.size()));
  out.too_close.assign(targets.size(), false);
  const double sgn = side == Side::Interior ? 1.0 : -1.0;
  std::vector<detail::PanelContext> pcs;
  for (const Panel& p : b.panels) pcs.push_back(detail::panel_context(p));
  parallel_for(static_cast<std::ptrdiff_t>(targets.size()), [&](std::ptrdiff_t t) {
    const Vec2& x = targets[t];
    double best = 1e300;
    Eigen::Index nearest = 0;
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      double d = (x - b.nodes[j]).norm();
      if (d < best) best = d, nearest = j;
    }
    if (best == 0.0) throw Error(ErrorCode::DomainError, "target lies on a boundary node");
    out.too_close[t] = best < 2.0 * b.weights[nearest];
    cplx acc = 0;
    if (b.shape == BoundarySampling::Shape::Panels) {
      detail::Target tg{x};
      std::vector<double> lag(64);
      for (size_t pi = 0; pi < b.panels.size(); ++pi) {
        const Panel& p = b.panels[pi];
        if (static_cast<int>(lag.size()) < p.order) lag.resize(p.order);
        detail::PanelRows rows(p.order);
        if (p.distance(x) >= p.length()) {
          const Rule& r = gauss_legendre(p.order);
          for (int m = 0; m < p.order; ++m) detail::accumulate(ctx, tg, pcs[pi], r.x[m], r.w[m], rows, lag, true);
        } else {
          detail::integrate_near(ctx, tg, pcs[pi], -1.0, 1.0, 0, rows, lag);
        }
        acc += (rows.S * psi.segment(p.offset, p.order))(0) - (rows.K * phi.segment(p.offset, p.order))(0);
      }
    } else {
      for (Eigen::Index j = 0; j < b.size(); ++j) {
        auto kp = green_pair(ctx, x, b.nodes[j]);
        const cplx dgn = -(kp.gradient_x(0) * b.normals[j].x() + kp.gradient_x(1) * b.normals[j].y());
        acc += b.weights[j] * (kp.value * psi(j) - dgn * phi(j));
      }
    }
    out.values(t) = sgn * acc;
  });
  return out;
}

struct DtnResult {
  CMat Lambda;
  double cross_check = std::numeric_limits<double>::quiet_NaN();  // relative 2-norm gap
};

/// Dirichlet-to-Neumann map: interior S^{-1}(K + I/2), exterior S^{-1}(K - I/2),
/// cross-checked against (K' -+ I/2)^{-1} T when that factor is well conditioned.
inline DtnResult dtn_map(const LayerOperators& ops, Side side) {
  const Eigen::Index p = ops.S.rows();
  const CMat I = CMat::Identity(p, p);
  const double h = side == Side::Interior ? 0.5 : -0.5;
  auto cond = [](const CMat& A) {
    RVec s = svd(A, false).s;
    return s(0) / s(s.size() - 1);
  };
  if (cond(ops.S) > 1e12) throw Error(ErrorCode::NearResonance, "single layer operator is near singular");
  CMat Sc = ops.S;
  DtnResult out;
  out.Lambda = lu_solve(Sc, ops.K + h * I);
  if (ops.has_T) {
    CMat F = ops.Kp - h * I;
    if (cond(F) < 1e12) {
      CMat alt = lu_solve(F, ops.T);
      out.cross_check = svd(alt - out.Lambda, false).s(0) / svd(out.Lambda, false).s(0);
    }
  }
  return out;
}

}  // namespace twss
