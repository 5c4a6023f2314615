#pragma once

// Command layer behind tools/twss: config parsing, the solve/check/compare/bench/oracle
// commands and their artifacts.

#include <CLI11.hpp>
#include <json.hpp>

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "oracle.hpp"
#include "solver.hpp"

namespace twss::cli {

enum ExitCode : int { kOk = 0, kConfigError = 1, kSolverError = 2, kCheckFailure = 3, kCompareFailure = 4 };

/// Error carrying the exit code it maps to.
class CommandError : public std::runtime_error {
 public:
  CommandError(int code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

struct RunConfig {
  std::string path;
  std::string hash;

  double k = 10.0;
  double epsilon = 1e-10;

  std::string medium_kind = "homogeneous";
  double amplitude = 0.5;
  double width = 0.1;
  Vec2 center = Vec2::Zero();
  double support_tol = kDefaultSupportTol;

  SolverConfig solver;
  IncidentWave wave = IncidentWave::plane(0.0);

  std::string out_dir = "twss_out";
  int grid = 64;  // interior field grid per side
  int probes = 16;
  double probe_radius = 1.0;

  int circle_nodes = 128;
  CircleRule circle_rule = CircleRule::Spectral;
  double projector_tol = 1e-8;
  double calderon_tol = 1e-7;
  double square_tol = 1e-6;
  double survival_tol = 1e-6;

  std::vector<int> oracle_n{48, 64, 96};
  double tolerance = 1e-3;
  double interior_tolerance = 1e-3;
  int interior_stride = 3;
  long max_oracle_unknowns = 20000;

  std::vector<double> bench_k;
  std::vector<int> bench_levels;
};

namespace detail {

/// 64-bit FNV-1a, stable across platforms.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

using Items = std::map<std::string, std::vector<std::string>>;

template <class T>
T parse_scalar(const std::string& key, const std::string& s) {
  std::istringstream in(s);
  T v{};
  in >> v;
  if (in.fail() || !in.eof()) throw CommandError(kConfigError, "config key " + key + ": cannot parse '" + s + "'");
  return v;
}

class Reader {
 public:
  explicit Reader(Items items) : items_(std::move(items)) {}

  template <class T>
  void get(const std::string& key, T& out) {
    auto it = find(key);
    if (!it) return;
    if (it->size() != 1) throw CommandError(kConfigError, "config key " + key + " expects one value");
    if constexpr (std::is_same_v<T, std::string>)
      out = it->front();
    else
      out = parse_scalar<T>(key, it->front());
  }

  template <class T>
  void get_list(const std::string& key, std::vector<T>& out) {
    auto it = find(key);
    if (!it) return;
    out.clear();
    for (const auto& s : *it) out.push_back(parse_scalar<T>(key, s));
  }

  void get_vec2(const std::string& key, Vec2& out) {
    std::vector<double> v;
    get_list(key, v);
    if (v.empty()) return;
    if (v.size() != 2) throw CommandError(kConfigError, "config key " + key + " expects two numbers");
    out = {v[0], v[1]};
  }

  bool has(const std::string& key) const { return items_.count(key) > 0; }

  /// Keys never read are typos or unsupported options.
  void reject_unused() const {
    for (const auto& [k, v] : items_)
      if (!used_.count(k)) throw CommandError(kConfigError, "unknown config key " + k);
  }

 private:
  const std::vector<std::string>* find(const std::string& key) {
    used_.insert(key);
    auto it = items_.find(key);
    return it == items_.end() ? nullptr : &it->second;
  }

  Items items_;
  std::set<std::string> used_;
};

template <class E>
E parse_enum(const std::string& key, const std::string& v, const std::vector<std::pair<std::string, E>>& table) {
  for (const auto& [name, e] : table)
    if (v == name) return e;
  std::string opts;
  for (const auto& [name, e] : table) opts += (opts.empty() ? "" : "|") + name;
  throw CommandError(kConfigError, "config key " + key + ": '" + v + "' is not one of " + opts);
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text, const std::string& path = "<string>") {
  std::istringstream in(text);
  CLI::ConfigINI ini;
  ini.comment('#');
  std::vector<CLI::ConfigItem> raw;
  try {
    raw = ini.from_config(in);
  } catch (const CLI::Error& e) {
    throw CommandError(kConfigError, path + ": " + e.what());
  }
  detail::Items items;
  for (const auto& it : raw) {
    if (it.name == "++" || it.name == "--") continue;
    const std::string key = it.fullname();
    if (items.count(key)) throw CommandError(kConfigError, "duplicate config key " + key);
    items[key] = it.inputs;
  }
  std::string canon;
  for (const auto& [k, v] : items) {
    canon += k + "=";
    for (const auto& s : v) canon += s + " ";
    canon += "\n";
  }

  RunConfig c;
  c.path = path;
  c.hash = detail::hex64(detail::fnv1a(canon));
  detail::Reader r(std::move(items));

  r.get("wave.k", c.k);
  r.get("wave.epsilon", c.epsilon);
  // Thresholds default to the target precision.
  c.solver.leaf.tol_rel = c.epsilon;
  c.solver.merge_tol = c.epsilon;
  c.solver.reg_tol = 10.0 * c.epsilon;

  r.get("medium.kind", c.medium_kind);
  r.get("medium.amplitude", c.amplitude);
  r.get("medium.width", c.width);
  r.get_vec2("medium.center", c.center);
  r.get("medium.support_tol", c.support_tol);
  std::vector<double> dom;
  r.get_list("medium.domain", dom);
  if (!dom.empty()) {
    if (dom.size() != 4) throw CommandError(kConfigError, "medium.domain expects x0 y0 x1 y1");
    c.solver.domain = {dom[0], dom[1], dom[2], dom[3]};
  }

  r.get("tree.levels", c.solver.levels);
  std::string s;
  if (r.get("tree.strategy", s), !s.empty())
    c.solver.strategy = detail::parse_enum<MergeStrategy>("tree.strategy", s,
                                                           {{"pairwise", MergeStrategy::Pairwise}, {"quad", MergeStrategy::Quad}});
  r.get("tree.merge_tol", c.solver.merge_tol);
  r.get("tree.compress_eps", c.solver.merge_compress_eps);

  s.clear();
  auto& lf = c.solver.leaf;
  if (r.get("leaf.kind", s), !s.empty()) {
    if (s == "fd") {
      lf.kind = LeafKind::FiniteDifference;
    } else {
      lf.kind = LeafKind::Collocation;
      lf.basis = detail::parse_enum<CollocationBasis>(
          "leaf.kind", s, {{"chebyshev", CollocationBasis::Chebyshev}, {"planewave", CollocationBasis::PlaneWave}});
    }
  }
  r.get("leaf.degree", lf.degree);
  r.get("leaf.nodes_per_edge", lf.nodes_per_edge);
  r.get("leaf.fd_m", lf.fd_m);
  r.get("leaf.pw_directions", lf.pw_directions);
  r.get_list("leaf.pw_wavenumber_factors", lf.pw_wavenumber_factors);
  r.get("leaf.pw_colloc", lf.pw_colloc);
  r.get("leaf.tol_rel", lf.tol_rel);
  r.get("leaf.compress_eps", lf.compress_eps);

  s.clear();
  if (r.get("projector.mode", s), !s.empty())
    c.solver.projector =
        detail::parse_enum<ProjectorMode>("projector.mode", s, {{"half", ProjectorMode::Half}, {"full", ProjectorMode::Full}});
  r.get("projector.reg_tol", c.solver.reg_tol);

  s = "plane";
  r.get("incident.kind", s);
  double angle = 0, amp_re = 1, amp_im = 0;
  Vec2 src(2.0, 0.0);
  r.get("incident.angle", angle);
  r.get_vec2("incident.source", src);
  r.get("incident.amplitude", amp_re);
  r.get("incident.amplitude_im", amp_im);
  const auto kind = detail::parse_enum<IncidentWave::Kind>(
      "incident.kind", s, {{"plane", IncidentWave::Kind::Plane}, {"monopole", IncidentWave::Kind::Monopole}});
  c.wave = kind == IncidentWave::Kind::Plane ? IncidentWave::plane(angle, {amp_re, amp_im})
                                             : IncidentWave::monopole(src, {amp_re, amp_im});

  r.get("output.dir", c.out_dir);
  r.get("output.grid", c.grid);
  r.get("output.probes", c.probes);
  r.get("output.probe_radius", c.probe_radius);

  r.get("check.circle_nodes", c.circle_nodes);
  s.clear();
  if (r.get("check.circle_rule", s), !s.empty())
    c.circle_rule =
        detail::parse_enum<CircleRule>("check.circle_rule", s, {{"spectral", CircleRule::Spectral}, {"kress", CircleRule::Kress}});
  r.get("check.projector_tol", c.projector_tol);
  r.get("check.calderon_tol", c.calderon_tol);
  r.get("check.square_tol", c.square_tol);
  r.get("check.survival_tol", c.survival_tol);

  r.get_list("compare.oracle_n", c.oracle_n);
  r.get("compare.tolerance", c.tolerance);
  r.get("compare.interior_tolerance", c.interior_tolerance);
  r.get("compare.interior_stride", c.interior_stride);
  r.get("compare.max_oracle_unknowns", c.max_oracle_unknowns);

  r.get_list("bench.wavenumbers", c.bench_k);
  r.get_list("bench.levels", c.bench_levels);

  r.reject_unused();

  // Range checks that do not need the heavy modules.
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw CommandError(kConfigError, msg);
  };
  need(c.k > 0, "wave.k must be positive");
  need(c.epsilon > 0 && c.epsilon < 1, "wave.epsilon must lie in (0,1)");
  need(c.medium_kind == "homogeneous" || c.medium_kind == "gaussian", "medium.kind must be homogeneous|gaussian");
  need(c.solver.levels >= 1, "tree.levels must be >= 1");
  need(c.solver.leaf.nodes_per_edge >= 4, "leaf.nodes_per_edge must be >= 4");
  need(c.grid >= 1 && c.probes >= 1 && c.probe_radius > 0, "output grid, probes and probe_radius must be positive");
  need(c.circle_nodes >= 8 && c.circle_nodes % 2 == 0, "check.circle_nodes must be even and >= 8");
  need(c.interior_stride >= 1 && c.interior_stride % 2 == 1, "compare.interior_stride must be odd");
  for (int n : c.oracle_n) need(n >= 2, "compare.oracle_n entries must be >= 2");
  return c;
}

inline RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CommandError(kConfigError, "cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path);
}

inline Medium make_medium(const RunConfig& c) {
  try {
    if (c.medium_kind == "homogeneous") return make_homogeneous(c.solver.domain);
    return make_gaussian_bump(c.amplitude, c.width, c.center, c.solver.domain, c.support_tol);
  } catch (const Error& e) {
    throw CommandError(kConfigError, std::string("medium: ") + e.what());
  }
}

inline WaveContext make_context(const RunConfig& c) { return {c.k, c.epsilon}; }

/// Runs fn and tags solver errors with the stage name.
template <class Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    throw CommandError(kSolverError, "stage " + name + " failed: " + e.what());
  }
}

// ---------------------------------------------------------------------------------------
// Artifacts

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::ofstream open_artifact(const RunConfig& c, const std::string& name, const std::string& columns) {
  std::filesystem::create_directories(c.out_dir);
  const auto p = std::filesystem::path(c.out_dir) / name;
  std::ofstream out(p);
  if (!out) throw CommandError(kConfigError, "cannot write " + p.string());
  out << "# config_hash " << c.hash << "\n";
  if (!columns.empty()) out << "# " << columns << "\n";
  return out;
}

inline void write_field_csv(const RunConfig& c, const std::string& name, const std::vector<Vec2>& pts, const CVec& v) {
  auto out = open_artifact(c, name, "x,y,re,im");
  for (size_t i = 0; i < pts.size(); ++i) {
    const cplx z = v(static_cast<Eigen::Index>(i));
    out << fmt17(pts[i].x()) << ',' << fmt17(pts[i].y()) << ',' << fmt17(z.real()) << ',' << fmt17(z.imag()) << '\n';
  }
}

/// Arclength position of every node along a panel boundary.
inline std::vector<double> arclength_positions(const BoundarySampling& b) {
  std::vector<double> s(b.nodes.size());
  double acc = 0;
  for (const Panel& p : b.panels) {
    for (int j = 0; j < p.order; ++j) s[p.offset + j] = acc + (b.nodes[p.offset + j] - p.a).norm();
    acc += p.length();
  }
  return s;
}

inline void write_boundary_csv(const RunConfig& c, const std::string& name, const BoundarySampling& b, const DNPair& t) {
  auto out = open_artifact(c, name, "s,x,y,nx,ny,re_u,im_u,re_un,im_un");
  const auto s = arclength_positions(b);
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    out << fmt17(s[i]) << ',' << fmt17(b.nodes[i].x()) << ',' << fmt17(b.nodes[i].y()) << ',' << fmt17(b.normals[i].x())
        << ',' << fmt17(b.normals[i].y()) << ',' << fmt17(t.u(i).real()) << ',' << fmt17(t.u(i).imag()) << ','
        << fmt17(t.un(i).real()) << ',' << fmt17(t.un(i).imag()) << '\n';
  }
}

/// JSON has no comments, so the config hash is the first key instead of a header line.
inline void write_json(const RunConfig& c, const std::string& name, const nlohmann::json& body) {
  std::filesystem::create_directories(c.out_dir);
  const auto p = std::filesystem::path(c.out_dir) / name;
  std::ofstream out(p);
  if (!out) throw CommandError(kConfigError, "cannot write " + p.string());
  nlohmann::ordered_json j;
  j["config_hash"] = c.hash;
  for (const auto& [k, v] : body.items())
    if (k != "config_hash") j[k] = v;
  out << j.dump(2) << "\n";
}

inline nlohmann::json times_json(const StageTimes& t) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : t.seconds) j[k] = v;
  return j;
}

inline double trace_norm(const DNPair& t, const BoundarySampling& b, double k) {
  const RVec w = trace_row_weights(b, k);
  CVec v(2 * t.u.size());
  v << t.u, t.un;
  return (w.cast<cplx>().asDiagonal() * v).norm();
}

inline std::vector<Vec2> probe_points(const RunConfig& c) {
  return circle_points(c.solver.domain.center(), c.probe_radius, c.probes);
}

// ---------------------------------------------------------------------------------------
// Commands

inline int cmd_solve(const RunConfig& c, std::ostream& log) {
  const WaveContext ctx = stage("config", [&] { return make_context(c); });
  const Medium med = make_medium(c);
  stage("incident", [&] {
    c.wave.validate(c.solver.domain);
    return 0;
  });
  Factorization f = stage("factorize", [&] { return factorize(ctx, med, c.solver); });
  ScatteringSolution s = stage("solve", [&] { return solve_wave(f, c.wave); });
  const auto grid = cell_center_grid(c.solver.domain, c.grid);
  const auto probes = probe_points(c);
  Stopwatch sw;
  const CVec interior = stage("interior", [&] { return interior_total_field(f, s, grid); });
  const CVec exterior = stage("exterior", [&] { return exterior_scattered_field(f, s, probes); });
  const double t_eval = sw.lap();

  write_field_csv(c, "total_field.csv", grid, interior);
  write_boundary_csv(c, "scattered_boundary.csv", f.root_boundary(), s.scattered_trace);
  write_field_csv(c, "scattered_probes.csv", probes, exterior);

  const double inc_norm = trace_norm(s.incident_trace, f.root_boundary(), ctx.k);
  const double sc_norm = trace_norm(s.scattered_trace, f.root_boundary(), ctx.k);
  nlohmann::json j;
  j["config"] = c.path;
  j["config_hash"] = c.hash;
  j["k"] = ctx.k;
  j["medium"] = c.medium_kind;
  j["levels"] = c.solver.levels;
  j["leaves"] = f.leaves.size();
  j["root_nodes"] = f.root_boundary().size();
  j["root_dimension"] = f.root_trace().cols();
  j["projector"] = s.mode == ProjectorMode::Half ? "half" : "full";
  j["coefficient_residual"] = s.residual;
  j["truncated_singular_values"] = s.truncated;
  j["scattered_norm_ratio"] = inc_norm > 0 ? sc_norm / inc_norm : 0.0;
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& n : f.tree.nodes) {
    if (n.is_leaf()) continue;
    merges.push_back({{"level", n.level},
                      {"height", n.height},
                      {"rows", n.diag.constraint_rows},
                      {"cols", n.diag.constraint_cols},
                      {"null_dim", n.diag.null_dim},
                      {"gap_kept", n.diag.gap_kept},
                      {"gap_dropped", n.diag.gap_dropped}});
  }
  j["merges"] = merges;
  auto times = times_json(f.times);
  for (const auto& [k, v] : s.times.seconds) times[k] = v;
  times["evaluate"] = t_eval;
  j["seconds"] = times;
  write_json(c, "summary.json", j);

  log << "root dimension " << f.root_trace().cols() << ", residual " << s.residual << ", scattered/incident "
      << j["scattered_norm_ratio"].get<double>() << "\n";
  log << "artifacts written to " << c.out_dir << "\n";
  return kOk;
}

struct CheckLine {
  std::string name;
  double value;
  double tol;
  bool pass() const { return std::isfinite(value) && value <= tol; }
};

inline double op_norm(const CMat& A) { return svd(A, false).s(0); }

/// Relative weighted least-squares misfit of data in the column space of G.
inline double fit_error(const CMat& G, const CVec& data, const RVec& w) {
  CoefficientSolver cs(G, w, 1e-13);
  return cs.solve(data).residual;
}

/// Merges random full-rank traces at every internal node of the tree and returns the largest
/// deviation of the null dimension from r1 + r2 - 2g (sum over children minus constraints).
inline Eigen::Index synthetic_merge_defect(const Tree& tree, double k, int trials, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Eigen::Index worst = 0;
  for (int t = 0; t < trials; ++t)
    for (const auto& n : tree.nodes) {
      if (n.is_leaf()) continue;
      std::vector<DNTrace> kids;
      Eigen::Index r = 0, g2 = 0;
      for (const auto& ip : n.pairs) g2 += 2 * tree.nodes[n.children[ip.child_a]].boundary->panels[ip.panel_a].order;
      for (int ch : n.children) {
        const auto& b = tree.nodes[ch].boundary;
        // Enough columns that every child could satisfy all constraints on its own.
        const Eigen::Index rc = g2 + 1 + static_cast<Eigen::Index>(rng() % 5);
        CMat D(2 * b->size(), rc);
        for (Eigen::Index i = 0; i < D.size(); ++i) D.data()[i] = cplx(nd(rng), nd(rng));
        kids.push_back({b, D});
        r += rc;
      }
      std::vector<const DNTrace*> ptr;
      for (const auto& d : kids) ptr.push_back(&d);
      const auto m = merge_children(n, ptr, k, 1e-10);
      worst = std::max<Eigen::Index>(worst, std::abs(m.diag.null_dim - (r - g2)));
    }
  return worst;
}

inline std::vector<CheckLine> run_checks(const RunConfig& c) {
  std::vector<CheckLine> out;
  const WaveContext ctx = make_context(c);
  const double k = ctx.k;

  auto circ = std::make_shared<const BoundarySampling>(discretize_circle({0, 0}, 1.0, c.circle_nodes));
  const auto ops = assemble_layer_ops(ctx, circ, true, c.circle_rule);
  const auto P = projectors(ops);
  out.push_back({"circle ||P-^2 - P-||", op_norm(P.P_minus * P.P_minus - P.P_minus), c.projector_tol});
  out.push_back({"circle ||P+ P-||", op_norm(P.P_plus * P.P_minus), c.projector_tol});
  const Eigen::Index p = circ->size();
  const CMat I = CMat::Identity(p, p);
  out.push_back({"calderon ||ST + I/4 - K^2||", op_norm(ops.S * ops.T + 0.25 * I - ops.K * ops.K), c.calderon_tol});
  out.push_back({"calderon ||TS + I/4 - K'^2||", op_norm(ops.T * ops.S + 0.25 * I - ops.Kp * ops.Kp), c.calderon_tol});
  out.push_back({"calderon ||KS - SK'||", op_norm(ops.K * ops.S - ops.S * ops.Kp), c.calderon_tol});
  out.push_back({"calderon ||TK - K'T||", op_norm(ops.T * ops.K - ops.Kp * ops.T), c.calderon_tol});

  double worst_circ = 0;
  for (int d = 0; d < 4; ++d) {
    const auto w = IncidentWave::plane(0.3 + 2.0 * kPi * d / 4);
    const auto t = incident_trace(w, *circ, ctx);
    const CVec v = stack(t, ProjectorMode::Full);
    worst_circ = std::max(worst_circ, (P.P_minus * v - v).norm() / v.norm());
  }
  out.push_back({"circle plane-wave reproduction by P-", worst_circ, c.projector_tol});

  // Square domain boundary with the root sampling of the configured tree.
  const Tree tree = build_quadtree(c.solver.domain, c.solver.levels, c.solver.leaf.nodes_per_edge, c.solver.strategy);
  const BoundaryPtr sq = tree.nodes[tree.root()].boundary;
  const auto sops = assemble_layer_ops(ctx, sq, true);
  const CMat Pm = projectors(sops).P_minus;
  const RVec sw = trace_row_weights(*sq, k);
  double worst_sq = 0;
  for (int d = 0; d < 4; ++d) {
    const auto t = incident_trace(IncidentWave::plane(0.3 + 2.0 * kPi * d / 4), *sq, ctx);
    const CVec v = stack(t, ProjectorMode::Full);
    worst_sq = std::max(worst_sq, (sw.cast<cplx>().asDiagonal() * (Pm * v - v)).norm() /
                                      (sw.cast<cplx>().asDiagonal() * v).norm());
  }
  out.push_back({"square plane-wave reproduction by P-", worst_sq, c.square_tol});
  const auto mono = incident_trace(IncidentWave::monopole(c.solver.domain.center() + Vec2(0.05, 0.03)), *sq, ctx);
  const CVec mv = stack(mono, ProjectorMode::Full);
  out.push_back({"square outgoing wave annihilated by P-",
                 (sw.cast<cplx>().asDiagonal() * (Pm * mv)).norm() / (sw.cast<cplx>().asDiagonal() * mv).norm(),
                 c.square_tol});

  const Medium hom = make_homogeneous(c.solver.domain);
  const Box leaf_box = tree.leaf_box(0, 0);
  try {
    const auto fd = build_leaf_fd(ctx, hom, leaf_box, c.solver.leaf.fd_m, c.solver.leaf.nodes_per_edge, 1e-10);
    out.push_back({"fd leaf null dimension - 4m", std::abs(double(fd.rank() - 4 * c.solver.leaf.fd_m)), 0.0});
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateLeaf) throw;
    out.push_back({"fd leaf null dimension - 4m", 1.0, 0.0});
  }

  out.push_back({"merge null dimension - (r1 + r2 - 2g)", double(synthetic_merge_defect(tree, k, 5, 7)), 0.0});
  SolverConfig hc = c.solver;
  hc.projector = ProjectorMode::Half;
  const Factorization f = factorize(ctx, hom, hc);
  double worst_fit = 0;
  const RVec rw = trace_row_weights(f.root_boundary(), k);
  for (int d = 0; d < 4; ++d) {
    const auto t = incident_trace(IncidentWave::plane(0.7 + 2.0 * kPi * d / 4), f.root_boundary(), ctx);
    worst_fit = std::max(worst_fit, fit_error(f.root_trace().data, stack(t, ProjectorMode::Full), rw));
  }
  out.push_back({"plane-wave survival through merges", worst_fit, c.survival_tol});
  return out;
}

inline int cmd_check(const RunConfig& c, std::ostream& log) {
  auto lines = stage("check", [&] { return run_checks(c); });
  bool ok = true;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& l : lines) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "%-4s %-42s %.3e (tol %.1e)", l.pass() ? "PASS" : "FAIL", l.name.c_str(), l.value,
                  l.tol);
    log << buf << "\n";
    ok = ok && l.pass();
    j.push_back({{"check", l.name}, {"value", l.value}, {"tol", l.tol}, {"pass", l.pass()}});
  }
  write_json(c, "check.json", {{"config_hash", c.hash}, {"checks", j}});
  return ok ? kOk : kCheckFailure;
}

struct CompareReport {
  double exterior_error = 0;
  double interior_error = 0;
  std::vector<double> oracle_differences;
  CVec twss_probe, oracle_probe;
};

inline std::function<cplx(const Vec2&)> incident_field(const IncidentWave& w, const WaveContext& ctx) {
  return [w, ctx](const Vec2& x) { return w.value(ctx, x); };
}

inline void guard_oracle(const RunConfig& c) {
  if (c.oracle_n.empty()) throw CommandError(kConfigError, "compare.oracle_n is empty");
  for (int n : c.oracle_n)
    if (long(n) * n > c.max_oracle_unknowns)
      throw CommandError(kConfigError, "oracle grid " + std::to_string(n) + "^2 exceeds " +
                                           std::to_string(c.max_oracle_unknowns) + " unknowns");
}

inline CompareReport run_compare(const RunConfig& c, std::ostream& log) {
  guard_oracle(c);
  const WaveContext ctx = make_context(c);
  const Medium med = make_medium(c);
  const auto probes = probe_points(c);
  Factorization f = stage("factorize", [&] { return factorize(ctx, med, c.solver); });
  ScatteringSolution s = stage("solve", [&] { return solve_wave(f, c.wave); });
  CompareReport rep;
  rep.twss_probe = stage("exterior", [&] { return exterior_scattered_field(f, s, probes); });

  const auto u0 = incident_field(c.wave, ctx);
  const int nref = c.oracle_n.back();
  oracle::VolumeGrid g;
  CVec sigma;
  if (c.oracle_n.size() >= 3) {
    auto sc = stage("oracle", [&] { return oracle::oracle_self_convergence(ctx.k, med, c.solver.domain, u0, c.oracle_n, probes); });
    rep.oracle_differences = sc.differences;
    rep.oracle_probe = sc.fields.back();
    g = std::move(sc.finest);
    sigma = std::move(sc.finest_sigma);
  } else {
    g = oracle::VolumeGrid(c.solver.domain, nref);
    sigma = stage("oracle", [&] { return oracle::solve_lippmann_schwinger(ctx.k, med, g, u0); });
    rep.oracle_probe = oracle::eval_scattered_volume(ctx.k, g, sigma, probes);
  }
  rep.exterior_error = oracle::relative_l2(rep.twss_probe, rep.oracle_probe);

  std::vector<Vec2> shared;
  const int st = c.interior_stride;
  for (int j = st / 2; j < nref; j += st)
    for (int i = st / 2; i < nref; i += st) shared.push_back(g.points[static_cast<size_t>(j) * nref + i]);
  CVec ora = oracle::eval_scattered_volume(ctx.k, g, sigma, shared);
  for (size_t i = 0; i < shared.size(); ++i) ora(static_cast<Eigen::Index>(i)) += u0(shared[i]);
  const CVec tw = stage("interior", [&] { return interior_total_field(f, s, shared); });
  rep.interior_error = oracle::relative_l2(tw, ora);

  log << "oracle reference n_side " << nref << "\n";
  for (size_t i = 0; i < rep.oracle_differences.size(); ++i)
    log << "oracle difference " << c.oracle_n[i] << " -> " << c.oracle_n[i + 1] << ": " << rep.oracle_differences[i]
        << "\n";
  return rep;
}

inline int cmd_compare(const RunConfig& c, std::ostream& log) {
  const CompareReport r = run_compare(c, log);
  const bool ok = r.exterior_error <= c.tolerance && r.interior_error <= c.interior_tolerance;
  char buf[200];
  std::snprintf(buf, sizeof buf, "exterior relative L2 %.3e (tol %.1e)\ninterior relative L2 %.3e (tol %.1e)\n",
                r.exterior_error, c.tolerance, r.interior_error, c.interior_tolerance);
  log << buf << (ok ? "PASS" : "FAIL") << "\n";
  write_json(c, "compare.json",
             {{"config_hash", c.hash},
              {"exterior_error", r.exterior_error},
              {"interior_error", r.interior_error},
              {"oracle_n", c.oracle_n},
              {"oracle_differences", r.oracle_differences},
              {"pass", ok}});
  return ok ? kOk : kCompareFailure;
}

inline int cmd_oracle(const RunConfig& c, std::ostream& log) {
  guard_oracle(c);
  const WaveContext ctx = make_context(c);
  const Medium med = make_medium(c);
  const auto probes = probe_points(c);
  const oracle::VolumeGrid g(c.solver.domain, c.oracle_n.back());
  const CVec sigma = stage("oracle", [&] { return oracle::solve_lippmann_schwinger(ctx.k, med, g, incident_field(c.wave, ctx)); });
  const CVec v = oracle::eval_scattered_volume(ctx.k, g, sigma, probes);
  write_field_csv(c, "oracle_probes.csv", probes, v);
  log << "oracle n_side " << g.n_side << ", probe norm " << v.norm() << "\n";
  return kOk;
}

struct BenchRow {
  double k;
  int levels;
  long unknowns;
  double factor_seconds, solve_seconds;
  Eigen::Index root_dim;
};

/// Least-squares slope of log y against log x.
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const size_t n = x.size();
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) mx += std::log(x[i]) / n, my += std::log(y[i]) / n;
  double sxy = 0, sxx = 0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

inline long leaf_unknowns(const LeafConfig& lc) {
  if (lc.kind == LeafKind::FiniteDifference) return long(lc.fd_m) * lc.fd_m;
  if (lc.basis == CollocationBasis::Chebyshev) return long(lc.degree + 1) * (lc.degree + 1);
  return long(lc.pw_colloc) * lc.pw_colloc;
}

inline std::vector<BenchRow> run_bench(const RunConfig& c, std::ostream& log) {
  if (c.bench_k.size() < 3) throw CommandError(kConfigError, "bench needs at least 3 wavenumbers");
  if (!c.bench_levels.empty() && c.bench_levels.size() != c.bench_k.size())
    throw CommandError(kConfigError, "bench.levels must match bench.wavenumbers");
  const Medium med = make_medium(c);
  std::vector<BenchRow> rows;
  for (size_t i = 0; i < c.bench_k.size(); ++i) {
    const WaveContext ctx(c.bench_k[i], c.epsilon);
    SolverConfig sc = c.solver;
    // Proportional discretization: one more level per doubling of k.
    sc.levels = c.bench_levels.empty()
                    ? c.solver.levels + static_cast<int>(std::lround(std::log2(c.bench_k[i] / c.bench_k.front())))
                    : c.bench_levels[i];
    Stopwatch sw;
    Factorization f = stage("factorize", [&] { return factorize(ctx, med, sc); });
    const double tf = sw.lap();
    stage("solve", [&] { return solve_wave(f, c.wave); });
    const double ts = sw.lap();
    const long N = (1L << (2 * sc.levels)) * leaf_unknowns(sc.leaf);
    rows.push_back({ctx.k, sc.levels, N, tf, ts, f.root_trace().cols()});
    char buf[200];
    std::snprintf(buf, sizeof buf, "k %6.2f  L %d  N %8ld  factorization %9.4f s  solve %8.4f s  root dim %ld\n", ctx.k,
                  sc.levels, N, tf, ts, static_cast<long>(f.root_trace().cols()));
    log << buf;
  }
  return rows;
}

inline int cmd_bench(const RunConfig& c, std::ostream& log) {
  const auto rows = run_bench(c, log);
  std::vector<double> N, tf;
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    N.push_back(double(r.unknowns));
    tf.push_back(r.factor_seconds);
    j.push_back({{"k", r.k},
                 {"levels", r.levels},
                 {"unknowns", r.unknowns},
                 {"factorization_seconds", r.factor_seconds},
                 {"solve_seconds", r.solve_seconds},
                 {"root_dimension", r.root_dim}});
  }
  const double slope = loglog_slope(N, tf);
  const double ratio = rows.back().solve_seconds / rows.back().factor_seconds;
  log << "factorization slope vs N " << slope << "\n";
  log << "solve/factorization at largest k " << ratio << "\n";
  write_json(c, "bench.json", {{"config_hash", c.hash}, {"rows", j}, {"slope", slope}, {"solve_ratio", ratio}});
  return kOk;
}

/// Parses the config and dispatches; every failure becomes an exit code and a message.
inline int run_command(const std::string& cmd, const std::string& path, std::ostream& log, std::ostream& err) {
  try {
    const RunConfig c = parse_config_file(path);
    if (cmd == "solve") return cmd_solve(c, log);
    if (cmd == "check") return cmd_check(c, log);
    if (cmd == "compare") return cmd_compare(c, log);
    if (cmd == "bench") return cmd_bench(c, log);
    if (cmd == "oracle") return cmd_oracle(c, log);
    err << "unknown command " << cmd << "\n";
    return kConfigError;
  } catch (const CommandError& e) {
    err << "error: " << e.what() << "\n";
    return e.code();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kSolverError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kSolverError;
  }
}

}  // namespace twss::cli
