#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <utility>

#include "core.hpp"

namespace twss {

struct Rule {
  std::vector<double> x;  // nodes on [-1, 1], ascending
  std::vector<double> w;
};

/// Gauss-Legendre rule by Newton iteration on P_n; cached per order.
inline const Rule& gauss_legendre(int n) {
  static std::map<int, Rule> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  if (n < 1) throw Error(ErrorCode::InvalidCount, "Gauss-Legendre order must be positive");
  Rule r;
  r.x.resize(n);
  r.w.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = z;
      for (int j = 2; j <= n; ++j) {
        double p2 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    {
      double p0 = 1.0, p1 = z;
      for (int j = 2; j <= n; ++j) {
        double p2 = ((2.0 * j - 1.0) * z * p1 - (j - 1.0) * p0) / j;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
    }
    double w = 2.0 / ((1.0 - z * z) * dp * dp);
    r.x[i] = -z;
    r.x[n - 1 - i] = z;
    r.w[i] = w;
    r.w[n - 1 - i] = w;
  }
  if (n % 2 == 1) r.x[n / 2] = 0.0;
  return cache.emplace(n, std::move(r)).first->second;
}

/// Chebyshev points of the second kind, ascending: -cos(pi j / p), j = 0..p.
inline std::vector<double> chebyshev_points(int p) {
  std::vector<double> x(p + 1);
  for (int j = 0; j <= p; ++j) x[j] = -std::cos(kPi * j / p);
  if (p % 2 == 0) x[p / 2] = 0.0;
  return x;
}

/// Barycentric weights for arbitrary distinct nodes.
inline std::vector<double> barycentric_weights(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<double> w(n, 1.0);
  for (size_t j = 0; j < n; ++j)
    for (size_t i = 0; i < n; ++i)
      if (i != j) w[j] /= (x[j] - x[i]);
  // Rescale to avoid overflow for large n; interpolation is invariant to scaling.
  double m = 0;
  for (double v : w) m = std::max(m, std::abs(v));
  for (double& v : w) v /= m;
  return w;
}

/// Row of Lagrange cardinal values at t for nodes x with barycentric weights w.
inline void lagrange_row(const std::vector<double>& x, const std::vector<double>& w, double t, double* out) {
  const size_t n = x.size();
  for (size_t j = 0; j < n; ++j) {
    if (t == x[j]) {
      for (size_t i = 0; i < n; ++i) out[i] = (i == j) ? 1.0 : 0.0;
      return;
    }
  }
  double s = 0;
  for (size_t j = 0; j < n; ++j) {
    out[j] = w[j] / (t - x[j]);
    s += out[j];
  }
  for (size_t j = 0; j < n; ++j) out[j] /= s;
}

/// Interpolation matrix (targets x nodes).
inline RMat interpolation_matrix(const std::vector<double>& x, const std::vector<double>& t) {
  auto w = barycentric_weights(x);
  RMat M(t.size(), x.size());
  std::vector<double> row(x.size());
  for (size_t i = 0; i < t.size(); ++i) {
    lagrange_row(x, w, t[i], row.data());
    for (size_t j = 0; j < x.size(); ++j) M(i, j) = row[j];
  }
  return M;
}

/// Spectral differentiation matrix for the polynomial interpolant on nodes x.
inline RMat differentiation_matrix(const std::vector<double>& x) {
  const size_t n = x.size();
  auto w = barycentric_weights(x);
  RMat D = RMat::Zero(n, n);
  for (size_t i = 0; i < n; ++i) {
    double diag = 0;
    for (size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      D(i, j) = (w[j] / w[i]) / (x[i] - x[j]);
      diag -= D(i, j);
    }
    D(i, i) = diag;
  }
  return D;
}

}  // namespace twss
