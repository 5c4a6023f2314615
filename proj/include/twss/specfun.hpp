#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "core.hpp"

namespace twss {

/// J_0..J_nmax at x >= 0 by Miller's backward recurrence, normalized with
/// J_0 + 2 sum J_2k = 1.
inline std::vector<double> bessel_j_array(int nmax, double x) {
  if (nmax < 0) throw Error(ErrorCode::InvalidArgument, "negative Bessel order");
  if (x < 0) throw Error(ErrorCode::DomainError, "Bessel argument must be nonnegative");
  std::vector<double> out(nmax + 1, 0.0);
  if (x == 0.0) {
    out[0] = 1.0;
    return out;
  }
  const double big = std::max<double>(nmax, x);
  int start = static_cast<int>(big + 30.0 + std::sqrt(60.0 * big));
  if (start % 2) ++start;
  const double rescale_at = 1e250;
  double jp1 = 0.0, j = 1e-280, sum = 0.0;
  for (int n = start; n >= 1; --n) {
    // j holds J_n (unnormalized), jp1 holds J_{n+1}
    const double jm1 = (2.0 * n / x) * j - jp1;
    jp1 = j;
    j = jm1;
    if (n - 1 <= nmax) out[n - 1] = j;
    if (n <= nmax) out[n] = jp1;
    if ((n - 1) % 2 == 0 && n - 1 > 0) sum += 2.0 * j;
    if (std::abs(j) > rescale_at) {
      j /= rescale_at;
      jp1 /= rescale_at;
      sum /= rescale_at;
      for (int m = n - 1; m <= nmax; ++m) out[m] /= rescale_at;
    }
  }
  sum += j;  // J_0 term
  for (double& v : out) v /= sum;
  return out;
}

inline double bessel_j(int order, double x) {
  if (order < 0) throw Error(ErrorCode::InvalidArgument, "negative Bessel order");
  return bessel_j_array(order, x)[order];
}

struct Bessel01 {
  double j0, j1, y0, y1;
};

/// Ascending power series, used for x < 1 where the backward recurrence would overflow.
inline Bessel01 bessel01_power(double x) {
  const double z = 0.25 * x * x, lg = std::log(0.5 * x);
  double j0 = 0, j1 = 0, h0 = 0, h1 = 0;
  double t = 1.0, harm = 0.0;  // t = (-z)^m / (m!)^2, harm = H_m
  for (int m = 0; m < 30; ++m) {
    if (m > 0) {
      t *= -z / (double(m) * m);
      harm += 1.0 / m;
    }
    const double t1 = t / (m + 1);  // (-z)^m / (m! (m+1)!)
    j0 += t;
    j1 += t1;
    h0 -= harm * t;
    h1 += (2.0 * harm + 1.0 / (m + 1) - 2.0 * kEulerGamma) * t1;
    if (std::abs(t) < 1e-18) break;
  }
  j1 *= 0.5 * x;
  h1 *= 0.5 * x;
  const double y0 = (2.0 / kPi) * ((lg + kEulerGamma) * j0 + h0);
  const double y1 = -2.0 / (kPi * x) + (2.0 / kPi) * lg * j1 - h1 / kPi;
  return {j0, j1, y0, y1};
}

/// J_0, J_1 and Y_0, Y_1 from the Neumann series in even/odd J_k (moderate x).
inline Bessel01 bessel01_series(double x) {
  if (x < 1.0) return bessel01_power(x);
  const int nmax = static_cast<int>(x + 40.0 + std::sqrt(60.0 * std::max(x, 1.0)));
  auto J = bessel_j_array(nmax + 2, x);
  const double lg = std::log(0.5 * x) + kEulerGamma;
  double s0 = 0.0, s1 = 0.0;
  for (int k = 1; 2 * k + 1 <= nmax + 2; ++k) {
    const double sg = (k % 2) ? -1.0 : 1.0;
    s0 += sg * J[2 * k] / k;
    s1 += sg * (J[2 * k - 1] - J[2 * k + 1]) / k;
  }
  const double y0 = (2.0 / kPi) * (lg * J[0] - 2.0 * s0);
  const double y1 = (2.0 / kPi) * (-J[0] / x + lg * J[1] + s1);
  return {J[0], J[1], y0, y1};
}

inline std::pair<double, double> bessel_y01_series(double x) {
  auto b = bessel01_series(x);
  return {b.y0, b.y1};
}

/// H^(1)_nu(x) for nu in {0,1} by the large-argument Hankel expansion, summed until the
/// terms stop decreasing.
inline cplx hankel1_asymptotic(int nu, double x) {
  const double mu = 4.0 * nu * nu;
  cplx sum = 1.0, term = 1.0, ik = 1.0;
  double a = 1.0, prev = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double odd = 2.0 * k - 1.0;
    a *= (mu - odd * odd) / (k * 8.0 * x);
    ik *= kI;
    term = ik * a;
    const double mag = std::abs(a);
    if (mag > prev) break;
    sum += term;
    prev = mag;
    if (mag < 1e-17) break;
  }
  const double phase = x - 0.5 * nu * kPi - 0.25 * kPi;
  return std::sqrt(2.0 / (kPi * x)) * std::exp(kI * phase) * sum;
}

/// Crossover between the series and asymptotic branches for Y_0, Y_1.
inline constexpr double kBesselYSwitch = 25.0;

inline std::pair<double, double> bessel_y01(double x) {
  if (!(x > 0)) throw Error(ErrorCode::DomainError, "Y_n requires x > 0");
  if (x < kBesselYSwitch) return bessel_y01_series(x);
  return {hankel1_asymptotic(0, x).imag(), hankel1_asymptotic(1, x).imag()};
}

/// Y_0..Y_nmax by forward recurrence (stable for the growing solution).
inline std::vector<double> bessel_y_array(int nmax, double x) {
  auto [y0, y1] = bessel_y01(x);
  std::vector<double> y(std::max(nmax, 1) + 1);
  y[0] = y0;
  y[1] = y1;
  for (int n = 1; n < nmax; ++n) y[n + 1] = (2.0 * n / x) * y[n] - y[n - 1];
  y.resize(nmax + 1);
  return y;
}

inline double bessel_y(int order, double x) { return bessel_y_array(order, x)[order]; }

inline std::vector<cplx> hankel1_array(int nmax, double x) {
  if (!(x > 0)) throw Error(ErrorCode::DomainError, "Hankel function requires x > 0");
  auto J = bessel_j_array(nmax, x);
  auto Y = bessel_y_array(nmax, x);
  std::vector<cplx> h(nmax + 1);
  for (int n = 0; n <= nmax; ++n) h[n] = {J[n], Y[n]};
  return h;
}

inline cplx hankel1(int order, double x) {
  if (order < 0) throw Error(ErrorCode::InvalidArgument, "negative Hankel order");
  return hankel1_array(order, x)[order];
}

/// H0 and H1 together, the hot path of every kernel evaluation.
inline std::pair<cplx, cplx> hankel01(double x) {
  if (!(x > 0)) throw Error(ErrorCode::DomainError, "Hankel function requires x > 0");
  if (x >= kBesselYSwitch) return {hankel1_asymptotic(0, x), hankel1_asymptotic(1, x)};
  auto b = bessel01_series(x);
  return {{b.j0, b.y0}, {b.j1, b.y1}};
}

/// Derivative of a cylinder function C_n from the array C_0..C_{n+1}.
template <class T>
T cylinder_derivative(const std::vector<T>& c, int n) {
  if (n == 0) return -c[1];
  return 0.5 * (c[n - 1] - c[n + 1]);
}

struct KernelPair {
  cplx value;
  Eigen::Vector2cd gradient_x;
};

inline cplx green(const WaveContext& ctx, const Vec2& x, const Vec2& xi) {
  const double r = (x - xi).norm();
  if (r == 0.0) throw Error(ErrorCode::DomainError, "Green's function at coincident points");
  return double(kGreenSign) * 0.25 * kI * hankel01(ctx.k * r).first;
}

inline KernelPair green_pair(const WaveContext& ctx, const Vec2& x, const Vec2& xi) {
  const Vec2 d = x - xi;
  const double r = d.norm();
  if (r == 0.0) throw Error(ErrorCode::DomainError, "Green's function at coincident points");
  auto [h0, h1] = hankel01(ctx.k * r);
  const cplx c = double(kGreenSign) * 0.25 * kI;
  KernelPair kp;
  kp.value = c * h0;
  const cplx gp = -c * ctx.k * h1;  // dG/dr
  kp.gradient_x = (gp / r) * d.cast<cplx>();
  return kp;
}

struct GreenKernels {
  cplx g;         // G(x, xi)
  cplx dg_dn_xi;  // dG/dn(xi), double-layer kernel
  cplx dg_dn_x;   // dG/dn(x), adjoint double-layer kernel
  cplx d2g;       // d2G/dn(x)dn(xi), hypersingular kernel
};

inline GreenKernels green_kernels(const WaveContext& ctx, const Vec2& x, const Vec2& nx, const Vec2& xi,
                                  const Vec2& nxi) {
  const Vec2 d = x - xi;
  const double r = d.norm();
  if (r == 0.0) throw Error(ErrorCode::DomainError, "Green's kernels at coincident points");
  const double k = ctx.k, kr = k * r;
  auto [h0, h1] = hankel01(kr);
  const cplx c = double(kGreenSign) * 0.25 * kI;
  const cplx g1 = -c * k * h1;                  // g'(r)
  const cplx g2 = -c * k * k * (h0 - h1 / kr);  // g''(r)
  const double dnx = d.dot(nx), dnxi = d.dot(nxi);
  GreenKernels out;
  out.g = c * h0;
  out.dg_dn_x = g1 * dnx / r;
  out.dg_dn_xi = -g1 * dnxi / r;
  out.d2g = -g2 * dnx * dnxi / (r * r) - g1 * (nx.dot(nxi) / r - dnx * dnxi / (r * r * r));
  return out;
}

}  // namespace twss
