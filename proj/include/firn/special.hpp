#ifndef FIRN_SPECIAL_HPP
#define FIRN_SPECIAL_HPP

#include <cmath>
#include <limits>

#include "firn/common.hpp"

// Student-t and beta special functions needed by the truncated likelihood.
// Self-contained on purpose: the only clients are the density, CDF and
// quantile routines below, all double precision.

namespace firn {

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

namespace detail {

// Continued fraction for the incomplete beta (modified Lentz).  Requires
// x < (a+1)/(a+b+2) for fast convergence; callers arrange that.
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw numerical_error("incomplete beta continued fraction did not converge");
}

}  // namespace detail

// log of the regularized incomplete beta I_x(a,b), stable for tiny values.
inline double ibeta_log(double a, double b, double x) {
  if (x <= 0.0) return -std::numeric_limits<double>::infinity();
  if (x >= 1.0) return 0.0;
  const double lpre =
      a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return lpre + std::log(detail::betacf(a, b, x) / a);
  }
  // Mirror into the fast-converging region and come back through 1 - I.
  const double other = lpre + std::log(detail::betacf(b, a, 1.0 - x) / b);
  return std::log1p(-std::exp(other));
}

inline double ibeta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return std::exp(ibeta_log(a, b, x));
}

// Inverse of I_x(a,b): guarded Newton with a bisection bracket.
inline double ibeta_inv(double a, double b, double p) {
  if (p <= 0.0) return 0.0;
  if (p >= 1.0) return 1.0;
  const double lb = log_beta(a, b);
  // Small-p expansion I_x ~ x^a / (a B(a,b)) gives a log-space seed that
  // stays usable down to p ~ 1e-300.
  double x = std::exp((std::log(p) + std::log(a) + lb) / a);
  if (!(x > 0.0 && x < 1.0)) x = a / (a + b);
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double f = ibeta(a, b, x) - p;
    if (f > 0.0) {
      hi = x;
    } else {
      lo = x;
    }
    const double lpdf = (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - lb;
    double step = -f * std::exp(-lpdf);
    double xn = x + step;
    if (!(xn > lo && xn < hi) || !std::isfinite(step)) xn = 0.5 * (lo + hi);
    if (std::fabs(xn - x) < 1e-15 * (x + 1e-300)) return xn;
    x = xn;
  }
  return x;
}

inline double student_t_logpdf(double x, double nu) {
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(nu * 3.14159265358979323846) -
         0.5 * (nu + 1.0) * std::log1p(x * x / nu);
}

inline double student_t_cdf(double x, double nu) {
  if (x == 0.0) return 0.5;
  const double u = nu / (nu + x * x);
  const double half_tail = 0.5 * ibeta(0.5 * nu, 0.5, u);
  return x < 0.0 ? half_tail : 1.0 - half_tail;
}

// log P(T > x), stable far into either tail.
inline double student_t_log_tail(double x, double nu) {
  const double u = nu / (nu + x * x);
  const double log_half_tail =
      std::log(0.5) + ibeta_log(0.5 * nu, 0.5, u);
  if (x > 0.0) return log_half_tail;
  if (x == 0.0) return std::log(0.5);
  return std::log1p(-std::exp(log_half_tail));
}

inline double student_t_quantile(double p, double nu) {
  if (p <= 0.0 || p >= 1.0)
    throw numerical_error("student_t_quantile: p outside (0,1)");
  if (p == 0.5) return 0.0;
  const bool lower = p < 0.5;
  const double tail2 = 2.0 * (lower ? p : 1.0 - p);
  const double u = ibeta_inv(0.5 * nu, 0.5, tail2);
  const double t = std::sqrt(nu * (1.0 - u) / u);
  return lower ? -t : t;
}

inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z * 0.70710678118654752440);
}

// log Phi(z); asymptotic branch keeps the deep lower tail finite.
inline double normal_logcdf(double z) {
  if (z > -1.0) return std::log1p(-0.5 * std::erfc(z * 0.70710678118654752440));
  if (z > -35.0) return std::log(0.5 * std::erfc(-z * 0.70710678118654752440));
  const double z2 = z * z;
  return -0.5 * z2 - 0.5 * std::log(2.0 * 3.14159265358979323846) -
         std::log(-z) + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

// Acklam's rational approximation followed by one Halley step.
inline double normal_quantile(double p) {
  if (p <= 0.0 || p >= 1.0)
    throw numerical_error("normal_quantile: p outside (0,1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * 3.14159265358979323846) *
                   std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

}  // namespace firn

#endif
