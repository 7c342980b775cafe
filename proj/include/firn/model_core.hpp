#ifndef FIRN_MODEL_CORE_HPP
#define FIRN_MODEL_CORE_HPP

#include <array>
#include <cmath>
#include <optional>
#include <stdexcept>

#include <Eigen/Core>

#include "firn/common.hpp"

// Four-stage piecewise linear densification model on the logit-density
// scale.  Everything here is a pure function of one site's parameters and
// covariates; no sampler state leaks in.

namespace firn {

template <class T>
struct PhysicalConstants {
  T rho_ice = T(0.917);                     // Mg m^-3
  static constexpr double gas_const = 8.314;  // J mol^-1 K^-1, fixed
};

// Site parameter vector on the sampling scale, 12 components.
// Packing order: alpha, log_A[0..3], log_E[0..3], t_rho[0..2].
template <class T>
struct SiteTheta {
  T alpha{};                  // logit-scale surface density
  std::array<T, 4> log_A{};   // log Arrhenius prefactors, one per stage
  std::array<T, 4> log_E{};   // log activation energies
  std::array<T, 3> t_rho{};   // unconstrained critical densities
};

template <class T>
struct SiteCovariates {
  T temperature{};  // mean annual temperature, K
  T smb{};          // surface mass balance, m w.e. yr^-1
};

// Physical-scale parameters after the componentwise transforms.
template <class T>
struct UntransformedTheta {
  T alpha{};
  std::array<T, 4> A{};
  std::array<T, 4> E{};
  std::array<T, 3> rho_c{};  // critical densities, strictly increasing
};

// Change depths between stages plus the per-stage rates that produced them.
template <class T>
struct StageGeometry {
  std::array<T, 3> kappa{};  // kappa[0] < kappa[1] < kappa[2], metres
  std::array<T, 4> rates{};  // Arrhenius rates k_1..k_4
};

inline constexpr int n_theta = 12;

// Bounds of the logistic critical-density transforms.
inline constexpr std::array<std::pair<double, double>, 3> rho_bounds = {
    {{0.42, 0.68}, {0.68, 0.78}, {0.78, 0.88}}};

template <class T>
T logit_density(T rho, const PhysicalConstants<T>& c) {
  if (!(rho > T(0)) || !(rho < c.rho_ice))
    throw std::domain_error("logit_density: rho outside (0, rho_ice)");
  return std::log(rho / (c.rho_ice - rho));
}

template <class T>
T inverse_logit_density(T t, const PhysicalConstants<T>& c) {
  if (t >= T(0)) return c.rho_ice / (T(1) + std::exp(-t));
  const T e = std::exp(t);
  return c.rho_ice * e / (T(1) + e);
}

template <class T>
T rho_from_unconstrained(T t, int stage) {
  const auto [lo, hi] = rho_bounds[stage];
  if (t >= T(0)) {
    const T e = std::exp(-t);
    return (T(lo) * e + T(hi)) / (T(1) + e);
  }
  const T e = std::exp(t);
  return (T(lo) + T(hi) * e) / (T(1) + e);
}

template <class T>
T unconstrained_from_rho(T rho, int stage) {
  const auto [lo, hi] = rho_bounds[stage];
  if (!(rho > T(lo)) || !(rho < T(hi)))
    throw std::domain_error("unconstrained_from_rho: rho outside stage bounds");
  return std::log((rho - T(lo)) / (T(hi) - rho));
}

template <class T>
UntransformedTheta<T> untransform(const SiteTheta<T>& th) {
  UntransformedTheta<T> u;
  u.alpha = th.alpha;
  for (int l = 0; l < 4; ++l) {
    u.A[l] = std::exp(th.log_A[l]);
    u.E[l] = std::exp(th.log_E[l]);
  }
  for (int j = 0; j < 3; ++j) u.rho_c[j] = rho_from_unconstrained(th.t_rho[j], j);
  return u;
}

template <class T>
T arrhenius(T a, T e, T temperature) {
  return a * std::exp(-e / (T(PhysicalConstants<T>::gas_const) * temperature));
}

// Change depths from the stage rates.  The first one can fall below the
// surface when alpha already exceeds logit(rho_1); that state is outside
// the model's support and is signalled with nullopt rather than clamped.
template <class T>
std::optional<StageGeometry<T>> change_depths(const UntransformedTheta<T>& u,
                                              const SiteCovariates<T>& cov,
                                              const PhysicalConstants<T>& c) {
  StageGeometry<T> g;
  for (int l = 0; l < 4; ++l) g.rates[l] = arrhenius(u.A[l], u.E[l], cov.temperature);
  const T l1 = logit_density(u.rho_c[0], c);
  g.kappa[0] = (l1 - u.alpha) / (c.rho_ice * g.rates[0]);
  if (!(g.kappa[0] >= T(0)) || !std::isfinite(static_cast<double>(g.kappa[0])))
    return std::nullopt;
  const T root_smb = std::sqrt(cov.smb);
  T prev = l1;
  for (int j = 1; j < 3; ++j) {
    const T lj = logit_density(u.rho_c[j], c);
    g.kappa[j] = g.kappa[j - 1] + root_smb * (lj - prev) / (c.rho_ice * g.rates[j]);
    prev = lj;
  }
  return g;
}

// One row of the piecewise linear design.  The first stage carries no mass
// balance scaling; deeper stages divide by sqrt(SMB).
template <class T>
Eigen::Matrix<T, 4, 1> design_row(T x, const StageGeometry<T>& g,
                                  const SiteCovariates<T>& cov,
                                  const PhysicalConstants<T>& c) {
  const T inv_root_smb = T(1) / std::sqrt(cov.smb);
  Eigen::Matrix<T, 4, 1> z = Eigen::Matrix<T, 4, 1>::Zero();
  z[0] = c.rho_ice * std::min(x, g.kappa[0]);
  if (x > g.kappa[0])
    z[1] = c.rho_ice * std::min(x - g.kappa[0], g.kappa[1] - g.kappa[0]) * inv_root_smb;
  if (x > g.kappa[1])
    z[2] = c.rho_ice * std::min(x - g.kappa[1], g.kappa[2] - g.kappa[1]) * inv_root_smb;
  if (x > g.kappa[2]) z[3] = c.rho_ice * (x - g.kappa[2]) * inv_root_smb;
  return z;
}

template <class T>
Eigen::Matrix<T, Eigen::Dynamic, 4> design_matrix(
    const Eigen::Matrix<T, Eigen::Dynamic, 1>& depths, const StageGeometry<T>& g,
    const SiteCovariates<T>& cov, const PhysicalConstants<T>& c) {
  Eigen::Matrix<T, Eigen::Dynamic, 4> z(depths.size(), 4);
  for (Eigen::Index i = 0; i < depths.size(); ++i)
    z.row(i) = design_row(depths[i], g, cov, c).transpose();
  return z;
}

// logit-scale mean at depth x; smooth is the already-orthogonalised
// covariate contribution (0 when smoothing is off).
template <class T>
T mean_logit(T x, const UntransformedTheta<T>& u, const StageGeometry<T>& g,
             const SiteCovariates<T>& cov, const PhysicalConstants<T>& c,
             T smooth = T(0)) {
  const Eigen::Matrix<T, 4, 1> z = design_row(x, g, cov, c);
  T m = u.alpha + smooth;
  for (int l = 0; l < 4; ++l) m += z[l] * g.rates[l];
  return m;
}

template <class T>
T mean_density(T x, const UntransformedTheta<T>& u, const StageGeometry<T>& g,
               const SiteCovariates<T>& cov, const PhysicalConstants<T>& c,
               T smooth = T(0)) {
  return inverse_logit_density(mean_logit(x, u, g, cov, c, smooth), c);
}

template <class T>
Eigen::Matrix<T, 12, 1> pack_theta(const SiteTheta<T>& th) {
  Eigen::Matrix<T, 12, 1> v;
  v[0] = th.alpha;
  for (int l = 0; l < 4; ++l) v[1 + l] = th.log_A[l];
  for (int l = 0; l < 4; ++l) v[5 + l] = th.log_E[l];
  for (int j = 0; j < 3; ++j) v[9 + j] = th.t_rho[j];
  return v;
}

template <class T>
SiteTheta<T> unpack_theta(const Eigen::Matrix<T, 12, 1>& v) {
  SiteTheta<T> th;
  th.alpha = v[0];
  for (int l = 0; l < 4; ++l) th.log_A[l] = v[1 + l];
  for (int l = 0; l < 4; ++l) th.log_E[l] = v[5 + l];
  for (int j = 0; j < 3; ++j) th.t_rho[j] = v[9 + j];
  return th;
}

// Map from the 8 population-level means gamma = (alpha, A1, A2, E1, E2,
// rho1, rho2, rho3) to the 12 site-level prior means: the stage 2 values
// are shared across stages 2-4.
inline Eigen::Matrix<double, 12, 8> hierarchical_mean_map() {
  Eigen::Matrix<double, 12, 8> m = Eigen::Matrix<double, 12, 8>::Zero();
  m(0, 0) = 1.0;                                   // alpha
  m(1, 1) = 1.0;                                   // log A_1
  m(2, 2) = m(3, 2) = m(4, 2) = 1.0;               // log A_2..4
  m(5, 3) = 1.0;                                   // log E_1
  m(6, 4) = m(7, 4) = m(8, 4) = 1.0;               // log E_2..4
  m(9, 5) = 1.0;                                   // t_rho_1
  m(10, 6) = 1.0;                                  // t_rho_2
  m(11, 7) = 1.0;                                  // t_rho_3
  return m;
}

inline Eigen::Matrix<double, 12, 1> gamma_to_theta_mean(
    const Eigen::Matrix<double, 8, 1>& gamma) {
  return hierarchical_mean_map() * gamma;
}

}  // namespace firn

#endif
