#ifndef FIRN_SPATIAL_COV_HPP
#define FIRN_SPATIAL_COV_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "firn/common.hpp"
#include "firn/model_core.hpp"

namespace firn {

inline constexpr double earth_radius_km = 6371.0;

// Haversine great-circle distance in km.
inline double great_circle_km(double lat1, double lon1, double lat2,
                              double lon2) {
  constexpr double deg = 3.14159265358979323846 / 180.0;
  const double p1 = lat1 * deg, p2 = lat2 * deg;
  const double dp = (lat2 - lat1) * deg, dl = (lon2 - lon1) * deg;
  const double sp = std::sin(0.5 * dp), sl = std::sin(0.5 * dl);
  const double a = sp * sp + std::cos(p1) * std::cos(p2) * sl * sl;
  return 2.0 * earth_radius_km * std::asin(std::min(1.0, std::sqrt(a)));
}

// Unique measurement locations with the precomputed distance matrix.
struct SiteSet {
  Eigen::VectorXd lat, lon;
  Eigen::MatrixXd dist;  // ns x ns, km, symmetric with zero diagonal

  Eigen::Index size() const { return lat.size(); }
};

inline SiteSet make_site_set(const Eigen::VectorXd& lat,
                             const Eigen::VectorXd& lon) {
  if (lat.size() != lon.size())
    throw validation_error("make_site_set: lat/lon size mismatch");
  SiteSet s;
  s.lat = lat;
  s.lon = lon;
  const Eigen::Index n = lat.size();
  s.dist.setZero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = great_circle_km(lat[i], lon[i], lat[j], lon[j]);
      s.dist(i, j) = d;
      s.dist(j, i) = d;
    }
  return s;
}

// Exponential correlation exp(-phi d); phi > 0 in 1/km.
inline Eigen::MatrixXd exp_correlation(const Eigen::MatrixXd& dist,
                                       double phi) {
  return (-phi * dist.array()).exp().matrix();
}

enum class CovKind { independent, separable, latent_factor, coregionalization };

inline const char* to_string(CovKind k) {
  switch (k) {
    case CovKind::independent: return "independent";
    case CovKind::separable: return "separable";
    case CovKind::latent_factor: return "latent_factor";
    case CovKind::coregionalization: return "coregionalization";
  }
  return "?";
}

// Cross-covariance of the site parameter field theta(S), stacked
// site-major: component (i, p) of the 12 ns vector is site i, parameter p.
//
//   Sigma[(i,p),(l,q)] = sum_j Lambda_pj Lambda_qj R_j(d_il)
//
// independent         Lambda = I, one decay per parameter
// separable           single R, V = Lambda Lambda^T
// latent_factor (r)   12 x r loadings, one decay per factor
// coregionalization   full-rank triangular loadings, 12 decays
struct CrossCovSpec {
  CovKind kind = CovKind::separable;
  Eigen::MatrixXd lambda;  // 12 x r loadings
  Eigen::VectorXd phi;     // decay per latent correlation (size 1 if separable)

  int n_factors() const { return static_cast<int>(lambda.cols()); }

  void validate() const {
    if (lambda.rows() != n_theta)
      throw validation_error("CrossCovSpec: lambda must have 12 rows");
    const int r = n_factors();
    switch (kind) {
      case CovKind::independent:
      case CovKind::coregionalization:
        if (r != n_theta)
          throw validation_error("CrossCovSpec: kind requires 12 factors");
        if (phi.size() != n_theta)
          throw validation_error("CrossCovSpec: kind requires 12 decays");
        break;
      case CovKind::separable:
        if (r != n_theta)
          throw validation_error("CrossCovSpec: separable needs square lambda");
        if (phi.size() != 1)
          throw validation_error("CrossCovSpec: separable has a single decay");
        break;
      case CovKind::latent_factor:
        if (r < 1 || r >= n_theta)
          throw validation_error("CrossCovSpec: latent factors need 1 <= r < 12");
        if (phi.size() != r)
          throw validation_error("CrossCovSpec: one decay per latent factor");
        break;
    }
    for (Eigen::Index j = 0; j < phi.size(); ++j)
      if (!(phi[j] > 0.0))
        throw validation_error("CrossCovSpec: decays must be positive");
  }
};

inline Eigen::MatrixXd build_cross_covariance(const CrossCovSpec& spec,
                                              const Eigen::MatrixXd& dist) {
  spec.validate();
  const Eigen::Index ns = dist.rows();
  const int r = spec.n_factors();
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(ns * n_theta, ns * n_theta);
  for (int j = 0; j < r; ++j) {
    const double phi_j =
        spec.kind == CovKind::separable ? spec.phi[0] : spec.phi[j];
    const Eigen::MatrixXd rj = exp_correlation(dist, phi_j);
    const Eigen::MatrixXd outer =
        spec.lambda.col(j) * spec.lambda.col(j).transpose();
    for (Eigen::Index i = 0; i < ns; ++i)
      for (Eigen::Index l = 0; l < ns; ++l)
        sigma.block(i * n_theta, l * n_theta, n_theta, n_theta) +=
            rj(i, l) * outer;
  }
  return sigma;
}

// Lower-triangular Cholesky with escalating diagonal jitter.  Correlation
// scale matrices here have unit-order diagonals, so absolute jitter is the
// right knob.  Gives up past 1e-6.
struct CholResult {
  Eigen::MatrixXd lower;
  double logdet = 0.0;
  double jitter = 0.0;
};

inline CholResult jittered_llt(const Eigen::MatrixXd& m,
                               const char* what = "matrix") {
  double jitter = 0.0;
  for (;;) {
    Eigen::MatrixXd work = m;
    if (jitter > 0.0)
      work.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(work);
    if (llt.info() == Eigen::Success) {
      CholResult r;
      r.lower = llt.matrixL();
      r.logdet = 2.0 * r.lower.diagonal().array().log().sum();
      r.jitter = jitter;
      return r;
    }
    jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
    if (jitter > 1e-6)
      throw numerical_error(std::string("Cholesky of ") + what +
                            " failed after jitter escalation to 1e-6 (size " +
                            std::to_string(m.rows()) + ")");
  }
}

// Precision form of the cross covariance, which is what the site-block
// Metropolis updates need.  Separable and independent kinds assemble Q
// from small inverses; the dense kinds pay one big factorisation.
struct CrossCovPrecision {
  Eigen::MatrixXd q;     // 12 ns x 12 ns, site-major
  double logdet = 0.0;   // log |Sigma| after any jitter
  double jitter = 0.0;   // largest diagonal jitter a factorization needed
  // Separable factors, kept for the conjugate updates that exploit them.
  Eigen::MatrixXd r_inv;  // ns x ns (separable only)
  Eigen::MatrixXd v_inv;  // 12 x 12 (separable only)
};

inline CrossCovPrecision build_precision(const CrossCovSpec& spec,
                                         const Eigen::MatrixXd& dist) {
  spec.validate();
  const Eigen::Index ns = dist.rows();
  CrossCovPrecision out;
  out.q.setZero(ns * n_theta, ns * n_theta);
  if (spec.kind == CovKind::separable) {
    const Eigen::MatrixXd r = exp_correlation(dist, spec.phi[0]);
    const Eigen::MatrixXd v = spec.lambda * spec.lambda.transpose();
    const CholResult cr = jittered_llt(r, "spatial correlation");
    const CholResult cv = jittered_llt(v, "parameter covariance");
    const Eigen::MatrixXd eye_ns = Eigen::MatrixXd::Identity(ns, ns);
    const Eigen::MatrixXd eye_p = Eigen::MatrixXd::Identity(n_theta, n_theta);
    out.r_inv = cr.lower.transpose().triangularView<Eigen::Upper>().solve(
        Eigen::MatrixXd(cr.lower.triangularView<Eigen::Lower>().solve(eye_ns)));
    out.v_inv = cv.lower.transpose().triangularView<Eigen::Upper>().solve(
        Eigen::MatrixXd(cv.lower.triangularView<Eigen::Lower>().solve(eye_p)));
    out.logdet = n_theta * cr.logdet + static_cast<double>(ns) * cv.logdet;
    out.jitter = std::max(cr.jitter, cv.jitter);
    for (Eigen::Index i = 0; i < ns; ++i)
      for (Eigen::Index l = 0; l < ns; ++l)
        out.q.block(i * n_theta, l * n_theta, n_theta, n_theta) =
            out.r_inv(i, l) * out.v_inv;
    return out;
  }
  if (spec.kind == CovKind::independent) {
    out.logdet = 0.0;
    for (int p = 0; p < n_theta; ++p) {
      const Eigen::MatrixXd rp = exp_correlation(dist, spec.phi[p]);
      const CholResult cr = jittered_llt(rp, "spatial correlation");
      const Eigen::MatrixXd rp_inv =
          cr.lower.transpose().triangularView<Eigen::Upper>().solve(
              Eigen::MatrixXd(cr.lower.triangularView<Eigen::Lower>().solve(
                  Eigen::MatrixXd::Identity(ns, ns))));
      out.logdet += cr.logdet;
      out.jitter = std::max(out.jitter, cr.jitter);
      for (Eigen::Index i = 0; i < ns; ++i)
        for (Eigen::Index l = 0; l < ns; ++l)
          out.q(i * n_theta + p, l * n_theta + p) = rp_inv(i, l);
    }
    return out;
  }
  const Eigen::MatrixXd sigma = build_cross_covariance(spec, dist);
  const CholResult cs = jittered_llt(sigma, "cross covariance");
  out.logdet = cs.logdet;
  out.jitter = cs.jitter;
  out.q = cs.lower.transpose().triangularView<Eigen::Upper>().solve(
      Eigen::MatrixXd(cs.lower.triangularView<Eigen::Lower>().solve(
          Eigen::MatrixXd::Identity(ns * n_theta, ns * n_theta))));
  return out;
}

// Gaussian log density of the stacked residual under the cross covariance,
// using the precision form.
inline double mgp_log_density(const Eigen::VectorXd& resid,
                              const CrossCovPrecision& prec) {
  const double quad = resid.dot(prec.q * resid);
  return -0.5 * (static_cast<double>(resid.size()) *
                     std::log(2.0 * 3.14159265358979323846) +
                 prec.logdet + quad);
}

// Free-parameter layout for the loading matrix of the latent-factor and
// coregionalization kinds: lower-triangular pattern, log scale on the
// diagonal for identifiability, standard normal priors on every entry.
inline int n_lambda_free(int r) { return r * n_theta - r * (r - 1) / 2; }

inline Eigen::MatrixXd lambda_from_free(const Eigen::VectorXd& free, int r) {
  if (free.size() != n_lambda_free(r))
    throw validation_error("lambda_from_free: wrong free-parameter count");
  Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(n_theta, r);
  Eigen::Index k = 0;
  for (int j = 0; j < r; ++j)
    for (int p = j; p < n_theta; ++p) {
      lam(p, j) = p == j ? std::exp(free[k]) : free[k];
      ++k;
    }
  return lam;
}

inline Eigen::VectorXd free_from_lambda(const Eigen::MatrixXd& lam) {
  const int r = static_cast<int>(lam.cols());
  Eigen::VectorXd free(n_lambda_free(r));
  Eigen::Index k = 0;
  for (int j = 0; j < r; ++j)
    for (int p = j; p < n_theta; ++p) {
      free[k] = p == j ? std::log(lam(p, j)) : lam(p, j);
      ++k;
    }
  return free;
}

}  // namespace firn

#endif
