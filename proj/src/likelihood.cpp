#include "firn/likelihood.hpp"

#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "firn/special.hpp"

namespace firn {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kLog2Pi = 1.8378770664093454836;
}  // namespace

double log_trunc_t(double y, double mu, double tau2, double nu) {
  if (!(y > 0.0)) return kNegInf;
  const double tau = std::sqrt(tau2);
  const double s = (y - mu) / tau;
  return student_t_logpdf(s, nu) - std::log(tau) -
         student_t_log_tail(-mu / tau, nu);
}

double log_trunc_normal(double y, double mu, double tau2) {
  if (!(y > 0.0)) return kNegInf;
  const double tau = std::sqrt(tau2);
  const double s = (y - mu) / tau;
  return -0.5 * (kLog2Pi + s * s) - std::log(tau) - normal_logcdf(mu / tau);
}

CoreDesign build_core_design(const ModelSpec& model, const CoreRecord& core,
                             const SiteCovariates<double>& cov,
                             const Eigen::Matrix<double, 12, 1>& theta12,
                             const Eigen::VectorXd& beta,
                             const SmoothingDesign* smooth) {
  CoreDesign d;
  const SiteTheta<double> th = unpack_theta(theta12);
  const UntransformedTheta<double> u = untransform(th);
  const auto geom = change_depths(u, cov, model.constants);
  if (!geom) return d;  // kappa_1 below the surface: out of support
  d.in_support = true;
  d.geom = *geom;
  d.z = design_matrix<double>(core.depths, d.geom, cov, model.constants);
  Eigen::VectorXd logit_mu =
      Eigen::VectorXd::Constant(core.n_obs(), u.alpha);
  for (int l = 0; l < 4; ++l) logit_mu += d.z.col(l) * d.geom.rates[l];
  if (model.smoothing && smooth != nullptr && core.n_obs() > 0) {
    d.h_perp = orthogonalized_covariates(smooth->h, d.z);
    logit_mu += d.h_perp * beta;
  }
  d.logit = logit_mu;
  d.mu.resize(core.n_obs());
  for (Eigen::Index i = 0; i < core.n_obs(); ++i)
    d.mu[i] = inverse_logit_density(logit_mu[i], model.constants);
  return d;
}

Eigen::VectorXd observation_loglik(const ErrorModel& err,
                                   const Eigen::VectorXd& densities,
                                   const Eigen::VectorXd& mu, double tau2,
                                   double nu) {
  Eigen::VectorXd ll(densities.size());
  if (err.family == ErrorModel::Family::student_t) {
    for (Eigen::Index i = 0; i < densities.size(); ++i)
      ll[i] = log_trunc_t(densities[i], mu[i], tau2, nu);
  } else {
    for (Eigen::Index i = 0; i < densities.size(); ++i)
      ll[i] = log_trunc_normal(densities[i], mu[i], tau2);
  }
  return ll;
}

double log_normal_density(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (kLog2Pi + std::log(var) + d * d / var);
}

double log_inv_gamma_density(double x, double shape, double scale) {
  if (!(x > 0.0)) return kNegInf;
  return shape * std::log(scale) - std::lgamma(shape) -
         (shape + 1.0) * std::log(x) - scale / x;
}

namespace {

double log_multigamma(double a, int p) {
  double s = 0.25 * p * (p - 1) * std::log(3.14159265358979323846);
  for (int j = 0; j < p; ++j) s += std::lgamma(a - 0.5 * j);
  return s;
}

}  // namespace

double log_inv_wishart_density(const Eigen::MatrixXd& v, double dof,
                               double scale_diag) {
  const int p = static_cast<int>(v.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(v);
  if (llt.info() != Eigen::Success) return kNegInf;
  const Eigen::MatrixXd l = llt.matrixL();
  const double logdet_v = 2.0 * l.diagonal().array().log().sum();
  const double tr_sv_inv =
      scale_diag *
      llt.solve(Eigen::MatrixXd::Identity(p, p)).trace();
  return 0.5 * dof * p * std::log(scale_diag) - 0.5 * dof * p * std::log(2.0) -
         log_multigamma(0.5 * dof, p) - 0.5 * (dof + p + 1.0) * logdet_v -
         0.5 * tr_sv_inv;
}

Eigen::VectorXd theta_residual_vector(const ParamState& state) {
  const Eigen::Index ns = state.n_sites();
  const Eigen::Matrix<double, 12, 1> mean = gamma_to_theta_mean(state.gamma);
  Eigen::VectorXd resid(ns * n_theta);
  for (Eigen::Index i = 0; i < ns; ++i)
    resid.segment(i * n_theta, n_theta) = state.theta.row(i).transpose() - mean;
  return resid;
}

double log_posterior(const ModelSpec& model, const CoreDataset& data,
                     const ParamState& state) {
  const PriorTable& pr = model.priors;
  const Eigen::Index nc = data.n_cores();
  const Eigen::Index ns = data.n_sites();

  // Hard support checks first.
  if (model.error.family == ErrorModel::Family::student_t &&
      !(state.nu >= pr.nu_lo && state.nu <= pr.nu_hi))
    return kNegInf;
  for (Eigen::Index j = 0; j < state.phi.size(); ++j) {
    const double inv = 1.0 / state.phi[j];
    if (!(inv > pr.phi_inv_lo && inv < pr.phi_inv_hi)) return kNegInf;
  }
  if (model.smoothing) {
    const double invb = 1.0 / state.phi_beta;
    if (!(invb > pr.phi_beta_inv_lo && invb < pr.phi_beta_inv_hi)) return kNegInf;
    for (Eigen::Index k = 0; k < state.sigma2_beta.size(); ++k)
      if (!(state.sigma2_beta[k] > 0.0)) return kNegInf;
  }
  if (model.error.hierarchical && !(state.sigma2_tau > 0.0)) return kNegInf;

  // Observation likelihood, one entry per core, combined pairwise so the
  // result does not depend on evaluation order elsewhere.
  std::vector<SmoothingDesign> smooth(nc);
  Eigen::VectorXd per_core(nc);
  for (Eigen::Index c = 0; c < nc; ++c) {
    const CoreRecord& core = data.cores[c];
    const int s = data.site_of_core[c];
    const SmoothingDesign* sd = nullptr;
    if (model.smoothing && core.n_obs() > 0) {
      smooth[c] = make_smoothing_design(core.depths, model.spline);
      sd = &smooth[c];
    }
    const Eigen::VectorXd beta =
        model.smoothing ? Eigen::VectorXd(state.beta.row(s).transpose())
                        : Eigen::VectorXd();
    const CoreDesign d = build_core_design(
        model, core, data.covariates(s), state.theta.row(s).transpose(), beta, sd);
    if (!d.in_support) return kNegInf;
    per_core[c] =
        core.n_obs() > 0
            ? core_loglik(model.error, core.densities, d.mu,
                          core_tau2(model, data, state, c), state.nu)
            : 0.0;
  }
  // Sites without measurements still need their theta inside the support,
  // which the loop above checked via each core.
  double lp = pairwise_sum(per_core);
  if (!std::isfinite(lp)) return kNegInf;

  // Hierarchical error-scale layer.
  if (model.error.hierarchical) {
    for (Eigen::Index c = 0; c < nc; ++c)
      lp += log_normal_density(state.log_tau2_core[c],
                               core_log_tau2_mean(model, data, state, c),
                               state.sigma2_tau);
  }

  // Spatial process on theta.
  const CrossCovSpec spec = cov_spec_from_state(model, state);
  const CrossCovPrecision prec = build_precision(spec, data.sites.dist);
  lp += mgp_log_density(theta_residual_vector(state), prec);

  // Smooth-deviation fields.
  if (model.smoothing) {
    const Eigen::MatrixXd rb = exp_correlation(data.sites.dist, state.phi_beta);
    const CholResult cb = jittered_llt(rb, "beta correlation");
    for (int k = 0; k < model.n_basis(); ++k) {
      const Eigen::VectorXd bk = state.beta.col(k);
      const Eigen::VectorXd w =
          cb.lower.triangularView<Eigen::Lower>().solve(bk);
      lp += -0.5 * (static_cast<double>(ns) *
                        (kLog2Pi + std::log(state.sigma2_beta[k])) +
                    cb.logdet + w.squaredNorm() / state.sigma2_beta[k]);
    }
  }

  // Hyperpriors.
  for (int j = 0; j < 8; ++j)
    lp += log_normal_density(state.gamma[j], pr.gamma_mean[j],
                             pr.gamma_sd[j] * pr.gamma_sd[j]);
  if (model.error.family == ErrorModel::Family::student_t)
    lp += -std::log(pr.nu_hi - pr.nu_lo);
  for (Eigen::Index m = 0; m < data.n_expeditions(); ++m) {
    lp += log_normal_density(state.log_tau2_exp[m], pr.log_tau2_mean,
                             pr.log_tau2_var);
    if (eta_is_free(model, data, static_cast<int>(m)))
      lp += log_normal_density(state.eta_exp[m], pr.eta_mean, pr.eta_var);
  }
  if (model.error.hierarchical)
    lp += log_inv_gamma_density(state.sigma2_tau, pr.sigma2_tau_shape,
                                pr.sigma2_tau_scale);
  if (model.smoothing) {
    for (int k = 0; k < model.n_basis(); ++k)
      lp += log_inv_gamma_density(state.sigma2_beta[k], pr.sigma2_beta_shape,
                                  pr.sigma2_beta_scale);
    lp += -std::log(pr.phi_beta_inv_hi - pr.phi_beta_inv_lo) -
          2.0 * std::log(state.phi_beta);
  }
  switch (model.cov_kind) {
    case CovKind::separable:
      lp += log_inv_wishart_density(state.v, pr.v_dof, pr.v_scale_diag);
      break;
    case CovKind::latent_factor:
    case CovKind::coregionalization:
      for (Eigen::Index k = 0; k < state.lambda_free.size(); ++k)
        lp += log_normal_density(state.lambda_free[k], 0.0,
                                 pr.lambda_sd * pr.lambda_sd);
      break;
    case CovKind::independent:
      break;
  }
  // 1/phi uniform, so p(phi) = phi^-2 / (hi - lo) on the inverted range.
  for (Eigen::Index j = 0; j < state.phi.size(); ++j)
    lp += -std::log(pr.phi_inv_hi - pr.phi_inv_lo) - 2.0 * std::log(state.phi[j]);

  return lp;
}

}  // namespace firn
