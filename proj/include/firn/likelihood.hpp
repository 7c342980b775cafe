#ifndef FIRN_LIKELIHOOD_HPP
#define FIRN_LIKELIHOOD_HPP

#include <optional>
#include <vector>

#include <Eigen/Core>

#include "firn/dataset.hpp"
#include "firn/model.hpp"
#include "firn/state.hpp"

namespace firn {

// log density of y ~ t_nu(mu, tau2) truncated to (0, inf); -inf for y <= 0.
double log_trunc_t(double y, double mu, double tau2, double nu);

// Same under a truncated normal (the comparison family).
double log_trunc_normal(double y, double mu, double tau2);

inline double log_observation_density(const ErrorModel& err, double y,
                                      double mu, double tau2, double nu) {
  return err.family == ErrorModel::Family::student_t
             ? log_trunc_t(y, mu, tau2, nu)
             : log_trunc_normal(y, mu, tau2);
}

// Everything about one core that depends on its site's theta and beta.
struct CoreDesign {
  bool in_support = false;
  StageGeometry<double> geom;
  Eigen::MatrixXd z;       // n_i x 4 piecewise linear design
  Eigen::MatrixXd h_perp;  // n_i x n_basis orthogonalised smooth basis
  Eigen::VectorXd logit;   // mean on the logit scale per measurement
  Eigen::VectorXd mu;      // density-scale mean per measurement
};

// Assemble the design for one core.  `smooth` is the core's fixed raw
// basis (null when smoothing is off); theta12/beta belong to its site.
CoreDesign build_core_design(const ModelSpec& model, const CoreRecord& core,
                             const SiteCovariates<double>& cov,
                             const Eigen::Matrix<double, 12, 1>& theta12,
                             const Eigen::VectorXd& beta,
                             const SmoothingDesign* smooth);

// Per-measurement log likelihood of a core given its mean profile.
Eigen::VectorXd observation_loglik(const ErrorModel& err,
                                   const Eigen::VectorXd& densities,
                                   const Eigen::VectorXd& mu, double tau2,
                                   double nu);

inline double core_loglik(const ErrorModel& err, const Eigen::VectorXd& densities,
                          const Eigen::VectorXd& mu, double tau2, double nu) {
  return pairwise_sum(observation_loglik(err, densities, mu, tau2, nu));
}

double log_normal_density(double x, double mean, double var);
double log_inv_gamma_density(double x, double shape, double scale);
double log_inv_wishart_density(const Eigen::MatrixXd& v, double dof,
                               double scale_diag);

// Stacked site-major theta residual theta(S) - 1 (x) M gamma.
Eigen::VectorXd theta_residual_vector(const ParamState& state);

// Canonical from-scratch evaluation of the full log posterior (likelihood,
// latent layers and all hyperpriors, including normalising constants).
// Out-of-support states return -inf.  The adaptive sampler keeps cached
// pieces of this quantity; its debug mode cross-checks against this one.
double log_posterior(const ModelSpec& model, const CoreDataset& data,
                     const ParamState& state);

}  // namespace firn

#endif
