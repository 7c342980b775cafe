#ifndef FIRN_STATE_HPP
#define FIRN_STATE_HPP

#include <Eigen/Core>

#include "firn/dataset.hpp"
#include "firn/model.hpp"

namespace firn {

// Full parameter state of one chain.  Which members are live depends on
// the ModelSpec: beta and its hypers exist only with smoothing, V only for
// the separable kind, lambda_free only for the loading-matrix kinds,
// log_tau2_core only in the hierarchical error model.
struct ParamState {
  Eigen::Matrix<double, 8, 1> gamma;
  Eigen::MatrixXd theta;        // n_sites x 12, rows are sites
  Eigen::MatrixXd beta;         // n_sites x n_basis
  Eigen::MatrixXd v;            // 12 x 12 (separable)
  Eigen::VectorXd lambda_free;  // loading parameters (latent/coreg)
  Eigen::VectorXd phi;          // spatial decays of the theta field
  double phi_beta = 0.01;
  Eigen::VectorXd sigma2_beta;  // per basis column
  double nu = 17.0;
  double sigma2_tau = 0.1;
  Eigen::VectorXd log_tau2_core;  // per core (hierarchical)
  Eigen::VectorXd log_tau2_exp;   // per expedition
  Eigen::VectorXd eta_exp;        // per expedition; 0 where pinned

  Eigen::Index n_sites() const { return theta.rows(); }
};

// Loading/decay view of the current state, in the form the covariance
// builders consume.
inline CrossCovSpec cov_spec_from_state(const ModelSpec& model,
                                        const ParamState& state) {
  CrossCovSpec spec;
  spec.kind = model.cov_kind;
  spec.phi = state.phi;
  switch (model.cov_kind) {
    case CovKind::independent:
      spec.lambda = Eigen::MatrixXd::Identity(n_theta, n_theta);
      break;
    case CovKind::separable: {
      Eigen::LLT<Eigen::MatrixXd> llt(state.v);
      if (llt.info() != Eigen::Success)
        spec.lambda = jittered_llt(state.v, "V").lower;
      else
        spec.lambda = llt.matrixL();
      break;
    }
    case CovKind::latent_factor:
      spec.lambda = lambda_from_free(state.lambda_free, model.n_factors);
      break;
    case CovKind::coregionalization:
      spec.lambda = lambda_from_free(state.lambda_free, n_theta);
      break;
  }
  return spec;
}

// Per-core error variance under the four error-model variants.
inline double core_tau2(const ModelSpec& model, const CoreDataset& data,
                        const ParamState& state, Eigen::Index core) {
  const int m = data.expedition_of_core[core];
  if (model.error.hierarchical) return std::exp(state.log_tau2_core[core]);
  double lt = state.log_tau2_exp[m];
  if (model.error.weighted)
    lt += state.eta_exp[m] * std::log(data.cores[core].dx);
  return std::exp(lt);
}

// Mean of log tau2_i in the hierarchical layer.
inline double core_log_tau2_mean(const ModelSpec& model, const CoreDataset& data,
                                 const ParamState& state, Eigen::Index core) {
  const int m = data.expedition_of_core[core];
  double mean = state.log_tau2_exp[m];
  if (model.error.weighted)
    mean += state.eta_exp[m] * std::log(data.cores[core].dx);
  return mean;
}

// Whether eta_m is a free parameter: only in weighted models, and only for
// expeditions whose cores vary in measurement thickness.
inline bool eta_is_free(const ModelSpec& model, const CoreDataset& data, int m) {
  return model.error.weighted && !data.expedition_constant_dx[m];
}

}  // namespace firn

#endif
