#ifndef FIRN_MODEL_HPP
#define FIRN_MODEL_HPP

#include <Eigen/Core>

#include "firn/common.hpp"
#include "firn/smoothing.hpp"
#include "firn/spatial_cov.hpp"

namespace firn {

// Observation error family.  `weighted` scales the per-core variance by
// dx^eta; `hierarchical` puts a lognormal layer between core and
// expedition scales instead of sharing one value.
struct ErrorModel {
  enum class Family { student_t, normal };
  Family family = Family::student_t;
  bool weighted = true;
  bool hierarchical = true;
};

inline const char* to_string(ErrorModel::Family f) {
  return f == ErrorModel::Family::student_t ? "student_t" : "normal";
}

// Hyperprior settings.  Defaults are the reference analysis choices; all
// entries can be overridden from the run config.
struct PriorTable {
  Eigen::Matrix<double, 8, 1> gamma_mean{-0.5, 2.4, 6.35, 9.23, 9.97, 0.0, 0.0, 0.0};
  Eigen::Matrix<double, 8, 1> gamma_sd{0.5, 0.2, 0.2, 0.2, 0.25, 1.0, 1.0, 1.0};
  double nu_lo = 4.0, nu_hi = 30.0;        // uniform bounds on t dof
  double log_tau2_mean = -7.0;             // expedition log scale, normal
  double log_tau2_var = 4.0;               //   (variance, not sd)
  double eta_mean = -8.0;                  // measurement-support exponent
  double eta_var = 4.0;
  double sigma2_tau_shape = 2.1;           // inverse gamma on the core-scale
  double sigma2_tau_scale = 0.1;           //   dispersion
  double v_dof = 13.0;                     // inverse Wishart on V (separable)
  double v_scale_diag = 1.0;               //   scale matrix = diag * I
  double phi_inv_lo = 10.0;                // uniform on 1/phi, km
  double phi_inv_hi = 1000.0;
  double sigma2_beta_shape = 2.1;          // inverse gamma on each basis scale
  double sigma2_beta_scale = 0.1;
  double phi_beta_inv_lo = 10.0;           // uniform on 1/phi_beta, km
  double phi_beta_inv_hi = 1000.0;
  double lambda_sd = 1.0;                  // normal prior on free loadings

  void validate() const {
    if (!(nu_lo >= 1.0) || !(nu_hi > nu_lo))
      throw validation_error("PriorTable: need 1 <= nu_lo < nu_hi");
    if (!(phi_inv_lo > 0.0) || !(phi_inv_hi > phi_inv_lo))
      throw validation_error("PriorTable: bad phi inverse-range bounds");
    if (!(phi_beta_inv_lo > 0.0) || !(phi_beta_inv_hi > phi_beta_inv_lo))
      throw validation_error("PriorTable: bad phi_beta inverse-range bounds");
    if (!(sigma2_tau_shape > 1.0) || !(sigma2_beta_shape > 1.0))
      throw validation_error("PriorTable: inverse gamma shapes must exceed 1");
    if (!(v_dof > static_cast<double>(n_theta) - 1.0))
      throw validation_error("PriorTable: inverse Wishart dof too small");
    for (int i = 0; i < 8; ++i)
      if (!(gamma_sd[i] > 0.0))
        throw validation_error("PriorTable: gamma sds must be positive");
  }
};

struct ModelSpec {
  ErrorModel error;
  CovKind cov_kind = CovKind::separable;
  int n_factors = n_theta;  // latent_factor only; 12 otherwise
  bool smoothing = true;
  SplineSpec spline;
  PhysicalConstants<double> constants;
  PriorTable priors;

  int n_basis() const { return smoothing ? spline.dim() : 0; }

  void validate() const {
    priors.validate();
    if (smoothing) spline.validate();
    if (cov_kind == CovKind::latent_factor) {
      if (n_factors < 1 || n_factors >= n_theta)
        throw validation_error("ModelSpec: latent factors need 1 <= r < 12");
    } else if (n_factors != n_theta) {
      throw validation_error("ModelSpec: only the latent_factor kind takes r != 12");
    }
    if (!(constants.rho_ice > 0.0))
      throw validation_error("ModelSpec: rho_ice must be positive");
  }
};

}  // namespace firn

#endif
