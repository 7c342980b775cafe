#ifndef FIRN_SEMIVARIOGRAM_HPP
#define FIRN_SEMIVARIOGRAM_HPP

#include <Eigen/Core>

#include "firn/spatial_cov.hpp"

namespace firn {

// Binned empirical semivariogram of a scalar site field with a weighted
// least-squares exponential fit gamma(h) = nugget + psill (1 - e^{-h/range}).
struct SemivariogramFit {
  Eigen::VectorXd bin_center;    // km
  Eigen::VectorXd semivariance;  // mean of squared half-differences per bin
  Eigen::VectorXi pair_count;
  double nugget = 0.0;
  double partial_sill = 0.0;
  double range_km = 0.0;  // e-folding distance; effective range is 3x
  bool converged = false;

  double model(double h) const;
};

SemivariogramFit fit_semivariogram(const Eigen::VectorXd& values,
                                   const SiteSet& sites, int n_bins);

}  // namespace firn

#endif
