#ifndef FIRN_DATASET_HPP
#define FIRN_DATASET_HPP

#include <string>
#include <vector>

#include <Eigen/Core>

#include "firn/spatial_cov.hpp"

namespace firn {

// One core: a column of (depth, density) measurements at a location.
// depths are nonnegative and nondecreasing; densities are positive in
// Mg m^-3 (values above the ice density are legal measurement noise).
struct CoreRecord {
  std::string core_id;
  std::string expedition;
  double lat = 0.0;
  double lon = 0.0;
  double dx = 0.0;  // measurement thickness, m; 0 means derive from depth span
  Eigen::VectorXd depths;
  Eigen::VectorXd densities;

  Eigen::Index n_obs() const { return depths.size(); }
};

struct CovariateRow {
  double lat = 0.0;
  double lon = 0.0;
  double temperature = 0.0;  // K
  double smb = 0.0;          // m w.e. yr^-1
};

// Assembled analysis inputs.  Cores sharing a location (within 1e-6 deg)
// collapse onto one site; expeditions index the error-scale hierarchy.
struct CoreDataset {
  std::vector<CoreRecord> cores;  // canonical measurement order
  SiteSet sites;
  Eigen::VectorXd site_temperature;  // per site, K
  Eigen::VectorXd site_smb;          // per site, m w.e. yr^-1
  std::vector<int> site_of_core;
  std::vector<std::string> expeditions;  // first-appearance order
  std::vector<int> expedition_of_core;
  // True when every core of the expedition shares one dx, in which case
  // the measurement-support exponent is not identifiable and stays 0.
  std::vector<bool> expedition_constant_dx;

  Eigen::Index n_cores() const { return static_cast<Eigen::Index>(cores.size()); }
  Eigen::Index n_sites() const { return sites.size(); }
  Eigen::Index n_expeditions() const {
    return static_cast<Eigen::Index>(expeditions.size());
  }
  Eigen::Index n_obs() const;

  SiteCovariates<double> covariates(int site) const {
    return {site_temperature[site], site_smb[site]};
  }
};

// Validates and canonicalises records (fills missing dx, sorts each core's
// measurements by depth then density), then matches covariates to the
// deduplicated site list.  Throws validation_error with the offending core
// or location in the message.
CoreDataset build_dataset(std::vector<CoreRecord> cores,
                          const std::vector<CovariateRow>& covariates);

}  // namespace firn

#endif
