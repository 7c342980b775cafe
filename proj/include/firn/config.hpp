#ifndef FIRN_CONFIG_HPP
#define FIRN_CONFIG_HPP

#include <cstdint>
#include <string>

#include "firn/model.hpp"

namespace firn {

struct ChainConfig {
  long n_iter = 5000;
  long n_burn = 1000;
  long thin = 5;
  int inner_repeats = 5;     // extra Metropolis passes over the theta sites
  long adapt_start = 200;    // sweeps of fixed proposals before adaptation
  long adapt_interval = 50;  // sweeps per acceptance window during burn-in
  // Target acceptance bands; step sizes adapt only while outside them.
  double accept_lo_uni = 0.2, accept_hi_uni = 0.6;
  double accept_lo_multi = 0.15, accept_hi_multi = 0.5;
  bool store_loglik = true;  // per-observation log likelihood block

  void validate() const {
    if (!(n_iter > 0) || !(n_burn >= 0) || n_burn >= n_iter)
      throw validation_error("ChainConfig: need 0 <= n_burn < n_iter");
    if (thin < 1) throw validation_error("ChainConfig: thin must be >= 1");
    if (inner_repeats < 1)
      throw validation_error("ChainConfig: inner_repeats must be >= 1");
    if (adapt_start < 0)
      throw validation_error("ChainConfig: adapt_start must be >= 0");
    if (adapt_interval < 1)
      throw validation_error("ChainConfig: adapt_interval must be >= 1");
    if (!(accept_lo_uni > 0.0) || !(accept_hi_uni > accept_lo_uni) ||
        !(accept_hi_uni < 1.0) || !(accept_lo_multi > 0.0) ||
        !(accept_hi_multi > accept_lo_multi) || !(accept_hi_multi < 1.0))
      throw validation_error("ChainConfig: acceptance bands must satisfy 0 < lo < hi < 1");
  }
};

// Synthetic-data generation settings.  Hyperparameters are either drawn
// from the PriorTable or pinned to the explicit truth values below.
struct SimulateConfig {
  int n_sites = 20;
  int n_obs_per_core = 150;
  double max_depth = 80.0;  // metres, equally spaced measurement grid
  double lat_min = -80.0, lat_max = -70.0;
  double lon_min = 100.0, lon_max = 140.0;
  double temp_min = 238.0, temp_max = 252.0;  // K
  double smb_min = 0.08, smb_max = 0.35;      // m w.e. / yr
  int max_field_draws = 20000;  // joint redraws before giving up on kappa_1 >= 0

  bool fixed_truth = false;
  Eigen::Matrix<double, 8, 1> gamma_truth{-0.5, 2.4, 6.35, 9.23, 9.97,
                                          0.0,  0.0, 0.0};
  double theta_sd_truth = 0.05;   // sd of every theta component about M gamma
  double phi_truth = 0.005;       // km^-1
  double log_tau2_truth = -7.0;   // expedition log scale
  double eta_truth = 0.0;
  double sigma2_tau_truth = 0.02;
  double nu_truth = 8.0;
  double beta_sd_truth = 0.0;     // scale of the smooth-deviation fields
  double phi_beta_truth = 0.005;  // km^-1

  void validate() const {
    if (n_sites < 2) throw validation_error("SimulateConfig: need >= 2 sites");
    if (n_obs_per_core < 1)
      throw validation_error("SimulateConfig: need >= 1 observation per core");
    if (!(max_depth > 0.0))
      throw validation_error("SimulateConfig: max_depth must be positive");
    if (!(lat_max > lat_min) || !(lon_max > lon_min))
      throw validation_error("SimulateConfig: empty spatial region");
    if (!(temp_min > 0.0) || !(temp_max >= temp_min) || !(smb_min > 0.0) ||
        !(smb_max >= smb_min))
      throw validation_error("SimulateConfig: bad covariate ranges");
    if (max_field_draws < 1)
      throw validation_error("SimulateConfig: max_field_draws must be >= 1");
  }
};

struct RunConfig {
  ModelSpec model;
  ChainConfig chain;
  SimulateConfig simulate;
  std::uint64_t seed = 1;
  int threads = 1;
  std::string cores_path;
  std::string covariates_path;
  std::string out_dir = ".";

  void validate() const {
    model.validate();
    chain.validate();
    simulate.validate();
    if (threads < 1) throw validation_error("RunConfig: threads must be >= 1");
  }
};

// Strict JSON round trip: unknown keys anywhere are rejected, every field
// is optional and defaults as declared above.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Canonical serialization (sorted keys, round-trip float formatting); the
// provenance hash is FNV-1a over exactly this string.
std::string serialize_run_config(const RunConfig& cfg);
std::string config_hash(const RunConfig& cfg);  // 16 hex digits

}  // namespace firn

#endif
