#ifndef FIRN_SAMPLER_HPP
#define FIRN_SAMPLER_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "firn/archive.hpp"
#include "firn/config.hpp"
#include "firn/dataset.hpp"
#include "firn/likelihood.hpp"
#include "firn/parallel.hpp"
#include "firn/rng.hpp"
#include "firn/smoothing.hpp"
#include "firn/state.hpp"

namespace firn {

// Haario accumulator and scaled proposal factor for one site's theta block.
// `chol` factors (2.38^2/12)(C + 1e-8 I); the tuned multiplier enters the
// proposal as sqrt(scale) so retuning never refactors.
struct SiteProposal {
  Eigen::Matrix<double, n_theta, n_theta> chol =
      Eigen::Matrix<double, n_theta, n_theta>::Zero();
  double scale = 1.0;
  long n = 0;  // sweeps accumulated into the empirical moments
  Eigen::Matrix<double, n_theta, 1> mean =
      Eigen::Matrix<double, n_theta, 1>::Zero();
  Eigen::Matrix<double, n_theta, n_theta> scatter =
      Eigen::Matrix<double, n_theta, n_theta>::Zero();
  long win_accepted = 0, win_proposed = 0;  // current adaptation window
  long accepted = 0, proposed = 0;          // for the acceptance report
};

struct ScalarProposal {
  double step = 0.5;
  long win_accepted = 0, win_proposed = 0;
  long accepted = 0, proposed = 0;
};

// Every step size and adaptation accumulator of one chain, checkpointable.
// Scalar families are sized to the model: beta is site-major n_sites x
// n_basis, eta entries stay untouched where the exponent is pinned.
struct ProposalState {
  std::vector<SiteProposal> theta;
  std::vector<ScalarProposal> beta;
  std::vector<ScalarProposal> log_tau2_core;
  std::vector<ScalarProposal> log_tau2_exp;
  std::vector<ScalarProposal> eta_exp;
  std::vector<ScalarProposal> phi;
  ScalarProposal phi_beta;
  ScalarProposal nu;
  ScalarProposal lambda;  // one joint spherical move over all free loadings
};

// Closed-form conditionals, exposed so the conjugacy oracle suite can check
// them against the canonical log posterior; the Gibbs steps draw from these.
struct GaussianConditional {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct IgConditional {
  double shape = 0.0;
  double scale = 0.0;
};

struct IwConditional {
  double dof = 0.0;
  Eigen::MatrixXd scale;
};

// One adaptive Metropolis-within-Gibbs chain.  Holds the dataset copy, the
// parameter state, cached per-core designs and likelihoods, the precision
// form of the theta cross covariance with g = Q (theta - 1 (x) M gamma),
// and the thinned draws recorded so far.  Step methods are public so tests
// can drive single blocks; each leaves every cache consistent.
class Chain {
 public:
  Chain(const ModelSpec& model, const CoreDataset& data,
        const ChainConfig& config, std::uint64_t seed);

  // Advances to n_iter sweeps and returns the archive.
  ChainArchive run();
  void run_sweeps(long n);
  ChainArchive archive() const;
  long sweep() const { return sweep_; }

  // Metropolis blocks; return whether the proposal was accepted.
  bool step_site_theta(int site);
  bool step_beta_scalar(int site, int k);
  bool step_log_tau2_core(int core);
  bool step_log_tau2_exp(int m);
  bool step_eta_exp(int m);
  bool step_phi(int j);
  bool step_phi_beta();
  bool step_nu();
  bool step_lambda();

  // Gibbs blocks.
  void gibbs_gamma();
  void gibbs_scale_hierarchy();
  void gibbs_sigma2_beta();
  void gibbs_v();

  GaussianConditional gamma_conditional() const;
  GaussianConditional scale_reg_conditional(int m) const;
  IgConditional sigma2_tau_conditional() const;
  IgConditional sigma2_beta_conditional(int k) const;
  IwConditional v_conditional() const;

  const ModelSpec& model() const { return model_; }
  const CoreDataset& data() const { return data_; }
  const ParamState& state() const { return state_; }
  ProposalState& proposals() { return prop_; }
  Philox& rng() { return rng_; }
  void set_pool(ThreadPool* pool) { pool_ = pool; }

  // Replaces the whole state (must be inside the posterior support) or just
  // the measured densities (same shapes; used by the joint-distribution
  // tests that alternate transitions with data redraws).
  void set_state(const ParamState& s);
  void replace_densities(const std::vector<Eigen::VectorXd>& densities);

  double current_log_posterior() const;

  void save_checkpoint(const std::string& path) const;
  static Chain resume_checkpoint(const ModelSpec& model,
                                 const CoreDataset& data,
                                 const ChainConfig& config,
                                 const std::string& path);

 private:
  struct CoreCache {
    CoreDesign d;
    Eigen::VectorXd base_logit;  // logit mean minus the smooth contribution
    Eigen::VectorXd obs_ll;
    double ll = 0.0;
  };

  void init_state();
  void init_proposals();
  void rebuild_caches();
  void seed_site_proposals();
  CoreCache make_core_cache(int c, const Eigen::Matrix<double, 12, 1>& theta12,
                            const Eigen::VectorXd& beta_row) const;
  void fill_obs_ll(int c, const Eigen::VectorXd& mu, double nu,
                   Eigen::VectorXd& obs_ll, double& ll) const;
  void rebuild_precision();
  void rebuild_beta_corr();
  void refresh_resid();

  double theta_log_ratio(int site, const Eigen::Matrix<double, 12, 1>& cand,
                         std::vector<CoreCache>* fresh) const;
  void do_one_sweep();
  void accumulate_theta_moments();
  void adapt_window();
  void refresh_site_chol(SiteProposal& p) const;
  void adapt_scalar(ScalarProposal& p, double lo, double hi) const;
  void locality_check() const;
  void record_draw();
  void reset_report_counters();

  ModelSpec model_;
  CoreDataset data_;
  ChainConfig config_;
  std::uint64_t seed_ = 0;
  Philox rng_;
  ParamState state_;
  ProposalState prop_;
  ThreadPool* pool_ = nullptr;

  std::vector<std::vector<int>> cores_of_site_;
  std::vector<std::vector<int>> cores_of_exp_;
  std::vector<long> obs_offset_;
  std::vector<SmoothingDesign> smooth_;  // fixed raw basis per core
  std::vector<CoreCache> core_;
  CrossCovPrecision prec_;
  Eigen::VectorXd resid_;
  Eigen::VectorXd g_;  // prec_.q * resid_
  Eigen::MatrixXd rbeta_inv_;
  double rbeta_logdet_ = 0.0;

  long sweep_ = 0;
  long recorded_ = 0;
  bool adapting_ = false;
  std::map<std::string, Eigen::MatrixXd> draws_;
  std::string block_;  // current update block, for error reports
};

ChainArchive run_chain(const ModelSpec& model, const CoreDataset& data,
                       const ChainConfig& config, std::uint64_t seed,
                       ThreadPool* pool = nullptr);

}  // namespace firn

#endif
