#include "firn/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <limits>
#include <sstream>
#include <utility>

#include <Eigen/Cholesky>

#include "firn/io.hpp"
#include "firn/model_core.hpp"
#include "firn/spatial_cov.hpp"

namespace firn {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kHaario = 2.38 * 2.38 / 12.0;
constexpr double kHaarioRidge = 1e-8;
constexpr long kMinMomentSweeps = 20;  // before that the seed covariance rules

using Matrix12 = Eigen::Matrix<double, n_theta, n_theta>;
using Vector12 = Eigen::Matrix<double, n_theta, 1>;

int n_phi_components(const ModelSpec& m) {
  switch (m.cov_kind) {
    case CovKind::independent:
      return n_theta;
    case CovKind::separable:
      return 1;
    case CovKind::latent_factor:
      return m.n_factors;
    case CovKind::coregionalization:
      return n_theta;
  }
  return 0;
}

// Folds a real into [lo, hi] by reflection at both walls; the fold is an
// involution, which keeps the random walk symmetric.
double reflect_into(double x, double lo, double hi) {
  const double w2 = 2.0 * (hi - lo);
  double t = std::fmod(x - lo, w2);
  if (t < 0.0) t += w2;
  return lo + (t <= hi - lo ? t : w2 - t);
}

double log_normal_delta(double xn, double xo, double mean, double var) {
  const double dn = xn - mean;
  const double dz = xo - mean;
  return -0.5 * (dn * dn - dz * dz) / var;
}

double rate_of(long accepted, long proposed) {
  return proposed > 0 ? static_cast<double>(accepted) /
                            static_cast<double>(proposed)
                      : 0.0;
}

double u64_hi(std::uint64_t x) { return static_cast<double>(x >> 32); }
double u64_lo(std::uint64_t x) {
  return static_cast<double>(x & 0xffffffffull);
}
std::uint64_t u64_join(double hi, double lo) {
  return (static_cast<std::uint64_t>(hi) << 32) |
         static_cast<std::uint64_t>(lo);
}

Eigen::MatrixXd scalar_family_matrix(const std::vector<ScalarProposal>& v) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(v.size()), 5);
  for (std::size_t i = 0; i < v.size(); ++i)
    m.row(static_cast<Eigen::Index>(i))
        << v[i].step, static_cast<double>(v[i].win_accepted),
        static_cast<double>(v[i].win_proposed),
        static_cast<double>(v[i].accepted), static_cast<double>(v[i].proposed);
  return m;
}

void scalar_family_restore(const Eigen::MatrixXd& m,
                           std::vector<ScalarProposal>& v,
                           const std::string& name) {
  if (m.rows() != static_cast<Eigen::Index>(v.size()) || m.cols() != 5)
    throw parse_error("checkpoint block " + name +
                      " does not match the chain configuration");
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto r = m.row(static_cast<Eigen::Index>(i));
    v[i].step = r[0];
    v[i].win_accepted = static_cast<long>(r[1]);
    v[i].win_proposed = static_cast<long>(r[2]);
    v[i].accepted = static_cast<long>(r[3]);
    v[i].proposed = static_cast<long>(r[4]);
  }
}

void expect_dims(const Eigen::MatrixXd& m, Eigen::Index rows,
                 Eigen::Index cols, const std::string& name) {
  if (m.rows() != rows || m.cols() != cols)
    throw parse_error("checkpoint block " + name +
                      " does not match the chain configuration");
}

// FNV-1a over a canonical description of everything the draws depend on,
// so a checkpoint cannot silently continue under a different setup even
// when the array shapes happen to agree.
std::string chain_digest(const ModelSpec& m, const CoreDataset& d,
                         const ChainConfig& c) {
  std::ostringstream s;
  s << std::setprecision(17);
  s << static_cast<int>(m.error.family) << '|' << m.error.weighted << '|'
    << m.error.hierarchical << '|' << static_cast<int>(m.cov_kind) << '|'
    << m.n_factors << '|' << m.smoothing << '|' << m.spline.degree << '|'
    << m.spline.n_knots << '|' << m.constants.rho_ice << '|';
  const PriorTable& p = m.priors;
  for (int j = 0; j < 8; ++j) s << p.gamma_mean[j] << ',' << p.gamma_sd[j] << '|';
  s << p.nu_lo << '|' << p.nu_hi << '|' << p.log_tau2_mean << '|'
    << p.log_tau2_var << '|' << p.eta_mean << '|' << p.eta_var << '|'
    << p.sigma2_tau_shape << '|' << p.sigma2_tau_scale << '|' << p.v_dof << '|'
    << p.v_scale_diag << '|' << p.phi_inv_lo << '|' << p.phi_inv_hi << '|'
    << p.sigma2_beta_shape << '|' << p.sigma2_beta_scale << '|'
    << p.phi_beta_inv_lo << '|' << p.phi_beta_inv_hi << '|' << p.lambda_sd
    << '|';
  s << c.n_iter << '|' << c.n_burn << '|' << c.thin << '|' << c.inner_repeats
    << '|' << c.adapt_start << '|' << c.adapt_interval << '|'
    << c.accept_lo_uni << '|' << c.accept_hi_uni << '|' << c.accept_lo_multi
    << '|' << c.accept_hi_multi << '|' << c.store_loglik << '|';
  s << d.n_sites() << '|' << d.n_cores() << '|' << d.n_expeditions() << '|'
    << d.n_obs();
  const std::string text = s.str();
  std::uint64_t h = 1469598103934665603ull;
  for (const char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(h));
  return hex;
}

}  // namespace

Chain::Chain(const ModelSpec& model, const CoreDataset& data,
             const ChainConfig& config, std::uint64_t seed)
    : model_(model),
      data_(data),
      config_(config),
      seed_(seed),
      rng_(seed, 0) {
  model_.validate();
  config_.validate();
  const int nc = static_cast<int>(data_.n_cores());
  const int ns = static_cast<int>(data_.n_sites());

  cores_of_site_.assign(static_cast<std::size_t>(ns), {});
  cores_of_exp_.assign(static_cast<std::size_t>(data_.n_expeditions()), {});
  obs_offset_.assign(static_cast<std::size_t>(nc), 0);
  long off = 0;
  for (int c = 0; c < nc; ++c) {
    cores_of_site_[static_cast<std::size_t>(data_.site_of_core[c])].push_back(c);
    cores_of_exp_[static_cast<std::size_t>(data_.expedition_of_core[c])]
        .push_back(c);
    obs_offset_[static_cast<std::size_t>(c)] = off;
    off += data_.cores[static_cast<std::size_t>(c)].n_obs();
  }

  smooth_.resize(static_cast<std::size_t>(nc));
  if (model_.smoothing)
    for (int c = 0; c < nc; ++c)
      if (data_.cores[static_cast<std::size_t>(c)].n_obs() > 0)
        smooth_[static_cast<std::size_t>(c)] = make_smoothing_design(
            data_.cores[static_cast<std::size_t>(c)].depths, model_.spline);

  init_state();
  init_proposals();
  rebuild_caches();
  seed_site_proposals();

  const long total =
      (config_.n_iter - config_.n_burn + config_.thin - 1) / config_.thin;
  const auto alloc = [&](const std::string& name, Eigen::Index dim) {
    draws_[name] = Eigen::MatrixXd::Zero(total, dim);
  };
  alloc("gamma", 8);
  alloc("theta", static_cast<Eigen::Index>(ns) * n_theta);
  alloc("phi", state_.phi.size());
  alloc("log_tau2_exp", data_.n_expeditions());
  if (model_.error.weighted) alloc("eta_exp", data_.n_expeditions());
  if (model_.error.hierarchical) {
    alloc("sigma2_tau", 1);
    alloc("log_tau2_core", nc);
  }
  if (model_.smoothing) {
    alloc("beta", static_cast<Eigen::Index>(ns) * model_.n_basis());
    alloc("phi_beta", 1);
    alloc("sigma2_beta", model_.n_basis());
  }
  if (model_.error.family == ErrorModel::Family::student_t) alloc("nu", 1);
  if (model_.cov_kind == CovKind::separable) alloc("v", n_theta * n_theta);
  if (state_.lambda_free.size() > 0)
    alloc("lambda_free", state_.lambda_free.size());
  if (config_.store_loglik) alloc("loglik", data_.n_obs());
}

void Chain::init_state() {
  const PriorTable& pr = model_.priors;
  const Eigen::Index ns = data_.n_sites();
  const Eigen::Index nc = data_.n_cores();
  const Eigen::Index nm = data_.n_expeditions();

  state_.gamma = pr.gamma_mean;
  const Vector12 mtheta = gamma_to_theta_mean(state_.gamma);
  state_.theta = mtheta.transpose().replicate(ns, 1);
  state_.beta = Eigen::MatrixXd::Zero(ns, model_.n_basis());

  // Prior mode of the inverse Wishart seeds both V and the loadings.
  const double vmode = pr.v_scale_diag / (pr.v_dof + n_theta + 1.0);
  state_.v = vmode * Matrix12::Identity();
  if (model_.cov_kind == CovKind::latent_factor ||
      model_.cov_kind == CovKind::coregionalization) {
    const int r = model_.cov_kind == CovKind::latent_factor ? model_.n_factors
                                                            : n_theta;
    Eigen::MatrixXd lam = Eigen::MatrixXd::Zero(n_theta, r);
    for (int j = 0; j < r; ++j) lam(j, j) = std::sqrt(vmode);
    state_.lambda_free = free_from_lambda(lam);
  } else {
    state_.lambda_free.resize(0);
  }

  state_.phi = Eigen::VectorXd::Constant(
      n_phi_components(model_), 1.0 / std::sqrt(pr.phi_inv_lo * pr.phi_inv_hi));
  state_.phi_beta = 1.0 / std::sqrt(pr.phi_beta_inv_lo * pr.phi_beta_inv_hi);
  state_.sigma2_beta = Eigen::VectorXd::Constant(
      model_.n_basis(), pr.sigma2_beta_scale / (pr.sigma2_beta_shape - 1.0));
  state_.nu = 0.5 * (pr.nu_lo + pr.nu_hi);
  state_.sigma2_tau = pr.sigma2_tau_scale / (pr.sigma2_tau_shape - 1.0);
  state_.log_tau2_core = model_.error.hierarchical
                             ? Eigen::VectorXd::Constant(nc, pr.log_tau2_mean)
                             : Eigen::VectorXd();
  state_.log_tau2_exp = Eigen::VectorXd::Constant(nm, pr.log_tau2_mean);
  state_.eta_exp = Eigen::VectorXd::Zero(nm);
}

void Chain::init_proposals() {
  const std::size_t ns = static_cast<std::size_t>(data_.n_sites());
  const std::size_t nc = static_cast<std::size_t>(data_.n_cores());
  const std::size_t nm = static_cast<std::size_t>(data_.n_expeditions());
  const std::size_t nb = static_cast<std::size_t>(model_.n_basis());

  prop_.theta.assign(ns, SiteProposal{});
  prop_.beta.assign(ns * nb, ScalarProposal{0.1, 0, 0, 0, 0});
  prop_.log_tau2_core.assign(model_.error.hierarchical ? nc : 0,
                             ScalarProposal{0.6, 0, 0, 0, 0});
  prop_.log_tau2_exp.assign(model_.error.hierarchical ? 0 : nm,
                            ScalarProposal{0.6, 0, 0, 0, 0});
  prop_.eta_exp.assign(model_.error.hierarchical ? 0 : nm,
                       ScalarProposal{0.5, 0, 0, 0, 0});
  prop_.phi.assign(static_cast<std::size_t>(state_.phi.size()),
                   ScalarProposal{0.4, 0, 0, 0, 0});
  prop_.phi_beta = ScalarProposal{0.4, 0, 0, 0, 0};
  prop_.nu = ScalarProposal{2.0, 0, 0, 0, 0};
  prop_.lambda = ScalarProposal{0.1, 0, 0, 0, 0};
}

Chain::CoreCache Chain::make_core_cache(
    int c, const Eigen::Matrix<double, 12, 1>& theta12,
    const Eigen::VectorXd& beta_row) const {
  const CoreRecord& core = data_.cores[static_cast<std::size_t>(c)];
  const int s = data_.site_of_core[static_cast<std::size_t>(c)];
  const SmoothingDesign* sd =
      (model_.smoothing && core.n_obs() > 0)
          ? &smooth_[static_cast<std::size_t>(c)]
          : nullptr;
  CoreCache cc;
  cc.d = build_core_design(model_, core, data_.covariates(s), theta12,
                           beta_row, sd);
  if (!cc.d.in_support) return cc;
  if (sd != nullptr)
    cc.base_logit = cc.d.logit - cc.d.h_perp * beta_row;
  else
    cc.base_logit = cc.d.logit;
  fill_obs_ll(c, cc.d.mu, state_.nu, cc.obs_ll, cc.ll);
  return cc;
}

void Chain::fill_obs_ll(int c, const Eigen::VectorXd& mu, double nu,
                        Eigen::VectorXd& obs_ll, double& ll) const {
  const CoreRecord& core = data_.cores[static_cast<std::size_t>(c)];
  if (core.n_obs() == 0) {
    obs_ll.resize(0);
    ll = 0.0;
    return;
  }
  obs_ll = observation_loglik(model_.error, core.densities, mu,
                              core_tau2(model_, data_, state_, c), nu);
  ll = pairwise_sum(obs_ll);
}

void Chain::rebuild_caches() {
  const PriorTable& pr = model_.priors;
  if (model_.error.family == ErrorModel::Family::student_t &&
      !(state_.nu >= pr.nu_lo && state_.nu <= pr.nu_hi))
    throw validation_error("chain state outside support: nu");
  for (Eigen::Index j = 0; j < state_.phi.size(); ++j) {
    const double inv = 1.0 / state_.phi[j];
    if (!(inv > pr.phi_inv_lo && inv < pr.phi_inv_hi))
      throw validation_error("chain state outside support: phi");
  }
  if (model_.smoothing) {
    const double invb = 1.0 / state_.phi_beta;
    if (!(invb > pr.phi_beta_inv_lo && invb < pr.phi_beta_inv_hi))
      throw validation_error("chain state outside support: phi_beta");
    for (Eigen::Index k = 0; k < state_.sigma2_beta.size(); ++k)
      if (!(state_.sigma2_beta[k] > 0.0))
        throw validation_error("chain state outside support: sigma2_beta");
  }
  if (model_.error.hierarchical && !(state_.sigma2_tau > 0.0))
    throw validation_error("chain state outside support: sigma2_tau");

  const int nc = static_cast<int>(data_.n_cores());
  core_.assign(static_cast<std::size_t>(nc), CoreCache{});
  const auto build_one = [&](long c) {
    const int s = data_.site_of_core[static_cast<std::size_t>(c)];
    const Eigen::VectorXd beta_row =
        model_.smoothing ? Eigen::VectorXd(state_.beta.row(s).transpose())
                         : Eigen::VectorXd();
    core_[static_cast<std::size_t>(c)] = make_core_cache(
        static_cast<int>(c), state_.theta.row(s).transpose(), beta_row);
  };
  if (pool_ != nullptr)
    pool_->for_index(nc, build_one);
  else
    for (long c = 0; c < nc; ++c) build_one(c);
  for (int c = 0; c < nc; ++c)
    if (!core_[static_cast<std::size_t>(c)].d.in_support)
      throw validation_error(
          "chain state outside support (kappa_1 < 0) at core " +
          data_.cores[static_cast<std::size_t>(c)].core_id);

  resid_ = theta_residual_vector(state_);
  rebuild_precision();
  rebuild_beta_corr();
}

void Chain::rebuild_precision() {
  prec_ = build_precision(cov_spec_from_state(model_, state_),
                          data_.sites.dist);
  g_ = prec_.q * resid_;
}

void Chain::rebuild_beta_corr() {
  if (!model_.smoothing) {
    rbeta_inv_.resize(0, 0);
    rbeta_logdet_ = 0.0;
    return;
  }
  const Eigen::MatrixXd rb =
      exp_correlation(data_.sites.dist, state_.phi_beta);
  const CholResult cb = jittered_llt(rb, "beta correlation");
  const Eigen::Index ns = data_.n_sites();
  rbeta_inv_ = cb.lower.transpose().triangularView<Eigen::Upper>().solve(
      Eigen::MatrixXd(cb.lower.triangularView<Eigen::Lower>().solve(
          Eigen::MatrixXd::Identity(ns, ns))));
  rbeta_logdet_ = cb.logdet;
}

void Chain::refresh_resid() {
  resid_ = theta_residual_vector(state_);
  g_ = prec_.q * resid_;
}

double Chain::theta_log_ratio(int site,
                              const Eigen::Matrix<double, 12, 1>& cand,
                              std::vector<CoreCache>* fresh) const {
  double dll = 0.0;
  const Eigen::VectorXd beta_row =
      model_.smoothing ? Eigen::VectorXd(state_.beta.row(site).transpose())
                       : Eigen::VectorXd();
  for (const int c : cores_of_site_[static_cast<std::size_t>(site)]) {
    CoreCache cc = make_core_cache(c, cand, beta_row);
    if (!cc.d.in_support) return kNegInf;
    dll += cc.ll - core_[static_cast<std::size_t>(c)].ll;
    if (fresh != nullptr) fresh->push_back(std::move(cc));
  }
  const Vector12 delta = cand - state_.theta.row(site).transpose();
  const Eigen::Index at = static_cast<Eigen::Index>(site) * n_theta;
  const double dquad = 2.0 * delta.dot(g_.segment(at, n_theta)) +
                       delta.dot(prec_.q.block(at, at, n_theta, n_theta) * delta);
  return dll - 0.5 * dquad;
}

bool Chain::step_site_theta(int site) {
  SiteProposal& p = prop_.theta[static_cast<std::size_t>(site)];
  const Eigen::VectorXd z = normal_vector(rng_, n_theta);
  const Vector12 delta = std::sqrt(p.scale) * (p.chol * z);
  const Vector12 cand = state_.theta.row(site).transpose() + delta;
  std::vector<CoreCache> fresh;
  const double lr = theta_log_ratio(site, cand, &fresh);
  const double u = rng_.uniform();
  ++p.proposed;
  if (adapting_) ++p.win_proposed;
  if (!(std::log(u) < lr)) return false;
  ++p.accepted;
  if (adapting_) ++p.win_accepted;
  state_.theta.row(site) = cand.transpose();
  const auto& idx = cores_of_site_[static_cast<std::size_t>(site)];
  for (std::size_t k = 0; k < idx.size(); ++k)
    core_[static_cast<std::size_t>(idx[k])] = std::move(fresh[k]);
  const Eigen::Index at = static_cast<Eigen::Index>(site) * n_theta;
  resid_.segment(at, n_theta) += delta;
  g_ += prec_.q.middleCols(at, n_theta) * delta;
  return true;
}

bool Chain::step_beta_scalar(int site, int k) {
  if (!model_.smoothing) return false;
  const int nb = model_.n_basis();
  ScalarProposal& p =
      prop_.beta[static_cast<std::size_t>(site) * static_cast<std::size_t>(nb) +
                 static_cast<std::size_t>(k)];
  const double delta = p.step * rng_.normal();
  const double u = rng_.uniform();
  ++p.proposed;
  if (adapting_) ++p.win_proposed;

  Eigen::VectorXd row = state_.beta.row(site).transpose();
  row[k] += delta;
  double dll = 0.0;
  struct CandProfile {
    int core;
    Eigen::VectorXd logit, mu, obs_ll;
    double ll;
  };
  std::vector<CandProfile> upd;
  for (const int c : cores_of_site_[static_cast<std::size_t>(site)]) {
    const CoreCache& cc = core_[static_cast<std::size_t>(c)];
    if (data_.cores[static_cast<std::size_t>(c)].n_obs() == 0) continue;
    CandProfile cp;
    cp.core = c;
    cp.logit = cc.base_logit + cc.d.h_perp * row;
    cp.mu.resize(cp.logit.size());
    for (Eigen::Index i = 0; i < cp.logit.size(); ++i)
      cp.mu[i] = inverse_logit_density(cp.logit[i], model_.constants);
    fill_obs_ll(c, cp.mu, state_.nu, cp.obs_ll, cp.ll);
    dll += cp.ll - cc.ll;
    upd.push_back(std::move(cp));
  }
  const Eigen::VectorXd bk = state_.beta.col(k);
  const double pb = rbeta_inv_.row(site).dot(bk) / state_.sigma2_beta[k];
  const double pii = rbeta_inv_(site, site) / state_.sigma2_beta[k];
  const double dprior = -(delta * pb + 0.5 * delta * delta * pii);
  if (!(std::log(u) < dll + dprior)) return false;
  ++p.accepted;
  if (adapting_) ++p.win_accepted;
  state_.beta(site, k) += delta;
  for (auto& cp : upd) {
    CoreCache& cc = core_[static_cast<std::size_t>(cp.core)];
    cc.d.logit = std::move(cp.logit);
    cc.d.mu = std::move(cp.mu);
    cc.obs_ll = std::move(cp.obs_ll);
    cc.ll = cp.ll;
  }
  return true;
}

bool Chain::step_log_tau2_core(int core) {
  if (!model_.error.hierarchical) return false;
  ScalarProposal& p = prop_.log_tau2_core[static_cast<std::size_t>(core)];
  const double delta = p.step * rng_.normal();
  const double u = rng_.uniform();
  ++p.proposed;
  if (adapting_) ++p.win_proposed;

  const double cur = state_.log_tau2_core[core];
  const double cand = cur + delta;
  CoreCache& cc = core_[static_cast<std::size_t>(core)];
  Eigen::VectorXd obs;
  double ll = 0.0;
  if (data_.cores[static_cast<std::size_t>(core)].n_obs() > 0) {
    obs = observation_loglik(model_.error,
                             data_.cores[static_cast<std::size_t>(core)].densities,
                             cc.d.mu, std::exp(cand), state_.nu);
    ll = pairwise_sum(obs);
  }
  const double dhier =
      log_normal_delta(cand, cur, core_log_tau2_mean(model_, data_, state_, core),
                       state_.sigma2_tau);
  if (!(std::log(u) < (ll - cc.ll) + dhier)) return false;
  ++p.accepted;
  if (adapting_) ++p.win_accepted;
  state_.log_tau2_core[core] = cand;
  cc.obs_ll = std::move(obs);
  cc.ll = ll;
  return true;
}

bool Chain::step_log_tau2_exp(int m) {
  if (model_.error.hierarchical) return false;
  ScalarProposal& p = prop_.log_tau2_exp[static_cast<std::size_t>(m)];
  const double delta = p.step * rng_.normal();
  const double u = rng_.uniform();
  ++p.proposed;
  if (adapting_) ++p.win_proposed;

  const PriorTable& pr = model_.priors;
  const double cur = state_.log_tau2_exp[m];
  const double cand = cur + delta;
  double dll = 0.0;
  std::vector<std::pair<int, Eigen::VectorXd>> upd;
  std::vector<double> lls;
  for (const int c : cores_of_exp_[static_cast<std::size_t>(m)]) {
    const CoreRecord& rec = data_.cores[static_cast<std::size_t>(c)];
    if (rec.n_obs() == 0) continue;
    double lt = cand;
    if (model_.error.weighted) lt += state_.eta_exp[m] * std::log(rec.dx);
    Eigen::VectorXd obs = observation_loglik(
        model_.error, rec.densities, core_[static_cast<std::size_t>(c)].d.mu,
        std::exp(lt), state_.nu);
    const double ll = pairwise_sum(obs);
    dll += ll - core_[static_cast<std::size_t>(c)].ll;
    upd.emplace_back(c, std::move(obs));
    lls.push_back(ll);
  }
  const double dprior =
      log_normal_delta(cand, cur, pr.log_tau2_mean, pr.log_tau2_var);
  if (!(std::log(u) < dll + dprior)) return false;
  ++p.accepted;
  if (adapting_) ++p.win_accepted;
  state_.log_tau2_exp[m] = cand;
  for (std::size_t i = 0; i < upd.size(); ++i) {
    CoreCache& cc = core_[static_cast<std::size_t>(upd[i].first)];
    cc.obs_ll = std::move(upd[i].second);
    cc.ll = lls[i];
  }
  return true;
}

bool Chain::step_eta_exp(int m) {
  if (model_.error.hierarchical || !eta_is_free(model_, data_, m)) return false;
  ScalarProposal& p = prop_.eta_exp[static_cast<std::size_t>(m)];
  const double delta = p.step * rng_.normal();
  const double u = rng_.uniform();
  ++p.proposed;
  if (adapting_) ++p.win_proposed;

  const PriorTable& pr = model_.priors;
  const double cur = state_.eta_exp[m];
  const double cand = cur + delta;
  double dll = 0.0;
  std::vector<std::pair<int, Eigen::VectorXd>> upd;
  std::vector<double> lls;
  for (const int c : cores_of_exp_[static_cast<std::size_t>(m)]) {
    const CoreRecord& rec = data_.cores[static_cast<std::size_t>(c)];
    if (rec.n_obs() == 0) continue;
    const double lt = state_.log_tau2_exp[m] + cand * std::log(rec.dx);
    Eigen::VectorXd obs = observation_loglik(
        model_.error, rec.densities, core_[static_cast<std::size_t>(c)].d.mu,
        std::exp(lt), state_.nu);
    const double ll = pairwise_sum(obs);
    dll += ll - core_[static_cast<std::size_t>(c)].ll;
    upd.emplace_back(c, std::move(obs));
    lls.push_back(ll);
  }
  const double dprior = log_normal_delta(cand, cur, pr.eta_mean, pr.eta_var);
  if (!(std::log(u) < dll + dprior)) return false;
  ++p.accepted;
  if (adapting_) ++p.win_accepted;
  state_.eta_exp[m] = cand;
  for (std::size_t i = 0; i < upd.size(); ++i) {
    CoreCache& cc = core_[static_cast<std::size_t>(upd[i].first)];
    cc.obs_ll = std::move(upd[i].second);
    cc.ll = lls[i];
  }
  return true;
}

bool Chain::step_phi(int j) {
  ScalarProposal& p = prop_.phi[static_cast<std::size_t>(j)];
  const double z = rng_.normal();
  const double u = rng_.uniform();
  ++p.proposed;
  if (adapting_) ++p.win_proposed;

  const PriorTable& pr = model_.priors;
  const double cur = state_.phi[j];
  const double cand = cur * std::exp(p.step * z);
  const double inv = 1.0 / cand;
  double lr = kNegInf;
  CrossCovPrecision cp;
  bool built = false;
  if (inv > pr.phi_inv_lo && inv < pr.phi_inv_hi) {
    CrossCovSpec spec = cov_spec_from_state(model_, state_);
    spec.phi[j] = cand;
    try {
      cp = build_precision(spec, data_.sites.dist);
      built = true;
    } catch (const numerical_error&) {
      built = false;
    }
    if (built)
      lr = mgp_log_density(resid_, cp) - mgp_log_density(resid_, prec_) -
           (std::log(cand) - std::log(cur));
  }
  if (!(std::log(u) < lr)) return false;
  ++p.accepted;
  if (adapting_) ++p.win_accepted;
  state_.phi[j] = cand;
  prec_ = std::move(cp);
  g_ = prec_.q * resid_;
  return true;
}

bool Chain::step_phi_beta() {
  if (!model_.smoothing) return false;
  ScalarProposal& p = prop_.phi_beta;
  const double z = rng_.normal();
  const double u = rng_.uniform();
  ++p.proposed;
  if (adapting_) ++p.win_proposed;

  const PriorTable& pr = model_.priors;
  const double cur = state_.phi_beta;
  const double cand = cur * std::exp(p.step * z);
  const double inv = 1.0 / cand;
  if (!(inv > pr.phi_beta_inv_lo && inv < pr.phi_beta_inv_hi)) {
    return false;
  }
  const Eigen::Index ns = data_.n_sites();
  Eigen::MatrixXd rb = exp_correlation(data_.sites.dist, cand);
  CholResult cb;
  try {
    cb = jittered_llt(rb, "beta correlation");
  } catch (const numerical_error&) {
    return false;
  }
  double dfields = 0.0;
  for (int k = 0; k < model_.n_basis(); ++k) {
    const Eigen::VectorXd bk = state_.beta.col(k);
    const Eigen::VectorXd w =
        cb.lower.triangularView<Eigen::Lower>().solve(bk);
    const double quad_new = w.squaredNorm();
    const double quad_old = bk.dot(rbeta_inv_ * bk);
    dfields += -0.5 * (cb.logdet - rbeta_logdet_ +
                       (quad_new - quad_old) / state_.sigma2_beta[k]);
  }
  const double lr = dfields - (std::log(cand) - std::log(cur));
  if (!(std::log(u) < lr)) return false;
  ++p.accepted;
  if (adapting_) ++p.win_accepted;
  state_.phi_beta = cand;
  rbeta_inv_ = cb.lower.transpose().triangularView<Eigen::Upper>().solve(
      Eigen::MatrixXd(cb.lower.triangularView<Eigen::Lower>().solve(
          Eigen::MatrixXd::Identity(ns, ns))));
  rbeta_logdet_ = cb.logdet;
  return true;
}

bool Chain::step_nu() {
  if (model_.error.family != ErrorModel::Family::student_t) return false;
  ScalarProposal& p = prop_.nu;
  const double z = rng_.normal();
  const double u = rng_.uniform();
  ++p.proposed;
  if (adapting_) ++p.win_proposed;

  const PriorTable& pr = model_.priors;
  const double cand = reflect_into(state_.nu + p.step * z, pr.nu_lo, pr.nu_hi);
  const int nc = static_cast<int>(data_.n_cores());
  std::vector<Eigen::VectorXd> obs(static_cast<std::size_t>(nc));
  std::vector<double> ll(static_cast<std::size_t>(nc), 0.0);
  const auto eval_one = [&](long c) {
    const CoreRecord& rec = data_.cores[static_cast<std::size_t>(c)];
    if (rec.n_obs() == 0) return;
    obs[static_cast<std::size_t>(c)] = observation_loglik(
        model_.error, rec.densities, core_[static_cast<std::size_t>(c)].d.mu,
        core_tau2(model_, data_, state_, c), cand);
    ll[static_cast<std::size_t>(c)] =
        pairwise_sum(obs[static_cast<std::size_t>(c)]);
  };
  if (pool_ != nullptr)
    pool_->for_index(nc, eval_one);
  else
    for (long c = 0; c < nc; ++c) eval_one(c);
  double dll = 0.0;
  for (int c = 0; c < nc; ++c)
    dll += ll[static_cast<std::size_t>(c)] -
           core_[static_cast<std::size_t>(c)].ll;
  if (!(std::log(u) < dll)) return false;
  ++p.accepted;
  if (adapting_) ++p.win_accepted;
  state_.nu = cand;
  for (int c = 0; c < nc; ++c) {
    if (data_.cores[static_cast<std::size_t>(c)].n_obs() == 0) continue;
    core_[static_cast<std::size_t>(c)].obs_ll =
        std::move(obs[static_cast<std::size_t>(c)]);
    core_[static_cast<std::size_t>(c)].ll = ll[static_cast<std::size_t>(c)];
  }
  return true;
}

bool Chain::step_lambda() {
  if (state_.lambda_free.size() == 0) return false;
  ScalarProposal& p = prop_.lambda;
  const Eigen::VectorXd z = normal_vector(rng_, state_.lambda_free.size());
  const double u = rng_.uniform();
  ++p.proposed;
  if (adapting_) ++p.win_proposed;

  const PriorTable& pr = model_.priors;
  const Eigen::VectorXd cand = state_.lambda_free + p.step * z;
  const int r = model_.cov_kind == CovKind::latent_factor ? model_.n_factors
                                                          : n_theta;
  CrossCovSpec spec;
  spec.kind = model_.cov_kind;
  spec.phi = state_.phi;
  spec.lambda = lambda_from_free(cand, r);
  CrossCovPrecision cp;
  try {
    cp = build_precision(spec, data_.sites.dist);
  } catch (const numerical_error&) {
    return false;
  }
  const double sd2 = pr.lambda_sd * pr.lambda_sd;
  const double dprior =
      -0.5 * (cand.squaredNorm() - state_.lambda_free.squaredNorm()) / sd2;
  const double lr =
      mgp_log_density(resid_, cp) - mgp_log_density(resid_, prec_) + dprior;
  if (!(std::log(u) < lr)) return false;
  ++p.accepted;
  if (adapting_) ++p.win_accepted;
  state_.lambda_free = cand;
  prec_ = std::move(cp);
  g_ = prec_.q * resid_;
  return true;
}

GaussianConditional Chain::gamma_conditional() const {
  const Eigen::Index ns = data_.n_sites();
  const Eigen::Matrix<double, 12, 8> m = hierarchical_mean_map();
  Matrix12 s = Matrix12::Zero();
  for (Eigen::Index i = 0; i < ns; ++i)
    for (Eigen::Index l = 0; l < ns; ++l)
      s += prec_.q.block(i * n_theta, l * n_theta, n_theta, n_theta);
  Eigen::VectorXd tvec(ns * n_theta);
  for (Eigen::Index i = 0; i < ns; ++i)
    tvec.segment(i * n_theta, n_theta) = state_.theta.row(i).transpose();
  const Eigen::VectorXd qt = prec_.q * tvec;
  Vector12 s12 = Vector12::Zero();
  for (Eigen::Index i = 0; i < ns; ++i) s12 += qt.segment(i * n_theta, n_theta);

  Eigen::Matrix<double, 8, 8> a = m.transpose() * s * m;
  Eigen::Matrix<double, 8, 1> b = m.transpose() * s12;
  const PriorTable& pr = model_.priors;
  for (int j = 0; j < 8; ++j) {
    const double v = pr.gamma_sd[j] * pr.gamma_sd[j];
    a(j, j) += 1.0 / v;
    b[j] += pr.gamma_mean[j] / v;
  }
  const Eigen::LLT<Eigen::Matrix<double, 8, 8>> llt(a);
  if (llt.info() != Eigen::Success)
    throw numerical_error("gamma conditional precision is not positive definite");
  GaussianConditional out;
  out.mean = llt.solve(b);
  out.cov = llt.solve(Eigen::Matrix<double, 8, 8>::Identity());
  return out;
}

void Chain::gibbs_gamma() {
  const GaussianConditional gc = gamma_conditional();
  const Eigen::LLT<Eigen::MatrixXd> llt(gc.cov);
  if (llt.info() != Eigen::Success)
    throw numerical_error("gamma conditional covariance is not positive definite");
  state_.gamma = mvn_draw(rng_, gc.mean, Eigen::MatrixXd(llt.matrixL()));
  refresh_resid();
}

GaussianConditional Chain::scale_reg_conditional(int m) const {
  if (!model_.error.hierarchical)
    throw validation_error("scale regression applies to the hierarchical model");
  const PriorTable& pr = model_.priors;
  const bool free = eta_is_free(model_, data_, m);
  const int d = free ? 2 : 1;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(d);
  for (const int c : cores_of_exp_[static_cast<std::size_t>(m)]) {
    Eigen::VectorXd w(d);
    w[0] = 1.0;
    if (free) w[1] = std::log(data_.cores[static_cast<std::size_t>(c)].dx);
    a += w * w.transpose() / state_.sigma2_tau;
    b += w * state_.log_tau2_core[c] / state_.sigma2_tau;
  }
  a(0, 0) += 1.0 / pr.log_tau2_var;
  b[0] += pr.log_tau2_mean / pr.log_tau2_var;
  if (free) {
    a(1, 1) += 1.0 / pr.eta_var;
    b[1] += pr.eta_mean / pr.eta_var;
  }
  const Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success)
    throw numerical_error("scale regression precision is not positive definite");
  GaussianConditional out;
  out.mean = llt.solve(b);
  out.cov = llt.solve(Eigen::MatrixXd::Identity(d, d));
  return out;
}

IgConditional Chain::sigma2_tau_conditional() const {
  if (!model_.error.hierarchical)
    throw validation_error("sigma2_tau applies to the hierarchical model");
  const PriorTable& pr = model_.priors;
  double rss = 0.0;
  const Eigen::Index nc = data_.n_cores();
  for (Eigen::Index c = 0; c < nc; ++c) {
    const double r = state_.log_tau2_core[c] -
                     core_log_tau2_mean(model_, data_, state_, c);
    rss += r * r;
  }
  return {pr.sigma2_tau_shape + 0.5 * static_cast<double>(nc),
          pr.sigma2_tau_scale + 0.5 * rss};
}

void Chain::gibbs_scale_hierarchy() {
  if (!model_.error.hierarchical) return;
  const Eigen::Index nm = data_.n_expeditions();
  for (Eigen::Index m = 0; m < nm; ++m) {
    const GaussianConditional gc = scale_reg_conditional(static_cast<int>(m));
    const Eigen::LLT<Eigen::MatrixXd> llt(gc.cov);
    if (llt.info() != Eigen::Success)
      throw numerical_error("scale regression covariance is not positive definite");
    const Eigen::VectorXd draw =
        mvn_draw(rng_, gc.mean, Eigen::MatrixXd(llt.matrixL()));
    state_.log_tau2_exp[m] = draw[0];
    if (eta_is_free(model_, data_, static_cast<int>(m)))
      state_.eta_exp[m] = draw[1];
  }
  const IgConditional ig = sigma2_tau_conditional();
  state_.sigma2_tau = rng_.inv_gamma(ig.shape, ig.scale);
}

IgConditional Chain::sigma2_beta_conditional(int k) const {
  if (!model_.smoothing)
    throw validation_error("sigma2_beta applies to the smoothing model");
  const PriorTable& pr = model_.priors;
  const Eigen::VectorXd bk = state_.beta.col(k);
  const double quad = bk.dot(rbeta_inv_ * bk);
  return {pr.sigma2_beta_shape + 0.5 * static_cast<double>(data_.n_sites()),
          pr.sigma2_beta_scale + 0.5 * quad};
}

void Chain::gibbs_sigma2_beta() {
  if (!model_.smoothing) return;
  for (int k = 0; k < model_.n_basis(); ++k) {
    const IgConditional ig = sigma2_beta_conditional(k);
    state_.sigma2_beta[k] = rng_.inv_gamma(ig.shape, ig.scale);
  }
}

IwConditional Chain::v_conditional() const {
  if (model_.cov_kind != CovKind::separable)
    throw validation_error("the V update applies to the separable kind");
  const PriorTable& pr = model_.priors;
  const Eigen::Index ns = data_.n_sites();
  Eigen::MatrixXd theta_r(ns, n_theta);
  for (Eigen::Index i = 0; i < ns; ++i)
    theta_r.row(i) = resid_.segment(i * n_theta, n_theta).transpose();
  IwConditional out;
  out.dof = pr.v_dof + static_cast<double>(ns);
  out.scale = pr.v_scale_diag * Matrix12::Identity() +
              theta_r.transpose() * prec_.r_inv * theta_r;
  return out;
}

void Chain::gibbs_v() {
  const IwConditional iw = v_conditional();
  state_.v = inv_wishart_draw(rng_, iw.dof, iw.scale);
  rebuild_precision();
}

void Chain::accumulate_theta_moments() {
  const Eigen::Index ns = data_.n_sites();
  for (Eigen::Index i = 0; i < ns; ++i) {
    SiteProposal& p = prop_.theta[static_cast<std::size_t>(i)];
    const Vector12 x = state_.theta.row(i).transpose();
    p.n += 1;
    const Vector12 d = x - p.mean;
    p.mean += d / static_cast<double>(p.n);
    p.scatter += d * (x - p.mean).transpose();
  }
}

// Until enough sweeps accumulate, the proposal keeps the seed factor from
// the conditional prior covariance; the empirical scatter takes over after
// kMinMomentSweeps.
void Chain::refresh_site_chol(SiteProposal& p) const {
  if (p.n < kMinMomentSweeps) return;
  const Matrix12 c =
      kHaario * (Matrix12(p.scatter / static_cast<double>(p.n - 1)) +
                 kHaarioRidge * Matrix12::Identity());
  const Eigen::LLT<Matrix12> llt(c);
  if (llt.info() == Eigen::Success) p.chol = llt.matrixL();
}

// Seeds each site's proposal from (Q_ii)^-1, the conditional covariance of
// theta(s_i) under the current cross-covariance prior.  This respects the
// near-null directions of the rank-reduced kinds, which a fixed diagonal
// seed would over-propose into.
void Chain::seed_site_proposals() {
  const Eigen::Index ns = data_.n_sites();
  for (Eigen::Index i = 0; i < ns; ++i) {
    const Matrix12 qii =
        prec_.q.block(i * n_theta, i * n_theta, n_theta, n_theta);
    const Eigen::LLT<Matrix12> qll(qii);
    const Matrix12 cond =
        qll.info() == Eigen::Success
            ? Matrix12(qll.solve(Matrix12::Identity()))
            : Matrix12(1e-2 * Matrix12::Identity());
    const Eigen::LLT<Matrix12> pll(
        Matrix12(kHaario * (cond + kHaarioRidge * Matrix12::Identity())));
    prop_.theta[static_cast<std::size_t>(i)].chol =
        pll.info() == Eigen::Success
            ? Matrix12(pll.matrixL())
            : Matrix12(std::sqrt(kHaario * 1e-2) * Matrix12::Identity());
  }
}

void Chain::adapt_scalar(ScalarProposal& p, double lo, double hi) const {
  if (p.win_proposed > 0) {
    const double rate = rate_of(p.win_accepted, p.win_proposed);
    if (rate < lo || rate > hi)
      p.step *= std::clamp(std::exp(rate - 0.5 * (lo + hi)), 0.5, 2.0);
  }
  p.win_accepted = p.win_proposed = 0;
}

void Chain::adapt_window() {
  const double mlo = config_.accept_lo_multi, mhi = config_.accept_hi_multi;
  for (auto& p : prop_.theta) {
    refresh_site_chol(p);
    if (p.win_proposed > 0) {
      const double rate = rate_of(p.win_accepted, p.win_proposed);
      if (rate < mlo || rate > mhi)
        p.scale *=
            std::clamp(std::exp(2.0 * (rate - 0.5 * (mlo + mhi))), 0.25, 4.0);
    }
    p.win_accepted = p.win_proposed = 0;
  }
  const double ulo = config_.accept_lo_uni, uhi = config_.accept_hi_uni;
  for (auto& p : prop_.beta) adapt_scalar(p, ulo, uhi);
  for (auto& p : prop_.log_tau2_core) adapt_scalar(p, ulo, uhi);
  for (auto& p : prop_.log_tau2_exp) adapt_scalar(p, ulo, uhi);
  for (auto& p : prop_.eta_exp) adapt_scalar(p, ulo, uhi);
  for (auto& p : prop_.phi) adapt_scalar(p, ulo, uhi);
  adapt_scalar(prop_.phi_beta, ulo, uhi);
  adapt_scalar(prop_.nu, ulo, uhi);
  adapt_scalar(prop_.lambda, mlo, mhi);
}

void Chain::locality_check() const {
  const long k = (sweep_ + 1) / 1000;
  const int site = static_cast<int>(k % data_.n_sites());
  Vector12 delta;
  for (int p = 0; p < n_theta; ++p) delta[p] = p % 2 == 0 ? 1e-3 : -1e-3;
  const Vector12 cand = state_.theta.row(site).transpose() + delta;
  const double local = theta_log_ratio(site, cand, nullptr);
  ParamState probe = state_;
  probe.theta.row(site) = cand.transpose();
  const double after = log_posterior(model_, data_, probe);
  if (local == kNegInf && after == kNegInf) return;
  const double before = log_posterior(model_, data_, state_);
  if (!std::isfinite(before))
    throw numerical_error("locality check: current state has zero posterior");
  const double full = after - before;
  if (!(std::abs(local - full) <= 1e-8 * (1.0 + std::abs(full))))
    throw numerical_error(
        "theta locality check failed: per-site ratio " +
        std::to_string(local) + " vs full log-posterior difference " +
        std::to_string(full));
}

void Chain::record_draw() {
  const Eigen::Index row = recorded_;
  if (row >= draws_.at("gamma").rows()) return;
  const Eigen::Index ns = data_.n_sites();
  draws_.at("gamma").row(row) = state_.gamma.transpose();
  auto& theta = draws_.at("theta");
  for (Eigen::Index i = 0; i < ns; ++i)
    theta.block(row, i * n_theta, 1, n_theta) = state_.theta.row(i);
  draws_.at("phi").row(row) = state_.phi.transpose();
  draws_.at("log_tau2_exp").row(row) = state_.log_tau2_exp.transpose();
  if (model_.error.weighted)
    draws_.at("eta_exp").row(row) = state_.eta_exp.transpose();
  if (model_.error.hierarchical) {
    draws_.at("sigma2_tau")(row, 0) = state_.sigma2_tau;
    draws_.at("log_tau2_core").row(row) = state_.log_tau2_core.transpose();
  }
  if (model_.smoothing) {
    auto& beta = draws_.at("beta");
    const Eigen::Index nb = model_.n_basis();
    for (Eigen::Index i = 0; i < ns; ++i)
      beta.block(row, i * nb, 1, nb) = state_.beta.row(i);
    draws_.at("phi_beta")(row, 0) = state_.phi_beta;
    draws_.at("sigma2_beta").row(row) = state_.sigma2_beta.transpose();
  }
  if (model_.error.family == ErrorModel::Family::student_t)
    draws_.at("nu")(row, 0) = state_.nu;
  if (model_.cov_kind == CovKind::separable) {
    auto& v = draws_.at("v");
    for (int a = 0; a < n_theta; ++a)
      for (int b = 0; b < n_theta; ++b)
        v(row, a * n_theta + b) = state_.v(a, b);
  }
  if (state_.lambda_free.size() > 0)
    draws_.at("lambda_free").row(row) = state_.lambda_free.transpose();
  if (config_.store_loglik) {
    auto& ll = draws_.at("loglik");
    for (Eigen::Index c = 0; c < data_.n_cores(); ++c) {
      const Eigen::VectorXd& obs = core_[static_cast<std::size_t>(c)].obs_ll;
      for (Eigen::Index i = 0; i < obs.size(); ++i)
        ll(row, obs_offset_[static_cast<std::size_t>(c)] + i) = obs[i];
    }
  }
  ++recorded_;
}

void Chain::reset_report_counters() {
  for (auto& p : prop_.theta) p.accepted = p.proposed = 0;
  const auto reset = [](std::vector<ScalarProposal>& v) {
    for (auto& p : v) p.accepted = p.proposed = 0;
  };
  reset(prop_.beta);
  reset(prop_.log_tau2_core);
  reset(prop_.log_tau2_exp);
  reset(prop_.eta_exp);
  reset(prop_.phi);
  prop_.phi_beta.accepted = prop_.phi_beta.proposed = 0;
  prop_.nu.accepted = prop_.nu.proposed = 0;
  prop_.lambda.accepted = prop_.lambda.proposed = 0;
}

void Chain::do_one_sweep() {
  const long s = sweep_;
  const int ns = static_cast<int>(data_.n_sites());
  const int nm = static_cast<int>(data_.n_expeditions());
  adapting_ = s >= config_.adapt_start && s < config_.n_burn;
  try {
    block_ = "theta";
    for (int rep = 0; rep < config_.inner_repeats; ++rep)
      for (int i = 0; i < ns; ++i) step_site_theta(i);
    if (adapting_) accumulate_theta_moments();
    if (model_.smoothing) {
      block_ = "beta";
      for (int i = 0; i < ns; ++i)
        for (int k = 0; k < model_.n_basis(); ++k) step_beta_scalar(i, k);
    }
    if (model_.error.hierarchical) {
      block_ = "tau2_core";
      for (int c = 0; c < static_cast<int>(data_.n_cores()); ++c)
        step_log_tau2_core(c);
    } else {
      block_ = "scale_exp";
      for (int m = 0; m < nm; ++m) {
        step_log_tau2_exp(m);
        if (eta_is_free(model_, data_, m)) step_eta_exp(m);
      }
    }
    block_ = "gamma";
    gibbs_gamma();
    if (model_.error.hierarchical) {
      block_ = "scale_hierarchy";
      gibbs_scale_hierarchy();
    }
    if (model_.smoothing) {
      block_ = "sigma2_beta";
      gibbs_sigma2_beta();
    }
    if (model_.cov_kind == CovKind::separable) {
      block_ = "v";
      gibbs_v();
    }
    if (state_.lambda_free.size() > 0) {
      block_ = "lambda";
      step_lambda();
    }
    block_ = "phi";
    for (int j = 0; j < static_cast<int>(state_.phi.size()); ++j) step_phi(j);
    if (model_.smoothing) {
      block_ = "phi_beta";
      step_phi_beta();
    }
    if (model_.error.family == ErrorModel::Family::student_t) {
      block_ = "nu";
      step_nu();
    }
    if ((s + 1) % 1000 == 0) {
      block_ = "locality";
      locality_check();
    }
  } catch (const std::exception& e) {
    throw numerical_error("sweep " + std::to_string(s) + ", block " + block_ +
                          ": " + e.what());
  }
  if (adapting_ &&
      (s + 1 - config_.adapt_start) % config_.adapt_interval == 0)
    adapt_window();
  if (s + 1 == config_.n_burn) reset_report_counters();
  if (s >= config_.n_burn && (s - config_.n_burn) % config_.thin == 0)
    record_draw();
  ++sweep_;
}

void Chain::run_sweeps(long n) {
  for (long t = 0; t < n; ++t) do_one_sweep();
}

ChainArchive Chain::run() {
  if (sweep_ < config_.n_iter) run_sweeps(config_.n_iter - sweep_);
  return archive();
}

ChainArchive Chain::archive() const {
  ChainArchive a;
  a.n_draws = recorded_;
  a.seed = seed_;
  a.config_digest = chain_digest(model_, data_, config_);
  for (const auto& kv : draws_)
    a.blocks[kv.first] = kv.second.topRows(recorded_);

  long acc = 0, prop = 0;
  for (const auto& p : prop_.theta) {
    acc += p.accepted;
    prop += p.proposed;
  }
  a.acceptance.emplace_back("theta", rate_of(acc, prop));
  const auto pool_rate = [&](const std::vector<ScalarProposal>& v,
                             const std::string& name) {
    if (v.empty()) return;
    long pa = 0, pp = 0;
    for (const auto& p : v) {
      pa += p.accepted;
      pp += p.proposed;
    }
    if (pp > 0) a.acceptance.emplace_back(name, rate_of(pa, pp));
  };
  pool_rate(prop_.beta, "beta");
  pool_rate(prop_.log_tau2_core, "log_tau2_core");
  pool_rate(prop_.log_tau2_exp, "log_tau2_exp");
  pool_rate(prop_.eta_exp, "eta_exp");
  pool_rate(prop_.phi, "phi");
  if (prop_.phi_beta.proposed > 0)
    a.acceptance.emplace_back(
        "phi_beta", rate_of(prop_.phi_beta.accepted, prop_.phi_beta.proposed));
  if (prop_.nu.proposed > 0)
    a.acceptance.emplace_back("nu",
                              rate_of(prop_.nu.accepted, prop_.nu.proposed));
  if (prop_.lambda.proposed > 0)
    a.acceptance.emplace_back(
        "lambda", rate_of(prop_.lambda.accepted, prop_.lambda.proposed));
  return a;
}

void Chain::set_state(const ParamState& s) {
  const Eigen::Index ns = data_.n_sites();
  if (s.theta.rows() != ns || s.theta.cols() != n_theta)
    throw validation_error("set_state: theta must be n_sites x 12");
  if (model_.smoothing &&
      (s.beta.rows() != ns || s.beta.cols() != model_.n_basis()))
    throw validation_error("set_state: beta must be n_sites x n_basis");
  if (s.phi.size() != n_phi_components(model_))
    throw validation_error("set_state: wrong phi dimension");
  if (model_.error.hierarchical &&
      s.log_tau2_core.size() != data_.n_cores())
    throw validation_error("set_state: wrong log_tau2_core dimension");
  if (s.log_tau2_exp.size() != data_.n_expeditions() ||
      s.eta_exp.size() != data_.n_expeditions())
    throw validation_error("set_state: wrong expedition-scale dimension");
  const ParamState saved = state_;
  state_ = s;
  try {
    rebuild_caches();
  } catch (...) {
    state_ = saved;
    rebuild_caches();
    throw;
  }
}

void Chain::replace_densities(const std::vector<Eigen::VectorXd>& densities) {
  const std::size_t nc = static_cast<std::size_t>(data_.n_cores());
  if (densities.size() != nc)
    throw validation_error("replace_densities: wrong core count");
  for (std::size_t c = 0; c < nc; ++c) {
    if (densities[c].size() != data_.cores[c].n_obs())
      throw validation_error("replace_densities: measurement count changed");
    for (Eigen::Index i = 0; i < densities[c].size(); ++i)
      if (!(densities[c][i] > 0.0))
        throw validation_error("replace_densities: nonpositive density");
  }
  for (std::size_t c = 0; c < nc; ++c) {
    data_.cores[c].densities = densities[c];
    fill_obs_ll(static_cast<int>(c), core_[c].d.mu, state_.nu, core_[c].obs_ll,
                core_[c].ll);
  }
}

double Chain::current_log_posterior() const {
  return log_posterior(model_, data_, state_);
}

void Chain::save_checkpoint(const std::string& path) const {
  ChainArchive ck;
  ck.seed = seed_;
  ck.n_draws = recorded_;
  ck.config_digest = chain_digest(model_, data_, config_);

  Eigen::MatrixXd meta(1, 2);
  meta << static_cast<double>(sweep_), static_cast<double>(recorded_);
  ck.blocks["ckpt.meta"] = meta;
  const Philox::State rs = rng_.state();
  Eigen::MatrixXd rb(1, 13);
  rb << u64_hi(rs.key[0]), u64_lo(rs.key[0]), u64_hi(rs.key[1]),
      u64_lo(rs.key[1]), u64_hi(rs.ctr[0]), u64_lo(rs.ctr[0]),
      u64_hi(rs.ctr[1]), u64_lo(rs.ctr[1]), u64_hi(rs.ctr[2]),
      u64_lo(rs.ctr[2]), u64_hi(rs.ctr[3]), u64_lo(rs.ctr[3]),
      static_cast<double>(rs.pos);
  ck.blocks["ckpt.rng"] = rb;

  ck.blocks["state.gamma"] = state_.gamma.transpose();
  ck.blocks["state.theta"] = state_.theta;
  if (state_.beta.size() > 0) ck.blocks["state.beta"] = state_.beta;
  ck.blocks["state.v"] = state_.v;
  if (state_.lambda_free.size() > 0)
    ck.blocks["state.lambda_free"] = state_.lambda_free.transpose();
  ck.blocks["state.phi"] = state_.phi.transpose();
  Eigen::MatrixXd scalars(1, 4);
  scalars << state_.phi_beta, state_.nu, state_.sigma2_tau, 0.0;
  ck.blocks["state.scalars"] = scalars;
  if (state_.sigma2_beta.size() > 0)
    ck.blocks["state.sigma2_beta"] = state_.sigma2_beta.transpose();
  if (state_.log_tau2_core.size() > 0)
    ck.blocks["state.log_tau2_core"] = state_.log_tau2_core.transpose();
  ck.blocks["state.log_tau2_exp"] = state_.log_tau2_exp.transpose();
  ck.blocks["state.eta_exp"] = state_.eta_exp.transpose();

  const Eigen::Index ns = data_.n_sites();
  Eigen::MatrixXd tscale(ns, 2), tmean(ns, n_theta),
      tscatter(ns, n_theta * n_theta), tchol(ns, n_theta * n_theta),
      tcounts(ns, 4);
  for (Eigen::Index i = 0; i < ns; ++i) {
    const SiteProposal& p = prop_.theta[static_cast<std::size_t>(i)];
    tscale(i, 0) = p.scale;
    tscale(i, 1) = static_cast<double>(p.n);
    tmean.row(i) = p.mean.transpose();
    for (int a = 0; a < n_theta; ++a)
      for (int b = 0; b < n_theta; ++b) {
        tscatter(i, a * n_theta + b) = p.scatter(a, b);
        tchol(i, a * n_theta + b) = p.chol(a, b);
      }
    tcounts.row(i) << static_cast<double>(p.win_accepted),
        static_cast<double>(p.win_proposed), static_cast<double>(p.accepted),
        static_cast<double>(p.proposed);
  }
  ck.blocks["prop.theta.scale"] = tscale;
  ck.blocks["prop.theta.mean"] = tmean;
  ck.blocks["prop.theta.scatter"] = tscatter;
  ck.blocks["prop.theta.chol"] = tchol;
  ck.blocks["prop.theta.counts"] = tcounts;
  if (!prop_.beta.empty())
    ck.blocks["prop.beta"] = scalar_family_matrix(prop_.beta);
  if (!prop_.log_tau2_core.empty())
    ck.blocks["prop.log_tau2_core"] = scalar_family_matrix(prop_.log_tau2_core);
  if (!prop_.log_tau2_exp.empty())
    ck.blocks["prop.log_tau2_exp"] = scalar_family_matrix(prop_.log_tau2_exp);
  if (!prop_.eta_exp.empty())
    ck.blocks["prop.eta_exp"] = scalar_family_matrix(prop_.eta_exp);
  ck.blocks["prop.phi"] = scalar_family_matrix(prop_.phi);
  ck.blocks["prop.scalars"] =
      scalar_family_matrix({prop_.phi_beta, prop_.nu, prop_.lambda});

  for (const auto& kv : draws_)
    if (recorded_ > 0)
      ck.blocks["draw." + kv.first] = kv.second.topRows(recorded_);

  write_archive(path, ck);
}

Chain Chain::resume_checkpoint(const ModelSpec& model, const CoreDataset& data,
                               const ChainConfig& config,
                               const std::string& path) {
  const ChainArchive ck = read_archive(path);
  if (ck.config_digest != chain_digest(model, data, config))
    throw parse_error(
        "checkpoint was written under a different model, chain or dataset "
        "configuration");
  Chain ch(model, data, config, ck.seed);

  const Eigen::MatrixXd& meta = ck.block("ckpt.meta");
  expect_dims(meta, 1, 2, "ckpt.meta");
  ch.sweep_ = static_cast<long>(meta(0, 0));
  ch.recorded_ = static_cast<long>(meta(0, 1));

  const Eigen::MatrixXd& rb = ck.block("ckpt.rng");
  expect_dims(rb, 1, 13, "ckpt.rng");
  Philox::State rs;
  rs.key = {u64_join(rb(0, 0), rb(0, 1)), u64_join(rb(0, 2), rb(0, 3))};
  rs.ctr = {u64_join(rb(0, 4), rb(0, 5)), u64_join(rb(0, 6), rb(0, 7)),
            u64_join(rb(0, 8), rb(0, 9)), u64_join(rb(0, 10), rb(0, 11))};
  rs.pos = static_cast<int>(rb(0, 12));
  ch.rng_.set_state(rs);

  ParamState st = ch.state_;
  const auto load_vec = [&](const std::string& name, Eigen::VectorXd& out,
                            Eigen::Index dim) {
    const Eigen::MatrixXd& m = ck.block(name);
    expect_dims(m, 1, dim, name);
    out = m.row(0).transpose();
  };
  {
    const Eigen::MatrixXd& m = ck.block("state.gamma");
    expect_dims(m, 1, 8, "state.gamma");
    st.gamma = m.row(0).transpose();
  }
  {
    const Eigen::MatrixXd& m = ck.block("state.theta");
    expect_dims(m, data.n_sites(), n_theta, "state.theta");
    st.theta = m;
  }
  if (st.beta.size() > 0) {
    const Eigen::MatrixXd& m = ck.block("state.beta");
    expect_dims(m, st.beta.rows(), st.beta.cols(), "state.beta");
    st.beta = m;
  }
  {
    const Eigen::MatrixXd& m = ck.block("state.v");
    expect_dims(m, n_theta, n_theta, "state.v");
    st.v = m;
  }
  if (st.lambda_free.size() > 0)
    load_vec("state.lambda_free", st.lambda_free, st.lambda_free.size());
  load_vec("state.phi", st.phi, st.phi.size());
  {
    const Eigen::MatrixXd& m = ck.block("state.scalars");
    expect_dims(m, 1, 4, "state.scalars");
    st.phi_beta = m(0, 0);
    st.nu = m(0, 1);
    st.sigma2_tau = m(0, 2);
  }
  if (st.sigma2_beta.size() > 0)
    load_vec("state.sigma2_beta", st.sigma2_beta, st.sigma2_beta.size());
  if (st.log_tau2_core.size() > 0)
    load_vec("state.log_tau2_core", st.log_tau2_core,
             st.log_tau2_core.size());
  load_vec("state.log_tau2_exp", st.log_tau2_exp, st.log_tau2_exp.size());
  load_vec("state.eta_exp", st.eta_exp, st.eta_exp.size());
  ch.state_ = st;

  const Eigen::Index ns = data.n_sites();
  const Eigen::MatrixXd& tscale = ck.block("prop.theta.scale");
  const Eigen::MatrixXd& tmean = ck.block("prop.theta.mean");
  const Eigen::MatrixXd& tscatter = ck.block("prop.theta.scatter");
  const Eigen::MatrixXd& tchol = ck.block("prop.theta.chol");
  const Eigen::MatrixXd& tcounts = ck.block("prop.theta.counts");
  expect_dims(tscale, ns, 2, "prop.theta.scale");
  expect_dims(tmean, ns, n_theta, "prop.theta.mean");
  expect_dims(tscatter, ns, n_theta * n_theta, "prop.theta.scatter");
  expect_dims(tchol, ns, n_theta * n_theta, "prop.theta.chol");
  expect_dims(tcounts, ns, 4, "prop.theta.counts");
  for (Eigen::Index i = 0; i < ns; ++i) {
    SiteProposal& p = ch.prop_.theta[static_cast<std::size_t>(i)];
    p.scale = tscale(i, 0);
    p.n = static_cast<long>(tscale(i, 1));
    p.mean = tmean.row(i).transpose();
    for (int a = 0; a < n_theta; ++a)
      for (int b = 0; b < n_theta; ++b) {
        p.scatter(a, b) = tscatter(i, a * n_theta + b);
        p.chol(a, b) = tchol(i, a * n_theta + b);
      }
    p.win_accepted = static_cast<long>(tcounts(i, 0));
    p.win_proposed = static_cast<long>(tcounts(i, 1));
    p.accepted = static_cast<long>(tcounts(i, 2));
    p.proposed = static_cast<long>(tcounts(i, 3));
  }
  if (!ch.prop_.beta.empty())
    scalar_family_restore(ck.block("prop.beta"), ch.prop_.beta, "prop.beta");
  if (!ch.prop_.log_tau2_core.empty())
    scalar_family_restore(ck.block("prop.log_tau2_core"),
                          ch.prop_.log_tau2_core, "prop.log_tau2_core");
  if (!ch.prop_.log_tau2_exp.empty())
    scalar_family_restore(ck.block("prop.log_tau2_exp"),
                          ch.prop_.log_tau2_exp, "prop.log_tau2_exp");
  if (!ch.prop_.eta_exp.empty())
    scalar_family_restore(ck.block("prop.eta_exp"), ch.prop_.eta_exp,
                          "prop.eta_exp");
  scalar_family_restore(ck.block("prop.phi"), ch.prop_.phi, "prop.phi");
  {
    std::vector<ScalarProposal> trio(3);
    scalar_family_restore(ck.block("prop.scalars"), trio, "prop.scalars");
    ch.prop_.phi_beta = trio[0];
    ch.prop_.nu = trio[1];
    ch.prop_.lambda = trio[2];
  }

  for (auto& kv : ch.draws_) {
    if (ch.recorded_ == 0) break;
    const Eigen::MatrixXd& m = ck.block("draw." + kv.first);
    if (m.rows() != ch.recorded_ || m.cols() != kv.second.cols() ||
        m.rows() > kv.second.rows())
      throw parse_error("checkpoint block draw." + kv.first +
                        " does not match the chain configuration");
    kv.second.topRows(ch.recorded_) = m;
  }

  ch.rebuild_caches();
  return ch;
}

ChainArchive run_chain(const ModelSpec& model, const CoreDataset& data,
                       const ChainConfig& config, std::uint64_t seed,
                       ThreadPool* pool) {
  Chain chain(model, data, config, seed);
  chain.set_pool(pool);
  return chain.run();
}

}  // namespace firn
