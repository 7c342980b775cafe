#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "firn/sampler.hpp"

TEST_SUITE_BEGIN("conjugacy");

// Every closed-form conditional is checked two ways: against numbers frozen
// from an independent derivation on a miniature instance, and through the
// identity log p(x | rest) - log p(y | rest) = log p(x, rest) - log p(y, rest)
// with the right side evaluated by the canonical joint density.  The
// Metropolis blocks are checked by stationarity against quadrature of the
// same joint.

namespace {

firn::CoreRecord make_core(const std::string& id, const std::string& exp,
                           double lat, double lon, double dx,
                           std::vector<double> depths,
                           std::vector<double> densities) {
  firn::CoreRecord c;
  c.core_id = id;
  c.expedition = exp;
  c.lat = lat;
  c.lon = lon;
  c.dx = dx;
  c.depths = Eigen::Map<Eigen::VectorXd>(depths.data(),
                                         static_cast<Eigen::Index>(depths.size()));
  c.densities = Eigen::Map<Eigen::VectorXd>(
      densities.data(), static_cast<Eigen::Index>(densities.size()));
  return c;
}

// Two sites, two expeditions; E1 has unequal dx so its support exponent is
// free, E2 has constant dx so the exponent stays pinned.
firn::CoreDataset hier_dataset() {
  std::vector<firn::CoreRecord> cores = {
      make_core("a1", "E1", -75.0, 120.0, 0.5, {2.0, 10.0, 25.0, 45.0, 70.0},
                {0.40, 0.50, 0.63, 0.77, 0.88}),
      make_core("a2", "E1", -75.0, 120.0, 3.0,
                {5.0, 18.0, 32.0, 52.0, 66.0, 78.0},
                {0.45, 0.56, 0.70, 0.80, 0.86, 0.90}),
      make_core("b1", "E2", -80.0, 110.0, 2.0, {3.0, 12.0, 28.0, 50.0, 75.0},
                {0.42, 0.55, 0.68, 0.80, 0.89}),
      make_core("b2", "E2", -80.0, 110.0, 2.0, {4.0, 15.0, 35.0, 60.0},
                {0.44, 0.54, 0.72, 0.84})};
  return firn::build_dataset(cores, {{-75.0, 120.0, 250.0, 0.22},
                                     {-80.0, 110.0, 243.5, 0.09}});
}

firn::CoreDataset single_site_dataset() {
  std::vector<firn::CoreRecord> cores = {
      make_core("s1", "E1", -75.0, 120.0, 1.0, {2.0, 10.0, 25.0, 45.0, 70.0},
                {0.40, 0.50, 0.63, 0.77, 0.88})};
  return firn::build_dataset(cores, {{-75.0, 120.0, 250.0, 0.22}});
}

firn::ChainConfig quiet_config() {
  firn::ChainConfig c;
  c.n_iter = 50;
  c.n_burn = 10;
  c.thin = 1;
  c.inner_repeats = 1;
  c.store_loglik = false;
  return c;
}

// Perturbation of theta about the prior mean that keeps every stage inside
// its support; reused by the hand oracles below and frozen with them.
Eigen::Matrix<double, 12, 1> oracle_delta() {
  Eigen::Matrix<double, 12, 1> d;
  d << 0.05, -0.04, 0.03, 0.02, -0.01, 0.06, -0.05, 0.04, 0.03, -0.02, 0.01,
      0.05;
  return d;
}

double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

// Monte Carlo standard error from non-overlapping batch means.
double batch_se(const std::vector<double>& x, int n_batches) {
  const int len = static_cast<int>(x.size()) / n_batches;
  REQUIRE(len > 1);
  std::vector<double> bm(static_cast<std::size_t>(n_batches));
  for (int b = 0; b < n_batches; ++b) {
    double s = 0.0;
    for (int i = 0; i < len; ++i)
      s += x[static_cast<std::size_t>(b * len + i)];
    bm[static_cast<std::size_t>(b)] = s / len;
  }
  const double m = mean_of(bm);
  double v = 0.0;
  for (double b : bm) v += (b - m) * (b - m);
  v /= static_cast<double>(n_batches - 1);
  return std::sqrt(v / n_batches);
}

// Kolmogorov-Smirnov distance between sampled draws and a quadrature CDF
// tabulated on a grid.
double ks_distance(std::vector<double> draws, const Eigen::VectorXd& grid,
                   const Eigen::VectorXd& cdf) {
  std::sort(draws.begin(), draws.end());
  const double n = static_cast<double>(draws.size());
  double d = 0.0;
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    const double emp =
        static_cast<double>(std::upper_bound(draws.begin(), draws.end(),
                                             grid[i]) -
                            draws.begin()) /
        n;
    d = std::max(d, std::fabs(emp - cdf[i]));
  }
  return d;
}

Eigen::VectorXd cdf_from_log_weights(const Eigen::VectorXd& lw) {
  const double mx = lw.maxCoeff();
  Eigen::VectorXd cdf(lw.size());
  double acc = 0.0;
  for (Eigen::Index i = 0; i < lw.size(); ++i) {
    acc += std::exp(lw[i] - mx);
    cdf[i] = acc;
  }
  return cdf / acc;
}

double log_gaussian_quad(const firn::GaussianConditional& gc,
                         const Eigen::VectorXd& x) {
  const Eigen::LLT<Eigen::MatrixXd> llt(gc.cov);
  REQUIRE(llt.info() == Eigen::Success);
  const Eigen::VectorXd r = x - gc.mean;
  return -0.5 * r.dot(llt.solve(r));
}

double log_inv_gamma_unnorm(double x, double shape, double scale) {
  return -(shape + 1.0) * std::log(x) - scale / x;
}

double log_det(const Eigen::MatrixXd& m) {
  const Eigen::LLT<Eigen::MatrixXd> llt(m);
  REQUIRE(llt.info() == Eigen::Success);
  return 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
}

double log_inv_wishart_unnorm(const Eigen::MatrixXd& v, double dof,
                              const Eigen::MatrixXd& scale) {
  const double p = static_cast<double>(v.rows());
  const Eigen::LLT<Eigen::MatrixXd> llt(v);
  REQUIRE(llt.info() == Eigen::Success);
  const double tr = llt.solve(scale).trace();
  return -0.5 * (dof + p + 1.0) * log_det(v) - 0.5 * tr;
}

// State with the scale hierarchy pinned to the values the hand oracles were
// derived for.
firn::ParamState scale_oracle_state(const firn::Chain& chain) {
  firn::ParamState st = chain.state();
  st.log_tau2_core.resize(4);
  st.log_tau2_core << -6.6, -7.4, -6.9, -7.3;
  st.log_tau2_exp << -7.2, -6.8;
  st.eta_exp << 0.3, 0.0;
  st.sigma2_tau = 0.2;
  return st;
}

}  // namespace

TEST_CASE("gamma conditional matches the single-site hand oracle") {
  firn::ModelSpec model;
  model.error.family = firn::ErrorModel::Family::normal;
  model.error.weighted = false;
  model.error.hierarchical = false;
  model.smoothing = false;
  const firn::CoreDataset data = single_site_dataset();
  firn::Chain chain(model, data, quiet_config(), 1);

  // V = I and a single site (R = 1) make the precision of theta exactly the
  // identity, so A = M^T M + D^-1 is diagonal and solvable by hand.
  firn::ParamState st = chain.state();
  st.v = Eigen::MatrixXd::Identity(12, 12);
  st.theta.row(0) =
      (firn::gamma_to_theta_mean(model.priors.gamma_mean) + oracle_delta())
          .transpose();
  chain.set_state(st);

  const firn::GaussianConditional gc = chain.gamma_conditional();
  const double mean[8] = {-0.49, 2.398461538461538, 6.351428571428571,
                          9.232307692307693, 9.971052631578948, -0.01,
                          0.005, 0.025};
  const double var[8] = {0.2, 0.038461538461538, 0.035714285714286,
                         0.038461538461538, 0.052631578947368, 0.5, 0.5, 0.5};
  for (int j = 0; j < 8; ++j) {
    CHECK(gc.mean[j] == doctest::Approx(mean[j]).epsilon(1e-10));
    CHECK(gc.cov(j, j) == doctest::Approx(var[j]).epsilon(1e-10));
  }
  // A is diagonal here, so the conditional must carry no cross terms.
  Eigen::MatrixXd off = gc.cov;
  off.diagonal().setZero();
  CHECK(off.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("gamma conditional difference equals the joint density difference") {
  const firn::ModelSpec model;  // separable, smoothing, hierarchical t
  const firn::CoreDataset data = hier_dataset();
  firn::Chain chain(model, data, quiet_config(), 2);

  const firn::GaussianConditional gc = chain.gamma_conditional();
  firn::Philox rng(91);
  const Eigen::VectorXd x =
      model.priors.gamma_mean + 0.3 * firn::normal_vector(rng, 8);
  const Eigen::VectorXd y =
      model.priors.gamma_mean + 0.3 * firn::normal_vector(rng, 8);

  firn::ParamState st = chain.state();
  st.gamma = x;
  chain.set_state(st);
  const double lp_x = chain.current_log_posterior();
  st.gamma = y;
  chain.set_state(st);
  const double lp_y = chain.current_log_posterior();

  const double lhs = log_gaussian_quad(gc, x) - log_gaussian_quad(gc, y);
  CHECK(lhs == doctest::Approx(lp_x - lp_y).epsilon(1e-9));
}

TEST_CASE("gamma conditional collapses onto a vanishing prior") {
  firn::ModelSpec model;
  model.priors.gamma_sd.setConstant(1e-5);
  const firn::CoreDataset data = hier_dataset();
  firn::Chain chain(model, data, quiet_config(), 3);

  // Perturb theta so the data term pulls away from the prior mean; the
  // conditional must stay pinned regardless.
  firn::ParamState st = chain.state();
  st.theta.rowwise() += oracle_delta().transpose();
  chain.set_state(st);

  const firn::GaussianConditional gc = chain.gamma_conditional();
  CHECK((gc.mean - model.priors.gamma_mean).cwiseAbs().maxCoeff() < 1e-6);
  chain.gibbs_gamma();
  CHECK((chain.state().gamma - model.priors.gamma_mean).cwiseAbs().maxCoeff() <
        1e-3);
}

TEST_CASE("gamma conditional stays symmetric positive definite along the chain") {
  const firn::ModelSpec model;
  const firn::CoreDataset data = hier_dataset();
  firn::Chain chain(model, data, quiet_config(), 4);
  for (int round = 0; round < 10; ++round) {
    chain.run_sweeps(3);
    const firn::GaussianConditional gc = chain.gamma_conditional();
    CHECK((gc.cov - gc.cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    const Eigen::LLT<Eigen::MatrixXd> llt(gc.cov);
    CHECK(llt.info() == Eigen::Success);
  }
}

TEST_CASE("scale regression matches the two-core hand oracle") {
  const firn::ModelSpec model;  // weighted hierarchical
  const firn::CoreDataset data = hier_dataset();
  firn::Chain chain(model, data, quiet_config(), 5);
  chain.set_state(scale_oracle_state(chain));

  // E1: cores with dx 0.5 and 3.0, log tau2 of -6.6 and -7.4, sigma2_tau 0.2,
  // intercept prior N(-7, 4), slope prior N(-8, 4).
  const firn::GaussianConditional e1 = chain.scale_reg_conditional(0);
  REQUIRE(e1.mean.size() == 2);
  CHECK(e1.mean[0] == doctest::Approx(-6.866721178218239).epsilon(1e-12));
  CHECK(e1.mean[1] == doctest::Approx(-0.673847340224708).epsilon(1e-12));
  CHECK(e1.cov(0, 0) == doctest::Approx(0.102282179731397).epsilon(1e-12));
  CHECK(e1.cov(0, 1) == doctest::Approx(-0.023870040247166).epsilon(1e-12));
  CHECK(e1.cov(1, 1) == doctest::Approx(0.120685063962733).epsilon(1e-12));

  // E2 has constant dx, so the regression drops to the intercept alone.
  const firn::GaussianConditional e2 = chain.scale_reg_conditional(1);
  REQUIRE(e2.mean.size() == 1);
  CHECK(e2.mean[0] == doctest::Approx(-7.097560975609756).epsilon(1e-12));
  CHECK(e2.cov(0, 0) == doctest::Approx(0.097560975609756).epsilon(1e-12));

  const firn::IgConditional ig = chain.sigma2_tau_conditional();
  CHECK(ig.shape == doctest::Approx(4.1).epsilon(1e-14));
  CHECK(ig.scale == doctest::Approx(0.696616318683763).epsilon(1e-12));

  // The pinned exponent never moves off zero.
  for (int round = 0; round < 20; ++round) {
    chain.gibbs_scale_hierarchy();
    CHECK(chain.state().eta_exp[1] == 0.0);
  }
  CHECK(chain.state().eta_exp[0] != 0.3);
}

TEST_CASE("scale regression difference equals the joint density difference") {
  const firn::ModelSpec model;
  const firn::CoreDataset data = hier_dataset();
  firn::Chain chain(model, data, quiet_config(), 6);
  chain.set_state(scale_oracle_state(chain));

  const firn::GaussianConditional e1 = chain.scale_reg_conditional(0);
  Eigen::Vector2d x(-7.4, 0.9), y(-6.7, -0.5);

  firn::ParamState st = chain.state();
  st.log_tau2_exp[0] = x[0];
  st.eta_exp[0] = x[1];
  chain.set_state(st);
  const double lp_x = chain.current_log_posterior();
  st.log_tau2_exp[0] = y[0];
  st.eta_exp[0] = y[1];
  chain.set_state(st);
  const double lp_y = chain.current_log_posterior();
  CHECK(log_gaussian_quad(e1, x) - log_gaussian_quad(e1, y) ==
        doctest::Approx(lp_x - lp_y).epsilon(1e-9));

  // Same identity for the intercept-only expedition.
  chain.set_state(scale_oracle_state(chain));
  const firn::GaussianConditional e2 = chain.scale_reg_conditional(1);
  Eigen::VectorXd x1(1), y1(1);
  x1 << -7.9;
  y1 << -6.2;
  st = chain.state();
  st.log_tau2_exp[1] = x1[0];
  chain.set_state(st);
  const double lp_x1 = chain.current_log_posterior();
  st.log_tau2_exp[1] = y1[0];
  chain.set_state(st);
  const double lp_y1 = chain.current_log_posterior();
  CHECK(log_gaussian_quad(e2, x1) - log_gaussian_quad(e2, y1) ==
        doctest::Approx(lp_x1 - lp_y1).epsilon(1e-9));
}

TEST_CASE("sigma2_tau conditional difference equals the joint density difference") {
  const firn::ModelSpec model;
  const firn::CoreDataset data = hier_dataset();
  firn::Chain chain(model, data, quiet_config(), 7);
  chain.set_state(scale_oracle_state(chain));

  const firn::IgConditional ig = chain.sigma2_tau_conditional();
  firn::ParamState st = chain.state();
  st.sigma2_tau = 0.35;
  chain.set_state(st);
  const double lp_x = chain.current_log_posterior();
  st.sigma2_tau = 0.12;
  chain.set_state(st);
  const double lp_y = chain.current_log_posterior();
  CHECK(log_inv_gamma_unnorm(0.35, ig.shape, ig.scale) -
            log_inv_gamma_unnorm(0.12, ig.shape, ig.scale) ==
        doctest::Approx(lp_x - lp_y).epsilon(1e-9));
}

TEST_CASE("sigma2_beta conditional matches the two-site hand inverse") {
  const firn::ModelSpec model;  // smoothing on
  const firn::CoreDataset data = hier_dataset();
  firn::Chain chain(model, data, quiet_config(), 8);

  firn::ParamState st = chain.state();
  st.beta.setZero();
  st.beta.col(1) << 0.4, -0.7;
  st.phi_beta = 0.004;
  chain.set_state(st);

  // Two sites: R_beta is 2x2 exponential correlation, inverted by the
  // closed 2x2 formula rather than a factorization.
  const double d01 = data.sites.dist(0, 1);
  const double r = std::exp(-0.004 * d01);
  const double quad =
      (0.4 * 0.4 - 2.0 * r * 0.4 * -0.7 + 0.7 * 0.7) / (1.0 - r * r);
  const firn::IgConditional ig = chain.sigma2_beta_conditional(1);
  CHECK(ig.shape == doctest::Approx(2.1 + 1.0).epsilon(1e-14));
  CHECK(ig.scale == doctest::Approx(0.1 + 0.5 * quad).epsilon(1e-9));

  const firn::IgConditional ig0 = chain.sigma2_beta_conditional(0);
  CHECK(ig0.scale == doctest::Approx(0.1).epsilon(1e-9));

  st = chain.state();
  st.sigma2_beta[1] = 0.3;
  chain.set_state(st);
  const double lp_x = chain.current_log_posterior();
  st.sigma2_beta[1] = 0.05;
  chain.set_state(st);
  const double lp_y = chain.current_log_posterior();
  CHECK(log_inv_gamma_unnorm(0.3, ig.shape, ig.scale) -
            log_inv_gamma_unnorm(0.05, ig.shape, ig.scale) ==
        doctest::Approx(lp_x - lp_y).epsilon(1e-9));
}

TEST_CASE("v conditional matches the residual outer product") {
  firn::ModelSpec model;
  model.error.family = firn::ErrorModel::Family::normal;
  model.error.weighted = false;
  model.error.hierarchical = false;
  model.smoothing = false;
  const firn::CoreDataset data = single_site_dataset();
  firn::Chain chain(model, data, quiet_config(), 9);

  firn::ParamState st = chain.state();
  st.theta.row(0) =
      (firn::gamma_to_theta_mean(st.gamma) + oracle_delta()).transpose();
  chain.set_state(st);

  const firn::IwConditional iw = chain.v_conditional();
  CHECK(iw.dof == doctest::Approx(14.0).epsilon(1e-14));
  const Eigen::MatrixXd expected =
      Eigen::MatrixXd::Identity(12, 12) + oracle_delta() * oracle_delta().transpose();
  CHECK((iw.scale - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("v conditional difference equals the joint density difference") {
  const firn::ModelSpec model;
  const firn::CoreDataset data = hier_dataset();
  firn::Chain chain(model, data, quiet_config(), 10);

  const firn::IwConditional iw = chain.v_conditional();
  CHECK(iw.dof == doctest::Approx(15.0).epsilon(1e-14));

  const Eigen::MatrixXd vx =
      chain.state().v + 0.01 * oracle_delta() * oracle_delta().transpose();
  Eigen::MatrixXd vy = 0.8 * chain.state().v;
  vy.diagonal().array() += 0.005;

  firn::ParamState st = chain.state();
  st.v = vx;
  chain.set_state(st);
  const double lp_x = chain.current_log_posterior();
  st.v = vy;
  chain.set_state(st);
  const double lp_y = chain.current_log_posterior();
  CHECK(log_inv_wishart_unnorm(vx, iw.dof, iw.scale) -
            log_inv_wishart_unnorm(vy, iw.dof, iw.scale) ==
        doctest::Approx(lp_x - lp_y).epsilon(1e-8));
}

TEST_CASE("theta with no observations samples its spatial prior") {
  firn::ModelSpec model;
  model.error.family = firn::ErrorModel::Family::normal;
  model.error.weighted = false;
  model.error.hierarchical = false;
  model.smoothing = false;
  // Keep the first stage comfortably inside its support so the truncation
  // at kappa_1 >= 0 carries no measurable prior mass, and tighten both
  // hyperprior layers: wide gamma priors leave the centered Gibbs pair
  // (gamma, theta) with an autocorrelation time of thousands of sweeps,
  // while these settle it within tens and keep the moments exact.
  model.priors.gamma_mean[0] = -1.5;
  model.priors.gamma_sd.setConstant(0.05);
  model.priors.gamma_sd[0] = 0.04;
  model.priors.gamma_sd[5] = 0.08;
  model.priors.v_dof = 40.0;
  model.priors.v_scale_diag = 0.5;

  std::vector<firn::CoreRecord> cores = {
      make_core("p1", "E1", -75.0, 120.0, 1.0, {}, {}),
      make_core("p2", "E1", -76.0, 121.0, 1.0, {}, {}),
      make_core("p3", "E1", -77.0, 119.0, 1.0, {}, {})};
  const firn::CoreDataset data =
      firn::build_dataset(cores, {{-75.0, 120.0, 250.0, 0.22},
                                  {-76.0, 121.0, 248.0, 0.18},
                                  {-77.0, 119.0, 246.0, 0.14}});
  REQUIRE(data.n_obs() == 0);

  // Alternate the theta Metropolis pass with the gamma and V Gibbs draws,
  // holding the spatial decay at its starting value: the invariant law of
  // theta is then the composition N(M gamma, Sigma) over its hyperpriors,
  // whose moments are available in closed form.
  firn::Chain chain(model, data, quiet_config(), 12);
  const long warm = 1000, n_sweeps = 15000;
  Eigen::MatrixXd theta(n_sweeps, 36);
  for (long s = 0; s < warm + n_sweeps; ++s) {
    for (int rep = 0; rep < 2; ++rep)
      for (int site = 0; site < 3; ++site) chain.step_site_theta(site);
    chain.gibbs_gamma();
    chain.gibbs_v();
    if (s < warm) continue;
    for (int i = 0; i < 3; ++i)
      theta.row(s - warm).segment(12 * i, 12) = chain.state().theta.row(i);
  }
  for (int site = 0; site < 3; ++site) {
    const firn::SiteProposal& p =
        chain.proposals().theta[static_cast<std::size_t>(site)];
    const double rate =
        static_cast<double>(p.accepted) / static_cast<double>(p.proposed);
    CHECK(rate > 0.05);
    CHECK(rate < 0.95);
  }

  const Eigen::Matrix<double, 12, 1> mu =
      firn::gamma_to_theta_mean(model.priors.gamma_mean);

  // Sample mean of every coordinate, pooled over sites, within 3 Monte
  // Carlo standard errors of M gamma_0.
  for (int j = 0; j < 12; ++j) {
    std::vector<double> site_mean(static_cast<std::size_t>(theta.rows()));
    for (Eigen::Index t = 0; t < theta.rows(); ++t)
      site_mean[static_cast<std::size_t>(t)] =
          (theta(t, j) + theta(t, 12 + j) + theta(t, 24 + j)) / 3.0;
    const double se = batch_se(site_mean, 50);
    CAPTURE(j);
    CHECK(std::fabs(mean_of(site_mean) - mu[j]) < 3.0 * se);
  }

  // Marginal variances: var gamma_j plus E[V_jj] = 0.5 / (40 - 13).
  const double ev = 0.5 / 27.0;
  const int coords[2] = {0, 9};
  const double expected_var[2] = {0.04 * 0.04 + ev, 0.08 * 0.08 + ev};
  for (int t = 0; t < 2; ++t) {
    const int j = coords[t];
    std::vector<double> sq(static_cast<std::size_t>(theta.rows()));
    for (Eigen::Index s = 0; s < theta.rows(); ++s) {
      double acc = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double d = theta(s, 12 * i + j) - mu[j];
        acc += d * d;
      }
      sq[static_cast<std::size_t>(s)] = acc / 3.0;
    }
    const double se = batch_se(sq, 50);
    CAPTURE(j);
    CHECK(std::fabs(mean_of(sq) - expected_var[t]) < 5.0 * se);
  }
}

TEST_CASE("a frozen two-parameter slice matches quadrature") {
  firn::ModelSpec model;
  model.error.family = firn::ErrorModel::Family::normal;
  model.error.weighted = false;
  model.error.hierarchical = false;
  model.smoothing = false;

  // Measurements on the prior-mean curve plus small offsets, so the slice
  // posterior concentrates near the initial state.
  const firn::SiteCovariates<double> cov{250.0, 0.22};
  const firn::PhysicalConstants<double> consts;
  const firn::SiteTheta<double> th =
      firn::unpack_theta<double>(firn::gamma_to_theta_mean(
          firn::ModelSpec().priors.gamma_mean));
  const firn::UntransformedTheta<double> u = firn::untransform(th);
  const auto geom = firn::change_depths(u, cov, consts);
  REQUIRE(geom.has_value());
  const std::vector<double> depths = {2.0, 10.0, 25.0, 40.0, 55.0, 70.0};
  const std::vector<double> offsets = {0.004, -0.006, 0.005,
                                       -0.003, 0.006, -0.004};
  std::vector<double> dens(depths.size());
  for (std::size_t i = 0; i < depths.size(); ++i)
    dens[i] = firn::mean_density(depths[i], u, *geom, cov, consts) + offsets[i];

  const firn::CoreDataset data = firn::build_dataset(
      {make_core("q1", "E1", -75.0, 120.0, 1.0, depths, dens)},
      {{-75.0, 120.0, 250.0, 0.22}});

  firn::Chain chain(model, data, quiet_config(), 13);
  firn::SiteProposal& prop = chain.proposals().theta[0];
  prop.chol.setZero();
  prop.chol(0, 0) = 0.02;
  prop.chol(1, 1) = 0.02;
  prop.scale = 1.0;

  const long n_draws = 50000;
  std::vector<double> draw0, draw1;
  draw0.reserve(n_draws);
  draw1.reserve(n_draws);
  for (long i = 0; i < n_draws; ++i) {
    chain.step_site_theta(0);
    draw0.push_back(chain.state().theta(0, 0));
    draw1.push_back(chain.state().theta(0, 1));
  }
  const double rate = static_cast<double>(prop.accepted) /
                      static_cast<double>(prop.proposed);
  CHECK(rate > 0.05);
  CHECK(rate < 0.95);

  // Quadrature of the same joint density over the moving coordinates with
  // everything else held at the frozen values.
  const auto grid_for = [](const std::vector<double>& x) {
    const double m = mean_of(x);
    double v = 0.0;
    for (double t : x) v += (t - m) * (t - m);
    const double sd = std::sqrt(v / static_cast<double>(x.size()));
    return std::pair<double, double>(m - 6.0 * sd, m + 6.0 * sd);
  };
  const auto [lo0, hi0] = grid_for(draw0);
  const auto [lo1, hi1] = grid_for(draw1);
  const Eigen::VectorXd g0 = Eigen::VectorXd::LinSpaced(161, lo0, hi0);
  const Eigen::VectorXd g1 = Eigen::VectorXd::LinSpaced(161, lo1, hi1);

  firn::ParamState st = chain.state();
  Eigen::MatrixXd lw(161, 161);
  for (Eigen::Index i = 0; i < 161; ++i) {
    for (Eigen::Index j = 0; j < 161; ++j) {
      st.theta(0, 0) = g0[i];
      st.theta(0, 1) = g1[j];
      lw(i, j) = firn::log_posterior(model, data, st);
    }
  }
  const double mx = lw.maxCoeff();
  const Eigen::MatrixXd w = (lw.array() - mx).exp().matrix();
  const Eigen::VectorXd w0 = w.rowwise().sum();
  const Eigen::VectorXd w1 = w.colwise().sum().transpose();
  CHECK(ks_distance(draw0, g0, cdf_from_log_weights(w0.array().log().matrix())) <
        0.05);
  CHECK(ks_distance(draw1, g1, cdf_from_log_weights(w1.array().log().matrix())) <
        0.05);
}

TEST_CASE("beta with a saturated design reproduces its prior") {
  firn::ModelSpec model;  // smoothing on, default spline dim 4
  model.priors.sigma2_beta_shape = 4.0;
  model.priors.sigma2_beta_scale = 0.3;

  // Four measurements per core, one inside each densification stage, make
  // the piecewise design square and invertible, so the orthogonalised
  // smooth basis vanishes and the likelihood carries no beta information.
  const firn::PhysicalConstants<double> consts;
  const firn::SiteTheta<double> th = firn::unpack_theta<double>(
      firn::gamma_to_theta_mean(model.priors.gamma_mean));
  const firn::UntransformedTheta<double> u = firn::untransform(th);
  std::vector<firn::CoreRecord> cores;
  const double lat[2] = {-75.0, -80.0};
  const double lon[2] = {120.0, 110.0};
  const firn::SiteCovariates<double> covs[2] = {{250.0, 0.22}, {243.5, 0.09}};
  for (int s = 0; s < 2; ++s) {
    const auto geom = firn::change_depths(u, covs[s], consts);
    REQUIRE(geom.has_value());
    const auto& k = geom->kappa;
    const std::vector<double> depths = {0.5 * k[0], 0.5 * (k[0] + k[1]),
                                        0.5 * (k[1] + k[2]), k[2] + 15.0};
    std::vector<double> dens(4);
    for (int i = 0; i < 4; ++i)
      dens[i] = firn::mean_density(depths[i], u, *geom, covs[s], consts);
    cores.push_back(make_core(s == 0 ? "f1" : "f2", "E1", lat[s], lon[s], 1.0,
                              depths, dens));
  }
  const firn::CoreDataset data = firn::build_dataset(
      cores, {{lat[0], lon[0], covs[0].temperature, covs[0].smb},
              {lat[1], lon[1], covs[1].temperature, covs[1].smb}});

  firn::Chain chain(model, data, quiet_config(), 14);
  for (Eigen::Index c = 0; c < 2; ++c) {
    const firn::CoreRecord& core = data.cores[static_cast<std::size_t>(c)];
    const firn::SmoothingDesign sd =
        firn::make_smoothing_design(core.depths, model.spline);
    const firn::CoreDesign d = firn::build_core_design(
        model, core, data.covariates(data.site_of_core[static_cast<std::size_t>(c)]),
        chain.state().theta.row(data.site_of_core[static_cast<std::size_t>(c)]).transpose(),
        chain.state().beta.row(data.site_of_core[static_cast<std::size_t>(c)]).transpose(),
        &sd);
    REQUIRE(d.in_support);
    REQUIRE(d.h_perp.cwiseAbs().maxCoeff() < 1e-9);
  }

  // With the likelihood flat in beta, alternating the beta Metropolis pass
  // with its two Gibbsed hypers must reproduce the joint prior.
  const int n_iter = 20000, warm = 1000;
  std::vector<double> b_draws[8];
  std::vector<double> prec_draws, inv_phi_beta;
  for (int it = 0; it < n_iter; ++it) {
    for (int s = 0; s < 2; ++s)
      for (int k = 0; k < 4; ++k) chain.step_beta_scalar(s, k);
    chain.gibbs_sigma2_beta();
    chain.step_phi_beta();
    if (it < warm) continue;
    for (int s = 0; s < 2; ++s)
      for (int k = 0; k < 4; ++k)
        b_draws[4 * s + k].push_back(chain.state().beta(s, k));
    for (int k = 0; k < 4; ++k)
      prec_draws.push_back(1.0 / chain.state().sigma2_beta[k]);
    inv_phi_beta.push_back(1.0 / chain.state().phi_beta);
  }

  // E[beta] = 0 and Var(beta) = E[sigma2_beta] = 0.3/3; the precision has
  // prior mean shape/scale = 4/0.3; 1/phi_beta is uniform on (10, 1000).
  std::vector<double> pooled_mean(b_draws[0].size(), 0.0);
  std::vector<double> pooled_sq(b_draws[0].size(), 0.0);
  for (int e = 0; e < 8; ++e)
    for (std::size_t i = 0; i < b_draws[e].size(); ++i) {
      pooled_mean[i] += b_draws[e][i] / 8.0;
      pooled_sq[i] += b_draws[e][i] * b_draws[e][i] / 8.0;
    }
  CHECK(std::fabs(mean_of(pooled_mean)) < 4.0 * batch_se(pooled_mean, 40));
  CHECK(std::fabs(mean_of(pooled_sq) - 0.1) < 5.0 * batch_se(pooled_sq, 40));
  CHECK(std::fabs(mean_of(prec_draws) - 4.0 / 0.3) <
        4.0 * batch_se(prec_draws, 40));
  CHECK(std::fabs(mean_of(inv_phi_beta) - 505.0) <
        5.0 * batch_se(inv_phi_beta, 25));
}

TEST_CASE("log tau2 metropolis is stationary on its analytic conditional") {
  const firn::ModelSpec model;  // hierarchical
  const firn::CoreDataset data = hier_dataset();
  firn::Chain chain(model, data, quiet_config(), 15);

  const long n_draws = 40000, warm = 500;
  std::vector<double> draws;
  draws.reserve(n_draws);
  for (long i = 0; i < n_draws + warm; ++i) {
    chain.step_log_tau2_core(0);
    if (i >= warm) draws.push_back(chain.state().log_tau2_core[0]);
  }
  const firn::ScalarProposal& prop = chain.proposals().log_tau2_core[0];
  const double rate = static_cast<double>(prop.accepted) /
                      static_cast<double>(prop.proposed);
  CHECK(rate > 0.05);
  CHECK(rate < 0.95);

  const Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(1601, -11.0, -3.0);
  Eigen::VectorXd lw(grid.size());
  firn::ParamState st = chain.state();
  for (Eigen::Index i = 0; i < grid.size(); ++i) {
    st.log_tau2_core[0] = grid[i];
    lw[i] = firn::log_posterior(model, data, st);
  }
  CHECK(ks_distance(draws, grid, cdf_from_log_weights(lw)) < 0.05);
}

TEST_SUITE_END();
