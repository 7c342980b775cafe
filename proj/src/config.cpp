#include "firn/config.hpp"

#include <cstdio>
#include <initializer_list>
#include <string>

#include <json.hpp>

#include "firn/io.hpp"

namespace firn {

namespace {

using nlohmann::json;

void reject_unknown(const json& obj, const std::string& where,
                    std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw parse_error("config: unknown key '" + item.key() + "' in " + where);
  }
}

const json* find(const json& obj, const char* key) {
  const auto it = obj.find(key);
  return it == obj.end() ? nullptr : &*it;
}

void get(const json& obj, const std::string& where, const char* key,
         double& out) {
  if (const json* j = find(obj, key)) {
    if (!j->is_number())
      throw parse_error("config: " + where + "." + key + " must be a number");
    out = j->get<double>();
  }
}

void get(const json& obj, const std::string& where, const char* key,
         long& out) {
  if (const json* j = find(obj, key)) {
    if (!j->is_number_integer())
      throw parse_error("config: " + where + "." + key + " must be an integer");
    out = j->get<long>();
  }
}

void get(const json& obj, const std::string& where, const char* key,
         int& out) {
  long v = out;
  get(obj, where, key, v);
  out = static_cast<int>(v);
}

void get(const json& obj, const std::string& where, const char* key,
         std::uint64_t& out) {
  if (const json* j = find(obj, key)) {
    if (!j->is_number_integer() && !j->is_number_unsigned())
      throw parse_error("config: " + where + "." + key + " must be an integer");
    out = j->get<std::uint64_t>();
  }
}

void get(const json& obj, const std::string& where, const char* key,
         bool& out) {
  if (const json* j = find(obj, key)) {
    if (!j->is_boolean())
      throw parse_error("config: " + where + "." + key + " must be a boolean");
    out = j->get<bool>();
  }
}

void get(const json& obj, const std::string& where, const char* key,
         std::string& out) {
  if (const json* j = find(obj, key)) {
    if (!j->is_string())
      throw parse_error("config: " + where + "." + key + " must be a string");
    out = j->get<std::string>();
  }
}

void get(const json& obj, const std::string& where, const char* key,
         Eigen::Matrix<double, 8, 1>& out) {
  if (const json* j = find(obj, key)) {
    if (!j->is_array() || j->size() != 8)
      throw parse_error("config: " + where + "." + key +
                        " must be an array of 8 numbers");
    for (int i = 0; i < 8; ++i) {
      const json& e = (*j)[static_cast<std::size_t>(i)];
      if (!e.is_number())
        throw parse_error("config: " + where + "." + key +
                          " must be an array of 8 numbers");
      out[i] = e.get<double>();
    }
  }
}

ErrorModel::Family parse_family(const std::string& s) {
  if (s == "student_t") return ErrorModel::Family::student_t;
  if (s == "normal") return ErrorModel::Family::normal;
  throw parse_error("config: model.error_family must be 'student_t' or 'normal'");
}

CovKind parse_cov_kind(const std::string& s) {
  for (CovKind k : {CovKind::independent, CovKind::separable,
                    CovKind::latent_factor, CovKind::coregionalization})
    if (s == to_string(k)) return k;
  throw parse_error("config: model.cov_kind '" + s + "' is not a covariance kind");
}

void parse_model(const json& obj, ModelSpec& m) {
  reject_unknown(obj, "model",
                 {"error_family", "weighted", "hierarchical", "cov_kind",
                  "n_factors", "smoothing", "spline_degree", "spline_knots",
                  "rho_ice"});
  std::string family = to_string(m.error.family);
  std::string kind = to_string(m.cov_kind);
  get(obj, "model", "error_family", family);
  get(obj, "model", "weighted", m.error.weighted);
  get(obj, "model", "hierarchical", m.error.hierarchical);
  get(obj, "model", "cov_kind", kind);
  get(obj, "model", "n_factors", m.n_factors);
  get(obj, "model", "smoothing", m.smoothing);
  get(obj, "model", "spline_degree", m.spline.degree);
  get(obj, "model", "spline_knots", m.spline.n_knots);
  get(obj, "model", "rho_ice", m.constants.rho_ice);
  m.error.family = parse_family(family);
  m.cov_kind = parse_cov_kind(kind);
  if (m.cov_kind != CovKind::latent_factor && find(obj, "n_factors") == nullptr)
    m.n_factors = n_theta;
}

void parse_priors(const json& obj, PriorTable& p) {
  reject_unknown(
      obj, "priors",
      {"gamma_mean", "gamma_sd", "nu_lo", "nu_hi", "log_tau2_mean",
       "log_tau2_var", "eta_mean", "eta_var", "sigma2_tau_shape",
       "sigma2_tau_scale", "v_dof", "v_scale_diag", "phi_inv_lo", "phi_inv_hi",
       "sigma2_beta_shape", "sigma2_beta_scale", "phi_beta_inv_lo",
       "phi_beta_inv_hi", "lambda_sd"});
  get(obj, "priors", "gamma_mean", p.gamma_mean);
  get(obj, "priors", "gamma_sd", p.gamma_sd);
  get(obj, "priors", "nu_lo", p.nu_lo);
  get(obj, "priors", "nu_hi", p.nu_hi);
  get(obj, "priors", "log_tau2_mean", p.log_tau2_mean);
  get(obj, "priors", "log_tau2_var", p.log_tau2_var);
  get(obj, "priors", "eta_mean", p.eta_mean);
  get(obj, "priors", "eta_var", p.eta_var);
  get(obj, "priors", "sigma2_tau_shape", p.sigma2_tau_shape);
  get(obj, "priors", "sigma2_tau_scale", p.sigma2_tau_scale);
  get(obj, "priors", "v_dof", p.v_dof);
  get(obj, "priors", "v_scale_diag", p.v_scale_diag);
  get(obj, "priors", "phi_inv_lo", p.phi_inv_lo);
  get(obj, "priors", "phi_inv_hi", p.phi_inv_hi);
  get(obj, "priors", "sigma2_beta_shape", p.sigma2_beta_shape);
  get(obj, "priors", "sigma2_beta_scale", p.sigma2_beta_scale);
  get(obj, "priors", "phi_beta_inv_lo", p.phi_beta_inv_lo);
  get(obj, "priors", "phi_beta_inv_hi", p.phi_beta_inv_hi);
  get(obj, "priors", "lambda_sd", p.lambda_sd);
}

void parse_chain(const json& obj, ChainConfig& c) {
  reject_unknown(obj, "chain",
                 {"n_iter", "n_burn", "thin", "inner_repeats", "adapt_start",
                  "adapt_interval", "accept_lo_uni", "accept_hi_uni",
                  "accept_lo_multi", "accept_hi_multi", "store_loglik"});
  get(obj, "chain", "n_iter", c.n_iter);
  get(obj, "chain", "n_burn", c.n_burn);
  get(obj, "chain", "thin", c.thin);
  get(obj, "chain", "inner_repeats", c.inner_repeats);
  get(obj, "chain", "adapt_start", c.adapt_start);
  get(obj, "chain", "adapt_interval", c.adapt_interval);
  get(obj, "chain", "accept_lo_uni", c.accept_lo_uni);
  get(obj, "chain", "accept_hi_uni", c.accept_hi_uni);
  get(obj, "chain", "accept_lo_multi", c.accept_lo_multi);
  get(obj, "chain", "accept_hi_multi", c.accept_hi_multi);
  get(obj, "chain", "store_loglik", c.store_loglik);
}

void parse_simulate(const json& obj, SimulateConfig& s) {
  reject_unknown(obj, "simulate",
                 {"n_sites", "n_obs_per_core", "max_depth", "lat_min",
                  "lat_max", "lon_min", "lon_max", "temp_min", "temp_max",
                  "smb_min", "smb_max", "max_field_draws", "fixed_truth",
                  "gamma_truth", "theta_sd_truth", "phi_truth",
                  "log_tau2_truth", "eta_truth", "sigma2_tau_truth",
                  "nu_truth", "beta_sd_truth", "phi_beta_truth"});
  get(obj, "simulate", "n_sites", s.n_sites);
  get(obj, "simulate", "n_obs_per_core", s.n_obs_per_core);
  get(obj, "simulate", "max_depth", s.max_depth);
  get(obj, "simulate", "lat_min", s.lat_min);
  get(obj, "simulate", "lat_max", s.lat_max);
  get(obj, "simulate", "lon_min", s.lon_min);
  get(obj, "simulate", "lon_max", s.lon_max);
  get(obj, "simulate", "temp_min", s.temp_min);
  get(obj, "simulate", "temp_max", s.temp_max);
  get(obj, "simulate", "smb_min", s.smb_min);
  get(obj, "simulate", "smb_max", s.smb_max);
  get(obj, "simulate", "max_field_draws", s.max_field_draws);
  get(obj, "simulate", "fixed_truth", s.fixed_truth);
  get(obj, "simulate", "gamma_truth", s.gamma_truth);
  get(obj, "simulate", "theta_sd_truth", s.theta_sd_truth);
  get(obj, "simulate", "phi_truth", s.phi_truth);
  get(obj, "simulate", "log_tau2_truth", s.log_tau2_truth);
  get(obj, "simulate", "eta_truth", s.eta_truth);
  get(obj, "simulate", "sigma2_tau_truth", s.sigma2_tau_truth);
  get(obj, "simulate", "nu_truth", s.nu_truth);
  get(obj, "simulate", "beta_sd_truth", s.beta_sd_truth);
  get(obj, "simulate", "phi_beta_truth", s.phi_beta_truth);
}

json vec8_to_json(const Eigen::Matrix<double, 8, 1>& v) {
  json a = json::array();
  for (int i = 0; i < 8; ++i) a.push_back(v[i]);
  return a;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw parse_error(std::string("config: ") + e.what());
  }
  if (!root.is_object()) throw parse_error("config: top level must be an object");
  reject_unknown(root, "the top level",
                 {"model", "priors", "chain", "simulate", "seed", "threads",
                  "cores", "covariates", "out_dir"});

  RunConfig cfg;
  for (const char* section : {"model", "priors", "chain", "simulate"})
    if (const json* j = find(root, section); j != nullptr && !j->is_object())
      throw parse_error(std::string("config: ") + section + " must be an object");
  if (const json* j = find(root, "model")) parse_model(*j, cfg.model);
  if (const json* j = find(root, "priors")) parse_priors(*j, cfg.model.priors);
  if (const json* j = find(root, "chain")) parse_chain(*j, cfg.chain);
  if (const json* j = find(root, "simulate")) parse_simulate(*j, cfg.simulate);
  get(root, "config", "seed", cfg.seed);
  get(root, "config", "threads", cfg.threads);
  get(root, "config", "cores", cfg.cores_path);
  get(root, "config", "covariates", cfg.covariates_path);
  get(root, "config", "out_dir", cfg.out_dir);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  return parse_run_config(read_text_file(path));
}

std::string serialize_run_config(const RunConfig& cfg) {
  json model{{"error_family", to_string(cfg.model.error.family)},
             {"weighted", cfg.model.error.weighted},
             {"hierarchical", cfg.model.error.hierarchical},
             {"cov_kind", to_string(cfg.model.cov_kind)},
             {"n_factors", cfg.model.n_factors},
             {"smoothing", cfg.model.smoothing},
             {"spline_degree", cfg.model.spline.degree},
             {"spline_knots", cfg.model.spline.n_knots},
             {"rho_ice", cfg.model.constants.rho_ice}};

  const PriorTable& p = cfg.model.priors;
  json priors{{"gamma_mean", vec8_to_json(p.gamma_mean)},
              {"gamma_sd", vec8_to_json(p.gamma_sd)},
              {"nu_lo", p.nu_lo},
              {"nu_hi", p.nu_hi},
              {"log_tau2_mean", p.log_tau2_mean},
              {"log_tau2_var", p.log_tau2_var},
              {"eta_mean", p.eta_mean},
              {"eta_var", p.eta_var},
              {"sigma2_tau_shape", p.sigma2_tau_shape},
              {"sigma2_tau_scale", p.sigma2_tau_scale},
              {"v_dof", p.v_dof},
              {"v_scale_diag", p.v_scale_diag},
              {"phi_inv_lo", p.phi_inv_lo},
              {"phi_inv_hi", p.phi_inv_hi},
              {"sigma2_beta_shape", p.sigma2_beta_shape},
              {"sigma2_beta_scale", p.sigma2_beta_scale},
              {"phi_beta_inv_lo", p.phi_beta_inv_lo},
              {"phi_beta_inv_hi", p.phi_beta_inv_hi},
              {"lambda_sd", p.lambda_sd}};

  json chain{{"n_iter", cfg.chain.n_iter},
             {"n_burn", cfg.chain.n_burn},
             {"thin", cfg.chain.thin},
             {"inner_repeats", cfg.chain.inner_repeats},
             {"adapt_start", cfg.chain.adapt_start},
             {"adapt_interval", cfg.chain.adapt_interval},
             {"accept_lo_uni", cfg.chain.accept_lo_uni},
             {"accept_hi_uni", cfg.chain.accept_hi_uni},
             {"accept_lo_multi", cfg.chain.accept_lo_multi},
             {"accept_hi_multi", cfg.chain.accept_hi_multi},
             {"store_loglik", cfg.chain.store_loglik}};

  const SimulateConfig& s = cfg.simulate;
  json simulate{{"n_sites", s.n_sites},
                {"n_obs_per_core", s.n_obs_per_core},
                {"max_depth", s.max_depth},
                {"lat_min", s.lat_min},
                {"lat_max", s.lat_max},
                {"lon_min", s.lon_min},
                {"lon_max", s.lon_max},
                {"temp_min", s.temp_min},
                {"temp_max", s.temp_max},
                {"smb_min", s.smb_min},
                {"smb_max", s.smb_max},
                {"max_field_draws", s.max_field_draws},
                {"fixed_truth", s.fixed_truth},
                {"gamma_truth", vec8_to_json(s.gamma_truth)},
                {"theta_sd_truth", s.theta_sd_truth},
                {"phi_truth", s.phi_truth},
                {"log_tau2_truth", s.log_tau2_truth},
                {"eta_truth", s.eta_truth},
                {"sigma2_tau_truth", s.sigma2_tau_truth},
                {"nu_truth", s.nu_truth},
                {"beta_sd_truth", s.beta_sd_truth},
                {"phi_beta_truth", s.phi_beta_truth}};

  json root{{"model", std::move(model)},   {"priors", std::move(priors)},
            {"chain", std::move(chain)},   {"simulate", std::move(simulate)},
            {"seed", cfg.seed},            {"threads", cfg.threads},
            {"cores", cfg.cores_path},     {"covariates", cfg.covariates_path},
            {"out_dir", cfg.out_dir}};
  return root.dump(2) + "\n";
}

std::string config_hash(const RunConfig& cfg) {
  const std::uint64_t h = fnv1a64(serialize_run_config(cfg));
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf, 16);
}

}  // namespace firn
