#include "firn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace firn {

namespace {

constexpr double kSiteTol = 1e-6;  // degrees; cores closer than this share a site

void validate_core(const CoreRecord& c) {
  if (c.core_id.empty()) throw validation_error("core with empty core_id");
  if (c.expedition.empty())
    throw validation_error("core " + c.core_id + ": empty expedition");
  if (c.depths.size() != c.densities.size())
    throw validation_error("core " + c.core_id + ": depth/density length mismatch");
  if (c.depths.size() == 0 && !(c.dx > 0.0))
    throw validation_error("core " + c.core_id +
                           ": no measurements and no explicit dx");
  if (!(c.lat >= -90.0 && c.lat <= 90.0))
    throw validation_error("core " + c.core_id + ": latitude outside [-90, 90]");
  for (Eigen::Index i = 0; i < c.depths.size(); ++i) {
    if (!(c.depths[i] >= 0.0) || !std::isfinite(c.depths[i]))
      throw validation_error("core " + c.core_id + ": negative depth");
    if (!(c.densities[i] > 0.0) || !std::isfinite(c.densities[i]))
      throw validation_error("core " + c.core_id + ": nonpositive density");
  }
}

void canonicalize_measurements(CoreRecord& c) {
  std::vector<Eigen::Index> order(c.depths.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (c.depths[a] != c.depths[b]) return c.depths[a] < c.depths[b];
    return c.densities[a] < c.densities[b];
  });
  Eigen::VectorXd d(c.depths.size()), v(c.depths.size());
  for (Eigen::Index i = 0; i < c.depths.size(); ++i) {
    d[i] = c.depths[order[i]];
    v[i] = c.densities[order[i]];
  }
  c.depths = std::move(d);
  c.densities = std::move(v);
}

}  // namespace

Eigen::Index CoreDataset::n_obs() const {
  Eigen::Index n = 0;
  for (const auto& c : cores) n += c.n_obs();
  return n;
}

CoreDataset build_dataset(std::vector<CoreRecord> cores,
                          const std::vector<CovariateRow>& covariates) {
  if (cores.empty()) throw validation_error("dataset contains no cores");

  std::set<std::string> seen;
  for (auto& c : cores) {
    validate_core(c);
    if (!seen.insert(c.core_id).second)
      throw validation_error("duplicate core_id " + c.core_id);
    canonicalize_measurements(c);
    if (c.dx == 0.0 && c.n_obs() > 0)
      c.dx = c.depths[c.n_obs() - 1] / static_cast<double>(c.n_obs());
    if (c.n_obs() > 0 && !(c.dx > 0.0))
      throw validation_error("core " + c.core_id + ": nonpositive dx");
  }

  CoreDataset ds;
  ds.cores = std::move(cores);

  // Deduplicate locations.
  std::vector<double> lat, lon;
  ds.site_of_core.resize(ds.cores.size());
  for (std::size_t k = 0; k < ds.cores.size(); ++k) {
    const auto& c = ds.cores[k];
    int site = -1;
    for (std::size_t s = 0; s < lat.size(); ++s) {
      if (std::fabs(lat[s] - c.lat) <= kSiteTol &&
          std::fabs(lon[s] - c.lon) <= kSiteTol) {
        site = static_cast<int>(s);
        break;
      }
    }
    if (site < 0) {
      site = static_cast<int>(lat.size());
      lat.push_back(c.lat);
      lon.push_back(c.lon);
    }
    ds.site_of_core[k] = site;
  }
  ds.sites = make_site_set(
      Eigen::Map<const Eigen::VectorXd>(lat.data(), static_cast<Eigen::Index>(lat.size())),
      Eigen::Map<const Eigen::VectorXd>(lon.data(), static_cast<Eigen::Index>(lon.size())));

  // Covariates per site, matched within the same tolerance.
  const Eigen::Index ns = ds.sites.size();
  ds.site_temperature.resize(ns);
  ds.site_smb.resize(ns);
  for (Eigen::Index s = 0; s < ns; ++s) {
    const CovariateRow* hit = nullptr;
    for (const auto& row : covariates) {
      if (std::fabs(row.lat - ds.sites.lat[s]) <= kSiteTol &&
          std::fabs(row.lon - ds.sites.lon[s]) <= kSiteTol) {
        hit = &row;
        break;
      }
    }
    if (!hit)
      throw validation_error("no covariates for site at lat " +
                             std::to_string(ds.sites.lat[s]) + ", lon " +
                             std::to_string(ds.sites.lon[s]));
    if (!(hit->temperature > 0.0))
      throw validation_error("nonpositive temperature at site " + std::to_string(s));
    if (!(hit->smb > 0.0))
      throw validation_error("nonpositive surface mass balance at site " +
                             std::to_string(s));
    ds.site_temperature[s] = hit->temperature;
    ds.site_smb[s] = hit->smb;
  }

  // Expedition index and the constant-dx flag that pins the support
  // exponent of expeditions with a single measurement thickness.
  ds.expedition_of_core.resize(ds.cores.size());
  for (std::size_t k = 0; k < ds.cores.size(); ++k) {
    const auto& name = ds.cores[k].expedition;
    int idx = -1;
    for (std::size_t m = 0; m < ds.expeditions.size(); ++m)
      if (ds.expeditions[m] == name) {
        idx = static_cast<int>(m);
        break;
      }
    if (idx < 0) {
      idx = static_cast<int>(ds.expeditions.size());
      ds.expeditions.push_back(name);
    }
    ds.expedition_of_core[k] = idx;
  }
  ds.expedition_constant_dx.assign(ds.expeditions.size(), true);
  for (std::size_t m = 0; m < ds.expeditions.size(); ++m) {
    double dx0 = -1.0;
    for (std::size_t k = 0; k < ds.cores.size(); ++k) {
      if (ds.expedition_of_core[k] != static_cast<int>(m)) continue;
      if (dx0 < 0.0) {
        dx0 = ds.cores[k].dx;
      } else if (std::fabs(ds.cores[k].dx - dx0) > 1e-12 * std::max(1.0, dx0)) {
        ds.expedition_constant_dx[m] = false;
        break;
      }
    }
  }
  return ds;
}

}  // namespace firn
