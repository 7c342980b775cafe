#include "firn/semivariogram.hpp"

#include <cmath>
#include <vector>

#include "firn/optim.hpp"

namespace firn {

double SemivariogramFit::model(double h) const {
  return nugget + partial_sill * (1.0 - std::exp(-h / range_km));
}

SemivariogramFit fit_semivariogram(const Eigen::VectorXd& values,
                                   const SiteSet& sites, int n_bins) {
  if (values.size() != sites.size())
    throw validation_error("fit_semivariogram: one value per site required");
  if (sites.size() < 3)
    throw validation_error("fit_semivariogram: need at least 3 sites");
  if (n_bins < 3)
    throw validation_error("fit_semivariogram: need at least 3 bins");

  const double max_d = sites.dist.maxCoeff();
  if (!(max_d > 0.0))
    throw validation_error("fit_semivariogram: all sites coincide");
  const double width = max_d / static_cast<double>(n_bins);

  std::vector<double> sum(n_bins, 0.0);
  std::vector<int> count(n_bins, 0);
  for (Eigen::Index i = 0; i < sites.size(); ++i)
    for (Eigen::Index j = i + 1; j < sites.size(); ++j) {
      const double h = sites.dist(i, j);
      int b = static_cast<int>(h / width);
      if (b >= n_bins) b = n_bins - 1;
      const double diff = values[i] - values[j];
      sum[b] += 0.5 * diff * diff;
      ++count[b];
    }

  SemivariogramFit fit;
  int kept = 0;
  for (int b = 0; b < n_bins; ++b)
    if (count[b] > 0) ++kept;
  if (kept < 3)
    throw validation_error("fit_semivariogram: fewer than 3 nonempty bins");
  fit.bin_center.resize(kept);
  fit.semivariance.resize(kept);
  fit.pair_count.resize(kept);
  for (int b = 0, k = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    fit.bin_center[k] = (static_cast<double>(b) + 0.5) * width;
    fit.semivariance[k] = sum[b] / static_cast<double>(count[b]);
    fit.pair_count[k] = count[b];
    ++k;
  }

  // WLS objective on log-parameterized (nugget, partial sill, range),
  // weighted by pair counts.
  const auto objective = [&](const Eigen::VectorXd& u) {
    const double nug = std::exp(u[0]);
    const double sill = std::exp(u[1]);
    const double range = std::exp(u[2]);
    double s = 0.0;
    for (Eigen::Index k = 0; k < fit.bin_center.size(); ++k) {
      const double m =
          nug + sill * (1.0 - std::exp(-fit.bin_center[k] / range));
      const double r = fit.semivariance[k] - m;
      s += static_cast<double>(fit.pair_count[k]) * r * r;
    }
    return s;
  };

  const double gmax = std::max(fit.semivariance.maxCoeff(), 1e-12);
  const double gmin = std::max(fit.semivariance.minCoeff(), 1e-14 * gmax);
  Eigen::VectorXd u0(3);
  u0 << std::log(gmin), std::log(std::max(gmax - gmin, 1e-3 * gmax)),
      std::log(max_d / 3.0);
  SimplexResult best = nelder_mead(objective, u0, 1.0, 4000, 1e-13);
  // one restart from the incumbent guards against a poor first simplex
  const SimplexResult second = nelder_mead(objective, best.x, 0.25, 4000, 1e-13);
  if (second.fmin < best.fmin) best = second;

  fit.nugget = std::exp(best.x[0]);
  fit.partial_sill = std::exp(best.x[1]);
  fit.range_km = std::exp(best.x[2]);
  fit.converged = best.converged;
  return fit;
}

}  // namespace firn
