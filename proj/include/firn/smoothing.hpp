#ifndef FIRN_SMOOTHING_HPP
#define FIRN_SMOOTHING_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>
#include <Eigen/QR>

#include "firn/common.hpp"

// Functional smoothing term: a truncated power spline basis per core,
// projected onto the orthogonal complement of that core's piecewise linear
// design so the smooth deviation can never absorb the stage structure.

namespace firn {

struct SplineSpec {
  int degree = 2;   // 2 or 3
  int n_knots = 2;  // 0..3 interior knots at equally spaced depth quantiles

  int dim() const { return degree + n_knots; }

  void validate() const {
    if (degree != 2 && degree != 3)
      throw validation_error("SplineSpec: degree must be 2 or 3");
    if (n_knots < 0 || n_knots > 3)
      throw validation_error("SplineSpec: knot count must be in 0..3");
  }
};

// Linear-interpolation sample quantile (type 7).
inline double sample_quantile(std::vector<double> v, double p) {
  if (v.empty()) throw validation_error("sample_quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = p * (static_cast<double>(v.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
}

// Interior knots at quantiles j/(K+1) of the measured depths.
inline std::vector<double> knot_vector(const Eigen::VectorXd& depths,
                                       int n_knots) {
  std::vector<double> d(depths.data(), depths.data() + depths.size());
  std::vector<double> knots(n_knots);
  for (int j = 0; j < n_knots; ++j)
    knots[j] = sample_quantile(d, static_cast<double>(j + 1) /
                                      static_cast<double>(n_knots + 1));
  return knots;
}

// Truncated power basis (x~, ..., x~^d, (x~-t_k)_+^d) on depths rescaled
// by `scale` (the deepest measurement) to keep the Gram matrix sane.
inline Eigen::MatrixXd spline_basis(const Eigen::VectorXd& depths,
                                    const SplineSpec& spec,
                                    const std::vector<double>& knots,
                                    double scale) {
  spec.validate();
  if (!(scale > 0.0)) throw validation_error("spline_basis: scale must be > 0");
  Eigen::MatrixXd h(depths.size(), spec.dim());
  for (Eigen::Index i = 0; i < depths.size(); ++i) {
    const double x = depths[i] / scale;
    double pw = 1.0;
    for (int d = 0; d < spec.degree; ++d) {
      pw *= x;
      h(i, d) = pw;
    }
    for (int k = 0; k < spec.n_knots; ++k) {
      const double u = x - knots[k] / scale;
      h(i, spec.degree + k) =
          u > 0.0 ? std::pow(u, static_cast<double>(spec.degree)) : 0.0;
    }
  }
  return h;
}

// Thin orthonormal basis of range(Z); rank-revealing so the columns of Z
// that a shallow core never activates simply drop out.
inline Eigen::MatrixXd range_basis(const Eigen::MatrixXd& z) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(z);
  qr.setThreshold(1e-10);
  const Eigen::Index rank = qr.rank();
  if (rank == 0) return Eigen::MatrixXd(z.rows(), 0);
  return qr.householderQ() * Eigen::MatrixXd::Identity(z.rows(), rank);
}

// P = I - Q1 Q1^T with Q1 an orthonormal basis of range(Z).
inline Eigen::MatrixXd null_space_projector(const Eigen::MatrixXd& z) {
  if (z.rows() < z.cols())
    throw validation_error(
        "null_space_projector: core has fewer measurements than design "
        "columns");
  const Eigen::MatrixXd q1 = range_basis(z);
  return Eigen::MatrixXd::Identity(z.rows(), z.rows()) - q1 * q1.transpose();
}

// H_perp = (I - Q1 Q1^T) H without forming the projector.
inline Eigen::MatrixXd orthogonalized_covariates(const Eigen::MatrixXd& h,
                                                 const Eigen::MatrixXd& z) {
  if (z.rows() < z.cols())
    throw validation_error(
        "orthogonalized_covariates: core has fewer measurements than design "
        "columns");
  if (h.rows() != z.rows())
    throw validation_error("orthogonalized_covariates: row mismatch");
  const Eigen::MatrixXd q1 = range_basis(z);
  return h - q1 * (q1.transpose() * h);
}

// Fixed per-core smoothing inputs: the raw basis plus the knot layout that
// produced it.  The projection depends on theta and is applied elsewhere.
struct SmoothingDesign {
  std::vector<double> knots;  // metres
  double scale = 1.0;         // depth divisor used by the basis
  Eigen::MatrixXd h;          // n_i x spec.dim() raw basis
};

inline SmoothingDesign make_smoothing_design(const Eigen::VectorXd& depths,
                                             const SplineSpec& spec) {
  SmoothingDesign d;
  d.knots = knot_vector(depths, spec.n_knots);
  d.scale = depths.size() > 0 ? depths.maxCoeff() : 1.0;
  if (!(d.scale > 0.0)) d.scale = 1.0;
  d.h = spline_basis(depths, spec, d.knots, d.scale);
  return d;
}

}  // namespace firn

#endif
