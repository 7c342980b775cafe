#include <doctest.h>

#include <vector>

#include <Eigen/Dense>

#include "firn/rng.hpp"
#include "firn/smoothing.hpp"

TEST_SUITE_BEGIN("smoothing");

namespace {

// Independent Cox-de Boor evaluator used to check that the truncated power
// basis spans the classical spline space for the same interior knots.
double deboor(int i, int d, const std::vector<double>& t, double x) {
  if (d == 0) return (x >= t[i] && x < t[i + 1]) ? 1.0 : 0.0;
  double a = 0.0, b = 0.0;
  if (t[i + d] > t[i]) a = (x - t[i]) / (t[i + d] - t[i]) * deboor(i, d - 1, t, x);
  if (t[i + d + 1] > t[i + 1])
    b = (t[i + d + 1] - x) / (t[i + d + 1] - t[i + 1]) * deboor(i + 1, d - 1, t, x);
  return a + b;
}

Eigen::MatrixXd bspline_matrix(const Eigen::VectorXd& x, int degree,
                               const std::vector<double>& interior, double xmax) {
  std::vector<double> t;
  for (int i = 0; i <= degree; ++i) t.push_back(0.0);
  for (double k : interior) t.push_back(k);
  for (int i = 0; i <= degree; ++i) t.push_back(xmax);
  const int nb = static_cast<int>(interior.size()) + degree + 1;
  Eigen::MatrixXd b(x.size(), nb);
  for (Eigen::Index r = 0; r < x.size(); ++r)
    for (int i = 0; i < nb; ++i) b(r, i) = deboor(i, degree, t, x[r]);
  return b;
}

Eigen::MatrixXd ortho_basis(const Eigen::MatrixXd& m) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  qr.setThreshold(1e-9);
  return qr.householderQ() * Eigen::MatrixXd::Identity(m.rows(), qr.rank());
}

Eigen::VectorXd linspace(double a, double b, int n) {
  return Eigen::VectorXd::LinSpaced(n, a, b);
}

}  // namespace

TEST_CASE("spec dimensions and validation") {
  CHECK(firn::SplineSpec{2, 2}.dim() == 4);
  CHECK(firn::SplineSpec{3, 0}.dim() == 3);
  CHECK(firn::SplineSpec{3, 3}.dim() == 6);
  CHECK_THROWS_AS((firn::SplineSpec{4, 1}.validate()), firn::validation_error);
  CHECK_THROWS_AS((firn::SplineSpec{2, 5}.validate()), firn::validation_error);
  CHECK_THROWS_AS((firn::SplineSpec{2, -1}.validate()), firn::validation_error);
}

TEST_CASE("knots sit at equally spaced depth quantiles") {
  const Eigen::VectorXd depths = linspace(0.0, 10.0, 11);
  const auto k2 = firn::knot_vector(depths, 2);
  REQUIRE(k2.size() == 2);
  CHECK(k2[0] == doctest::Approx(10.0 / 3.0).epsilon(1e-12));
  CHECK(k2[1] == doctest::Approx(20.0 / 3.0).epsilon(1e-12));
  const auto k3 = firn::knot_vector(depths, 3);
  CHECK(k3[1] == doctest::Approx(5.0).epsilon(1e-12));
}

TEST_CASE("projector properties") {
  firn::Philox rng(7, 0);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 40;
    Eigen::MatrixXd z(n, 4);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < 4; ++j) z(i, j) = rng.normal();
    const Eigen::MatrixXd p = firn::null_space_projector(z);
    CHECK((p - p.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((p * p - p).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((p * z).cwiseAbs().maxCoeff() < 1e-10);
    // annihilates exactly span(Z)
    Eigen::VectorXd w(4);
    for (int j = 0; j < 4; ++j) w[j] = rng.normal();
    CHECK((p * (z * w)).cwiseAbs().maxCoeff() < 1e-9);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal();
    CHECK((p * v).norm() > 1e-3);  // a random vector is not in span(Z)
  }
}

TEST_CASE("orthogonalised covariates are orthogonal to the design") {
  firn::Philox rng(13, 0);
  const Eigen::VectorXd depths = linspace(0.5, 60.0, 50);
  const firn::SplineSpec spec{3, 2};
  const auto sd = firn::make_smoothing_design(depths, spec);
  Eigen::MatrixXd z(depths.size(), 4);
  for (Eigen::Index i = 0; i < depths.size(); ++i) {
    z(i, 0) = depths[i];
    z(i, 1) = std::max(0.0, depths[i] - 15.0);
    z(i, 2) = std::max(0.0, depths[i] - 30.0);
    z(i, 3) = std::max(0.0, depths[i] - 45.0);
  }
  const Eigen::MatrixXd hp = firn::orthogonalized_covariates(sd.h, z);
  CHECK((z.transpose() * hp).cwiseAbs().maxCoeff() < 1e-9);
  // matches the explicit projector route
  const Eigen::MatrixXd p = firn::null_space_projector(z);
  CHECK((hp - p * sd.h).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("fitted values are invariant to orthogonalisation") {
  firn::Philox rng(19, 0);
  const Eigen::VectorXd depths = linspace(0.4, 80.0, 70);
  const firn::SplineSpec spec{2, 2};
  const auto sd = firn::make_smoothing_design(depths, spec);
  Eigen::MatrixXd z(depths.size(), 2);
  for (Eigen::Index i = 0; i < depths.size(); ++i) {
    z(i, 0) = 1.0;
    z(i, 1) = depths[i];
  }
  const Eigen::MatrixXd hp = firn::orthogonalized_covariates(sd.h, z);
  Eigen::VectorXd y(depths.size());
  for (Eigen::Index i = 0; i < depths.size(); ++i) y[i] = rng.normal();
  Eigen::MatrixXd a(depths.size(), 2 + sd.h.cols());
  a << z, sd.h;
  Eigen::MatrixXd b(depths.size(), 2 + hp.cols());
  b << z, hp;
  const Eigen::VectorXd fit_a = a * a.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd fit_b = b * b.colPivHouseholderQr().solve(y);
  CHECK((fit_a - fit_b).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("all-zero design columns are handled by the rank-aware path") {
  const Eigen::VectorXd depths = linspace(0.2, 8.0, 12);
  // shallow core: only stage 1 reached, columns 2-4 identically zero
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(depths.size(), 4);
  z.col(0) = depths;
  const firn::SplineSpec spec{2, 1};
  const auto sd = firn::make_smoothing_design(depths, spec);
  const Eigen::MatrixXd hp = firn::orthogonalized_covariates(sd.h, z);
  CHECK(hp.allFinite());
  CHECK((z.transpose() * hp).cwiseAbs().maxCoeff() < 1e-10);
  // the live column is projected out, the dead ones change nothing
  const Eigen::MatrixXd p = firn::null_space_projector(z);
  CHECK((p * z.col(0)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("degenerate core rejected") {
  Eigen::MatrixXd z(3, 4);
  z.setOnes();
  CHECK_THROWS_AS(firn::null_space_projector(z), firn::validation_error);
  Eigen::MatrixXd h(3, 2);
  h.setOnes();
  CHECK_THROWS_AS(firn::orthogonalized_covariates(h, z), firn::validation_error);
}

TEST_CASE("truncated power basis spans the B-spline space") {
  for (const firn::SplineSpec spec : {firn::SplineSpec{2, 2}, firn::SplineSpec{3, 2},
                                      firn::SplineSpec{2, 3}, firn::SplineSpec{3, 0}}) {
    const Eigen::VectorXd depths = linspace(0.25, 49.75, 100);
    const auto sd = firn::make_smoothing_design(depths, spec);
    // add the constant column the model carries in the intercept
    Eigen::MatrixXd full(depths.size(), sd.h.cols() + 1);
    full.col(0).setOnes();
    full.rightCols(sd.h.cols()) = sd.h;
    const Eigen::MatrixXd bs =
        bspline_matrix(depths, spec.degree, sd.knots, 50.0);
    REQUIRE(bs.cols() == full.cols());
    const Eigen::MatrixXd qa = ortho_basis(full);
    const Eigen::MatrixXd qb = ortho_basis(bs);
    REQUIRE(qa.cols() == qb.cols());
    const Eigen::MatrixXd pa = qa * qa.transpose();
    const Eigen::MatrixXd pb = qb * qb.transpose();
    CHECK((pa - pb).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_SUITE_END();
