#ifndef FIRN_OPTIM_HPP
#define FIRN_OPTIM_HPP

#include <algorithm>
#include <functional>
#include <vector>

#include <Eigen/Core>

namespace firn {

struct SimplexResult {
  Eigen::VectorXd x;
  double fmin = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Nelder-Mead simplex minimization with the standard coefficients
// (reflect 1, expand 2, contract 1/2, shrink 1/2).  Stops when the
// function spread across the simplex falls under tol.
inline SimplexResult nelder_mead(
    const std::function<double(const Eigen::VectorXd&)>& f,
    const Eigen::VectorXd& x0, double step, int max_iter = 2000,
    double tol = 1e-12) {
  const Eigen::Index n = x0.size();
  std::vector<Eigen::VectorXd> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  for (Eigen::Index i = 0; i < n; ++i) xs[i + 1][i] += step;
  for (Eigen::Index i = 0; i <= n; ++i) fs[i] = f(xs[i]);

  SimplexResult out;
  std::vector<Eigen::Index> order(n + 1);
  for (out.iterations = 0; out.iterations < max_iter; ++out.iterations) {
    for (Eigen::Index i = 0; i <= n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](Eigen::Index a, Eigen::Index b) { return fs[a] < fs[b]; });
    const Eigen::Index best = order[0], worst = order[n], second = order[n - 1];
    if (fs[worst] - fs[best] <
        tol * (1.0 + std::fabs(fs[best]) + std::fabs(fs[worst]))) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i <= n; ++i)
      if (i != worst) centroid += xs[i];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd refl = centroid + (centroid - xs[worst]);
    const double f_refl = f(refl);
    if (f_refl < fs[best]) {
      const Eigen::VectorXd expd = centroid + 2.0 * (centroid - xs[worst]);
      const double f_expd = f(expd);
      if (f_expd < f_refl) {
        xs[worst] = expd;
        fs[worst] = f_expd;
      } else {
        xs[worst] = refl;
        fs[worst] = f_refl;
      }
      continue;
    }
    if (f_refl < fs[second]) {
      xs[worst] = refl;
      fs[worst] = f_refl;
      continue;
    }
    const Eigen::VectorXd contr =
        f_refl < fs[worst] ? centroid + 0.5 * (refl - centroid)
                           : centroid + 0.5 * (xs[worst] - centroid);
    const double f_contr = f(contr);
    if (f_contr < std::min(f_refl, fs[worst])) {
      xs[worst] = contr;
      fs[worst] = f_contr;
      continue;
    }
    for (Eigen::Index i = 0; i <= n; ++i) {
      if (i == best) continue;
      xs[i] = xs[best] + 0.5 * (xs[i] - xs[best]);
      fs[i] = f(xs[i]);
    }
  }
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i <= n; ++i)
    if (fs[i] < fs[best]) best = i;
  out.x = xs[best];
  out.fmin = fs[best];
  return out;
}

}  // namespace firn

#endif
