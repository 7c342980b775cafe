#ifndef FIRN_RNG_HPP
#define FIRN_RNG_HPP

#include <array>
#include <cmath>
#include <cstdint>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "firn/common.hpp"

namespace firn {

/**
 * @brief Counter-based generator: Philox4x64 with 10 rounds.
 *
 * Output sequence is identical to numpy.random.Philox for the same
 * (key, counter) state, which is what the known-answer tests pin.  The
 * 128-bit key doubles as a stream id, so independent substreams are cheap
 * and the full generator state is four counter words, two key words and a
 * buffer position; that is all a checkpoint needs to store.
 */
class Philox {
 public:
  explicit Philox(std::uint64_t seed, std::uint64_t stream = 0)
      : key_{seed, stream}, ctr_{0, 0, 0, 0}, pos_(4) {}

  std::uint64_t next_raw() {
    if (pos_ == 4) {
      increment_counter();
      block_ = run_block(ctr_, key_);
      pos_ = 0;
    }
    return block_[pos_++];
  }

  // Uniform on the open interval (0,1); 53-bit resolution, never 0 or 1.
  double uniform() {
    return (static_cast<double>(next_raw() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Box-Muller without the cached second variate, so the state stays
  // exactly (key, counter, position).
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential() { return -std::log(uniform()); }

  // Marsaglia-Tsang; unit rate.
  double gamma_draw(double shape) {
    if (!(shape > 0.0)) throw numerical_error("gamma_draw: shape must be > 0");
    if (shape < 1.0) {
      const double u = uniform();
      return gamma_draw(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  double chi2(double dof) { return 2.0 * gamma_draw(0.5 * dof); }

  // Inverse gamma with density propto x^{-(a+1)} exp(-b/x).
  double inv_gamma(double a, double b) { return b / gamma_draw(a); }

  double student_t(double nu) {
    return normal() / std::sqrt(chi2(nu) / nu);
  }

  struct State {
    std::array<std::uint64_t, 2> key;
    std::array<std::uint64_t, 4> ctr;
    int pos;
  };

  State state() const { return {key_, ctr_, pos_}; }

  void set_state(const State& s) {
    key_ = s.key;
    ctr_ = s.ctr;
    pos_ = s.pos;
    // The buffer is a pure function of (key, counter); rebuild unless the
    // saved position says it was already exhausted.
    if (pos_ < 4) block_ = run_block(ctr_, key_);
  }

 private:
  static std::pair<std::uint64_t, std::uint64_t> mulhilo(std::uint64_t a,
                                                         std::uint64_t b) {
    const unsigned __int128 p =
        static_cast<unsigned __int128>(a) * static_cast<unsigned __int128>(b);
    return {static_cast<std::uint64_t>(p >> 64), static_cast<std::uint64_t>(p)};
  }

  static std::array<std::uint64_t, 4> run_block(
      std::array<std::uint64_t, 4> c, std::array<std::uint64_t, 2> k) {
    constexpr std::uint64_t M0 = 0xD2E7470EE14C6C93ull;
    constexpr std::uint64_t M1 = 0xCA5A826395121157ull;
    constexpr std::uint64_t W0 = 0x9E3779B97F4A7C15ull;
    constexpr std::uint64_t W1 = 0xBB67AE8584CAA73Bull;
    for (int r = 0; r < 10; ++r) {
      const auto [hi0, lo0] = mulhilo(M0, c[0]);
      const auto [hi1, lo1] = mulhilo(M1, c[2]);
      c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
      if (r < 9) {
        k[0] += W0;
        k[1] += W1;
      }
    }
    return c;
  }

  void increment_counter() {
    for (int i = 0; i < 4; ++i) {
      if (++ctr_[i] != 0) break;
    }
  }

  std::array<std::uint64_t, 2> key_;
  std::array<std::uint64_t, 4> ctr_;
  std::array<std::uint64_t, 4> block_;
  int pos_;  // next index into block_; 4 means exhausted
};

inline Eigen::VectorXd normal_vector(Philox& rng, Eigen::Index n) {
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
  return z;
}

// Draw from N(mean, L L^T) given the lower Cholesky factor L.
inline Eigen::VectorXd mvn_draw(Philox& rng, const Eigen::VectorXd& mean,
                                const Eigen::MatrixXd& chol_lower) {
  return mean + chol_lower * normal_vector(rng, mean.size());
}

// Bartlett decomposition; scale_chol is the lower Cholesky factor of the
// Wishart scale matrix.
inline Eigen::MatrixXd wishart_draw(Philox& rng, double dof,
                                    const Eigen::MatrixXd& scale_chol) {
  const Eigen::Index p = scale_chol.rows();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(rng.chi2(dof - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = rng.normal();
  }
  const Eigen::MatrixXd la = scale_chol * a;
  return la * la.transpose();
}

// V ~ InvWishart(dof, S):  draw W ~ Wishart(dof, S^{-1}) and invert.
inline Eigen::MatrixXd inv_wishart_draw(Philox& rng, double dof,
                                        const Eigen::MatrixXd& scale) {
  const Eigen::MatrixXd sinv = scale.llt().solve(
      Eigen::MatrixXd::Identity(scale.rows(), scale.cols()));
  const Eigen::MatrixXd w = wishart_draw(rng, dof, Eigen::MatrixXd(sinv.llt().matrixL()));
  return w.llt().solve(Eigen::MatrixXd::Identity(w.rows(), w.cols()));
}

}  // namespace firn

#endif
