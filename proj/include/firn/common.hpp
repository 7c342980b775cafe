#ifndef FIRN_COMMON_HPP
#define FIRN_COMMON_HPP

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace firn {

class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input files or config.  Messages carry file/line context.
class parse_error : public error {
 public:
  using error::error;
};

// Structurally valid input that violates a model precondition.
class validation_error : public error {
 public:
  using error::error;
};

// Linear algebra failure that survived the jitter escalation policy.
class numerical_error : public error {
 public:
  using error::error;
};

// Bad CLI invocation.
class usage_error : public error {
 public:
  using error::error;
};

// Tree-structured summation.  The evaluation order depends only on n, never
// on thread count or chunking, so accumulated log-likelihoods are exactly
// reproducible.
inline double pairwise_sum(const double* x, Eigen::Index n) {
  if (n <= 8) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const Eigen::Index h = n / 2;
  return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}

inline double pairwise_sum(const Eigen::VectorXd& x) {
  return pairwise_sum(x.data(), x.size());
}

// Shortest decimal string that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

// Strict double parse; the whole token must be consumed.
inline bool parse_double(std::string_view tok, double& out) {
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

inline bool parse_long(std::string_view tok, long& out) {
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return res.ec == std::errc() && res.ptr == tok.data() + tok.size();
}

// FNV-1a, used to fingerprint resolved run configs in output headers.
inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace firn

#endif
