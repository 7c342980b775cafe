#ifndef FIRN_ARCHIVE_HPP
#define FIRN_ARCHIVE_HPP

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "firn/common.hpp"

namespace firn {

// Thinned posterior draws plus everything WAIC and prediction consume.
// Blocks are keyed by parameter name; each matrix is n_draws x dim with one
// draw per row.  The map keeps keys sorted, which fixes the file layout.
struct ChainArchive {
  long n_draws = 0;
  std::map<std::string, Eigen::MatrixXd> blocks;
  std::vector<std::pair<std::string, double>> acceptance;
  std::uint64_t seed = 0;
  std::string config_digest;

  const Eigen::MatrixXd& block(const std::string& name) const {
    const auto it = blocks.find(name);
    if (it == blocks.end())
      throw validation_error("archive has no block named " + name);
    return it->second;
  }

  bool has_block(const std::string& name) const {
    return blocks.count(name) != 0;
  }
};

}  // namespace firn

#endif
