#pragma once

#include <cstddef>
#include <vector>

namespace instformer {

struct Assignment {
  std::vector<std::size_t> column;  // row r is assigned to column[r]
  double cost = 0.0;
};

/// Minimum-cost perfect assignment on a square cost matrix given as rows.
/// Among optimal assignments, the lexicographically smallest column sequence is returned.
Assignment hungarian(const std::vector<std::vector<double>>& cost);

}  // namespace instformer
