#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vct {

struct Assignment {
  std::vector<std::size_t> row_to_col;  // one distinct column per row
  double cost = 0.0;
};

// Minimum-cost assignment of every row of a rows×cols cost matrix
// (row-major, rows <= cols) to a distinct column, O(rows² · cols).
// Throws std::invalid_argument when rows > cols or a cost is not finite.
Assignment solve_assignment(std::span<const double> cost, std::size_t rows, std::size_t cols);

}  // namespace vct
