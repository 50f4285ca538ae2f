#include "vct/hungarian.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace vct {

// Shortest augmenting paths with row/column potentials; index 0 is a
// sentinel column that holds the row being inserted.
Assignment solve_assignment(std::span<const double> cost, std::size_t rows, std::size_t cols) {
  if (rows > cols) {
    throw std::invalid_argument("solve_assignment: " + std::to_string(rows) + " rows exceed " +
                                std::to_string(cols) + " columns");
  }
  if (cost.size() != rows * cols) throw std::invalid_argument("solve_assignment: cost size mismatch");
  for (double c : cost)
    if (!std::isfinite(c)) throw std::invalid_argument("solve_assignment: non-finite cost");

  const double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = rows, m = cols;
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * m + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment a;
  a.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] != 0) a.row_to_col[p[j] - 1] = j - 1;
  // Sum in row order so the total is reproducible bit for bit.
  for (std::size_t i = 0; i < n; ++i) a.cost += cost[i * m + a.row_to_col[i]];
  return a;
}

}  // namespace vct
