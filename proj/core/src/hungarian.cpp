#include "instformer/hungarian.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "instformer/error.hpp"

namespace instformer {

namespace {

// Shortest augmenting path with row/column potentials, O(m^3).
std::vector<std::size_t> solve(const std::vector<std::vector<double>>& a) {
  const std::size_t n = a.size();
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
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
  std::vector<std::size_t> column(n);
  for (std::size_t j = 1; j <= n; ++j) column[p[j] - 1] = j - 1;
  return column;
}

double total(const std::vector<std::vector<double>>& a, const std::vector<std::size_t>& column) {
  double s = 0.0;
  for (std::size_t r = 0; r < column.size(); ++r) s += a[r][column[r]];
  return s;
}

}  // namespace

Assignment hungarian(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  for (std::size_t r = 0; r < n; ++r) {
    if (cost[r].size() != n)
      throw InvalidArgument("hungarian: cost matrix is not square (row " + std::to_string(r) + " has " +
                            std::to_string(cost[r].size()) + " entries, expected " + std::to_string(n) + ")");
    for (double c : cost[r])
      if (!std::isfinite(c)) throw InvalidArgument("hungarian: non-finite cost in row " + std::to_string(r));
  }
  if (n == 0) return {};

  const auto first = solve(cost);
  const double optimum = total(cost, first);
  const double tol = 1e-12 * std::max(1.0, std::abs(optimum));

  // Fix rows one at a time to the smallest column that still admits an optimal completion.
  std::vector<std::size_t> column(n);
  std::vector<char> taken(n, 0);
  double prefix = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<std::size_t> free_cols;
    for (std::size_t c = 0; c < n; ++c)
      if (!taken[c]) free_cols.push_back(c);
    std::vector<double> completion;
    for (std::size_t c : free_cols) {
      double best = prefix + cost[r][c];
      if (r + 1 < n) {
        std::vector<std::vector<double>> sub;
        for (std::size_t rr = r + 1; rr < n; ++rr) {
          std::vector<double> row;
          for (std::size_t cc : free_cols)
            if (cc != c) row.push_back(cost[rr][cc]);
          sub.push_back(std::move(row));
        }
        best += total(sub, solve(sub));
      }
      completion.push_back(best);
    }
    const double reachable = std::min(optimum, *std::min_element(completion.begin(), completion.end()));
    for (std::size_t k = 0; k < free_cols.size(); ++k) {
      if (completion[k] <= reachable + tol) {
        column[r] = free_cols[k];
        taken[free_cols[k]] = 1;
        prefix += cost[r][free_cols[k]];
        break;
      }
    }
  }
  return {column, total(cost, column)};
}

}  // namespace instformer
