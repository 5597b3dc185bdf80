#pragma once

// Exact minimum-cost assignment (Kuhn-Munkres with potentials, O(n^3)).
// Rectangular N×L costs are padded with zero-cost dummies to a square.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "uplvp/error.hpp"
#include "uplvp/tensor.hpp"

namespace uplvp {

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (kernel, target), by kernel
  double total_cost = 0;
  std::vector<std::size_t> unmatched_kernels;

  bool empty() const { return pairs.empty(); }
};

template <typename T>
Assignment hungarian(const BasicTensor<T>& cost) {
  require_rank(cost.shape(), 2, "hungarian");
  const std::size_t rows = cost.dim(0), cols = cost.dim(1);
  for (T v : cost.data()) {
    if (!std::isfinite(static_cast<double>(v))) throw ContractError("hungarian: non-finite cost");
  }
  Assignment out;
  if (rows == 0 || cols == 0) {
    for (std::size_t r = 0; r < rows; ++r) out.unmatched_kernels.push_back(r);
    return out;
  }

  const std::size_t n = std::max(rows, cols);
  auto at = [&](std::size_t i, std::size_t j) -> double {
    return i < rows && j < cols ? static_cast<double>(cost.at(i, j)) : 0.0;
  };
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based potentials; p[j] = row assigned to column j.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = kInf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = at(i0 - 1, j - 1) - u[i0] - v[j];
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

  std::vector<long> col_of_row(n, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    if (p[j] != 0) col_of_row[p[j] - 1] = static_cast<long>(j - 1);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const long c = col_of_row[r];
    if (c >= 0 && static_cast<std::size_t>(c) < cols) {
      out.pairs.emplace_back(r, static_cast<std::size_t>(c));
      out.total_cost += static_cast<double>(cost.at(r, static_cast<std::size_t>(c)));
    } else {
      out.unmatched_kernels.push_back(r);
    }
  }
  return out;
}

}  // namespace uplvp
