#include "einv/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "einv/error.hpp"

namespace einv {

nlohmann::json Matrix::to_json() const {
  auto out = nlohmann::json::array();
  for (std::size_t r = 0; r < rows; ++r) {
    out.push_back(std::vector<double>(data.begin() + static_cast<long>(r * cols),
                                      data.begin() + static_cast<long>((r + 1) * cols)));
  }
  return out;
}

Matrix Matrix::from_json(const nlohmann::json& j) {
  Matrix m;
  m.rows = j.size();
  m.cols = m.rows == 0 ? 0 : j.at(0).size();
  for (const auto& row : j) {
    if (row.size() != m.cols) throw ValidationError("ragged matrix");
    for (const auto& v : row) m.data.push_back(v.get<double>());
  }
  return m;
}

std::vector<long> solve_assignment(const Matrix& score, bool maximize) {
  for (const double v : score.data) {
    if (!std::isfinite(v)) throw ValidationError("assignment needs a finite score matrix");
  }
  const std::size_t n = std::max(score.rows, score.cols);
  if (n == 0) return {};
  // Square cost matrix for the minimizing solver.
  std::vector<double> cost(n * n, 0.0);
  for (std::size_t r = 0; r < score.rows; ++r) {
    for (std::size_t c = 0; c < score.cols; ++c) cost[r * n + c] = maximize ? -score(r, c) : score(r, c);
  }

  // Shortest augmenting path formulation with potentials; 1-based bookkeeping.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<bool> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
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

  std::vector<long> row_to_col(score.rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t r = p[j] - 1;
    const std::size_t c = j - 1;
    if (r < score.rows && c < score.cols) row_to_col[r] = static_cast<long>(c);
  }
  return row_to_col;
}

}  // namespace einv
