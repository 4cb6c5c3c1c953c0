#pragma once

#include <cstddef>
#include <vector>

#include "json.hpp"

namespace einv {

// Dense row-major matrix of doubles for small score and distance tables.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  nlohmann::json to_json() const;
  static Matrix from_json(const nlohmann::json& j);
};

// Optimal linear assignment (Hungarian algorithm, O(n^3)). Rectangular inputs
// are padded with zero-score dummies. Returns, for each row, the assigned column
// or -1 when the row lost to padding (rows > cols).
std::vector<long> solve_assignment(const Matrix& score, bool maximize = true);

}  // namespace einv
