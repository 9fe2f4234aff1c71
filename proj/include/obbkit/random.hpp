// Copyright (c) 2026 obbkit contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>

namespace obbkit {

/// All randomness in obbkit flows through explicitly seeded generators;
/// there is no global RNG state.
using Rng = std::mt19937_64;

inline Eigen::MatrixXd uniform_matrix(Eigen::Index rows, Eigen::Index cols,
                                      double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = dist(rng);
    }
  }
  return m;
}

inline Eigen::VectorXd uniform_vector(Eigen::Index size, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Eigen::VectorXd v(size);
  for (Eigen::Index i = 0; i < size; ++i) v(i) = dist(rng);
  return v;
}

}  // namespace obbkit
