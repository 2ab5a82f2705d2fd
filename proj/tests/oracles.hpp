#pragma once

// Brute-force MMD references built from explicit sample pairs, shared by the
// unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <vector>

#include "shiftlab/objectives.hpp"

namespace oracles {

using shiftlab::Matrix;

inline double naive_mmd(const Matrix& X, const Matrix& Y, const std::vector<double>& sigma2) {
  auto k = [](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b, double s2) {
    double d2 = 0.0;
    for (Eigen::Index j = 0; j < a.size(); ++j) d2 += (a(j) - b(j)) * (a(j) - b(j));
    return std::exp(-d2 / (2.0 * s2));
  };
  double total = 0.0;
  for (double s2 : sigma2) {
    double xx = 0.0, yy = 0.0, xy = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (Eigen::Index j = 0; j < X.rows(); ++j) xx += k(X.row(i), X.row(j), s2);
    for (Eigen::Index i = 0; i < Y.rows(); ++i)
      for (Eigen::Index j = 0; j < Y.rows(); ++j) yy += k(Y.row(i), Y.row(j), s2);
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      for (Eigen::Index j = 0; j < Y.rows(); ++j) xy += k(X.row(i), Y.row(j), s2);
    const double n = static_cast<double>(X.rows()), m = static_cast<double>(Y.rows());
    total += xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m);
  }
  return total / static_cast<double>(sigma2.size());
}

/// Median over distinct pooled pairs, by full sort.
inline double naive_median_sq_distance(const Matrix& X, const Matrix& Y) {
  Matrix Z(X.rows() + Y.rows(), X.cols());
  Z << X, Y;
  std::vector<double> d;
  for (Eigen::Index i = 0; i < Z.rows(); ++i)
    for (Eigen::Index j = i + 1; j < Z.rows(); ++j) d.push_back((Z.row(i) - Z.row(j)).squaredNorm());
  std::sort(d.begin(), d.end());
  const auto n = d.size();
  return n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
}

}  // namespace oracles
