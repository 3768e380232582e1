#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "disagg/matrix.hpp"

namespace disagg {

/// Eigenvalues of a symmetric matrix, ascending.
inline Vector symmetric_eigenvalues(const Matrix& a) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("symmetric_eigenvalues: matrix not square");
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (std::abs(a(i, j) - a(j, i)) > 1e-9 * std::max(1.0, std::abs(a(i, j))))
        throw std::invalid_argument("symmetric_eigenvalues: matrix not symmetric");
      m(i, j) = a(i, j);
    }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("symmetric_eigenvalues: no convergence");
  const Eigen::VectorXd& ev = es.eigenvalues();
  return Vector(ev.data(), ev.data() + n);
}

}  // namespace disagg
