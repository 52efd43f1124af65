#pragma once

// Test-side reference computations for the distribution metrics.

#include <cmath>

#include "chimera/metrics.hpp"

namespace chimera::test {

// Denman-Beavers iteration for the principal square root of a matrix with
// positive real spectrum (here the non-symmetric product S_a S_b).
inline Matrix sqrtm_newton(const Matrix& a) {
  Matrix y = a, z = Matrix::Identity(a.rows(), a.cols());
  for (int i = 0; i < 100; ++i) {
    const Matrix y_next = 0.5 * (y + z.inverse());
    const Matrix z_next = 0.5 * (z + y.inverse());
    const double change = (y_next - y).norm();
    y = y_next;
    z = z_next;
    if (change < 1e-15 * y.norm()) break;
  }
  return y;
}

inline double fid_oracle(const eval::GaussianStats& a, const eval::GaussianStats& b) {
  return (a.mean - b.mean).squaredNorm() + (a.cov + b.cov - 2.0 * sqrtm_newton(a.cov * b.cov)).trace();
}

// (u.v / d + 1)^3
inline double poly_kernel(const Vector& u, const Vector& v) {
  const double s = u.dot(v) / static_cast<double>(u.size()) + 1.0;
  return s * s * s;
}

}  // namespace chimera::test
