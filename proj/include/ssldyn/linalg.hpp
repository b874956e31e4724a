#pragma once

#include <cstddef>
#include <vector>

#include "ssldyn/matrix.hpp"
#include "ssldyn/rng.hpp"

namespace ssldyn {

/// Eigendecomposition A = V diag(values) V^T of a symmetric matrix.
/// `values` ascend; column i of `vectors` belongs to values[i].
struct SymEig {
  std::vector<double> values;
  Matrix vectors;

  std::size_t dim() const noexcept { return values.size(); }
};

inline constexpr std::size_t kJacobiMaxSweeps = 50;
inline constexpr double kJacobiTolerance = 1e-12;

/// Cyclic Jacobi eigensolver.
///
/// Rejects non-square input and input with max|A - A^T| above
/// 1e-12 * max(1, max|A|). Sweeps until every off-diagonal entry of the
/// rotated matrix is below tol * max(1, max|A|); throws ConvergenceError
/// carrying the remaining off-diagonal magnitude after kJacobiMaxSweeps.
SymEig sym_eig(const Matrix& a, double tol = kJacobiTolerance);

/// Reassemble V diag(values) V^T.
Matrix reconstruct(const SymEig& eig);

/// Polar factor W (W^T W)^{-1/2}: the orthonormal-column matrix nearest to W
/// in Frobenius norm. Requires rows >= cols and smallest singular value
/// above 1e-12 (SingularityError otherwise).
Matrix orthonormalize(const Matrix& w);

/// rows x cols matrix of independent standard normals.
Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng);

/// Haar-distributed semi-orthonormal matrix: Householder QR of a Gaussian
/// matrix with the signs of diag(R) folded into Q.
Matrix sample_haar(std::size_t rows, std::size_t cols, Rng& rng);
Matrix sample_haar(std::size_t rows, std::size_t cols, RngSeed seed);

/// max_ij |Q_ij| * sqrt(h) / log(h) with h = rows(Q) >= 2.
double max_entry_statistic(const Matrix& q);

/// Singular values in descending order (via the smaller Gram matrix).
std::vector<double> singular_values(const Matrix& a);

/// Principal angles (radians, ascending) between the column spans of A and B.
/// Both must have the same row count and full column rank.
std::vector<double> principal_angles(const Matrix& a, const Matrix& b);

}  // namespace ssldyn
