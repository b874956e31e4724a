#include "ssldyn/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ssldyn/errors.hpp"

namespace ssldyn {

namespace {

double max_offdiag(const Matrix& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = i + 1; j < a.cols(); ++j) m = std::max(m, std::abs(a(i, j)));
  return m;
}

void rotate(Matrix& a, Matrix& v, std::size_t p, std::size_t q) {
  const double apq = a(p, q);
  if (apq == 0.0) return;
  const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
  double t;
  if (std::abs(theta) > 1e150) {
    t = 0.5 / theta;
  } else {
    t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
    if (theta < 0.0) t = -t;
  }
  const double c = 1.0 / std::sqrt(t * t + 1.0);
  const double s = t * c;
  const std::size_t n = a.rows();

  a(p, p) -= t * apq;
  a(q, q) += t * apq;
  a(p, q) = 0.0;
  a(q, p) = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    if (r == p || r == q) continue;
    const double arp = a(r, p);
    const double arq = a(r, q);
    const double np = c * arp - s * arq;
    const double nq = s * arp + c * arq;
    a(r, p) = np;
    a(p, r) = np;
    a(r, q) = nq;
    a(q, r) = nq;
  }
  for (std::size_t r = 0; r < n; ++r) {
    double* vr = v.row(r).data();
    const double vrp = vr[p];
    const double vrq = vr[q];
    vr[p] = c * vrp - s * vrq;
    vr[q] = s * vrp + c * vrq;
  }
}

}  // namespace

SymEig sym_eig(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) {
    throw ValidationError("sym_eig: matrix is " + std::to_string(a.rows()) + "x" +
                          std::to_string(a.cols()) + ", expected square");
  }
  if (!a.all_finite()) throw ValidationError("sym_eig: non-finite entries");
  const double scale = std::max(1.0, max_abs(a));
  if (asymmetry(a) >= 1e-12 * scale) throw ValidationError("sym_eig: matrix is not symmetric");

  const std::size_t n = a.rows();
  Matrix work = a;
  // Symmetrize exactly so both triangles stay in lockstep.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (work(i, j) + work(j, i));
      work(i, j) = m;
      work(j, i) = m;
    }
  Matrix v = Matrix::identity(n);

  const double threshold = tol * scale;
  bool converged = max_offdiag(work) <= threshold;
  for (std::size_t sweep = 0; sweep < kJacobiMaxSweeps && !converged; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) rotate(work, v, p, q);
    converged = max_offdiag(work) <= threshold;
  }
  if (!converged) {
    const double off = max_offdiag(work);
    throw ConvergenceError("sym_eig: no convergence after " + std::to_string(kJacobiMaxSweeps) +
                               " sweeps, off-diagonal residual " + std::to_string(off),
                           off);
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return work(i, i) < work(j, j); });
  SymEig out;
  out.values.resize(n);
  out.vectors = Matrix(n, n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = work(order[k], order[k]);
    for (std::size_t r = 0; r < n; ++r) out.vectors(r, k) = v(r, order[k]);
  }
  return out;
}

Matrix reconstruct(const SymEig& eig) {
  Matrix scaled = eig.vectors;
  for (std::size_t r = 0; r < scaled.rows(); ++r)
    for (std::size_t k = 0; k < scaled.cols(); ++k) scaled(r, k) *= eig.values[k];
  return matmul_nt(scaled, eig.vectors);
}

Matrix orthonormalize(const Matrix& w) {
  if (w.rows() < w.cols()) {
    throw ValidationError("orthonormalize: need rows >= cols, got " + std::to_string(w.rows()) +
                          "x" + std::to_string(w.cols()));
  }
  Matrix current = w;
  // One polar step is exact in exact arithmetic; a second pass removes the
  // rounding left by squaring the condition number in W^T W.
  for (int pass = 0; pass < 3; ++pass) {
    const SymEig g = sym_eig(matmul_tn(current, current));
    const double smallest = g.values.front();
    if (!(smallest > 1e-24)) {
      throw SingularityError("orthonormalize: smallest singular value " +
                             std::to_string(std::sqrt(std::max(smallest, 0.0))) +
                             " is not above 1e-12");
    }
    Matrix inv_sqrt_half = g.vectors;
    for (std::size_t r = 0; r < inv_sqrt_half.rows(); ++r)
      for (std::size_t k = 0; k < inv_sqrt_half.cols(); ++k)
        inv_sqrt_half(r, k) /= std::sqrt(g.values[k]);
    const Matrix inv_sqrt = matmul_nt(inv_sqrt_half, g.vectors);
    current = matmul(current, inv_sqrt);
    if (orthonormality_residual(current) < 1e-14) break;
  }
  return current;
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix g(rows, cols);
  for (double& x : g.data()) x = rng.normal();
  return g;
}

Matrix sample_haar(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows < cols) {
    throw ValidationError("sample_haar: rows (" + std::to_string(rows) + ") < cols (" +
                          std::to_string(cols) + ")");
  }
  // Work on the transpose so each column of the Gaussian matrix is contiguous.
  Matrix a = gaussian_matrix(rows, cols, rng).transposed();
  const std::size_t m = rows;
  std::vector<double> r_diag(cols, 0.0);
  std::vector<double> v_norm2(cols, 0.0);

  for (std::size_t k = 0; k < cols; ++k) {
    double* x = a.row(k).data();
    double norm_sq = 0.0;
    for (std::size_t i = k; i < m; ++i) norm_sq += x[i] * x[i];
    const double norm = std::sqrt(norm_sq);
    const double alpha = x[k] >= 0.0 ? -norm : norm;
    r_diag[k] = alpha;
    x[k] -= alpha;
    double vn = 0.0;
    for (std::size_t i = k; i < m; ++i) vn += x[i] * x[i];
    v_norm2[k] = vn;
    if (vn == 0.0) continue;
    for (std::size_t j = k + 1; j < cols; ++j) {
      double* y = a.row(j).data();
      double s = 0.0;
      for (std::size_t i = k; i < m; ++i) s += x[i] * y[i];
      const double f = 2.0 * s / vn;
      for (std::size_t i = k; i < m; ++i) y[i] -= f * x[i];
    }
  }

  // Thin Q from the stored reflectors, accumulated back to front.
  Matrix qt(cols, m);
  for (std::size_t j = 0; j < cols; ++j) qt(j, j) = 1.0;
  for (std::size_t kk = cols; kk-- > 0;) {
    if (v_norm2[kk] == 0.0) continue;
    const double* x = a.row(kk).data();
    for (std::size_t j = kk; j < cols; ++j) {
      double* y = qt.row(j).data();
      double s = 0.0;
      for (std::size_t i = kk; i < m; ++i) s += x[i] * y[i];
      const double f = 2.0 * s / v_norm2[kk];
      for (std::size_t i = kk; i < m; ++i) y[i] -= f * x[i];
    }
  }

  // Q diag(sign(R_jj)) makes the factorization unique and the law of Q Haar.
  for (std::size_t j = 0; j < cols; ++j) {
    if (r_diag[j] < 0.0) {
      for (double& y : qt.row(j)) y = -y;
    }
  }
  return qt.transposed();
}

Matrix sample_haar(std::size_t rows, std::size_t cols, RngSeed seed) {
  Rng rng(seed);
  return sample_haar(rows, cols, rng);
}

double max_entry_statistic(const Matrix& q) {
  const std::size_t h = q.rows();
  if (h < 2) throw ValidationError("max_entry_statistic: need at least 2 rows");
  const double dh = static_cast<double>(h);
  return max_abs(q) * std::sqrt(dh) / std::log(dh);
}

std::vector<double> singular_values(const Matrix& a) {
  const Matrix gram = a.rows() >= a.cols() ? matmul_tn(a, a) : matmul_nt(a, a);
  const SymEig eig = sym_eig(gram);
  std::vector<double> out(eig.values.rbegin(), eig.values.rend());
  for (double& s : out) s = std::sqrt(std::max(s, 0.0));
  return out;
}

std::vector<double> principal_angles(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ValidationError("principal_angles: row counts differ");
  const Matrix qa = orthonormalize(a);
  const Matrix qb = orthonormalize(b);
  std::vector<double> cosines = singular_values(matmul_tn(qa, qb));
  std::vector<double> angles;
  angles.reserve(cosines.size());
  for (double c : cosines) angles.push_back(std::acos(std::clamp(c, -1.0, 1.0)));
  std::sort(angles.begin(), angles.end());
  return angles;
}

}  // namespace ssldyn
