#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "ssldyn/errors.hpp"
#include "ssldyn/linalg.hpp"
#include "ssldyn/matrix.hpp"
#include "ssldyn/rng.hpp"

using namespace ssldyn;

namespace {

Matrix random_symmetric(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) a(i, j) = a(j, i) = rng.normal();
  return a;
}

double eig_residual(const Matrix& a, const SymEig& e) {
  double worst = 0.0;
  for (std::size_t k = 0; k < e.dim(); ++k) {
    const auto v = e.vectors.col(k);
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double av = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) av += a(i, j) * v[j];
      worst = std::max(worst, std::fabs(av - e.values[k] * v[i]));
    }
  }
  return worst;
}

// Classical Gram-Schmidt, used only as a comparison point.
Matrix gram_schmidt(const Matrix& w) {
  Matrix q = w;
  for (std::size_t j = 0; j < q.cols(); ++j) {
    auto cj = q.col(j);
    for (std::size_t k = 0; k < j; ++k) {
      const auto ck = q.col(k);
      const double p = dot(w.col(j), ck);
      for (std::size_t i = 0; i < q.rows(); ++i) cj[i] -= p * ck[i];
    }
    const double nrm = norm2(cj);
    for (std::size_t i = 0; i < q.rows(); ++i) q(i, j) = cj[i] / nrm;
  }
  return q;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

TEST_CASE("matrix basics") {
  Matrix a{{1, 2, 3}, {4, 5, 6}};
  CHECK(a.rows() == 2);
  CHECK(a.cols() == 3);
  CHECK(a.transposed()(2, 1) == 6);
  const Matrix g = matmul_tn(a, a);
  CHECK(g == matmul(a.transposed(), a));
  CHECK(matmul_nt(a, a) == matmul(a, a.transposed()));
  CHECK(trace(Matrix::identity(4)) == 4);
  CHECK_THROWS_AS(matmul(a, a), ValidationError);
  CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1, 2, 3}), ValidationError);
  const Matrix s = vstack({&a, &a});
  CHECK(s.rows() == 4);
  CHECK(s.row_block(2, 2) == a);
  CHECK(a.col_block(1, 2) == Matrix{{2, 3}, {5, 6}});
}

TEST_CASE("sym_eig diagonal input gives an axis permutation") {
  const std::vector<double> diag{3, 1, 2};
  const SymEig e = sym_eig(Matrix::diagonal(diag));
  CHECK(e.values == std::vector<double>{1, 2, 3});
  CHECK(std::fabs(e.vectors(1, 0)) == 1.0);
  CHECK(std::fabs(e.vectors(2, 1)) == 1.0);
  CHECK(std::fabs(e.vectors(0, 2)) == 1.0);
}

TEST_CASE("sym_eig 2x2 swap matrix") {
  const SymEig e = sym_eig(Matrix{{0, 1}, {1, 0}});
  CHECK(e.values[0] == doctest::Approx(-1).epsilon(1e-14));
  CHECK(e.values[1] == doctest::Approx(1).epsilon(1e-14));
  const double r = 1.0 / std::sqrt(2.0);
  CHECK(std::fabs(std::fabs(e.vectors(0, 0)) - r) < 1e-14);
  CHECK(e.vectors(0, 0) * e.vectors(1, 0) < 0);  // (1, -1) direction
  CHECK(e.vectors(0, 1) * e.vectors(1, 1) > 0);  // (1, 1) direction
}

TEST_CASE("sym_eig random 8x8 residual") {
  const Matrix a = random_symmetric(8, 7);
  const SymEig e = sym_eig(a);
  const double scale = std::max(1.0, max_abs(a));
  CHECK(eig_residual(a, e) < 1e-10 * scale);
  CHECK(orthonormality_residual(e.vectors) < 1e-10);
  CHECK(std::is_sorted(e.values.begin(), e.values.end()));
}

TEST_CASE("sym_eig reconstructs random symmetric matrices") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const std::size_t n = 1 + seed % 12;
    Matrix a = random_symmetric(n, 100 + seed);
    a *= 1.0 + static_cast<double>(seed);
    const SymEig e = sym_eig(a);
    const double scale = std::max(1.0, max_abs(a));
    CHECK(max_abs_diff(reconstruct(e), a) < 1e-9 * scale);
    CHECK(eig_residual(a, e) < 1e-10 * scale);
    CHECK(orthonormality_residual(e.vectors) < 1e-10);
    CHECK(std::is_sorted(e.values.begin(), e.values.end()));
  }
}

TEST_CASE("sym_eig rejects bad input") {
  CHECK_THROWS_AS(sym_eig(Matrix(2, 3)), ValidationError);
  CHECK_THROWS_AS(sym_eig(Matrix{{0, 1}, {0.5, 0}}), ValidationError);
  CHECK_THROWS_AS(sym_eig(Matrix{{NAN, 0}, {0, 1}}), ValidationError);
}

TEST_CASE("orthonormalize") {
  SUBCASE("orthonormal input is unchanged") {
    const Matrix q = sample_haar(6, 3, RngSeed{11});
    CHECK(max_abs_diff(orthonormalize(q), q) < 1e-12);
  }
  SUBCASE("2I maps to I") {
    const Matrix out = orthonormalize(Matrix::identity(3) * 2.0);
    CHECK(max_abs_diff(out, Matrix::identity(3)) < 1e-14);
  }
  SUBCASE("closer to the input than Gram-Schmidt") {
    Rng rng(1);
    const Matrix w = gaussian_matrix(10, 3, rng);
    const Matrix p = orthonormalize(w);
    const Matrix gs = gram_schmidt(w);
    CHECK(orthonormality_residual(p) < 1e-10);
    CHECK(orthonormality_residual(gs) < 1e-10);
    CHECK(frobenius_norm(p - w) < frobenius_norm(gs - w));
  }
  SUBCASE("idempotent") {
    Rng rng(2);
    const Matrix p = orthonormalize(gaussian_matrix(7, 4, rng));
    CHECK(max_abs_diff(orthonormalize(p), p) < 1e-14);
  }
  SUBCASE("rank deficient input") {
    Matrix w(4, 2);
    w(0, 0) = w(0, 1) = 1.0;
    CHECK_THROWS_AS(orthonormalize(w), SingularityError);
    CHECK_THROWS_AS(orthonormalize(Matrix(2, 3, 1.0)), ValidationError);
  }
}

TEST_CASE("sample_haar") {
  SUBCASE("1x1 sign frequency") {
    int plus = 0;
    for (std::uint64_t s = 0; s < 10000; ++s) {
      const Matrix q = sample_haar(1, 1, RngSeed{s});
      CHECK(std::fabs(std::fabs(q(0, 0)) - 1.0) < 1e-15);
      plus += q(0, 0) > 0;
    }
    CHECK(std::fabs(plus / 10000.0 - 0.5) <= 0.02);
  }
  SUBCASE("5x5 orthogonal for several seeds") {
    for (std::uint64_t s = 0; s < 20; ++s) CHECK(orthonormality_residual(sample_haar(5, 5, RngSeed{s})) < 1e-10);
  }
  SUBCASE("1000x1000 seed 3 statistic") {
    const Matrix q = sample_haar(1000, 1000, RngSeed{3});
    CHECK(orthonormality_residual(q) < 1e-10);
    CHECK(max_entry_statistic(q) < 3.0);
  }
  SUBCASE("deterministic given seed") {
    CHECK(sample_haar(9, 4, RngSeed{42}) == sample_haar(9, 4, RngSeed{42}));
    CHECK(!(sample_haar(9, 4, RngSeed{42}) == sample_haar(9, 4, RngSeed{43})));
  }
  SUBCASE("rows < cols rejected") { CHECK_THROWS_AS(sample_haar(2, 3, RngSeed{0}), ValidationError); }
  SUBCASE("entry second moment is 1/rows") {
    // Var of Q_ij^2 for Haar columns is 2/(n(n+2)); mean over trials within 3 sigma.
    const std::size_t n = 6, trials = 4000;
    Matrix acc(n, n);
    for (std::size_t t = 0; t < trials; ++t) {
      const Matrix q = sample_haar(n, n, RngSeed{5000 + t});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) acc(i, j) += q(i, j) * q(i, j);
    }
    const double sigma = std::sqrt(2.0 / (n * (n + 2.0)) - 0.0) / std::sqrt(double(trials));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) CHECK(std::fabs(acc(i, j) / trials - 1.0 / n) < 3.0 * sigma + 1e-12);
  }
}

TEST_CASE("max_entry_statistic") {
  CHECK(max_entry_statistic(Matrix::identity(4)) == doctest::Approx(2.0 / std::log(4.0)).epsilon(1e-15));
  CHECK(max_entry_statistic(Matrix::identity(4)) == doctest::Approx(1.4427).epsilon(1e-4));
  const double s = max_entry_statistic(sample_haar(100, 100, RngSeed{0}));
  CHECK(std::isfinite(s));
  CHECK(s > 0);
  CHECK_THROWS_AS(max_entry_statistic(Matrix(1, 1, 1.0)), ValidationError);
}

TEST_CASE("max_entry_statistic median trend over widths") {
  // Semi-orthonormal h x 50 blocks keep the sweep cheap; the statistic only
  // depends on the row count h.
  double prev = 1e300;
  for (std::size_t h : {100, 200, 500, 1000, 2000}) {
    std::vector<double> stats;
    for (std::uint64_t s = 0; s < 50; ++s) stats.push_back(max_entry_statistic(sample_haar(h, 50, RngSeed{derive_seed(h, {s})})));
    const double m = median(stats);
    CHECK(m <= prev);
    CHECK(m < 3.0);
    prev = m;
  }
}

TEST_CASE("singular values and principal angles") {
  const Matrix a{{3, 0}, {0, -2}, {0, 0}};
  const auto sv = singular_values(a);
  REQUIRE(sv.size() == 2);
  CHECK(sv[0] == doctest::Approx(3));
  CHECK(sv[1] == doctest::Approx(2));

  const Matrix e1 = Matrix{{1}, {0}, {0}};
  const Matrix rot = Matrix{{std::cos(0.3)}, {std::sin(0.3)}, {0}};
  const auto ang = principal_angles(e1, rot * -2.0);
  REQUIRE(ang.size() == 1);
  CHECK(ang[0] == doctest::Approx(0.3).epsilon(1e-10));
}
