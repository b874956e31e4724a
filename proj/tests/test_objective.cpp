#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "ssldyn/data.hpp"
#include "ssldyn/errors.hpp"
#include "ssldyn/linalg.hpp"
#include "ssldyn/objective.hpp"

using namespace ssldyn;

namespace {

TripletDataset single(const Matrix& x, const Matrix& xp, const Matrix& xn) {
  TripletDataset t;
  t.anchors = x;
  t.positives = xp;
  t.negatives = xn;
  return t;
}

TripletDataset moons(std::size_t n, std::uint64_t seed, bool negatives = true) {
  Matrix x = gen_halfmoons(n, 0.05, RngSeed{seed}).x;
  center_columns(x);
  return make_triplets(x, {0.1, negatives ? NegativeStrategy::independent_resample : NegativeStrategy::none,
                           RngSeed{seed + 1}});
}

// Direct summation of sum_i u(x_i)^T (u(x_i^-) - u(x_i^+)) with u(x) = W2^T W1 x.
double direct_contrastive(const Matrix& w1, const Matrix& w2, const TripletDataset& t) {
  const Matrix m = matmul_tn(w2, w1);  // z x d
  auto u = [&](std::span<const double> x) {
    std::vector<double> out(m.rows(), 0.0);
    for (std::size_t a = 0; a < m.rows(); ++a)
      for (std::size_t b = 0; b < m.cols(); ++b) out[a] += m(a, b) * x[b];
    return out;
  };
  double s = 0.0;
  for (std::size_t i = 0; i < t.n(); ++i) {
    const auto ua = u(t.anchors.row(i)), up = u(t.positives.row(i)), un = u(t.negatives->row(i));
    for (std::size_t a = 0; a < ua.size(); ++a) s += ua[a] * (un[a] - up[a]);
  }
  return s;
}

}  // namespace

TEST_CASE("build_c single contrastive triplet") {
  const auto t = single(Matrix{{1, 0}}, Matrix{{1, 0}}, Matrix{{0, 1}});
  CHECK(c_tilde(t, LossMode::contrastive) == Matrix{{-1, 1}, {0, 0}});
  const ObjectiveSpec s = build_c(t, LossMode::contrastive);
  CHECK(s.c == Matrix{{-1, 0.5}, {0.5, 0}});
  // Characteristic polynomial l^2 + l - 1/4 = 0.
  CHECK(std::fabs(s.eig.values[0] - (-1.0 - std::sqrt(2.0)) / 2.0) < 1e-14);
  CHECK(std::fabs(s.eig.values[1] - (-1.0 + std::sqrt(2.0)) / 2.0) < 1e-14);
  CHECK(s.eig.values[0] == doctest::Approx(-1.2071).epsilon(1e-4));
  CHECK(s.eig.values[1] == doctest::Approx(0.2071).epsilon(1e-3));
}

TEST_CASE("build_c single non-contrastive pair") {
  TripletDataset t;
  t.anchors = Matrix{{1, 0}};
  t.positives = Matrix{{1, 0}};
  CHECK(build_c(t, LossMode::non_contrastive).c == Matrix{{-1, 0}, {0, 0}});
  CHECK_THROWS_AS(build_c(t, LossMode::contrastive), ValidationError);
  CHECK_THROWS_AS(build_c(t, LossMode::custom), ValidationError);
}

TEST_CASE("build_c is exactly symmetric and mean scaling divides by n") {
  const auto t = moons(60, 3);
  const ObjectiveSpec s = build_c(t, LossMode::contrastive);
  CHECK(asymmetry(s.c) == 0.0);
  const ObjectiveSpec m = build_c(t, LossMode::contrastive, Reduction::mean);
  CHECK(max_abs_diff(m.c * 60.0, s.c) < 1e-12 * max_abs(s.c));
  CHECK(m.weight == doctest::Approx(1.0 / 60));
}

TEST_CASE("c_tilde is additive over concatenated datasets") {
  const auto a = moons(40, 5), b = moons(30, 9);
  TripletDataset ab;
  ab.anchors = vstack({&a.anchors, &b.anchors});
  ab.positives = vstack({&a.positives, &b.positives});
  ab.negatives = vstack({&*a.negatives, &*b.negatives});
  const Matrix lhs = c_tilde(ab, LossMode::contrastive);
  const Matrix rhs = c_tilde(a, LossMode::contrastive) + c_tilde(b, LossMode::contrastive);
  CHECK(max_abs_diff(lhs, rhs) < 1e-12);
}

TEST_CASE("trace_loss") {
  SUBCASE("selector case") {
    const auto spec = objective_from_c_tilde(Matrix{{-1, 0}, {0, 2}});
    const Matrix w1 = Matrix::identity(2);
    const Matrix w2 = Matrix{{1}, {0}};
    CHECK(trace_loss(w1, w2, spec) == -1.0);
  }
  SUBCASE("zero W2") {
    const auto t = moons(20, 1);
    const auto spec = build_c(t, LossMode::contrastive);
    CHECK(trace_loss(sample_haar(5, 2, RngSeed{2}), Matrix(5, 1), spec) == 0.0);
  }
  SUBCASE("matches direct summation of the contrastive loss") {
    for (std::uint64_t seed = 5; seed < 25; ++seed) {
      const auto t = moons(40, seed);
      const auto spec = build_c(t, LossMode::contrastive);
      Rng rng(seed);
      const Matrix w1 = gaussian_matrix(6, 2, rng), w2 = gaussian_matrix(6, 3, rng);
      const double direct = direct_contrastive(w1, w2, t);
      CHECK(std::fabs(trace_loss(w1, w2, spec) - direct) < 1e-10 * std::max(1.0, std::fabs(direct)));
    }
  }
  SUBCASE("non-contrastive sign matches -sum u(x)^T u(x+)") {
    const auto t = moons(30, 2, false);
    const auto spec = build_c(t, LossMode::non_contrastive);
    Rng rng(4);
    const Matrix w1 = gaussian_matrix(4, 2, rng), w2 = gaussian_matrix(4, 2, rng);
    const Matrix m = matmul_tn(w2, w1);
    double direct = 0.0;
    for (std::size_t i = 0; i < t.n(); ++i)
      for (std::size_t a = 0; a < 2; ++a) {
        double ua = 0.0, up = 0.0;
        for (std::size_t b = 0; b < 2; ++b) {
          ua += m(a, b) * t.anchors(i, b);
          up += m(a, b) * t.positives(i, b);
        }
        direct -= ua * up;
      }
    CHECK(std::fabs(trace_loss(w1, w2, spec) - direct) < 1e-10 * std::max(1.0, std::fabs(direct)));
  }
  SUBCASE("shape mismatch") {
    const auto spec = objective_from_c_tilde(Matrix::identity(2));
    CHECK_THROWS_AS(trace_loss(Matrix(3, 2), Matrix(4, 1), spec), ValidationError);
    CHECK_THROWS_AS(trace_loss(Matrix(3, 3), Matrix(3, 1), spec), ValidationError);
  }
}

TEST_CASE("expected_c_check") {
  SUBCASE("all-zero anchors") {
    const auto rep = expected_c_check([](std::size_t n, Rng&) { return Matrix(n, 2); }, 10, 30, RngSeed{1});
    CHECK(max_abs(rep.mean_c_tilde) == 0.0);
    CHECK(max_abs(rep.neg_second_moment) == 0.0);
    CHECK(rep.pass);
  }
  auto moons_sampler = [](double shift) {
    return [shift](std::size_t n, Rng& rng) {
      Matrix x = gen_halfmoons(n, 0.05, RngSeed{rng.uniform_index(UINT64_MAX)}).x;
      center_columns(x);
      for (double& v : x.data()) v += shift;
      return x;
    };
  };
  SUBCASE("centered half-moons pass") {
    const auto rep = expected_c_check(moons_sampler(0.0), 500, 200, RngSeed{7});
    CHECK(rep.tolerance == doctest::Approx(5.0 / std::sqrt(200.0 * 500.0)));
    CHECK(rep.pass);
  }
  SUBCASE("shifted data fail") {
    const auto rep = expected_c_check(moons_sampler(5.0), 500, 200, RngSeed{7});
    CHECK(!rep.pass);
    CHECK(rep.max_deviation > 10.0);
  }
  SUBCASE("too few trials") {
    CHECK_THROWS_AS(expected_c_check(moons_sampler(0.0), 10, 29, RngSeed{1}), ValidationError);
  }
}

TEST_CASE("C csv round trip") {
  const auto spec = build_c(moons(30, 11), LossMode::contrastive);
  std::stringstream ss;
  write_c_csv(ss, spec.c);
  CHECK(ss.str().rfind("d=2\n", 0) == 0);
  const Matrix back = read_c_csv(ss);
  CHECK(back == spec.c);
  std::stringstream bad("d=2\n1,2\n3\n");
  CHECK_THROWS_AS(read_c_csv(bad), ValidationError);
  std::stringstream nohdr("1,2\n3,4\n");
  CHECK_THROWS_AS(read_c_csv(nohdr), ValidationError);
}
