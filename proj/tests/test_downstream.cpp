#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ssldyn/data.hpp"
#include "ssldyn/downstream.hpp"
#include "ssldyn/errors.hpp"
#include "ssldyn/linalg.hpp"

using namespace ssldyn;

TEST_CASE("separable 1-d embeddings") {
  const Matrix e{{-1}, {1}, {-1.5}, {2}};
  const std::vector<int> y{-1, 1, -1, 1};
  const LinearSvm m = svm_train(e, y);
  CHECK(svm_accuracy(m, e, y) == 1.0);
  CHECK(m.w[0] > 0);

  SUBCASE("flipped labels flip the decision function") {
    const std::vector<int> f{1, -1, 1, -1};
    const LinearSvm mf = svm_train(e, f);
    CHECK(mf.w[0] == -m.w[0]);
    CHECK(mf.b == -m.b);
    CHECK(svm_accuracy(mf, e, f) == svm_accuracy(m, e, y));
  }
  SUBCASE("accuracy ignores positive rescaling") {
    LinearSvm s = m;
    s.w[0] *= 7.5;
    s.b *= 7.5;
    CHECK(svm_accuracy(s, e, y) == svm_accuracy(m, e, y));
  }
}

TEST_CASE("zero model predicts +1") {
  LinearSvm m;
  m.w = {0.0, 0.0};
  const Matrix e{{1, 2}, {3, 4}, {5, 6}, {7, 8}};
  CHECK(svm_accuracy(m, e, std::vector<int>{1, -1, 1, -1}) == 0.5);
}

TEST_CASE("random labels stay near chance") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    Rng rng(derive_seed(99, {s}));
    const Matrix e = gaussian_matrix(200, 2, rng);
    std::vector<int> y(200);
    for (int& v : y) v = rng.uniform() < 0.5 ? -1 : 1;
    SvmConfig cfg;
    cfg.rng = RngSeed{s};
    const double acc = svm_accuracy(svm_train(e, y, cfg), e, y);
    CHECK(acc >= 0.4);
    CHECK(acc <= 0.75);
  }
}

TEST_CASE("objective is settled after the default number of epochs") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const LabeledData d = gen_halfmoons(200, 0.1, RngSeed{s});
    const auto y = to_pm1(d.labels);
    SvmConfig cfg;
    cfg.rng = RngSeed{s};
    const double o1 = svm_objective(svm_train(d.x, y, cfg), d.x, y);
    cfg.epochs *= 10;
    const double o10 = svm_objective(svm_train(d.x, y, cfg), d.x, y);
    CHECK(std::fabs(o1 - o10) <= 0.05 * o10);
  }
}

TEST_CASE("held-out accuracy is a fraction and training is deterministic") {
  const LabeledData d = gen_halfmoons(200, 0.1, RngSeed{3});
  const auto y = to_pm1(d.labels);
  const Matrix tr = d.x.row_block(0, 100), te = d.x.row_block(100, 100);
  // Interleave so each half has both classes.
  Matrix a(100, 2), b(100, 2);
  std::vector<int> ya(100), yb(100);
  for (std::size_t i = 0; i < 100; ++i) {
    const std::size_t src_a = 2 * i, src_b = 2 * i + 1;
    for (std::size_t j = 0; j < 2; ++j) {
      a(i, j) = d.x(src_a, j);
      b(i, j) = d.x(src_b, j);
    }
    ya[i] = y[src_a];
    yb[i] = y[src_b];
  }
  (void)tr;
  (void)te;
  const LinearSvm m = svm_train(a, ya);
  const double acc = svm_accuracy(m, b, yb);
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  const LinearSvm again = svm_train(a, ya);
  CHECK(again.w == m.w);
  CHECK(again.b == m.b);
}

TEST_CASE("input validation") {
  const Matrix e{{1}, {2}};
  CHECK_THROWS_AS(svm_train(e, std::vector<int>{1, 1}), ValidationError);
  CHECK_THROWS_AS(svm_train(e, std::vector<int>{1, 0}), ValidationError);
  CHECK_THROWS_AS(svm_train(e, std::vector<int>{1}), ValidationError);
  CHECK_THROWS_AS(to_pm1(std::vector<int>{2}), ValidationError);
}
