#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ssldyn/data.hpp"
#include "ssldyn/errors.hpp"
#include "ssldyn/linalg.hpp"
#include "ssldyn/network.hpp"
#include "ssldyn/objective.hpp"

using namespace ssldyn;

namespace {

TripletDataset moons(std::size_t n, std::uint64_t seed, bool negatives = true) {
  Matrix x = gen_halfmoons(n, 0.05, RngSeed{seed}).x;
  center_columns(x);
  return make_triplets(x, {0.1, negatives ? NegativeStrategy::independent_resample : NegativeStrategy::none,
                           RngSeed{seed + 1}});
}

TripletDataset gaussian_triplets(std::size_t n, std::size_t d, Rng& rng, bool negatives) {
  Matrix x = gaussian_matrix(n, d, rng);
  center_columns(x);
  return make_triplets(x, {0.1, negatives ? NegativeStrategy::independent_resample : NegativeStrategy::none,
                           RngSeed{rng.uniform_index(1u << 30)}});
}

double fd_loss(const TwoLayerNet& net, const TripletDataset& t, LossMode m) {
  return loss_and_grads(net, t, m).loss;
}

// Central differences with step 1e-5; returns the worst entry relative error.
double fd_check(TwoLayerNet net, const TripletDataset& t, LossMode mode) {
  const LossGrads g = loss_and_grads(net, t, mode);
  const double h = 1e-5;
  double worst = 0.0;
  auto check = [&](Matrix& w, const Matrix& analytic) {
    for (std::size_t i = 0; i < w.rows(); ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) {
        const double keep = w(i, j);
        w(i, j) = keep + h;
        const double up = fd_loss(net, t, mode);
        w(i, j) = keep - h;
        const double dn = fd_loss(net, t, mode);
        w(i, j) = keep;
        const double fd = (up - dn) / (2 * h);
        const double a = analytic(i, j);
        const double denom = std::max({std::fabs(a), std::fabs(fd), 1e-3});
        worst = std::max(worst, std::fabs(a - fd) / denom);
      }
  };
  check(net.w1, g.g_w1);
  check(net.w2, g.g_w2);
  return worst;
}

}  // namespace

TEST_CASE("forward") {
  SUBCASE("identity net is the identity map") {
    const TwoLayerNet net{Matrix::identity(3), Matrix::identity(3), Activation::identity};
    const Matrix x{{1, 2, 3}, {-4, 5, 0.5}};
    CHECK(forward(net, x) == x);
  }
  SUBCASE("tanh at zero") {
    const TwoLayerNet net = haar_net(3, 7, 2, Activation::tanh, RngSeed{1});
    CHECK(max_abs(forward(net, Matrix(1, 3))) == 0.0);
  }
  SUBCASE("sigmoid at zero") {
    const TwoLayerNet net{sample_haar(4, 1, RngSeed{2}), Matrix(4, 1, 0.5), Activation::sigmoid};
    CHECK(forward(net, Matrix(1, 1))(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("shape mismatch") {
    const TwoLayerNet net = haar_net(3, 7, 2, Activation::relu, RngSeed{1});
    CHECK_THROWS_AS(forward(net, Matrix(2, 4)), ValidationError);
  }
  SUBCASE("activation names") {
    for (auto a : {Activation::identity, Activation::tanh, Activation::relu, Activation::sigmoid})
      CHECK(parse_activation(to_string(a)) == a);
    CHECK_THROWS_AS(parse_activation("softplus"), ValidationError);
    for (auto r : {RegimeKind::unconstrained, RegimeKind::frobenius, RegimeKind::scaled_loss, RegimeKind::orthogonal})
      CHECK(parse_regime(to_string(r)) == r);
  }
}

TEST_CASE("identity-activation gradients equal the trace-form gradients") {
  for (auto mode : {LossMode::contrastive, LossMode::non_contrastive}) {
    const auto t = moons(40, 4, mode == LossMode::contrastive);
    const auto spec = build_c(t, mode);
    Rng rng(17);
    TwoLayerNet net{gaussian_matrix(5, 2, rng), gaussian_matrix(5, 3, rng), Activation::identity};
    const LossGrads a = loss_and_grads(net, t, mode);
    const LossGrads b = trace_loss_and_grads(net, spec);
    const double scale = std::max(1.0, max_abs(b.g_w1) + max_abs(b.g_w2));
    CHECK(std::fabs(a.loss - b.loss) < 1e-10 * std::max(1.0, std::fabs(b.loss)));
    CHECK(max_abs_diff(a.g_w1, b.g_w1) < 1e-10 * scale);
    CHECK(max_abs_diff(a.g_w2, b.g_w2) < 1e-10 * scale);
    // Closed forms 2 W2 W2^T W1 C and 2 W1 C W1^T W2.
    const Matrix gw1 = matmul(matmul_nt(net.w2, net.w2), matmul(net.w1, spec.c)) * 2.0;
    const Matrix gw2 = matmul(matmul(net.w1, matmul_nt(spec.c, net.w1)), net.w2) * 2.0;
    CHECK(max_abs_diff(b.g_w1, gw1) < 1e-10 * scale);
    CHECK(max_abs_diff(b.g_w2, gw2) < 1e-10 * scale);
  }
}

TEST_CASE("zero second layer gives zero first-layer gradient") {
  const auto t = moons(30, 2);
  for (auto act : {Activation::identity, Activation::tanh, Activation::relu, Activation::sigmoid}) {
    TwoLayerNet net = haar_net(2, 6, 2, act, RngSeed{3});
    net.w2 = Matrix(6, 2);
    CHECK(max_abs(loss_and_grads(net, t, LossMode::contrastive).g_w1) == 0.0);
  }
}

TEST_CASE("finite-difference gradient check over 50 instances") {
  Rng rng(2024);
  const Activation acts[] = {Activation::identity, Activation::tanh, Activation::relu, Activation::sigmoid};
  double worst = 0.0;
  for (int k = 0; k < 50; ++k) {
    const Activation act = acts[k % 4];
    const LossMode mode = (k / 4) % 2 ? LossMode::non_contrastive : LossMode::contrastive;
    const std::size_t d = 2 + rng.uniform_index(3), h = 3 + rng.uniform_index(6), z = 1 + rng.uniform_index(3);
    const auto t = gaussian_triplets(6 + rng.uniform_index(10), d, rng, mode == LossMode::contrastive);
    TwoLayerNet net{gaussian_matrix(h, d, rng), gaussian_matrix(h, z, rng), act};
    const double err = fd_check(net, t, mode);
    worst = std::max(worst, err);
    CHECK_MESSAGE(err < 1e-5, "instance " << k << " activation " << to_string(act));
  }
  MESSAGE("worst relative error " << worst);
}

TEST_CASE("contrastive mode without negatives is rejected") {
  const auto t = moons(20, 1, false);
  const TwoLayerNet net = haar_net(2, 4, 1, Activation::tanh, RngSeed{1});
  CHECK_THROWS_AS(loss_and_grads(net, t, LossMode::contrastive), ValidationError);
}

TEST_CASE("training regimes") {
  const auto t = moons(200, 0);
  const auto spec = build_c(t, LossMode::contrastive, Reduction::mean);
  const Matrix probes = t.anchors.row_block(0, 5);

  SUBCASE("orthogonal keeps constraints and reaches lambda_1") {
    TwoLayerNet net = haar_net(2, 10, 1, Activation::identity, RngSeed{5});
    TrainConfig cfg;
    cfg.regime.kind = RegimeKind::orthogonal;
    cfg.record_every = 1;
    const TrainTrace tr = train(net, t, spec, cfg, probes);
    REQUIRE(tr.records.size() == cfg.epochs + 1);
    for (const auto& r : tr.records) {
      CHECK(r.residual_w1 < 1e-8);
      CHECK(r.residual_w2 < 1e-8);
    }
    const double l1 = spec.eig.values[0];
    CHECK(std::fabs(tr.records.back().loss - l1) < 1e-3 * (1.0 + std::fabs(l1)));
  }
  SUBCASE("unconstrained diverges downward") {
    TwoLayerNet net = haar_net(2, 10, 1, Activation::identity, RngSeed{5});
    TrainConfig cfg;
    cfg.regime.kind = RegimeKind::unconstrained;
    cfg.abort_on_divergence = false;
    const TrainTrace tr = train(net, t, spec, cfg, probes);
    REQUIRE(tr.records.size() > 2);
    for (std::size_t i = 1; i < tr.records.size(); ++i) {
      CHECK(tr.records[i].loss < tr.records[i - 1].loss);
      CHECK(tr.records[i].norm_w1 + tr.records[i].norm_w2 > tr.records[i - 1].norm_w1 + tr.records[i - 1].norm_w2);
    }
    CHECK(tr.records.back().loss < -1e3);
    TwoLayerNet again = haar_net(2, 10, 1, Activation::identity, RngSeed{5});
    cfg.abort_on_divergence = true;
    if (tr.diverged_at) CHECK_THROWS_AS(train(again, t, spec, cfg, probes), DivergenceError);
  }
  SUBCASE("frobenius stays inside the ball") {
    TwoLayerNet net = haar_net(2, 10, 2, Activation::identity, RngSeed{6});
    TrainConfig cfg;
    cfg.regime = {RegimeKind::frobenius, 1.0, 1.0};
    cfg.epochs = 100;
    const TrainTrace tr = train(net, t, spec, cfg, probes);
    // Haar init has ||W||_F = sqrt(cols); every projected step is inside.
    for (std::size_t i = 1; i < tr.records.size(); ++i) {
      const auto& r = tr.records[i];
      CHECK(r.norm_w1 <= 1.0 + 1e-12);
      CHECK(r.norm_w2 <= 1.0 + 1e-12);
    }
  }
  SUBCASE("epochs 0 leaves the net untouched") {
    TwoLayerNet net = haar_net(2, 10, 2, Activation::tanh, RngSeed{6});
    const TwoLayerNet before = net;
    TrainConfig cfg;
    cfg.epochs = 0;
    const TrainTrace tr = train(net, t, spec, cfg, probes);
    REQUIRE(tr.records.size() == 1);
    CHECK(tr.records[0].probe_outputs == forward(before, probes));
    CHECK(net.w1 == before.w1);
  }
  SUBCASE("seeded determinism") {
    TrainConfig cfg;
    cfg.epochs = 50;
    TwoLayerNet a = haar_net(2, 8, 2, Activation::tanh, RngSeed{9});
    TwoLayerNet b = haar_net(2, 8, 2, Activation::tanh, RngSeed{9});
    const auto ta = train(a, t, spec, cfg, probes);
    const auto tb = train(b, t, spec, cfg, probes);
    CHECK(a.w1 == b.w1);
    CHECK(ta.records.back().probe_outputs == tb.records.back().probe_outputs);
  }
  SUBCASE("orthogonal regime needs h >= max(d, z)") {
    TwoLayerNet net{Matrix(1, 2, 0.5), Matrix(1, 1, 1.0), Activation::identity};
    TrainConfig cfg;
    CHECK_THROWS_AS(train(net, t, spec, cfg, probes), ValidationError);
  }
  SUBCASE("config validation") {
    TrainConfig cfg;
    cfg.lr = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg.lr = 0.01;
    cfg.regime = {RegimeKind::frobenius, -1.0, 1.0};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }
}

TEST_CASE("scaled-loss gradient matches finite differences of L / (|W1|^2 |W2|^2)") {
  const auto t = moons(30, 8);
  const auto spec = build_c(t, LossMode::contrastive, Reduction::mean);
  Rng rng(3);
  TwoLayerNet net{gaussian_matrix(5, 2, rng), gaussian_matrix(5, 2, rng), Activation::identity};
  auto scaled = [&](const TwoLayerNet& n) {
    const double a = sym_eig(matmul_tn(n.w1, n.w1)).values.back();
    const double b = sym_eig(matmul_tn(n.w2, n.w2)).values.back();
    return loss_and_grads(n, t, LossMode::contrastive, spec.weight).loss / (a * b);
  };
  // One step of train from a copy exposes the gradient as (W - W') / lr.
  TwoLayerNet stepped = net;
  TrainConfig cfg;
  cfg.regime.kind = RegimeKind::scaled_loss;
  cfg.epochs = 1;
  cfg.lr = 1e-3;
  train(stepped, t, spec, cfg, Matrix(0, 2));
  const double h = 1e-5;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      TwoLayerNet p = net, m = net;
      p.w1(i, j) += h;
      m.w1(i, j) -= h;
      const double fd = (scaled(p) - scaled(m)) / (2 * h);
      const double an = (net.w1(i, j) - stepped.w1(i, j)) / cfg.lr;
      CHECK(std::fabs(fd - an) < 1e-6 * std::max(1.0, std::fabs(fd)));
    }
}

TEST_CASE("width sweep basics") {
  const auto t = moons(40, 1);
  const auto spec = build_c(t, LossMode::contrastive, Reduction::mean);
  TrainConfig cfg;
  cfg.epochs = 5;
  const std::size_t widths[] = {10, 50};
  SUBCASE("identity is exactly zero") {
    const auto rep = width_sweep(widths, 2, Activation::identity, 1, t, spec, cfg);
    CHECK(rep.entries.size() == 2 * 2 * 2);
    for (const auto& e : rep.entries) CHECK(e.difference == 0.0);
  }
  SUBCASE("entries finite and nonnegative") {
    const auto rep = width_sweep(widths, 2, Activation::tanh, 1, t, spec, cfg);
    for (const auto& e : rep.entries) {
      CHECK(std::isfinite(e.difference));
      CHECK(e.difference >= 0.0);
      CHECK(e.envelope_ratio >= 0.0);
    }
  }
  SUBCASE("width below d rejected") {
    const std::size_t tiny[] = {1};
    CHECK_THROWS_AS(width_sweep(tiny, 1, Activation::tanh, 1, t, spec, cfg), ValidationError);
  }
}
