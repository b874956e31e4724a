#include "ssldyn/network.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <tuple>

#include "ssldyn/linalg.hpp"

namespace ssldyn {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

Activation parse_activation(std::string_view s) {
  if (s == "identity" || s == "linear") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw ValidationError("unknown activation '" + std::string(s) + "'");
}

std::string_view to_string(RegimeKind r) {
  switch (r) {
    case RegimeKind::unconstrained: return "unconstrained";
    case RegimeKind::frobenius: return "frobenius";
    case RegimeKind::scaled_loss: return "scaled_loss";
    case RegimeKind::orthogonal: return "orthogonal";
  }
  return "?";
}

RegimeKind parse_regime(std::string_view s) {
  if (s == "unconstrained") return RegimeKind::unconstrained;
  if (s == "frobenius") return RegimeKind::frobenius;
  if (s == "scaled_loss" || s == "scaled") return RegimeKind::scaled_loss;
  if (s == "orthogonal") return RegimeKind::orthogonal;
  throw ValidationError("unknown regime '" + std::string(s) + "'");
}

void TwoLayerNet::validate() const {
  if (w1.rows() != w2.rows())
    throw ValidationError("TwoLayerNet: W1 and W2 must have the same number of rows (h)");
  if (w1.empty() || w2.empty()) throw ValidationError("TwoLayerNet: empty weights");
}

TwoLayerNet haar_net(std::size_t d, std::size_t h, std::size_t z, Activation activation,
                     RngSeed seed) {
  Rng rng(seed);
  TwoLayerNet net;
  net.w1 = sample_haar(h, d, rng);
  net.w2 = sample_haar(h, z, rng);
  net.activation = activation;
  return net;
}

namespace {

/// Applies phi in place and writes phi' (evaluated at the pre-activation) to `deriv`.
void activate(Activation act, Matrix& a, Matrix* deriv) {
  auto vals = a.data();
  std::span<double> der;
  if (deriv) {
    *deriv = Matrix(a.rows(), a.cols());
    der = deriv->data();
  }
  switch (act) {
    case Activation::identity:
      if (deriv) std::fill(der.begin(), der.end(), 1.0);
      return;
    case Activation::tanh:
      for (std::size_t k = 0; k < vals.size(); ++k) {
        const double t = std::tanh(vals[k]);
        vals[k] = t;
        if (deriv) der[k] = 1.0 - t * t;
      }
      return;
    case Activation::relu:
      for (std::size_t k = 0; k < vals.size(); ++k) {
        const bool on = vals[k] >= 0.0;
        if (!on) vals[k] = 0.0;
        if (deriv) der[k] = on ? 1.0 : 0.0;
      }
      return;
    case Activation::sigmoid:
      for (std::size_t k = 0; k < vals.size(); ++k) {
        const double s = 1.0 / (1.0 + std::exp(-vals[k]));
        vals[k] = s;
        if (deriv) der[k] = s * (1.0 - s);
      }
      return;
  }
}

/// Cached pass through the network for one input block.
struct Pass {
  Matrix phi;    // m x h
  Matrix dphi;   // m x h
  Matrix out;    // m x z
};

Pass run(const Matrix& x, const Matrix& w1t, const Matrix& w2t, Activation act, bool need_deriv) {
  Pass p;
  p.phi = matmul(x, w1t);
  activate(act, p.phi, need_deriv ? &p.dphi : nullptr);
  p.out = matmul_nt(p.phi, w2t);
  return p;
}

/// Accumulate gradients for an upstream dL/dU block `g` (m x z).
void backprop(const Pass& p, const Matrix& x, const Matrix& g, const Matrix& w2t, Matrix& g_w1t,
              Matrix& g_w2t) {
  g_w2t += matmul_tn(g, p.phi);
  Matrix da = matmul(g, w2t);
  auto dv = da.data();
  const auto dp = p.dphi.data();
  for (std::size_t k = 0; k < dv.size(); ++k) dv[k] *= dp[k];
  g_w1t += matmul_tn(x, da);
}

}  // namespace

Matrix forward(const TwoLayerNet& net, const Matrix& x) {
  net.validate();
  if (x.cols() != net.d())
    throw ValidationError("forward: input has " + std::to_string(x.cols()) +
                          " columns, network expects d = " + std::to_string(net.d()));
  return run(x, net.w1.transposed(), net.w2.transposed(), net.activation, false).out;
}

LossGrads loss_and_grads(const TwoLayerNet& net, const TripletDataset& data, LossMode mode,
                         double weight) {
  net.validate();
  data.validate();
  if (data.d() != net.d()) throw ValidationError("loss_and_grads: data dimension differs from d");
  if (mode == LossMode::custom)
    throw ValidationError("loss_and_grads: custom mode has no per-sample loss");
  if (mode == LossMode::contrastive && !data.negatives)
    throw ValidationError("loss_and_grads: contrastive mode needs negatives");

  const Matrix w1t = net.w1.transposed();
  const Matrix w2t = net.w2.transposed();
  const Pass pa = run(data.anchors, w1t, w2t, net.activation, true);
  const Pass pp = run(data.positives, w1t, w2t, net.activation, true);

  Matrix g_w1t(net.d(), net.h());
  Matrix g_w2t(net.z(), net.h());
  LossGrads out;
  if (mode == LossMode::contrastive) {
    const Pass pn = run(*data.negatives, w1t, w2t, net.activation, true);
    const Matrix diff = pn.out - pp.out;
    double loss = 0.0;
    for (std::size_t k = 0; k < diff.size(); ++k) loss += pa.out.data()[k] * diff.data()[k];
    out.loss = weight * loss;
    backprop(pa, data.anchors, diff * weight, w2t, g_w1t, g_w2t);
    backprop(pn, *data.negatives, pa.out * weight, w2t, g_w1t, g_w2t);
    backprop(pp, data.positives, pa.out * -weight, w2t, g_w1t, g_w2t);
  } else {
    double loss = 0.0;
    for (std::size_t k = 0; k < pa.out.size(); ++k) loss -= pa.out.data()[k] * pp.out.data()[k];
    out.loss = weight * loss;
    backprop(pa, data.anchors, pp.out * -weight, w2t, g_w1t, g_w2t);
    backprop(pp, data.positives, pa.out * -weight, w2t, g_w1t, g_w2t);
  }
  out.g_w1 = g_w1t.transposed();
  out.g_w2 = g_w2t.transposed();
  return out;
}

LossGrads trace_loss_and_grads(const TwoLayerNet& net, const ObjectiveSpec& spec) {
  net.validate();
  if (net.d() != spec.d()) throw ValidationError("trace_loss_and_grads: C dimension differs from d");
  const Matrix p = matmul_tn(net.w1, net.w2);  // d x z
  const Matrix cp = matmul(spec.c, p);         // d x z
  LossGrads out;
  out.loss = trace(matmul_tn(p, cp));
  out.g_w2 = matmul(net.w1, cp) * 2.0;
  out.g_w1 = matmul_nt(net.w2, cp) * 2.0;  // 2 W2 (C P)^T = 2 W2 W2^T W1 C
  return out;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("TrainConfig: lr must be > 0");
  if (record_every == 0) throw ValidationError("TrainConfig: record_every must be >= 1");
  if (regime.kind == RegimeKind::frobenius && !(regime.c1 > 0.0 && regime.c2 > 0.0))
    throw ValidationError("TrainConfig: frobenius radii must be > 0");
}

std::pair<double, double> constraint_residuals(const TwoLayerNet& net, const Regime& regime) {
  switch (regime.kind) {
    case RegimeKind::orthogonal:
      return {orthonormality_residual(net.w1), orthonormality_residual(net.w2)};
    case RegimeKind::frobenius:
      return {std::max(0.0, frobenius_norm(net.w1) - regime.c1),
              std::max(0.0, frobenius_norm(net.w2) - regime.c2)};
    default:
      return {0.0, 0.0};
  }
}

namespace {

struct TopEig {
  double value;
  std::vector<double> vector;
};

TopEig top_gram_eig(const Matrix& w) {
  const SymEig e = sym_eig(matmul_tn(w, w));
  return {e.values.back(), e.vectors.col(e.dim() - 1)};
}

/// Gradient of ||W||_2^2 = lambda_max(W^T W): 2 W v v^T.
Matrix op_norm_sq_grad(const Matrix& w, const std::vector<double>& v) {
  Matrix wv = matmul(w, Matrix::column(v));
  Matrix g(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) g(i, j) = 2.0 * wv(i, 0) * v[j];
  return g;
}

void clip_frobenius(Matrix& w, double radius) {
  const double n = frobenius_norm(w);
  if (n > radius) w *= radius / n;
}

struct Evaluated {
  LossGrads lg;
  double objective;
};

}  // namespace

TrainTrace train(TwoLayerNet& net, const TripletDataset& data, const ObjectiveSpec& spec,
                 const TrainConfig& cfg, const Matrix& probes) {
  net.validate();
  cfg.validate();
  if (spec.d() != net.d()) throw ValidationError("train: objective dimension differs from d");
  if (cfg.regime.kind == RegimeKind::orthogonal && net.h() < std::max(net.d(), net.z()))
    throw ValidationError("train: orthogonal regime needs h >= max(d, z)");
  if (spec.mode == LossMode::custom && net.activation != Activation::identity)
    throw ValidationError("train: custom objectives only train linear networks");
  if (probes.rows() > 0 && probes.cols() != net.d())
    throw ValidationError("train: probes must have d columns");

  auto evaluate = [&]() -> Evaluated {
    Evaluated ev;
    ev.lg = spec.mode == LossMode::custom ? trace_loss_and_grads(net, spec)
                                          : loss_and_grads(net, data, spec.mode, spec.weight);
    ev.objective = ev.lg.loss;
    if (cfg.regime.kind == RegimeKind::scaled_loss) {
      const TopEig e1 = top_gram_eig(net.w1);
      const TopEig e2 = top_gram_eig(net.w2);
      const double denom = e1.value * e2.value;
      ev.objective = ev.lg.loss / denom;
      // d(L/(ab)) = dL/(ab) - (L/(ab)) (da/a + db/b)
      Matrix g1 = ev.lg.g_w1 * (1.0 / denom);
      g1 -= op_norm_sq_grad(net.w1, e1.vector) * (ev.objective / e1.value);
      Matrix g2 = ev.lg.g_w2 * (1.0 / denom);
      g2 -= op_norm_sq_grad(net.w2, e2.vector) * (ev.objective / e2.value);
      ev.lg.g_w1 = std::move(g1);
      ev.lg.g_w2 = std::move(g2);
    }
    return ev;
  };

  TrainTrace trace;
  trace.step_seconds.reserve(cfg.epochs);
  using clock = std::chrono::steady_clock;

  Evaluated ev = evaluate();
  double last_step_seconds = 0.0;
  for (std::size_t step = 0;; ++step) {
    if (!std::isfinite(ev.lg.loss) || std::abs(ev.lg.loss) > kDivergenceThreshold) {
      if (cfg.abort_on_divergence)
        throw DivergenceError("train: loss diverged at step " + std::to_string(step) +
                                  " (loss = " + std::to_string(ev.lg.loss) + ")",
                              step);
      trace.diverged_at = step;
      break;
    }
    if (step % cfg.record_every == 0 || step == cfg.epochs) {
      TrainRecord rec;
      rec.step = step;
      rec.loss = ev.lg.loss;
      rec.objective = ev.objective;
      if (probes.rows() > 0) rec.probe_outputs = forward(net, probes);
      std::tie(rec.residual_w1, rec.residual_w2) = constraint_residuals(net, cfg.regime);
      rec.norm_w1 = frobenius_norm(net.w1);
      rec.norm_w2 = frobenius_norm(net.w2);
      rec.step_seconds = last_step_seconds;
      trace.records.push_back(std::move(rec));
    }
    if (step == cfg.epochs) break;

    const auto t0 = clock::now();
    net.w1 -= ev.lg.g_w1 * cfg.lr;
    net.w2 -= ev.lg.g_w2 * cfg.lr;
    switch (cfg.regime.kind) {
      case RegimeKind::frobenius:
        clip_frobenius(net.w1, cfg.regime.c1);
        clip_frobenius(net.w2, cfg.regime.c2);
        break;
      case RegimeKind::orthogonal:
        net.w1 = orthonormalize(net.w1);
        net.w2 = orthonormalize(net.w2);
        break;
      default:
        break;
    }
    // The gradient for the next update is part of the cost of a step.
    if (net.w1.all_finite() && net.w2.all_finite()) {
      ev = evaluate();
    } else {
      ev.lg.loss = std::numeric_limits<double>::quiet_NaN();
    }
    last_step_seconds = std::chrono::duration<double>(clock::now() - t0).count();
    trace.step_seconds.push_back(last_step_seconds);
  }
  return trace;
}

double mean_output_difference(const TwoLayerNet& a, const TwoLayerNet& b, const Matrix& x) {
  const Matrix ua = forward(a, x);
  const Matrix ub = forward(b, x);
  if (ua.cols() != ub.cols()) throw ValidationError("mean_output_difference: output sizes differ");
  double total = 0.0;
  for (std::size_t i = 0; i < ua.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < ua.cols(); ++j) {
      const double e = ua(i, j) - ub(i, j);
      s += e * e;
    }
    total += std::sqrt(s);
  }
  return x.rows() == 0 ? 0.0 : total / static_cast<double>(x.rows());
}

double width_envelope(const Matrix& x, std::size_t h) {
  double sq = 0.0;
  for (double v : x.data()) sq += v * v;
  const double mean_sq = x.rows() == 0 ? 0.0 : sq / static_cast<double>(x.rows());
  const double lh = std::log(static_cast<double>(h));
  return mean_sq * static_cast<double>(x.cols()) * std::sqrt(lh * lh * lh * lh / static_cast<double>(h));
}

double WidthSweepReport::mean_difference(std::size_t width, std::size_t epoch) const {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& e : entries)
    if (e.width == width && e.epoch == epoch) {
      s += e.difference;
      ++k;
    }
  if (k == 0) throw ValidationError("WidthSweepReport: no entries for that width/epoch");
  return s / static_cast<double>(k);
}

double WidthSweepReport::mean_envelope_ratio(std::size_t width, std::size_t epoch) const {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& e : entries)
    if (e.width == width && e.epoch == epoch) {
      s += e.envelope_ratio;
      ++k;
    }
  if (k == 0) throw ValidationError("WidthSweepReport: no entries for that width/epoch");
  return s / static_cast<double>(k);
}

WidthSweepReport width_sweep(std::span<const std::size_t> widths, std::size_t seeds,
                             Activation activation, std::size_t z, const TripletDataset& data,
                             const ObjectiveSpec& spec, const TrainConfig& cfg) {
  if (seeds == 0) throw ValidationError("width_sweep: need at least one seed");
  const std::size_t d = data.d();
  for (std::size_t w : widths)
    if (w < std::max(d, z))
      throw ValidationError("width_sweep: width " + std::to_string(w) + " < max(d, z)");

  TrainConfig run_cfg = cfg;
  run_cfg.record_every = std::max<std::size_t>(1, cfg.epochs);
  const Matrix no_probes(0, d);

  // Keyed by (width, seed, epoch) so the report does not depend on job order.
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, WidthSweepEntry> results;
  for (std::size_t w : widths) {
    const double envelope = width_envelope(data.anchors, w);
    for (std::size_t s = 0; s < seeds; ++s) {
      TwoLayerNet nonlinear = haar_net(d, w, z, activation, RngSeed{derive_seed(cfg.rng.value, {w, s})});
      TwoLayerNet linear = nonlinear;
      linear.activation = Activation::identity;

      auto emit = [&](std::size_t epoch) {
        const double diff = mean_output_difference(nonlinear, linear, data.anchors);
        results[{w, s, epoch}] = {w, s, epoch, diff, envelope > 0.0 ? diff / envelope : 0.0};
      };
      emit(0);
      if (cfg.epochs > 0) {
        train(nonlinear, data, spec, run_cfg, no_probes);
        train(linear, data, spec, run_cfg, no_probes);
        emit(cfg.epochs);
      }
    }
  }
  WidthSweepReport rep;
  rep.activation = activation;
  rep.entries.reserve(results.size());
  for (auto& [key, entry] : results) rep.entries.push_back(entry);
  return rep;
}

}  // namespace ssldyn
