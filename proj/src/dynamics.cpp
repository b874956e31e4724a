#include "ssldyn/dynamics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "ssldyn/errors.hpp"

namespace ssldyn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

void check_lambda(std::span<const double> lambda, const Matrix& q) {
  if (lambda.size() != q.rows())
    throw ValidationError("ode_rhs: q has " + std::to_string(q.rows()) + " rows, Lambda has " +
                          std::to_string(lambda.size()));
}

}  // namespace

double DynamicsState::loss() const {
  double s = 0.0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    double r = 0.0;
    for (double v : q.row(i)) r += v * v;
    s += eig.values[i] * r;
  }
  return s;
}

DynamicsState q_init_from_net(const TwoLayerNet& net, const SymEig& eig, double eta) {
  net.validate();
  if (eig.dim() != net.d())
    throw ValidationError("q_init_from_net: net has d=" + std::to_string(net.d()) +
                          " but C has dimension " + std::to_string(eig.dim()));
  if (!(eta > 0.0)) throw ValidationError("q_init_from_net: eta must be positive");
  DynamicsState s;
  s.q = matmul_tn(eig.vectors, matmul_tn(net.w1, net.w2));
  s.eig = eig;
  s.eta = eta;
  return s;
}

Matrix ode_rhs(const DynamicsState& state) { return ode_rhs(state.eig.values, state.q); }

Matrix ode_rhs(std::span<const double> lambda, const Matrix& q) {
  check_lambda(lambda, q);
  const std::size_t d = q.rows();
  Matrix lq = q;
  for (std::size_t i = 0; i < d; ++i)
    for (double& v : lq.row(i)) v *= lambda[i];
  const Matrix qtq = matmul_tn(q, q);    // z x z
  const Matrix qtlq = matmul_tn(q, lq);  // z x z
  Matrix out = lq * 2.0;
  out -= matmul(lq, qtq);
  out -= matmul(q, qtlq);
  out *= -2.0;
  return out;
}

Matrix ode_rhs_split(std::span<const double> lambda, const Matrix& q) {
  check_lambda(lambda, q);
  if (q.cols() != 1) throw ValidationError("ode_rhs_split: only defined for z = 1");
  const std::size_t d = q.rows();
  double qq = 0.0, qlq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    qq += q(i, 0) * q(i, 0);
    qlq += lambda[i] * q(i, 0) * q(i, 0);
  }
  Matrix out(d, 1);
  for (std::size_t i = 0; i < d; ++i) {
    const double lqi = lambda[i] * q(i, 0);
    const double radial = -(1.0 - qq) * lqi;
    const double tangential = -(lqi - q(i, 0) * qlq);
    out(i, 0) = 2.0 * (radial + tangential);
  }
  return out;
}

namespace {

DynamicsRecord make_record(const DynamicsState& s, double secs) {
  DynamicsRecord r;
  r.step = s.step;
  r.loss = s.loss();
  r.q = s.q;
  r.norm = frobenius_norm(s.q);
  r.e1_overlap = s.q.rows() ? s.q(0, 0) : 0.0;
  r.step_seconds = secs;
  return r;
}

}  // namespace

DynamicsTrajectory integrate(const DynamicsState& state, std::size_t steps, std::size_t record_every) {
  if (!(state.eta > 0.0)) throw ValidationError("integrate: eta must be positive");
  if (steps < 1) throw ValidationError("integrate: need at least one step");
  if (record_every < 1) throw ValidationError("integrate: record_every must be >= 1");
  if (state.q.rows() != state.eig.dim()) throw ValidationError("integrate: q and Lambda disagree in d");
  if (!state.q.all_finite()) throw ValidationError("integrate: q0 has non-finite entries");

  DynamicsTrajectory traj;
  double lmax = 0.0;
  for (double l : state.eig.values) lmax = std::max(lmax, std::fabs(l));
  if (state.eta * lmax > 0.1) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "eta * max|lambda| = %.3g exceeds 0.1; Euler steps may be inaccurate or unstable",
                  state.eta * lmax);
    traj.warnings.emplace_back(buf);
  }

  DynamicsState s = state;
  traj.records.push_back(make_record(s, 0.0));
  traj.step_seconds.reserve(steps);
  for (std::size_t t = 1; t <= steps; ++t) {
    const auto t0 = Clock::now();
    Matrix rhs = ode_rhs(s);
    rhs *= s.eta;
    s.q += rhs;
    ++s.step;
    const double secs = seconds_since(t0);
    traj.step_seconds.push_back(secs);
    if (!s.q.all_finite() || max_abs(s.q) > kDivergenceThreshold) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "q diverged at step %zu (eta = %g); try a smaller eta", s.step,
                    s.eta);
      throw DivergenceError(buf, s.step);
    }
    if (t % record_every == 0 || t == steps) traj.records.push_back(make_record(s, secs));
  }
  traj.final_state = std::move(s);
  return traj;
}

FixedPointPrediction classify_fixed_point(const SymEig& eig, std::size_t z) {
  if (z < 1) throw ValidationError("classify_fixed_point: z must be >= 1");
  const std::size_t d = eig.dim();
  if (d == 0) throw ValidationError("classify_fixed_point: empty spectrum");
  FixedPointPrediction p;
  const double l1 = eig.values[0];
  if (z == 1) {
    if (l1 > 0.0) {
      p.kind = FixedPointKind::zero;
      return p;
    }
    if (l1 == 0.0) {
      p.kind = FixedPointKind::indeterminate;
      return p;
    }
    double scale = 1.0;
    for (double l : eig.values) scale = std::max(scale, std::fabs(l));
    std::size_t k = 1;
    while (k < d && std::fabs(eig.values[k] - l1) <= 1e-12 * scale) ++k;
    p.kind = FixedPointKind::smallest_eigenvector;
    p.basis = Matrix(d, k);
    for (std::size_t j = 0; j < k; ++j) p.basis(j, j) = 1.0;
    return p;
  }
  std::size_t neg = 0;
  while (neg < d && eig.values[neg] < 0.0) ++neg;
  const std::size_t k = std::min(z, neg);
  p.conjectural = true;
  p.kind = k == 0 ? FixedPointKind::zero : FixedPointKind::subspace_conjectural;
  if (k > 0) {
    p.basis = Matrix(d, k);
    for (std::size_t j = 0; j < k; ++j) p.basis(j, j) = 1.0;
  }
  return p;
}

std::optional<Matrix> convergence_target(const DynamicsState& state) {
  if (state.q.cols() != 1) throw ValidationError("convergence_target: only defined for z = 1");
  const double overlap = state.q(0, 0);
  if (overlap == 0.0) return std::nullopt;
  Matrix e(state.q.rows(), 1);
  e(0, 0) = overlap > 0.0 ? 1.0 : -1.0;
  return e;
}

std::vector<double> eval_new_point(const DynamicsState& state, std::span<const double> x) {
  const std::size_t d = state.eig.dim();
  if (x.size() != d)
    throw ValidationError("eval_new_point: x has dimension " + std::to_string(x.size()) +
                          ", expected " + std::to_string(d));
  std::vector<double> alpha(d, 0.0);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t i = 0; i < d; ++i) alpha[i] += state.eig.vectors(r, i) * x[r];
  std::vector<double> u(state.q.cols(), 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < u.size(); ++j) u[j] += state.q(i, j) * alpha[i];
  return u;
}

Matrix eval_new_points(const DynamicsState& state, const Matrix& x) {
  if (x.cols() != state.eig.dim()) throw ValidationError("eval_new_points: dimension mismatch");
  return matmul(matmul(x, state.eig.vectors), state.q);
}

Kernel Kernel::linear() {
  return Kernel("linear", [](std::span<const double> a, std::span<const double> b) { return dot(a, b); });
}

Kernel Kernel::rbf(double bandwidth) {
  if (!(bandwidth > 0.0)) throw ValidationError("rbf kernel: bandwidth must be positive");
  const double inv = 1.0 / (2.0 * bandwidth * bandwidth);
  return Kernel("rbf", [inv](std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double t = a[i] - b[i];
      s += t * t;
    }
    return std::exp(-s * inv);
  });
}

Matrix Kernel::gram(const Matrix& a, const Matrix& b) const {
  if (a.cols() != b.cols()) throw ValidationError("gram: point dimensions differ");
  Matrix k(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) k(i, j) = fn_(a.row(i), b.row(j));
  return k;
}

Matrix naive_flow_points(const Matrix& probes, const TripletDataset& data, LossMode mode) {
  data.validate();
  if (probes.cols() != data.d()) throw ValidationError("naive_flow: probe dimension mismatch");
  if (mode == LossMode::contrastive) {
    if (!data.negatives) throw ValidationError("naive_flow: contrastive mode needs negatives");
    return vstack({&probes, &data.anchors, &data.positives, &*data.negatives});
  }
  if (mode != LossMode::non_contrastive) throw ValidationError("naive_flow: unsupported mode");
  return vstack({&probes, &data.anchors, &data.positives});
}

double effective_rank(const Matrix& outputs) {
  const std::vector<double> sv = singular_values(outputs);
  double total = 0.0;
  for (double s : sv) total += s;
  if (!(total > 0.0)) return 0.0;
  double h = 0.0;
  for (double s : sv) {
    const double p = s / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return std::exp(h);
}

double max_pairwise_cosine(const Matrix& outputs) {
  const std::size_t z = outputs.cols();
  std::vector<std::vector<double>> cols(z);
  std::vector<double> norms(z);
  for (std::size_t j = 0; j < z; ++j) {
    cols[j] = outputs.col(j);
    norms[j] = norm2(cols[j]);
  }
  double best = 0.0;
  for (std::size_t a = 0; a < z; ++a)
    for (std::size_t b = a + 1; b < z; ++b) {
      if (norms[a] == 0.0 || norms[b] == 0.0) continue;
      best = std::max(best, std::fabs(dot(cols[a], cols[b])) / (norms[a] * norms[b]));
    }
  return best;
}

NaiveFlowResult naive_flow(const Matrix& probes, const TripletDataset& data, LossMode mode,
                           const Kernel& kernel, const Matrix& u0, double eta, std::size_t steps,
                           std::size_t record_every) {
  if (!(eta > 0.0)) throw ValidationError("naive_flow: eta must be positive");
  if (record_every < 1) throw ValidationError("naive_flow: record_every must be >= 1");
  const Matrix pts = naive_flow_points(probes, data, mode);
  if (u0.rows() != pts.rows())
    throw ValidationError("naive_flow: u0 needs " + std::to_string(pts.rows()) +
                          " rows (probes, anchors, positives, negatives)");
  const std::size_t m = probes.rows(), n = data.n();
  const bool contrastive = mode == LossMode::contrastive;

  const Matrix k_a = kernel.gram(pts, data.anchors);
  Matrix k_p = kernel.gram(pts, data.positives);
  if (contrastive) k_p -= kernel.gram(pts, *data.negatives);  // K_P - K_N

  NaiveFlowResult res;
  Matrix u = u0;
  auto record = [&](std::size_t step) {
    Matrix probe_out = u.row_block(0, m);
    CollapseRecord r;
    r.step = step;
    r.effective_rank = effective_rank(probe_out);
    r.max_pairwise_cos = max_pairwise_cosine(probe_out);
    r.max_abs_output = max_abs(u);
    res.records.push_back(r);
    res.probe_outputs.push_back(std::move(probe_out));
  };
  record(0);

  std::size_t last_recorded = 0;
  for (std::size_t t = 1; t <= steps; ++t) {
    Matrix target = u.row_block(m + n, n);  // u(x^+)
    if (contrastive) target -= u.row_block(m + 2 * n, n);
    const Matrix ua = u.row_block(m, n);
    Matrix du = matmul(k_a, target);
    du += matmul(k_p, ua);
    du *= eta;
    Matrix next = u + du;
    if (!next.all_finite() || max_abs(next) > kDivergenceThreshold) {
      res.diverged_at = t;
      break;
    }
    u = std::move(next);
    if (t % record_every == 0 || t == steps) {
      record(t);
      last_recorded = t;
    }
  }
  if (res.diverged_at && *res.diverged_at - 1 != last_recorded) record(*res.diverged_at - 1);
  res.final_outputs = std::move(u);
  return res;
}

std::vector<Matrix> linear_model_flow(const TripletDataset& data, LossMode mode, const Matrix& theta0,
                                      double eta, std::size_t steps) {
  data.validate();
  if (theta0.cols() != data.d()) throw ValidationError("linear_model_flow: theta must be z x d");
  Matrix diff = data.positives;
  if (mode == LossMode::contrastive) {
    if (!data.negatives) throw ValidationError("linear_model_flow: contrastive mode needs negatives");
    diff -= *data.negatives;
  } else if (mode != LossMode::non_contrastive) {
    throw ValidationError("linear_model_flow: unsupported mode");
  }
  const Matrix a = matmul_tn(data.anchors, diff);  // sum_i x_i diff_i^T
  const Matrix m = a + a.transposed();
  std::vector<Matrix> out;
  out.reserve(steps + 1);
  Matrix tt = theta0.transposed();
  out.push_back(theta0);
  for (std::size_t t = 0; t < steps; ++t) {
    tt += matmul(m, tt) * eta;
    out.push_back(tt.transposed());
  }
  return out;
}

RegressionFlowResult regression_flow(const Matrix& x, const Matrix& y, const Kernel& kernel,
                                     const Matrix& u0, double eta, std::size_t steps,
                                     std::size_t record_every) {
  if (y.rows() != x.rows() || u0.rows() != x.rows() || u0.cols() != y.cols())
    throw ValidationError("regression_flow: expected X n x d, Y and u0 n x z");
  if (!(eta > 0.0)) throw ValidationError("regression_flow: eta must be positive");
  if (record_every < 1) throw ValidationError("regression_flow: record_every must be >= 1");
  const std::size_t n = x.rows(), z = y.cols();
  const Matrix k = kernel.gram(x, x);

  // Components evolve independently: each one runs the identical scalar loop.
  std::vector<std::vector<double>> comps(z);
  for (std::size_t l = 0; l < z; ++l) comps[l] = u0.col(l);
  RegressionFlowResult res;
  auto record = [&](std::size_t step) {
    Matrix m(n, z);
    for (std::size_t l = 0; l < z; ++l)
      for (std::size_t i = 0; i < n; ++i) m(i, l) = comps[l][i];
    res.outputs.push_back(std::move(m));
    res.steps.push_back(step);
  };
  record(0);
  std::vector<double> r(n);
  for (std::size_t t = 1; t <= steps; ++t) {
    for (std::size_t l = 0; l < z; ++l) {
      std::vector<double>& u = comps[l];
      for (std::size_t i = 0; i < n; ++i) r[i] = u[i] - y(i, l);
      for (std::size_t j = 0; j < n; ++j) u[j] -= eta * dot(k.row(j), r);
      for (double v : u)
        if (!std::isfinite(v) || std::fabs(v) > kDivergenceThreshold)
          throw DivergenceError("regression_flow diverged at step " + std::to_string(t) +
                                    "; eta is too large for the kernel spectrum",
                                t);
    }
    if (t % record_every == 0 || t == steps) record(t);
  }
  return res;
}

}  // namespace ssldyn
