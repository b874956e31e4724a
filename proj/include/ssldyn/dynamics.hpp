#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssldyn/data.hpp"
#include "ssldyn/linalg.hpp"
#include "ssldyn/matrix.hpp"
#include "ssldyn/network.hpp"
#include "ssldyn/objective.hpp"

namespace ssldyn {

/// Machine outputs at the eigenvectors of C: row i of q is u(v_i)^T, so q is
/// d x z and expressed in the eigenbasis (e_1 is the first standard vector).
struct DynamicsState {
  Matrix q;
  SymEig eig;
  std::size_t step = 0;
  double eta = 0.01;

  /// Tr(q^T Lambda q), the trace objective expressed in q.
  double loss() const;
};

/// q0 = V^T W1^T W2 (the linear part of the net evaluated at each v_i).
DynamicsState q_init_from_net(const TwoLayerNet& net, const SymEig& eig, double eta = 0.01);

/// -2 (2 Lambda q - Lambda q q^T q - q q^T Lambda q)
Matrix ode_rhs(const DynamicsState& state);
Matrix ode_rhs(std::span<const double> lambda, const Matrix& q);

/// The z = 1 right-hand side in radial/tangential form,
/// 2 (-(1 - q^T q) Lambda q - (I - q q^T) Lambda q). Algebraically equal to
/// ode_rhs; used to cross-check it and to reason about convergence.
Matrix ode_rhs_split(std::span<const double> lambda, const Matrix& q);

struct DynamicsRecord {
  std::size_t step = 0;
  double loss = 0.0;
  Matrix q;
  double norm = 0.0;          ///< Frobenius norm of q
  double e1_overlap = 0.0;    ///< q(0, 0), i.e. e_1^T q for the first column
  double step_seconds = 0.0;
};

struct DynamicsTrajectory {
  std::vector<DynamicsRecord> records;
  std::vector<double> step_seconds;
  DynamicsState final_state;
  std::vector<std::string> warnings;
};

/// Explicit Euler: q_{t+1} = q_t + eta * ode_rhs(q_t). Records step 0, every
/// `record_every` steps and the last one. Warns (does not fail) when
/// eta * max|lambda| > 0.1. Throws DivergenceError on non-finite q or
/// max|q| above 1e12.
DynamicsTrajectory integrate(const DynamicsState& state, std::size_t steps,
                             std::size_t record_every = 1);

enum class FixedPointKind { zero, smallest_eigenvector, indeterminate, subspace_conjectural };

struct FixedPointPrediction {
  FixedPointKind kind = FixedPointKind::zero;
  /// Columns span the predicted limit in q-coordinates: e_1 (or the whole
  /// eigenspace when lambda_1 is repeated) for z = 1, the min(z, #negative)
  /// smallest eigendirections for z > 1. Empty for zero.
  Matrix basis;
  bool conjectural = false;
};

/// z = 1: zero when lambda_1 > 0, +-e_1 when lambda_1 < 0, indeterminate at
/// lambda_1 == 0. z > 1 returns the subspace heuristic flagged conjectural.
FixedPointPrediction classify_fixed_point(const SymEig& eig, std::size_t z);

/// sign(e_1^T q0) e_1 for z = 1; nullopt when the overlap is exactly zero
/// (initialization on the unstable manifold).
std::optional<Matrix> convergence_target(const DynamicsState& state);

/// u_t(x) = q_t^T V^T x.
std::vector<double> eval_new_point(const DynamicsState& state, std::span<const double> x);
/// Row-wise eval_new_point for an m x d block.
Matrix eval_new_points(const DynamicsState& state, const Matrix& x);

/// Symmetric positive-definite kernel k(x, x').
class Kernel {
 public:
  using Fn = std::function<double(std::span<const double>, std::span<const double>)>;
  Kernel(std::string name, Fn fn) : name_(std::move(name)), fn_(std::move(fn)) {}

  static Kernel linear();
  /// exp(-||x - x'||^2 / (2 bandwidth^2))
  static Kernel rbf(double bandwidth);

  double operator()(std::span<const double> a, std::span<const double> b) const { return fn_(a, b); }
  const std::string& name() const noexcept { return name_; }
  /// K_ij = k(a_i, b_j)
  Matrix gram(const Matrix& a, const Matrix& b) const;

 private:
  std::string name_;
  Fn fn_;
};

/// Evaluation points of the naive flow, stacked as
/// [probes; anchors; positives; negatives (contrastive only)].
Matrix naive_flow_points(const Matrix& probes, const TripletDataset& data, LossMode mode);

struct CollapseRecord {
  std::size_t step = 0;
  double effective_rank = 0.0;
  double max_pairwise_cos = 0.0;
  double max_abs_output = 0.0;
};

struct NaiveFlowResult {
  std::vector<CollapseRecord> records;
  std::vector<Matrix> probe_outputs;  ///< m x z per recorded step
  Matrix final_outputs;               ///< all evaluation points
  std::optional<std::size_t> diverged_at;
};

/// Euler integration of the unconstrained SSL output flow over every
/// evaluation point at once:
///   contrastive:      du(x) = sum_i k(x,x_i)(u(x_i^+) - u(x_i^-)) + (k(x,x_i^+) - k(x,x_i^-)) u(x_i)
///   non_contrastive:  du(x) = sum_i k(x,x_i) u(x_i^+) + k(x,x_i^+) u(x_i)
/// `u0` holds initial outputs at naive_flow_points(probes, data, mode).
/// Stops (without throwing) once max|u| exceeds 1e12.
NaiveFlowResult naive_flow(const Matrix& probes, const TripletDataset& data, LossMode mode,
                           const Kernel& kernel, const Matrix& u0, double eta, std::size_t steps,
                           std::size_t record_every = 1);

/// The same flow written for an explicit linear model u(x) = Theta x:
/// Theta^T <- Theta^T + eta * M Theta^T with M = sum_i x_i (x_i^+ - x_i^-)^T + (x_i^+ - x_i^-) x_i^T
/// (contrastive) or sum_i x_i x_i^+^T + x_i^+ x_i^T (non-contrastive).
/// `theta0` is z x d. Returns Theta after each of the `steps` updates
/// (index 0 is theta0).
std::vector<Matrix> linear_model_flow(const TripletDataset& data, LossMode mode,
                                      const Matrix& theta0, double eta, std::size_t steps);

/// exp(entropy of normalized singular values).
double effective_rank(const Matrix& outputs);
/// max over component pairs of |cos| between output columns.
double max_pairwise_cosine(const Matrix& outputs);

struct RegressionFlowResult {
  std::vector<Matrix> outputs;  ///< n x z at each recorded step
  std::vector<std::size_t> steps;
};

/// Euler integration of the kernel regression flow on the training points,
/// du_l(x_j) = -sum_i k(x_j, x_i) (u_l(x_i) - y_il), one component at a time.
RegressionFlowResult regression_flow(const Matrix& x, const Matrix& y, const Kernel& kernel,
                                     const Matrix& u0, double eta, std::size_t steps,
                                     std::size_t record_every = 1);

}  // namespace ssldyn
