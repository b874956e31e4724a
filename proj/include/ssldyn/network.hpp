#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssldyn/data.hpp"
#include "ssldyn/matrix.hpp"
#include "ssldyn/objective.hpp"
#include "ssldyn/rng.hpp"

namespace ssldyn {

enum class Activation { identity, tanh, relu, sigmoid };

std::string_view to_string(Activation a);
Activation parse_activation(std::string_view s);

/// u(x) = W2^T phi(W1 x) with W1: h x d and W2: h x z. No biases.
struct TwoLayerNet {
  Matrix w1;
  Matrix w2;
  Activation activation = Activation::identity;

  std::size_t d() const noexcept { return w1.cols(); }
  std::size_t h() const noexcept { return w1.rows(); }
  std::size_t z() const noexcept { return w2.cols(); }
  void validate() const;
};

/// W1 and W2 drawn as independent Haar semi-orthonormal matrices from one
/// seeded stream (W1 first).
TwoLayerNet haar_net(std::size_t d, std::size_t h, std::size_t z, Activation activation,
                     RngSeed seed);

/// Row-wise outputs: X is m x d, result is m x z.
Matrix forward(const TwoLayerNet& net, const Matrix& x);

struct LossGrads {
  double loss = 0.0;
  Matrix g_w1;
  Matrix g_w2;
};

/// Exact loss over the dataset and its analytic gradients through phi.
///   contrastive:      sum_i u(x_i)^T (u(x_i^-) - u(x_i^+))
///   non_contrastive: -sum_i u(x_i)^T u(x_i^+)
/// Every term is multiplied by `weight`. relu'(0) is taken as 1.
LossGrads loss_and_grads(const TwoLayerNet& net, const TripletDataset& data, LossMode mode,
                         double weight = 1.0);

/// Trace objective Tr(W2^T W1 C W1^T W2) and its gradients
/// (2 W2 W2^T W1 C, 2 W1 C W1^T W2). Only meaningful for linear nets.
LossGrads trace_loss_and_grads(const TwoLayerNet& net, const ObjectiveSpec& spec);

enum class RegimeKind { unconstrained, frobenius, scaled_loss, orthogonal };

std::string_view to_string(RegimeKind r);
RegimeKind parse_regime(std::string_view s);

struct Regime {
  RegimeKind kind = RegimeKind::orthogonal;
  double c1 = 1.0;  ///< Frobenius radius for W1
  double c2 = 1.0;  ///< Frobenius radius for W2
};

inline constexpr double kDivergenceThreshold = 1e12;

struct TrainConfig {
  Regime regime;
  double lr = 0.01;
  std::size_t epochs = 500;
  RngSeed rng{};
  std::size_t record_every = 1;
  /// When false a divergent run stops early and reports `diverged_at`
  /// instead of throwing DivergenceError.
  bool abort_on_divergence = true;

  void validate() const;
};

struct TrainRecord {
  std::size_t step = 0;
  double loss = 0.0;       ///< weighted loss at this step's weights
  double objective = 0.0;  ///< regime objective (scaled loss for scaled_loss)
  Matrix probe_outputs;    ///< forward(net, probes)
  double residual_w1 = 0.0;
  double residual_w2 = 0.0;
  double norm_w1 = 0.0;    ///< Frobenius
  double norm_w2 = 0.0;
  double step_seconds = 0.0;  ///< wall time of the update that produced these weights
};

struct TrainTrace {
  std::vector<TrainRecord> records;
  std::vector<double> step_seconds;  ///< every update, in order
  std::optional<std::size_t> diverged_at;
};

/// Full-batch gradient descent W <- W - lr * grad followed by the regime's
/// projection:
///   unconstrained  plain descent
///   frobenius      rescale W onto the ball ||W||_F <= c when outside it
///   scaled_loss    descent on L / (||W2||_2^2 ||W1||_2^2)
///   orthogonal     polar retraction of W1 and W2 to orthonormal columns
/// Data-driven modes use loss_and_grads weighted by spec.weight; custom mode
/// uses the trace form and requires the identity activation.
/// Records step 0, every `record_every` steps, and the last step.
TrainTrace train(TwoLayerNet& net, const TripletDataset& data, const ObjectiveSpec& spec,
                 const TrainConfig& cfg, const Matrix& probes);

/// Constraint violation of the regime: max|W^T W - I| for orthogonal,
/// max(0, ||W||_F - c) for frobenius, 0 otherwise.
std::pair<double, double> constraint_residuals(const TwoLayerNet& net, const Regime& regime);

/// Mean over rows of ||u_a(x) - u_b(x)||.
double mean_output_difference(const TwoLayerNet& a, const TwoLayerNet& b, const Matrix& x);

/// mean ||x||^2 * d * sqrt(log^4 h / h)
double width_envelope(const Matrix& x, std::size_t h);

struct WidthSweepEntry {
  std::size_t width = 0;
  std::size_t seed = 0;
  std::size_t epoch = 0;
  double difference = 0.0;
  double envelope_ratio = 0.0;
};

struct WidthSweepReport {
  Activation activation = Activation::tanh;
  std::vector<WidthSweepEntry> entries;  ///< sorted by (width, seed, epoch)

  /// Average difference over seeds at (width, epoch).
  double mean_difference(std::size_t width, std::size_t epoch) const;
  double mean_envelope_ratio(std::size_t width, std::size_t epoch) const;
};

/// For each (width, seed): a Haar-initialized net with `activation` and its
/// identity-activation twin sharing the same weights are compared at epoch 0
/// and, if cfg.epochs > 0, after each is trained with the same schedule.
WidthSweepReport width_sweep(std::span<const std::size_t> widths, std::size_t seeds,
                             Activation activation, std::size_t z, const TripletDataset& data,
                             const ObjectiveSpec& spec, const TrainConfig& cfg);

}  // namespace ssldyn
