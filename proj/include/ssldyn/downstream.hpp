#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ssldyn/matrix.hpp"
#include "ssldyn/rng.hpp"

namespace ssldyn {

/// sign(w^T e + b) classifier.
struct LinearSvm {
  std::vector<double> w;
  double b = 0.0;
  double lambda = 1e-3;

  double decision(std::span<const double> e) const;
};

struct SvmConfig {
  double lambda = 1e-3;
  std::size_t epochs = 200;
  RngSeed rng{};
  /// Return the average of the iterates from the second half of training
  /// rather than the last one.
  bool average = true;
};

/// Pegasos: stochastic subgradient on
///   lambda/2 (||w||^2 + b^2) + mean_i max(0, 1 - y_i (w^T e_i + b))
/// with step 1/(lambda t) and one seeded shuffle per epoch. The bias is a
/// constant feature, so it is regularized like the weights.
/// Labels must be +-1 with both classes present.
LinearSvm svm_train(const Matrix& e, std::span<const int> labels, const SvmConfig& cfg = {});

/// The objective above evaluated at `model`.
double svm_objective(const LinearSvm& model, const Matrix& e, std::span<const int> labels);

/// Fraction of rows whose predicted sign matches the label. A decision value
/// of exactly 0 predicts +1.
double svm_accuracy(const LinearSvm& model, const Matrix& e, std::span<const int> labels);

/// Maps {0, 1} class labels to {-1, +1}.
std::vector<int> to_pm1(std::span<const int> labels01);

}  // namespace ssldyn
