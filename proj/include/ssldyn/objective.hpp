#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>

#include "ssldyn/data.hpp"
#include "ssldyn/linalg.hpp"
#include "ssldyn/matrix.hpp"

namespace ssldyn {

enum class LossMode { contrastive, non_contrastive, custom };

/// How per-sample terms are combined: a plain sum (the loss as written), or
/// the mean over the n anchors. Mean keeps the spectrum of C O(1) so that
/// a fixed step size such as 0.01 stays stable for any n.
enum class Reduction { sum, mean };

/// The symmetric data matrix C of the trace objective Tr(W2^T W1 C W1^T W2),
/// with its eigendecomposition.
struct ObjectiveSpec {
  Matrix c;
  SymEig eig;
  LossMode mode = LossMode::contrastive;
  /// Factor applied to every per-sample term: 1 for sum, 1/n for mean.
  double weight = 1.0;

  std::size_t d() const noexcept { return c.rows(); }
};

/// Unsymmetrized data matrix:
///   contrastive:      sum_i x_i (x_i^- - x_i^+)^T
///   non_contrastive: -sum_i x_i (x_i^+)^T
/// The non-contrastive sign makes minimizing the trace objective the same
/// problem as minimizing -sum_i u(x_i)^T u(x_i^+).
Matrix c_tilde(const TripletDataset& data, LossMode mode);

/// C = (C~ + C~^T) / 2 (times 1/n under Reduction::mean) with eigenpairs.
ObjectiveSpec build_c(const TripletDataset& data, LossMode mode,
                      Reduction reduction = Reduction::sum);

/// Custom-mode objective from a caller-supplied C~ (e.g. several positives
/// and negatives per anchor).
ObjectiveSpec objective_from_c_tilde(const Matrix& c_tilde, double weight = 1.0);

/// Tr(W2^T W1 C W1^T W2) for W1: h x d, W2: h x z.
double trace_loss(const Matrix& w1, const Matrix& w2, const ObjectiveSpec& spec);

struct ExpectedCReport {
  std::size_t n = 0;
  std::size_t trials = 0;
  Matrix mean_c_tilde;      ///< Monte Carlo average of C~ / n
  Matrix neg_second_moment; ///< minus the average of X^T X / n
  double max_deviation = 0.0;
  double tolerance = 0.0;   ///< 5 / sqrt(trials * n)
  bool pass = false;
};

/// Draws `n` anchors per trial.
using AnchorSampler = std::function<Matrix(std::size_t n, Rng& rng)>;

/// Monte Carlo check that E[C~] = -n E[x x^T] for contrastive triplets built
/// with Gaussian positives (std `noise_std`) and resampled negatives.
/// Requires trials >= 30.
ExpectedCReport expected_c_check(const AnchorSampler& sampler, std::size_t n, std::size_t trials,
                                 RngSeed seed, double noise_std = 0.1);

/// CSV exchange for C: first line "d=<dim>", then d comma-separated rows
/// with 17 significant digits.
void write_c_csv(std::ostream& out, const Matrix& c);
void write_c_csv(const std::filesystem::path& path, const Matrix& c);
Matrix read_c_csv(std::istream& in);
Matrix read_c_csv(const std::filesystem::path& path);

}  // namespace ssldyn
