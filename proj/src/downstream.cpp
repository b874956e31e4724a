#include "ssldyn/downstream.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ssldyn/errors.hpp"

namespace ssldyn {

double LinearSvm::decision(std::span<const double> e) const { return dot(w, e) + b; }

namespace {

void check_inputs(const Matrix& e, std::span<const int> labels, bool need_both) {
  if (labels.size() != e.rows())
    throw ValidationError("svm: " + std::to_string(e.rows()) + " embeddings but " +
                          std::to_string(labels.size()) + " labels");
  bool pos = false, neg = false;
  for (int y : labels) {
    if (y == 1) pos = true;
    else if (y == -1) neg = true;
    else throw ValidationError("svm: labels must be -1 or +1");
  }
  if (need_both && !(pos && neg)) throw ValidationError("svm: both classes must be present");
  if (!e.all_finite()) throw ValidationError("svm: non-finite embedding");
}

}  // namespace

LinearSvm svm_train(const Matrix& e, std::span<const int> labels, const SvmConfig& cfg) {
  if (e.rows() < 2) throw ValidationError("svm_train: need at least two samples");
  check_inputs(e, labels, true);
  if (!(cfg.lambda > 0.0)) throw ValidationError("svm_train: lambda must be positive");
  if (cfg.epochs < 1) throw ValidationError("svm_train: need at least one epoch");

  const std::size_t n = e.rows(), z = e.cols();
  // Weights with the bias as a trailing coordinate.
  std::vector<double> w(z + 1, 0.0), avg(z + 1, 0.0);
  std::size_t averaged = 0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(cfg.rng);
  std::size_t t = 0;
  const std::size_t avg_from = cfg.epochs / 2;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (cfg.lambda * static_cast<double>(t));
      const auto x = e.row(i);
      const double y = labels[i];
      const double margin = y * (dot(std::span<const double>(w.data(), z), x) + w[z]);
      const double shrink = 1.0 - eta * cfg.lambda;
      for (double& v : w) v *= shrink;
      if (margin < 1.0) {
        for (std::size_t k = 0; k < z; ++k) w[k] += eta * y * x[k];
        w[z] += eta * y;
      }
      if (cfg.average && epoch >= avg_from) {
        ++averaged;
        const double a = 1.0 / static_cast<double>(averaged);
        for (std::size_t k = 0; k <= z; ++k) avg[k] += a * (w[k] - avg[k]);
      }
    }
  }
  const std::vector<double>& final_w = cfg.average ? avg : w;
  LinearSvm m;
  m.w.assign(final_w.begin(), final_w.begin() + static_cast<std::ptrdiff_t>(z));
  m.b = final_w[z];
  m.lambda = cfg.lambda;
  if (!std::isfinite(m.b) || !std::all_of(m.w.begin(), m.w.end(), [](double v) { return std::isfinite(v); }))
    throw DivergenceError("svm_train: non-finite parameters", t);
  return m;
}

double svm_objective(const LinearSvm& model, const Matrix& e, std::span<const int> labels) {
  check_inputs(e, labels, false);
  if (model.w.size() != e.cols()) throw ValidationError("svm_objective: dimension mismatch");
  double hinge = 0.0;
  for (std::size_t i = 0; i < e.rows(); ++i)
    hinge += std::max(0.0, 1.0 - labels[i] * model.decision(e.row(i)));
  const double reg = dot(model.w, model.w) + model.b * model.b;
  return 0.5 * model.lambda * reg + hinge / static_cast<double>(e.rows());
}

double svm_accuracy(const LinearSvm& model, const Matrix& e, std::span<const int> labels) {
  check_inputs(e, labels, false);
  if (model.w.size() != e.cols()) throw ValidationError("svm_accuracy: dimension mismatch");
  if (e.rows() == 0) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < e.rows(); ++i) {
    const int pred = model.decision(e.row(i)) >= 0.0 ? 1 : -1;
    hit += pred == labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(e.rows());
}

std::vector<int> to_pm1(std::span<const int> labels01) {
  std::vector<int> out;
  out.reserve(labels01.size());
  for (int y : labels01) {
    if (y != 0 && y != 1) throw ValidationError("to_pm1: labels must be 0 or 1");
    out.push_back(y == 1 ? 1 : -1);
  }
  return out;
}

}  // namespace ssldyn
