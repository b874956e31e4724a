#include "ssldyn/objective.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

namespace ssldyn {

Matrix c_tilde(const TripletDataset& data, LossMode mode) {
  data.validate();
  switch (mode) {
    case LossMode::contrastive: {
      if (!data.negatives) throw ValidationError("build_c: contrastive mode needs negatives");
      return matmul_tn(data.anchors, *data.negatives - data.positives);
    }
    case LossMode::non_contrastive:
      return matmul_tn(data.anchors, data.positives) * -1.0;
    case LossMode::custom:
      break;
  }
  throw ValidationError("build_c: custom mode takes a caller-supplied C~");
}

namespace {

ObjectiveSpec make_spec(const Matrix& ct, LossMode mode, double weight) {
  if (ct.rows() != ct.cols()) throw ValidationError("C~ must be square");
  const std::size_t d = ct.rows();
  ObjectiveSpec spec;
  spec.c = Matrix(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      const double v = weight * 0.5 * (ct(i, j) + ct(j, i));
      spec.c(i, j) = v;
      spec.c(j, i) = v;
    }
  spec.eig = sym_eig(spec.c);
  spec.mode = mode;
  spec.weight = weight;
  return spec;
}

}  // namespace

ObjectiveSpec build_c(const TripletDataset& data, LossMode mode, Reduction reduction) {
  const double weight =
      reduction == Reduction::mean ? 1.0 / static_cast<double>(data.n()) : 1.0;
  return make_spec(c_tilde(data, mode), mode, weight);
}

ObjectiveSpec objective_from_c_tilde(const Matrix& ct, double weight) {
  return make_spec(ct, LossMode::custom, weight);
}

double trace_loss(const Matrix& w1, const Matrix& w2, const ObjectiveSpec& spec) {
  if (w1.rows() != w2.rows() || w1.cols() != spec.d())
    throw ValidationError("trace_loss: expected W1 h x d, W2 h x z, C d x d");
  const Matrix p = matmul_tn(w1, w2);  // d x z, equals V q
  return trace(matmul_tn(p, matmul(spec.c, p)));
}

ExpectedCReport expected_c_check(const AnchorSampler& sampler, std::size_t n, std::size_t trials,
                                 RngSeed seed, double noise_std) {
  if (trials < 30) throw ValidationError("expected_c_check: need at least 30 trials");
  if (n < 2) throw ValidationError("expected_c_check: need n >= 2");
  ExpectedCReport rep;
  rep.n = n;
  rep.trials = trials;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed.value, {t, 0}));
    const Matrix x = sampler(n, rng);
    if (x.rows() != n) throw ValidationError("expected_c_check: sampler returned wrong row count");
    AugmentConfig aug{noise_std, NegativeStrategy::independent_resample,
                      RngSeed{derive_seed(seed.value, {t, 1})}};
    const TripletDataset data = make_triplets(x, aug);
    Matrix ct = c_tilde(data, LossMode::contrastive) * inv_n;
    Matrix m2 = matmul_tn(x, x) * (-inv_n);
    if (t == 0) {
      rep.mean_c_tilde = std::move(ct);
      rep.neg_second_moment = std::move(m2);
    } else {
      rep.mean_c_tilde += ct;
      rep.neg_second_moment += m2;
    }
  }
  const double inv_trials = 1.0 / static_cast<double>(trials);
  rep.mean_c_tilde *= inv_trials;
  rep.neg_second_moment *= inv_trials;
  rep.max_deviation = max_abs_diff(rep.mean_c_tilde, rep.neg_second_moment);
  rep.tolerance = 5.0 / std::sqrt(static_cast<double>(trials * n));
  rep.pass = rep.max_deviation <= rep.tolerance;
  return rep;
}

void write_c_csv(std::ostream& out, const Matrix& c) {
  if (c.rows() != c.cols()) throw ValidationError("write_c_csv: C must be square");
  out << "d=" << c.rows() << '\n';
  char buf[32];
  for (std::size_t i = 0; i < c.rows(); ++i) {
    for (std::size_t j = 0; j < c.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", c(i, j));
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

void write_c_csv(const std::filesystem::path& path, const Matrix& c) {
  std::ofstream out(path);
  if (!out) throw DataFileError("cannot write " + path.string());
  write_c_csv(out, c);
}

Matrix read_c_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("d=", 0) != 0)
    throw ValidationError("read_c_csv: missing 'd=<dim>' header");
  std::size_t d = 0;
  try {
    d = std::stoul(line.substr(2));
  } catch (const std::exception&) {
    throw ValidationError("read_c_csv: bad header '" + line + "'");
  }
  Matrix c(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    if (!std::getline(in, line)) throw ValidationError("read_c_csv: expected " + std::to_string(d) + " rows");
    std::stringstream ss(line);
    std::string cell;
    std::size_t j = 0;
    while (std::getline(ss, cell, ',')) {
      if (j >= d) throw ValidationError("read_c_csv: too many columns in row " + std::to_string(i));
      try {
        c(i, j++) = std::stod(cell);
      } catch (const std::exception&) {
        throw ValidationError("read_c_csv: bad number '" + cell + "'");
      }
    }
    if (j != d) throw ValidationError("read_c_csv: row " + std::to_string(i) + " has " + std::to_string(j) + " columns");
  }
  if (!c.all_finite()) throw ValidationError("read_c_csv: non-finite entry");
  return c;
}

Matrix read_c_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataFileError("cannot open " + path.string());
  return read_c_csv(in);
}

}  // namespace ssldyn
