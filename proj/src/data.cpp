#include "ssldyn/data.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

namespace ssldyn {

void TripletDataset::validate() const {
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols())
    throw ValidationError("TripletDataset: positives shape differs from anchors");
  if (negatives && (negatives->rows() != anchors.rows() || negatives->cols() != anchors.cols()))
    throw ValidationError("TripletDataset: negatives shape differs from anchors");
  if (labels && labels->size() != anchors.rows())
    throw ValidationError("TripletDataset: label count differs from anchor count");
}

LabeledData gen_halfmoons(std::size_t n, double moon_noise, RngSeed seed) {
  if (n < 2 || n % 2 != 0) throw ValidationError("gen_halfmoons: n must be even and >= 2");
  if (moon_noise < 0.0) throw ValidationError("gen_halfmoons: negative noise");
  const std::size_t half = n / 2;
  LabeledData out{Matrix(n, 2), std::vector<int>(n)};
  Rng rng(seed);
  for (std::size_t k = 0; k < half; ++k) {
    const double t =
        half == 1 ? 0.0 : std::numbers::pi * static_cast<double>(k) / static_cast<double>(half - 1);
    out.x(k, 0) = std::cos(t);
    out.x(k, 1) = std::sin(t);
    out.labels[k] = 0;
    out.x(half + k, 0) = 1.0 - std::cos(t);
    out.x(half + k, 1) = 0.5 - std::sin(t);
    out.labels[half + k] = 1;
  }
  if (moon_noise > 0.0)
    for (double& v : out.x.data()) v += moon_noise * rng.normal();
  return out;
}

LabeledData gen_blobs(std::size_t per_class, std::size_t d, double separation, RngSeed seed) {
  if (per_class == 0 || d == 0) throw ValidationError("gen_blobs: empty request");
  LabeledData out{Matrix(2 * per_class, d), std::vector<int>(2 * per_class)};
  Rng rng(seed);
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = i < per_class ? 0 : 1;
    out.labels[i] = label;
    for (std::size_t j = 0; j < d; ++j) out.x(i, j) = rng.normal();
    out.x(i, 0) += (label == 0 ? -0.5 : 0.5) * separation;
  }
  return out;
}

std::vector<double> center_columns(Matrix& x) {
  std::vector<double> means(x.cols(), 0.0);
  if (x.rows() == 0) return means;
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) means[j] += x(i, j);
  for (double& m : means) m /= static_cast<double>(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) x(i, j) -= means[j];
  return means;
}

TripletDataset make_triplets(const Matrix& x, const AugmentConfig& cfg) {
  if (x.rows() == 0 || x.cols() == 0) throw ValidationError("make_triplets: empty data");
  if (cfg.noise_std < 0.0) throw ValidationError("make_triplets: noise_std must be >= 0");
  const bool with_negatives = cfg.negative_strategy == NegativeStrategy::independent_resample;
  if (with_negatives && x.rows() < 2)
    throw ValidationError("make_triplets: negative sampling needs at least 2 rows");

  Rng rng(cfg.rng);
  TripletDataset out;
  out.anchors = x;
  out.positives = x;
  if (cfg.noise_std > 0.0)
    for (double& v : out.positives.data()) v += cfg.noise_std * rng.normal();
  if (with_negatives) {
    const std::size_t n = x.rows();
    Matrix neg(n, x.cols());
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t j = rng.uniform_index(n - 1);
      if (j >= i) ++j;
      std::copy(x.row(j).begin(), x.row(j).end(), neg.row(i).begin());
    }
    out.negatives = std::move(neg);
  }
  return out;
}

namespace {

std::ifstream open_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFileError("cannot open " + path.string());
  return in;
}

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4))
    throw IdxError(IdxError::Kind::truncated, path.string() + ": truncated header");
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void expect_magic(std::uint32_t got, std::uint32_t want, const std::filesystem::path& path) {
  if (got != want) {
    char buf[96];
    std::snprintf(buf, sizeof buf, ": bad magic 0x%08X (expected 0x%08X)", got, want);
    throw IdxError(IdxError::Kind::bad_magic, path.string() + buf);
  }
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  std::ifstream in = open_binary(path);
  expect_magic(read_be32(in, path), kIdxImageMagic, path);
  IdxImages img;
  img.count = read_be32(in, path);
  img.rows = read_be32(in, path);
  img.cols = read_be32(in, path);
  img.pixels.resize(img.count * img.rows * img.cols);
  if (!in.read(reinterpret_cast<char*>(img.pixels.data()),
               static_cast<std::streamsize>(img.pixels.size())))
    throw IdxError(IdxError::Kind::truncated, path.string() + ": truncated pixel data (expected " +
                                                  std::to_string(img.pixels.size()) + " bytes)");
  return img;
}

std::vector<unsigned char> read_idx_labels(const std::filesystem::path& path) {
  std::ifstream in = open_binary(path);
  expect_magic(read_be32(in, path), kIdxLabelMagic, path);
  std::vector<unsigned char> labels(read_be32(in, path));
  if (!in.read(reinterpret_cast<char*>(labels.data()), static_cast<std::streamsize>(labels.size())))
    throw IdxError(IdxError::Kind::truncated, path.string() + ": truncated label data (expected " +
                                                  std::to_string(labels.size()) + " bytes)");
  return labels;
}

LabeledData load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                     std::pair<int, int> classes, std::size_t per_class) {
  if (classes.first == classes.second) throw ValidationError("load_idx: classes must differ");
  const IdxImages img = read_idx_images(images);
  const std::vector<unsigned char> lab = read_idx_labels(labels);
  if (lab.size() != img.count)
    throw IdxError(IdxError::Kind::count_mismatch,
                   "load_idx: " + std::to_string(img.count) + " images but " +
                       std::to_string(lab.size()) + " labels");

  const std::size_t d = img.rows * img.cols;
  std::vector<std::size_t> picked;
  std::size_t taken_a = 0;
  std::size_t taken_b = 0;
  for (std::size_t i = 0; i < img.count && (taken_a < per_class || taken_b < per_class); ++i) {
    if (lab[i] == classes.first && taken_a < per_class) {
      picked.push_back(i);
      ++taken_a;
    } else if (lab[i] == classes.second && taken_b < per_class) {
      picked.push_back(i);
      ++taken_b;
    }
  }
  if (taken_a < per_class || taken_b < per_class) {
    const int which = taken_a < per_class ? classes.first : classes.second;
    throw IdxError(IdxError::Kind::class_exhausted,
                   "load_idx: class " + std::to_string(which) + " has only " +
                       std::to_string(which == classes.first ? taken_a : taken_b) +
                       " examples, " + std::to_string(per_class) + " requested");
  }

  LabeledData out{Matrix(picked.size(), d), std::vector<int>(picked.size())};
  for (std::size_t r = 0; r < picked.size(); ++r) {
    const unsigned char* px = img.pixels.data() + picked[r] * d;
    for (std::size_t j = 0; j < d; ++j) out.x(r, j) = static_cast<double>(px[j]) / 255.0;
    out.labels[r] = lab[picked[r]] == classes.first ? 0 : 1;
  }
  center_columns(out.x);
  return out;
}

}  // namespace ssldyn
