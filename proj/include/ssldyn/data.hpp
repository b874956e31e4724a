#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssldyn/errors.hpp"
#include "ssldyn/matrix.hpp"
#include "ssldyn/rng.hpp"

namespace ssldyn {

/// Points (rows) with integer class labels.
struct LabeledData {
  Matrix x;
  std::vector<int> labels;
};

/// Anchors x_i with their positives x_i^+ and (contrastive mode only)
/// negatives x_i^-. All present matrices are n x d.
struct TripletDataset {
  Matrix anchors;
  Matrix positives;
  std::optional<Matrix> negatives;
  std::optional<std::vector<int>> labels;

  std::size_t n() const noexcept { return anchors.rows(); }
  std::size_t d() const noexcept { return anchors.cols(); }
  bool contrastive() const noexcept { return negatives.has_value(); }
  /// Throws ValidationError when shapes disagree.
  void validate() const;
};

enum class NegativeStrategy { independent_resample, none };

struct AugmentConfig {
  double noise_std = 0.1;
  NegativeStrategy negative_strategy = NegativeStrategy::independent_resample;
  RngSeed rng{};
};

/// Two interleaved unit semicircles (the scikit-learn layout): class 0 is
/// (cos t, sin t), class 1 is (1 - cos t, 0.5 - sin t), t evenly spaced on
/// [0, pi], n/2 points each, plus isotropic Gaussian jitter.
LabeledData gen_halfmoons(std::size_t n, double moon_noise, RngSeed seed);

/// Two isotropic unit-variance Gaussian blobs in R^d with means
/// -/+ (separation / 2) e_1, `per_class` points each, labels 0/1.
LabeledData gen_blobs(std::size_t per_class, std::size_t d, double separation, RngSeed seed);

/// Subtract column means in place; returns the removed means.
std::vector<double> center_columns(Matrix& x);

/// Anchors = X; positives = X + N(0, noise_std^2) entrywise; negatives are
/// rows of X drawn uniformly with replacement from all rows except i.
TripletDataset make_triplets(const Matrix& x, const AugmentConfig& cfg);

/// Error raised while parsing IDX files.
class IdxError : public Error {
 public:
  enum class Kind { bad_magic, truncated, class_exhausted, count_mismatch };
  IdxError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Raw IDX image file contents (unsigned bytes).
struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<unsigned char> pixels;
};

IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<unsigned char> read_idx_labels(const std::filesystem::path& path);

/// Select the first `per_class` examples of each of the two classes (file
/// order preserved), scale pixels to [0, 1], flatten rows and center columns.
/// Labels are 0 for `classes.first` and 1 for `classes.second`.
LabeledData load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                     std::pair<int, int> classes, std::size_t per_class);

}  // namespace ssldyn
