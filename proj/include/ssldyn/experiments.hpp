#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ssldyn/data.hpp"
#include "ssldyn/downstream.hpp"
#include "ssldyn/dynamics.hpp"
#include "ssldyn/network.hpp"
#include "ssldyn/objective.hpp"

namespace ssldyn {

inline constexpr const char* kArtifactVersion = "0.1.0";

/// Every tunable of every subcommand. Keys of the JSON config file use the
/// same names; unknown keys are rejected.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string out = "runs";
  std::string name;  ///< run directory name; a UTC timestamp when empty

  std::string data;  ///< halfmoons | mnist | blobs; empty = the subcommand default
  std::string mnist_images;
  std::string mnist_labels;
  std::vector<int> mnist_classes{0, 1};
  std::size_t pca_dim = 8;

  std::size_t n = 200;
  double moon_noise = 0.05;
  double noise = 0.1;
  std::size_t blob_dim = 8;
  double blob_separation = 4.0;
  std::string mode = "contrastive";   ///< contrastive | noncontrastive
  std::string reduction = "mean";     ///< mean | sum

  std::string regime;  ///< empty = every regime (constraints only)
  std::string activation = "identity";
  double c1 = 1.0;
  double c2 = 1.0;
  std::size_t width = 100;
  std::vector<std::size_t> widths;  ///< empty = the subcommand's default sweep
  std::size_t z = 1;
  double lr = 0.01;
  std::size_t epochs = 500;
  std::size_t record_every = 1;
  std::size_t seeds = 10;
  std::size_t probes = 20;

  std::size_t bench_steps = 50;
  double svm_lambda = 1e-3;
  std::size_t svm_epochs = 200;
  double test_fraction = 0.2;

  double naive_eta = 1e-3;
  std::size_t naive_steps = 100000;
  std::size_t naive_z = 4;
  double rbf_bandwidth = 1.0;

  std::size_t theory_epochs = 2000;  ///< training budget of the trace-optimum check

  /// Overwrite fields present in `j`; throws ValidationError on unknown keys
  /// or wrongly typed values.
  void apply_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;

  LossMode loss_mode() const;
  Reduction loss_reduction() const;
};

ExperimentConfig load_config(const std::filesystem::path& path);

/// Data set, its triplets and objective as every subcommand uses them.
struct PreparedData {
  LabeledData points;  ///< centered
  TripletDataset triplets;
  ObjectiveSpec spec;
  std::string source;     ///< halfmoons | blobs | mnist
  bool fallback = false;  ///< mnist requested without files, blobs used
};

/// `allow_fallback`: a mnist request without paths falls back to blobs
/// (flagged) instead of failing. Paths that do not exist always fail with
/// DataFileError.
PreparedData prepare_data(const ExperimentConfig& cfg, bool allow_fallback = false);

/// Rows projected on the top-k principal directions (X assumed centered).
Matrix pca_project(const Matrix& x, std::size_t k);

/// "%.17g"
std::string fmt(double v);

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);
  void row(const std::vector<double>& cells);

 private:
  std::ofstream out_;
  std::size_t cols_;
};

/// Creates <out>/<subcommand>/<name or timestamp>, adding "-1", "-2", ... if
/// the directory already exists.
std::filesystem::path make_run_dir(const ExperimentConfig& cfg, const std::string& subcommand);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

// ---------------------------------------------------------------------------
// Experiment runners. Each returns its measurements; the cmd_* wrappers write
// them into a run directory.

struct RegimeRun {
  RegimeKind regime = RegimeKind::orthogonal;
  TrainTrace trace;
  TwoLayerNet final_net;
  double final_loss = 0.0;  ///< last finite recorded loss
};

struct ConstraintsResult {
  PreparedData data;
  Matrix probes;
  std::vector<RegimeRun> runs;
};

ConstraintsResult run_constraints(const ExperimentConfig& cfg);

struct WidthsResult {
  std::vector<WidthSweepReport> reports;  ///< one per activation
};

WidthsResult run_widths(const ExperimentConfig& cfg, const std::vector<Activation>& activations);

struct OdeGdRun {
  std::size_t width = 0;
  TrainTrace gd;
  DynamicsTrajectory ode;
  Matrix q_gd;       ///< V^T W1^T W2 after training
  double gd_loss = 0.0;
  double ode_loss = 0.0;
  double relative_gap = 0.0;
  double max_angle = 0.0;  ///< largest principal angle between q_gd and q_ode
};

struct OdeGdResult {
  PreparedData data;
  Matrix probes;
  std::vector<OdeGdRun> runs;
};

OdeGdResult run_ode_vs_gd(const ExperimentConfig& cfg);

struct BenchTiming {
  std::size_t width = 0;
  double gd_median = 0.0;
  double ode_median = 0.0;
};

struct AccuracyPoint {
  std::size_t epoch = 0;
  double train_gd = 0.0;
  double train_ode = 0.0;
  double test_gd = 0.0;
  double test_ode = 0.0;
};

struct BenchResult {
  std::string source;
  bool fallback = false;
  std::vector<BenchTiming> timings;
  std::vector<AccuracyPoint> accuracy;
};

BenchResult run_bench(const ExperimentConfig& cfg);

struct CollapseKernelRun {
  std::string kernel;
  NaiveFlowResult flow;
};

struct CollapseResult {
  std::vector<CollapseKernelRun> naive;
  TrainTrace frobenius;
  std::vector<std::pair<std::size_t, double>> sv_ratio;  ///< (step, sigma2 / sigma1 of W2^T W1)
};

CollapseResult run_collapse(const ExperimentConfig& cfg);

/// sigma_2 / sigma_1 of W2^T W1 (0 when z or d is 1).
double output_map_sv_ratio(const TwoLayerNet& net);

/// Theory battery; the JSON report holds one object per check with its
/// measured quantities and a "pass" flag.
nlohmann::json run_theory(const ExperimentConfig& cfg);

// Subcommands: run, write manifest.json, CSVs and summary.json; return the
// run directory.
std::filesystem::path cmd_constraints(const ExperimentConfig& cfg);
std::filesystem::path cmd_widths(const ExperimentConfig& cfg);
std::filesystem::path cmd_ode_vs_gd(const ExperimentConfig& cfg);
std::filesystem::path cmd_bench(const ExperimentConfig& cfg);
std::filesystem::path cmd_collapse(const ExperimentConfig& cfg);
std::filesystem::path cmd_theory(const ExperimentConfig& cfg);

double median(std::vector<double> v);

}  // namespace ssldyn
