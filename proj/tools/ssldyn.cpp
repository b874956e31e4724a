#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssldyn/errors.hpp"
#include "ssldyn/experiments.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, data, mnist_images, mnist_labels, mode, regime, name, activation;
  std::optional<std::size_t> width, z, epochs, record_every, seeds, n;
  std::optional<std::vector<std::size_t>> widths;
  std::optional<double> lr, noise;

  void attach(CLI::App& app) {
    app.add_option("--config", config, "JSON config file");
    app.add_option("--seed", seed, "base seed");
    app.add_option("--out", out, "output root directory");
    app.add_option("--name", name, "run directory name (default: UTC timestamp)");
    app.add_option("--data", data, "halfmoons | mnist | blobs");
    app.add_option("--mnist-images", mnist_images, "IDX image file");
    app.add_option("--mnist-labels", mnist_labels, "IDX label file");
    app.add_option("--mode", mode, "contrastive | noncontrastive");
    app.add_option("--regime", regime, "unconstrained | frobenius | scaled_loss | orthogonal");
    app.add_option("--activation", activation, "identity | tanh | relu | sigmoid");
    app.add_option("--width", width, "hidden width h");
    app.add_option("--widths", widths, "hidden widths for sweeps")->delimiter(',');
    app.add_option("--z", z, "output dimension");
    app.add_option("--lr", lr, "step size");
    app.add_option("--epochs", epochs, "number of full-batch steps");
    app.add_option("--noise", noise, "augmentation noise std");
    app.add_option("--record-every", record_every, "recording cadence in steps");
    app.add_option("--seeds", seeds, "initializations per width");
    app.add_option("--n", n, "number of points (per class for mnist and blobs)");
  }

  ssldyn::ExperimentConfig resolve() const {
    ssldyn::ExperimentConfig cfg;
    if (!config.empty()) cfg = ssldyn::load_config(config);
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    if (name) cfg.name = *name;
    if (data) cfg.data = *data;
    if (mnist_images) cfg.mnist_images = *mnist_images;
    if (mnist_labels) cfg.mnist_labels = *mnist_labels;
    if (mode) cfg.mode = *mode;
    if (regime) cfg.regime = *regime;
    if (activation) cfg.activation = *activation;
    if (width) cfg.width = *width;
    if (widths) cfg.widths = *widths;
    if (z) cfg.z = *z;
    if (lr) cfg.lr = *lr;
    if (epochs) cfg.epochs = *epochs;
    if (noise) cfg.noise = *noise;
    if (record_every) cfg.record_every = *record_every;
    if (seeds) cfg.seeds = *seeds;
    if (n) cfg.n = *n;
    cfg.validate();
    return cfg;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trace-objective SSL training, q-dynamics and diagnostics"};
  app.require_subcommand(1);

  using Cmd = std::filesystem::path (*)(const ssldyn::ExperimentConfig&);
  struct Sub {
    const char* name;
    const char* help;
    Cmd fn;
  };
  const std::vector<Sub> subs{
      {"constraints", "train the four constraint regimes", ssldyn::cmd_constraints},
      {"widths", "linear vs nonlinear output gap across widths", ssldyn::cmd_widths},
      {"ode-vs-gd", "gradient descent against the q-dynamics", ssldyn::cmd_ode_vs_gd},
      {"bench", "step timing and downstream accuracy", ssldyn::cmd_bench},
      {"collapse", "dimension collapse diagnostics", ssldyn::cmd_collapse},
      {"theory", "theory checks with a pass/fail report", ssldyn::cmd_theory},
  };
  std::vector<Overrides> overrides(subs.size());
  std::vector<CLI::App*> apps;
  for (std::size_t i = 0; i < subs.size(); ++i) {
    CLI::App* sub = app.add_subcommand(subs[i].name, subs[i].help);
    overrides[i].attach(*sub);
    apps.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    for (std::size_t i = 0; i < subs.size(); ++i) {
      if (!apps[i]->parsed()) continue;
      const auto dir = subs[i].fn(overrides[i].resolve());
      std::cout << dir.string() << '\n';
    }
  } catch (const ssldyn::DataFileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const ssldyn::DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ssldyn::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ssldyn::IdxError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
