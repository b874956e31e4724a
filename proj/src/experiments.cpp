#include "ssldyn/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <functional>
#include <map>
#include <numeric>

#include "ssldyn/errors.hpp"
#include "ssldyn/linalg.hpp"

namespace ssldyn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream tags for derive_seed.
enum : std::uint64_t {
  kDataStream = 1,
  kTripletStream = 2,
  kNetStream = 3,
  kProbeStream = 4,
  kSplitStream = 5,
  kSvmStream = 6,
  kInitStream = 7,
  kTheoryStream = 8,
};

const std::vector<std::size_t> kSweepWidths{10, 20, 50, 100, 200, 500, 1000, 2000};
const std::vector<std::size_t> kOdeWidths{10, 100, 1000};

template <class T>
void get_to(const json& j, T& field) {
  field = j.get<T>();
}

std::string data_source(const ExperimentConfig& cfg, const std::string& fallback) {
  return cfg.data.empty() ? fallback : cfg.data;
}

Matrix first_rows(const Matrix& x, std::size_t m) { return x.row_block(0, std::min(m, x.rows())); }

Matrix q_of(const TwoLayerNet& net, const SymEig& eig) {
  return matmul_tn(eig.vectors, matmul_tn(net.w1, net.w2));
}

DynamicsState state_at(const DynamicsTrajectory& traj, const Matrix& q) {
  DynamicsState s = traj.final_state;
  s.q = q;
  return s;
}

json manifest(const ExperimentConfig& cfg, const std::string& subcommand, const PreparedData* data) {
  json m;
  m["subcommand"] = subcommand;
  m["artifact_version"] = kArtifactVersion;
  m["seed"] = cfg.seed;
  m["config"] = cfg.to_json();
  if (data != nullptr) m["data"] = {{"source", data->source}, {"fallback", data->fallback}};
  return m;
}

// integrate() needs at least one step; epochs = 0 runs only record q0.
DynamicsTrajectory run_dynamics(const DynamicsState& s0, std::size_t steps, std::size_t every) {
  if (steps > 0) return integrate(s0, steps, every);
  DynamicsTrajectory t;
  t.final_state = s0;
  t.records.push_back({0, s0.loss(), s0.q, frobenius_norm(s0.q), s0.q(0, 0), 0.0});
  return t;
}

double last_loss(const TrainTrace& t) { return t.records.empty() ? 0.0 : t.records.back().loss; }

double max_angle(const Matrix& a, const Matrix& b) {
  const auto angles = principal_angles(a, b);
  return angles.empty() ? 0.0 : *std::max_element(angles.begin(), angles.end());
}

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::apply_json(const json& j) {
  if (!j.is_object()) throw ValidationError("config: top level must be a JSON object");
  using Setter = std::function<void(const json&)>;
  const std::map<std::string, Setter> setters{
      {"seed", [&](const json& v) { get_to(v, seed); }},
      {"out", [&](const json& v) { get_to(v, out); }},
      {"name", [&](const json& v) { get_to(v, name); }},
      {"data", [&](const json& v) { get_to(v, data); }},
      {"mnist_images", [&](const json& v) { get_to(v, mnist_images); }},
      {"mnist_labels", [&](const json& v) { get_to(v, mnist_labels); }},
      {"mnist_classes", [&](const json& v) { get_to(v, mnist_classes); }},
      {"pca_dim", [&](const json& v) { get_to(v, pca_dim); }},
      {"n", [&](const json& v) { get_to(v, n); }},
      {"moon_noise", [&](const json& v) { get_to(v, moon_noise); }},
      {"noise", [&](const json& v) { get_to(v, noise); }},
      {"blob_dim", [&](const json& v) { get_to(v, blob_dim); }},
      {"blob_separation", [&](const json& v) { get_to(v, blob_separation); }},
      {"mode", [&](const json& v) { get_to(v, mode); }},
      {"reduction", [&](const json& v) { get_to(v, reduction); }},
      {"regime", [&](const json& v) { get_to(v, regime); }},
      {"activation", [&](const json& v) { get_to(v, activation); }},
      {"c1", [&](const json& v) { get_to(v, c1); }},
      {"c2", [&](const json& v) { get_to(v, c2); }},
      {"width", [&](const json& v) { get_to(v, width); }},
      {"widths", [&](const json& v) { get_to(v, widths); }},
      {"z", [&](const json& v) { get_to(v, z); }},
      {"lr", [&](const json& v) { get_to(v, lr); }},
      {"epochs", [&](const json& v) { get_to(v, epochs); }},
      {"record_every", [&](const json& v) { get_to(v, record_every); }},
      {"seeds", [&](const json& v) { get_to(v, seeds); }},
      {"probes", [&](const json& v) { get_to(v, probes); }},
      {"bench_steps", [&](const json& v) { get_to(v, bench_steps); }},
      {"svm_lambda", [&](const json& v) { get_to(v, svm_lambda); }},
      {"svm_epochs", [&](const json& v) { get_to(v, svm_epochs); }},
      {"test_fraction", [&](const json& v) { get_to(v, test_fraction); }},
      {"naive_eta", [&](const json& v) { get_to(v, naive_eta); }},
      {"naive_steps", [&](const json& v) { get_to(v, naive_steps); }},
      {"naive_z", [&](const json& v) { get_to(v, naive_z); }},
      {"rbf_bandwidth", [&](const json& v) { get_to(v, rbf_bandwidth); }},
      {"theory_epochs", [&](const json& v) { get_to(v, theory_epochs); }},
  };
  for (const auto& [key, value] : j.items()) {
    const auto it = setters.find(key);
    if (it == setters.end()) throw ValidationError("config: unknown key '" + key + "'");
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ValidationError("config: bad value for '" + key + "': " + e.what());
    }
  }
}

json ExperimentConfig::to_json() const {
  return json{{"seed", seed},
              {"out", out},
              {"name", name},
              {"data", data},
              {"mnist_images", mnist_images},
              {"mnist_labels", mnist_labels},
              {"mnist_classes", mnist_classes},
              {"pca_dim", pca_dim},
              {"n", n},
              {"moon_noise", moon_noise},
              {"noise", noise},
              {"blob_dim", blob_dim},
              {"blob_separation", blob_separation},
              {"mode", mode},
              {"reduction", reduction},
              {"regime", regime},
              {"activation", activation},
              {"c1", c1},
              {"c2", c2},
              {"width", width},
              {"widths", widths},
              {"z", z},
              {"lr", lr},
              {"epochs", epochs},
              {"record_every", record_every},
              {"seeds", seeds},
              {"probes", probes},
              {"bench_steps", bench_steps},
              {"svm_lambda", svm_lambda},
              {"svm_epochs", svm_epochs},
              {"test_fraction", test_fraction},
              {"naive_eta", naive_eta},
              {"naive_steps", naive_steps},
              {"naive_z", naive_z},
              {"rbf_bandwidth", rbf_bandwidth},
              {"theory_epochs", theory_epochs}};
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ValidationError("config: " + msg);
  };
  require(data.empty() || data == "halfmoons" || data == "mnist" || data == "blobs",
          "data must be halfmoons, mnist or blobs");
  require(mode == "contrastive" || mode == "noncontrastive", "mode must be contrastive or noncontrastive");
  require(reduction == "mean" || reduction == "sum", "reduction must be mean or sum");
  if (!regime.empty()) parse_regime(regime);
  parse_activation(activation);
  require(mnist_classes.size() == 2 && mnist_classes[0] != mnist_classes[1],
          "mnist_classes must name two different digits");
  require(n >= 2, "n must be at least 2");
  require(moon_noise >= 0.0 && noise >= 0.0, "noise levels must be non-negative");
  require(blob_dim >= 1 && pca_dim >= 1, "dimensions must be positive");
  require(c1 > 0.0 && c2 > 0.0, "c1 and c2 must be positive");
  require(width >= 1 && z >= 1, "width and z must be positive");
  for (std::size_t w : widths) require(w >= 1, "widths must be positive");
  require(std::isfinite(lr) && lr > 0.0, "lr must be positive");
  require(record_every >= 1, "record_every must be positive");
  require(seeds >= 1 && probes >= 1, "seeds and probes must be positive");
  require(bench_steps >= 1, "bench_steps must be positive");
  require(svm_lambda > 0.0 && svm_epochs >= 1, "bad svm settings");
  require(test_fraction > 0.0 && test_fraction < 1.0, "test_fraction must lie in (0, 1)");
  require(naive_eta > 0.0 && naive_z >= 1, "bad naive flow settings");
  require(rbf_bandwidth > 0.0, "rbf_bandwidth must be positive");
}

LossMode ExperimentConfig::loss_mode() const {
  return mode == "noncontrastive" ? LossMode::non_contrastive : LossMode::contrastive;
}

Reduction ExperimentConfig::loss_reduction() const {
  return reduction == "sum" ? Reduction::sum : Reduction::mean;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataFileError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config: " + path.string() + ": " + e.what());
  }
  ExperimentConfig cfg;
  cfg.apply_json(j);
  return cfg;
}

// ---------------------------------------------------------------------------
// Data

Matrix pca_project(const Matrix& x, std::size_t k) {
  const std::size_t m = x.rows(), d = x.cols();
  if (k >= d) return x;
  if (k > m) throw ValidationError("pca_project: more components than rows");
  Matrix out(m, k);
  if (m < d) {
    // Work with the m x m Gram matrix: X v_j = u_j sqrt(s_j).
    const SymEig e = sym_eig(matmul_nt(x, x));
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t src = m - 1 - j;
      const double s = std::sqrt(std::max(e.values[src], 0.0));
      for (std::size_t i = 0; i < m; ++i) out(i, j) = e.vectors(i, src) * s;
    }
  } else {
    const SymEig e = sym_eig(matmul_tn(x, x));
    Matrix v(d, k);
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t i = 0; i < d; ++i) v(i, j) = e.vectors(i, d - 1 - j);
    out = matmul(x, v);
  }
  return out;
}

PreparedData prepare_data(const ExperimentConfig& cfg, bool allow_fallback) {
  PreparedData p;
  p.source = data_source(cfg, "halfmoons");
  const RngSeed data_seed{derive_seed(cfg.seed, {kDataStream})};
  if (p.source == "mnist" && (cfg.mnist_images.empty() || cfg.mnist_labels.empty())) {
    if (!allow_fallback) throw ValidationError("mnist data needs --mnist-images and --mnist-labels");
    p.source = "blobs";
    p.fallback = true;
  }
  if (p.source == "halfmoons") {
    if (cfg.n % 2 != 0) throw ValidationError("half-moons need an even n");
    p.points = gen_halfmoons(cfg.n, cfg.moon_noise, data_seed);
  } else if (p.source == "blobs") {
    p.points = gen_blobs(cfg.n, cfg.blob_dim, cfg.blob_separation, data_seed);
  } else {
    for (const std::string& f : {cfg.mnist_images, cfg.mnist_labels})
      if (!fs::exists(f)) throw DataFileError("data file not found: " + f);
    p.points = load_idx(cfg.mnist_images, cfg.mnist_labels,
                        {cfg.mnist_classes[0], cfg.mnist_classes[1]}, cfg.n);
    p.points.x = pca_project(p.points.x, cfg.pca_dim);
  }
  center_columns(p.points.x);
  const LossMode mode = cfg.loss_mode();
  p.triplets = make_triplets(
      p.points.x, {cfg.noise,
                   mode == LossMode::contrastive ? NegativeStrategy::independent_resample : NegativeStrategy::none,
                   RngSeed{derive_seed(cfg.seed, {kTripletStream})}});
  p.triplets.labels = p.points.labels;
  p.spec = build_c(p.triplets, mode, cfg.loss_reduction());
  return p;
}

// ---------------------------------------------------------------------------
// Output plumbing

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const fs::path& path, const std::vector<std::string>& header)
    : out_(path), cols_(header.size()) {
  if (!out_) throw Error("cannot write " + path.string());
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  if (cells.size() != cols_) throw ValidationError("csv: row width does not match header");
  for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
  out_ << '\n';
}

void CsvWriter::row(const std::vector<double>& cells) {
  std::vector<std::string> s;
  s.reserve(cells.size());
  for (double v : cells) s.push_back(fmt(v));
  row(s);
}

fs::path make_run_dir(const ExperimentConfig& cfg, const std::string& subcommand) {
  std::string name = cfg.name;
  if (name.empty()) {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
    name = buf;
  }
  const fs::path base = fs::path(cfg.out) / subcommand;
  fs::create_directories(base);
  fs::path dir = base / name;
  for (int k = 1; !fs::create_directory(dir); ++k) dir = base / (name + "-" + std::to_string(k));
  return dir;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Runners

ConstraintsResult run_constraints(const ExperimentConfig& cfg) {
  cfg.validate();
  ConstraintsResult r;
  r.data = prepare_data(cfg);
  r.probes = first_rows(r.data.points.x, cfg.probes);
  std::vector<RegimeKind> regimes{RegimeKind::unconstrained, RegimeKind::frobenius,
                                  RegimeKind::scaled_loss, RegimeKind::orthogonal};
  if (!cfg.regime.empty()) regimes = {parse_regime(cfg.regime)};
  const TwoLayerNet init = haar_net(r.data.triplets.d(), cfg.width, cfg.z,
                                    parse_activation(cfg.activation),
                                    RngSeed{derive_seed(cfg.seed, {kNetStream})});
  for (RegimeKind k : regimes) {
    RegimeRun run;
    run.regime = k;
    run.final_net = init;
    TrainConfig tc;
    tc.regime = {k, cfg.c1, cfg.c2};
    tc.lr = cfg.lr;
    tc.epochs = cfg.epochs;
    tc.rng = RngSeed{derive_seed(cfg.seed, {kInitStream})};
    tc.record_every = cfg.record_every;
    tc.abort_on_divergence = false;
    run.trace = train(run.final_net, r.data.triplets, r.data.spec, tc, r.probes);
    run.final_loss = last_loss(run.trace);
    r.runs.push_back(std::move(run));
  }
  return r;
}

WidthsResult run_widths(const ExperimentConfig& cfg, const std::vector<Activation>& activations) {
  cfg.validate();
  const PreparedData data = prepare_data(cfg);
  const auto& widths = cfg.widths.empty() ? kSweepWidths : cfg.widths;
  TrainConfig tc;
  tc.regime = {cfg.regime.empty() ? RegimeKind::orthogonal : parse_regime(cfg.regime), cfg.c1, cfg.c2};
  tc.lr = cfg.lr;
  tc.epochs = cfg.epochs;
  tc.rng = RngSeed{cfg.seed};
  tc.record_every = std::max<std::size_t>(cfg.epochs, 1);
  WidthsResult r;
  for (Activation a : activations)
    r.reports.push_back(width_sweep(widths, cfg.seeds, a, cfg.z, data.triplets, data.spec, tc));
  return r;
}

OdeGdResult run_ode_vs_gd(const ExperimentConfig& cfg) {
  cfg.validate();
  OdeGdResult r;
  r.data = prepare_data(cfg);
  r.probes = first_rows(r.data.points.x, cfg.probes);
  const auto& widths = cfg.widths.empty() ? kOdeWidths : cfg.widths;
  for (std::size_t h : widths) {
    OdeGdRun run;
    run.width = h;
    TwoLayerNet net = haar_net(r.data.triplets.d(), h, cfg.z, Activation::identity,
                               RngSeed{derive_seed(cfg.seed, {kNetStream, h})});
    run.ode = run_dynamics(q_init_from_net(net, r.data.spec.eig, cfg.lr), cfg.epochs, cfg.record_every);
    TrainConfig tc;
    tc.regime = {RegimeKind::orthogonal};
    tc.lr = cfg.lr;
    tc.epochs = cfg.epochs;
    tc.record_every = cfg.record_every;
    run.gd = train(net, r.data.triplets, r.data.spec, tc, r.probes);
    run.q_gd = q_of(net, r.data.spec.eig);
    run.gd_loss = last_loss(run.gd);
    run.ode_loss = run.ode.final_state.loss();
    run.relative_gap = std::fabs(run.gd_loss - run.ode_loss) / std::max(std::fabs(run.ode_loss), 1e-300);
    run.max_angle = max_angle(run.q_gd, run.ode.final_state.q);
    r.runs.push_back(std::move(run));
  }
  return r;
}

BenchResult run_bench(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentConfig c = cfg;
  if (c.data.empty()) c.data = "mnist";
  const PreparedData data = prepare_data(c, true);
  BenchResult r;
  r.source = data.source;
  r.fallback = data.fallback;
  const std::size_t d = data.triplets.d();

  const auto& widths = cfg.widths.empty() ? kOdeWidths : cfg.widths;
  for (std::size_t h : widths) {
    TwoLayerNet net = haar_net(d, h, cfg.z, Activation::identity,
                               RngSeed{derive_seed(cfg.seed, {kNetStream, h})});
    const auto ode = integrate(q_init_from_net(net, data.spec.eig, cfg.lr), cfg.bench_steps, cfg.bench_steps);
    TrainConfig tc;
    tc.regime = {RegimeKind::orthogonal};
    tc.lr = cfg.lr;
    tc.epochs = cfg.bench_steps;
    tc.record_every = cfg.bench_steps;
    const auto gd = train(net, data.triplets, data.spec, tc, Matrix(0, d));
    r.timings.push_back({h, median(gd.step_seconds), median(ode.step_seconds)});
  }

  // Downstream accuracy: one fixed split, embeddings of every point.
  const Matrix& x = data.points.x;
  const std::size_t m = x.rows();
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  Rng split_rng(derive_seed(cfg.seed, {kSplitStream}));
  for (std::size_t i = m; i > 1; --i) std::swap(perm[i - 1], perm[split_rng.uniform_index(i)]);
  const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.test_fraction * m)));
  const auto y = to_pm1(data.points.labels);
  auto split = [&](const Matrix& emb) {
    Matrix tr(m - n_test, emb.cols()), te(n_test, emb.cols());
    for (std::size_t i = 0; i < m; ++i) {
      auto dst = i < n_test ? te.row(i) : tr.row(i - n_test);
      std::copy_n(emb.row(perm[i]).begin(), emb.cols(), dst.begin());
    }
    return std::pair{tr, te};
  };
  std::vector<int> y_tr, y_te;
  for (std::size_t i = 0; i < m; ++i) (i < n_test ? y_te : y_tr).push_back(y[perm[i]]);
  SvmConfig sc;
  sc.lambda = cfg.svm_lambda;
  sc.epochs = cfg.svm_epochs;
  sc.rng = RngSeed{derive_seed(cfg.seed, {kSvmStream})};
  auto score = [&](const Matrix& emb) {
    const auto [tr, te] = split(emb);
    const LinearSvm model = svm_train(tr, y_tr, sc);
    return std::pair{svm_accuracy(model, tr, y_tr), svm_accuracy(model, te, y_te)};
  };

  TwoLayerNet net = haar_net(d, cfg.width, cfg.z, Activation::identity,
                             RngSeed{derive_seed(cfg.seed, {kNetStream})});
  const auto ode = run_dynamics(q_init_from_net(net, data.spec.eig, cfg.lr), cfg.epochs, cfg.record_every);
  TrainConfig tc;
  tc.regime = {RegimeKind::orthogonal};
  tc.lr = cfg.lr;
  tc.epochs = cfg.epochs;
  tc.record_every = cfg.record_every;
  const auto gd = train(net, data.triplets, data.spec, tc, x);
  for (std::size_t k = 0; k < gd.records.size() && k < ode.records.size(); ++k) {
    AccuracyPoint pt;
    pt.epoch = gd.records[k].step;
    std::tie(pt.train_gd, pt.test_gd) = score(gd.records[k].probe_outputs);
    std::tie(pt.train_ode, pt.test_ode) = score(eval_new_points(state_at(ode, ode.records[k].q), x));
    r.accuracy.push_back(pt);
  }
  return r;
}

double output_map_sv_ratio(const TwoLayerNet& net) {
  const auto s = singular_values(matmul_tn(net.w2, net.w1));
  if (s.size() < 2 || s[0] == 0.0) return 0.0;
  return s[1] / s[0];
}

CollapseResult run_collapse(const ExperimentConfig& cfg) {
  cfg.validate();
  const PreparedData data = prepare_data(cfg);
  const LossMode mode = cfg.loss_mode();
  CollapseResult r;

  Matrix probes = gen_halfmoons(2 * ((cfg.probes + 1) / 2), cfg.moon_noise,
                                RngSeed{derive_seed(cfg.seed, {kProbeStream})}).x;
  if (data.source != "halfmoons") probes = first_rows(data.points.x, cfg.probes);
  else center_columns(probes);
  const Matrix points = naive_flow_points(probes, data.triplets, mode);
  Rng init_rng(derive_seed(cfg.seed, {kInitStream}));
  const Matrix u0 = gaussian_matrix(points.rows(), cfg.naive_z, init_rng);
  for (const Kernel& k : {Kernel::linear(), Kernel::rbf(cfg.rbf_bandwidth)}) {
    r.naive.push_back({k.name(), naive_flow(probes, data.triplets, mode, k, u0, cfg.naive_eta,
                                            cfg.naive_steps, cfg.record_every)});
  }

  TwoLayerNet net = haar_net(data.triplets.d(), cfg.width, cfg.naive_z, Activation::identity,
                             RngSeed{derive_seed(cfg.seed, {kNetStream})});
  TrainConfig tc;
  tc.regime = {RegimeKind::frobenius, cfg.c1, cfg.c2};
  tc.lr = cfg.lr;
  tc.abort_on_divergence = false;
  // Train in record_every-sized segments so the weights are at hand for the
  // singular-value ratio at every recorded step.
  tc.epochs = 0;
  r.frobenius = train(net, data.triplets, data.spec, tc, probes);
  r.sv_ratio.emplace_back(0, output_map_sv_ratio(net));
  std::size_t done = 0;
  while (done < cfg.epochs && !r.frobenius.diverged_at) {
    tc.epochs = std::min(cfg.record_every, cfg.epochs - done);
    tc.record_every = tc.epochs;
    TrainTrace seg = train(net, data.triplets, data.spec, tc, probes);
    r.frobenius.step_seconds.insert(r.frobenius.step_seconds.end(), seg.step_seconds.begin(),
                                    seg.step_seconds.end());
    if (seg.diverged_at) {
      r.frobenius.diverged_at = done + *seg.diverged_at;
      break;
    }
    done += tc.epochs;
    TrainRecord rec = std::move(seg.records.back());
    rec.step = done;
    r.frobenius.records.push_back(std::move(rec));
    r.sv_ratio.emplace_back(done, output_map_sv_ratio(net));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Theory battery

json run_theory(const ExperimentConfig& cfg) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  auto seconds_since = [](clock::time_point t0) {
    return std::chrono::duration<double>(clock::now() - t0).count();
  };
  auto diag_eig = [](std::vector<double> lam) {
    SymEig e;
    e.vectors = Matrix::identity(lam.size());
    e.values = std::move(lam);
    return e;
  };
  json report = json::object();
  Rng rng(derive_seed(cfg.seed, {kTheoryStream}));

  {
    auto t0 = clock::now();
    // q0 = V^T W1^T W2 of a Haar init, so ||q0|| <= 1.
    auto haar_q0 = [&](std::uint64_t tag) {
      const TwoLayerNet net = haar_net(2, 10, 1, Activation::identity,
                                       RngSeed{derive_seed(cfg.seed, {kTheoryStream, tag})});
      return matmul_tn(net.w1, net.w2);
    };
    DynamicsState s{haar_q0(10), diag_eig({2, 5}), 0, 0.01};
    const auto traj = integrate(s, 5000, 5000);
    const double norm = frobenius_norm(traj.final_state.q);
    report["decay_positive_spectrum"] = {{"final_norm", norm}, {"seconds", seconds_since(t0)},
                                         {"pass", norm < 1e-6}};
    t0 = clock::now();
    DynamicsState n{haar_q0(11), diag_eig({-2, 1}), 0, 0.01};
    const double sign = n.q(0, 0) >= 0 ? 1.0 : -1.0;
    const auto tn = integrate(n, 5000, 5000);
    const double overlap = sign * tn.final_state.q(0, 0);
    const double nn = frobenius_norm(tn.final_state.q);
    report["converge_smallest_eigenvector"] = {
        {"signed_overlap", overlap}, {"final_norm", nn}, {"seconds", seconds_since(t0)},
        {"pass", overlap > 0.999 && nn >= 0.999 && nn <= 1.001}};
  }
  {
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
      const std::size_t d = 1 + rng.uniform_index(6);
      std::vector<double> lam(d);
      for (double& l : lam) l = rng.normal(0, 3);
      std::sort(lam.begin(), lam.end());
      const Matrix q = gaussian_matrix(d, 1, rng);
      worst = std::max(worst, max_abs_diff(ode_rhs(lam, q), ode_rhs_split(lam, q)));
    }
    report["rhs_forms_agree"] = {{"max_abs_deviation", worst}, {"pass", worst < 1e-12}};
  }
  {
    const std::vector<std::size_t> hs{100, 200, 500, 1000, 2000};
    json meds = json::array();
    bool ok = true;
    double prev = INFINITY;
    for (std::size_t h : hs) {
      std::vector<double> stats;
      for (std::uint64_t s = 0; s < 50; ++s)
        stats.push_back(max_entry_statistic(sample_haar(h, 100, RngSeed{derive_seed(cfg.seed, {kTheoryStream, h, s})})));
      const double m = median(stats);
      ok = ok && m <= prev && m < 3.0;
      prev = m;
      meds.push_back({{"h", h}, {"median", m}});
    }
    report["haar_max_entry"] = {{"medians", meds}, {"pass", ok}};
  }
  {
    auto sampler = [&](double shift) {
      return [shift, &cfg](std::size_t n, Rng& r) {
        Matrix x = gen_halfmoons(n, cfg.moon_noise, RngSeed{r.uniform_index(UINT64_MAX)}).x;
        center_columns(x);
        for (double& v : x.data()) v += shift;
        return x;
      };
    };
    const std::size_t n = cfg.n % 2 == 0 ? cfg.n : cfg.n + 1;
    const auto centered = expected_c_check(sampler(0.0), n, 200, RngSeed{derive_seed(cfg.seed, {kTheoryStream, 1})}, cfg.noise);
    const auto shifted = expected_c_check(sampler(5.0), n, 200, RngSeed{derive_seed(cfg.seed, {kTheoryStream, 2})}, cfg.noise);
    report["expected_c"] = {{"centered_deviation", centered.max_deviation},
                            {"shifted_deviation", shifted.max_deviation},
                            {"tolerance", centered.tolerance},
                            {"pass", centered.pass && !shifted.pass}};
  }
  {
    const PreparedData data = prepare_data(cfg);
    json runs = json::array();
    bool ok = true;
    for (std::size_t z : {std::size_t{1}, std::size_t{2}}) {
      double target = 0.0;
      for (std::size_t i = 0; i < std::min(z, data.spec.d()); ++i)
        if (data.spec.eig.values[i] < 0) target += data.spec.eig.values[i];
      for (RegimeKind k : {RegimeKind::orthogonal, RegimeKind::scaled_loss}) {
        TwoLayerNet net = haar_net(data.triplets.d(), cfg.width, z, Activation::identity,
                                   RngSeed{derive_seed(cfg.seed, {kNetStream, z})});
        TrainConfig tc;
        tc.regime = {k};
        tc.lr = cfg.lr;
        tc.epochs = cfg.theory_epochs;
        tc.record_every = std::max<std::size_t>(cfg.theory_epochs, 1);
        const auto tr = train(net, data.triplets, data.spec, tc, Matrix(0, data.triplets.d()));
        const double got = tr.records.back().objective;
        const double rel = std::fabs(got - target) / std::fabs(target);
        ok = ok && rel < 0.02;
        runs.push_back({{"z", z}, {"regime", to_string(k)}, {"final", got}, {"target", target},
                        {"relative_error", rel}});
      }
    }
    report["trace_optimum"] = {{"runs", runs}, {"pass", ok}};
  }
  bool all = true;
  for (const auto& [k, v] : report.items()) all = all && v["pass"].get<bool>();
  report["all_pass"] = all;
  return report;
}

// ---------------------------------------------------------------------------
// Subcommands

fs::path cmd_constraints(const ExperimentConfig& cfg) {
  const ConstraintsResult r = run_constraints(cfg);
  const fs::path dir = make_run_dir(cfg, "constraints");
  json summary = json::object();
  for (const RegimeRun& run : r.runs) {
    const std::string name(to_string(run.regime));
    CsvWriter loss(dir / ("loss_" + name + ".csv"),
                   {"epoch", "loss", "objective", "norm_w1", "norm_w2", "residual_w1", "residual_w2"});
    CsvWriter probes(dir / ("probes_" + name + ".csv"), {"epoch", "probe", "component", "output"});
    for (const TrainRecord& rec : run.trace.records) {
      loss.row({static_cast<double>(rec.step), rec.loss, rec.objective, rec.norm_w1, rec.norm_w2,
                rec.residual_w1, rec.residual_w2});
      for (std::size_t i = 0; i < rec.probe_outputs.rows(); ++i)
        for (std::size_t a = 0; a < rec.probe_outputs.cols(); ++a)
          probes.row({static_cast<double>(rec.step), static_cast<double>(i), static_cast<double>(a),
                      rec.probe_outputs(i, a)});
    }
    const Matrix& last = run.trace.records.back().probe_outputs;
    summary[name] = {{"final_epoch", run.trace.records.back().step},
                     {"final_loss", run.final_loss},
                     {"diverged_at", run.trace.diverged_at ? json(*run.trace.diverged_at) : json(nullptr)},
                     {"final_probe_outputs", std::vector<double>(last.data().begin(), last.data().end())}};
  }
  summary["eigenvalues"] = r.data.spec.eig.values;
  write_json(dir / "manifest.json", manifest(cfg, "constraints", &r.data));
  write_json(dir / "summary.json", summary);
  return dir;
}

fs::path cmd_widths(const ExperimentConfig& cfg) {
  const std::vector<Activation> acts{Activation::tanh, Activation::relu, Activation::sigmoid};
  const WidthsResult r = run_widths(cfg, acts);
  const fs::path dir = make_run_dir(cfg, "widths");
  json summary = json::object();
  for (const WidthSweepReport& rep : r.reports) {
    const std::string name(to_string(rep.activation));
    CsvWriter csv(dir / ("widths_" + name + ".csv"),
                  {"width", "seed", "epoch0_diff", "final_diff", "envelope_ratio"});
    json per_width = json::array();
    for (const WidthSweepEntry& e : rep.entries) {
      if (e.epoch != 0) continue;
      double final_diff = e.difference;
      for (const WidthSweepEntry& f : rep.entries)
        if (f.width == e.width && f.seed == e.seed && f.epoch == cfg.epochs) final_diff = f.difference;
      csv.row({static_cast<double>(e.width), static_cast<double>(e.seed), e.difference, final_diff,
               e.envelope_ratio});
    }
    for (std::size_t w : cfg.widths.empty() ? kSweepWidths : cfg.widths)
      per_width.push_back({{"width", w},
                           {"mean_epoch0_diff", rep.mean_difference(w, 0)},
                           {"mean_final_diff", rep.mean_difference(w, cfg.epochs)},
                           {"mean_envelope_ratio", rep.mean_envelope_ratio(w, 0)}});
    summary[name] = per_width;
  }
  write_json(dir / "manifest.json", manifest(cfg, "widths", nullptr));
  write_json(dir / "summary.json", summary);
  return dir;
}

fs::path cmd_ode_vs_gd(const ExperimentConfig& cfg) {
  const OdeGdResult r = run_ode_vs_gd(cfg);
  const fs::path dir = make_run_dir(cfg, "ode-vs-gd");
  CsvWriter loss(dir / "loss.csv", {"width", "epoch", "gd_loss", "ode_loss"});
  CsvWriter outs(dir / "outputs.csv", {"width", "epoch", "probe", "component", "gd", "ode"});
  json runs = json::array();
  for (const OdeGdRun& run : r.runs) {
    const double h = static_cast<double>(run.width);
    for (std::size_t k = 0; k < run.gd.records.size() && k < run.ode.records.size(); ++k) {
      const TrainRecord& g = run.gd.records[k];
      const DynamicsRecord& o = run.ode.records[k];
      loss.row({h, static_cast<double>(g.step), g.loss, o.loss});
      const Matrix uo = eval_new_points(state_at(run.ode, o.q), r.probes);
      for (std::size_t i = 0; i < uo.rows(); ++i)
        for (std::size_t a = 0; a < uo.cols(); ++a)
          outs.row({h, static_cast<double>(g.step), static_cast<double>(i), static_cast<double>(a),
                    g.probe_outputs(i, a), uo(i, a)});
    }
    runs.push_back({{"width", run.width},
                    {"gd_final_loss", run.gd_loss},
                    {"ode_final_loss", run.ode_loss},
                    {"relative_gap", run.relative_gap},
                    {"max_principal_angle", run.max_angle},
                    {"ode_warnings", run.ode.warnings}});
  }
  write_json(dir / "manifest.json", manifest(cfg, "ode-vs-gd", &r.data));
  write_json(dir / "summary.json", {{"runs", runs}, {"eigenvalues", r.data.spec.eig.values}});
  return dir;
}

fs::path cmd_bench(const ExperimentConfig& cfg) {
  const BenchResult r = run_bench(cfg);
  const fs::path dir = make_run_dir(cfg, "bench");
  CsvWriter timing(dir / "timing.csv", {"width", "gd_median_seconds", "ode_median_seconds"});
  for (const BenchTiming& t : r.timings)
    timing.row({static_cast<double>(t.width), t.gd_median, t.ode_median});
  CsvWriter acc(dir / "accuracy.csv",
                {"epoch", "acc_sgd_embedding", "acc_ode_embedding", "test_acc_sgd", "test_acc_ode"});
  double worst = 0.0;
  for (const AccuracyPoint& p : r.accuracy) {
    acc.row({static_cast<double>(p.epoch), p.train_gd, p.train_ode, p.test_gd, p.test_ode});
    if (10 * p.epoch > cfg.epochs) worst = std::max(worst, std::fabs(p.test_gd - p.test_ode));
  }
  ExperimentConfig echo = cfg;
  if (echo.data.empty()) echo.data = "mnist";
  json m = manifest(echo, "bench", nullptr);
  m["data"] = {{"source", r.source}, {"fallback", r.fallback}};
  write_json(dir / "manifest.json", m);
  write_json(dir / "summary.json",
             {{"data_source", r.source},
              {"data_fallback", r.fallback},
              {"max_test_accuracy_gap_after_warmup", worst},
              {"final_test_accuracy_gd", r.accuracy.empty() ? 0.0 : r.accuracy.back().test_gd},
              {"final_test_accuracy_ode", r.accuracy.empty() ? 0.0 : r.accuracy.back().test_ode}});
  return dir;
}

fs::path cmd_collapse(const ExperimentConfig& cfg) {
  const CollapseResult r = run_collapse(cfg);
  const fs::path dir = make_run_dir(cfg, "collapse");
  json summary = json::object();
  for (const CollapseKernelRun& k : r.naive) {
    CsvWriter csv(dir / ("naive_" + k.kernel + ".csv"),
                  {"step", "effective_rank", "max_pairwise_cos", "max_abs_output"});
    for (const CollapseRecord& rec : k.flow.records)
      csv.row({static_cast<double>(rec.step), rec.effective_rank, rec.max_pairwise_cos, rec.max_abs_output});
    const CollapseRecord& last = k.flow.records.back();
    summary["naive_" + k.kernel] = {
        {"final_step", last.step},
        {"effective_rank", last.effective_rank},
        {"max_pairwise_cos", last.max_pairwise_cos},
        {"diverged_at", k.flow.diverged_at ? json(*k.flow.diverged_at) : json(nullptr)}};
  }
  CsvWriter fro(dir / "frobenius.csv", {"epoch", "loss", "norm_w1", "norm_w2", "sv_ratio"});
  for (std::size_t k = 0; k < r.frobenius.records.size() && k < r.sv_ratio.size(); ++k) {
    const TrainRecord& rec = r.frobenius.records[k];
    fro.row({static_cast<double>(rec.step), rec.loss, rec.norm_w1, rec.norm_w2, r.sv_ratio[k].second});
  }
  summary["frobenius"] = {{"final_loss", last_loss(r.frobenius)},
                          {"final_sv_ratio", r.sv_ratio.back().second}};
  write_json(dir / "manifest.json", manifest(cfg, "collapse", nullptr));
  write_json(dir / "summary.json", summary);
  return dir;
}

fs::path cmd_theory(const ExperimentConfig& cfg) {
  const json report = run_theory(cfg);
  const fs::path dir = make_run_dir(cfg, "theory");
  write_json(dir / "manifest.json", manifest(cfg, "theory", nullptr));
  write_json(dir / "summary.json", report);
  return dir;
}

}  // namespace ssldyn
