#include "gca/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "gca/parallel.hpp"

namespace gca {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

double vector_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

nlohmann::json to_json(const ShapeDatasetConfig& c) {
  return {{"train_per_class", c.train_per_class},
          {"test_per_class", c.test_per_class},
          {"points_per_cloud", c.points_per_cloud},
          {"jitter", c.jitter},
          {"seed", c.seed}};
}

void apply_json(const nlohmann::json& j, ShapeDatasetConfig& c) {
  read(j, "train_per_class", c.train_per_class);
  read(j, "test_per_class", c.test_per_class);
  read(j, "points_per_cloud", c.points_per_cloud);
  read(j, "jitter", c.jitter);
  read(j, "seed", c.seed);
}

void apply_json(const nlohmann::json& j, TrainConfig& c) {
  read(j, "epochs", c.epochs);
  read(j, "batch_size", c.batch_size);
  read(j, "learning_rate", c.adam.learning_rate);
  read(j, "beta1", c.adam.beta1);
  read(j, "beta2", c.adam.beta2);
  read(j, "epsilon", c.adam.epsilon);
  read(j, "seed", c.seed);
  read(j, "eval_every", c.eval_every);
  read(j, "threads", c.threads);
  if (j.contains("rotation_mode_train"))
    c.rotation_mode_train = parse_rotation_mode(j.at("rotation_mode_train").get<std::string>());
  if (j.contains("rotation_mode_test"))
    c.rotation_mode_test = parse_rotation_mode(j.at("rotation_mode_test").get<std::string>());
}

nlohmann::json to_json(const ConvFlags& f) {
  return {{"weighted_lrf", f.weighted_lrf},
          {"use_o_vector", f.use_o_vector},
          {"use_anchors", f.use_anchors},
          {"anchors_from_input_cloud", f.anchors_from_input_cloud}};
}

void apply_json(const nlohmann::json& j, ConvFlags& f) {
  read(j, "weighted_lrf", f.weighted_lrf);
  read(j, "use_o_vector", f.use_o_vector);
  read(j, "use_anchors", f.use_anchors);
  read(j, "anchors_from_input_cloud", f.anchors_from_input_cloud);
}

std::string hash_json(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string RunReport::config_hash() const { return hash_json(config); }

nlohmann::json RunReport::to_json() const {
  return {{"experiment", experiment},
          {"config", config},
          {"config_hash", config_hash()},
          {"pass", pass},
          {"wall_seconds", wall_seconds},
          {"degenerate_lrf_count", degenerate_lrf_count},
          {"results", results}};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------- invariance

nlohmann::json to_json(const InvarianceCheckConfig& c) {
  return {{"trials", c.trials},       {"points", c.points},
          {"seed", c.seed},           {"tolerance", c.tolerance},
          {"identity_rotation", c.identity_rotation}};
}

void apply_json(const nlohmann::json& j, InvarianceCheckConfig& c) {
  read(j, "trials", c.trials);
  read(j, "points", c.points);
  read(j, "seed", c.seed);
  read(j, "tolerance", c.tolerance);
  read(j, "identity_rotation", c.identity_rotation);
  read(j, "threads", c.threads);
}

std::vector<Vec3> random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts) p = {u(rng), u(rng), u(rng)};
  return pts;
}

RunReport run_invariance_check(const InvarianceCheckConfig& config) {
  const auto start = Clock::now();
  RunReport report;
  report.experiment = "invariance-check";
  report.config = to_json(config);

  struct Trial {
    double max_diff = 0.0;
    std::size_t degenerate = 0;
    std::size_t fallback = 0;
  };
  std::vector<Trial> trials(config.trials);
  const NetworkConfig net_cfg = NetworkConfig::toy(5);
  parallel_for(config.trials, config.threads, [&](std::size_t t) {
    const std::vector<Vec3> cloud = random_cloud(config.points, derive_seed(config.seed, {0xc10d, t}));
    const GcaNetwork net = GcaNetwork::create(net_cfg, derive_seed(config.seed, {0x9e7, t}));
    Rng rng = make_rng(config.seed, {0x2074, t});
    const Rotation rot =
        config.identity_rotation ? Rotation::identity() : sample_rotation(RotationMode::SO3, rng);
    const NetworkActivation a = network_forward(net, cloud);
    const NetworkActivation b = network_forward(net, apply_rotation(cloud, rot));
    Trial& tr = trials[t];
    for (std::size_t i = 0; i < a.logits.size(); ++i)
      tr.max_diff = std::max(tr.max_diff, std::abs(a.logits[i] - b.logits[i]));
    tr.degenerate = a.degenerate_count + b.degenerate_count;
    tr.fallback = a.fallback_count + b.fallback_count;
  });

  double worst = 0.0;
  std::size_t degenerate = 0, fallback = 0;
  nlohmann::json per_trial = nlohmann::json::array();
  for (std::size_t t = 0; t < trials.size(); ++t) {
    worst = std::max(worst, trials[t].max_diff);
    degenerate += trials[t].degenerate;
    fallback += trials[t].fallback;
    per_trial.push_back({{"trial", t},
                         {"max_abs_logit_diff", trials[t].max_diff},
                         {"degenerate_keypoints", trials[t].degenerate},
                         {"o_fallback_keypoints", trials[t].fallback}});
  }
  report.degenerate_lrf_count = degenerate;
  report.pass = worst <= config.tolerance && degenerate == 0;
  report.results = {{"max_abs_logit_diff", worst},
                    {"degenerate_keypoints", degenerate},
                    {"o_fallback_keypoints", fallback},
                    {"k_neighbors", net_cfg.layers.front().k_neighbors},
                    {"trials", per_trial}};
  report.wall_seconds = seconds_since(start);
  return report;
}

// ------------------------------------------------------------ gradient check

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  if (analytic.size() != numeric.size()) throw std::invalid_argument("relative_error: size mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
  const double denom = std::max({vector_norm(analytic), vector_norm(numeric), 1e-8});
  return std::sqrt(diff) / denom;
}

NetworkConfig grad_check_network_config(std::size_t num_classes) {
  NetworkConfig c;
  c.num_classes = num_classes;
  c.head_hidden = {6};
  c.layers = {{24, 8, 8, kInputChannels, 5, {}}, {12, 8, 8, 5, 6, {}}, {6, 8, 8, 6, 7, {}}};
  return c;
}

std::vector<TensorGradCheck> network_gradient_check(const GcaNetwork& net, std::span<const Vec3> cloud,
                                                     std::size_t label, double step) {
  NetworkParams analytic = NetworkParams::zeros(net.config);
  sample_gradient(net, cloud, label, analytic);

  GcaNetwork probe = net;
  auto loss_at = [&]() { return cross_entropy(network_forward(probe, cloud).logits, label).loss; };
  const std::vector<std::string> names = net.params.tensor_names();
  auto probe_tensors = probe.params.tensors();
  auto analytic_tensors = analytic.tensors();

  std::vector<TensorGradCheck> out;
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    Tensor& tensor = *probe_tensors[t];
    std::vector<double> numeric(tensor.size());
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double saved = tensor[i];
      tensor[i] = saved + step;
      const double up = loss_at();
      tensor[i] = saved - step;
      const double down = loss_at();
      tensor[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    const std::vector<double>& a = analytic_tensors[t]->data;
    out.push_back({names[t], tensor.size(), vector_norm(a), vector_norm(numeric), relative_error(a, numeric)});
  }
  return out;
}

std::vector<TensorGradCheck> conv_gradient_check(std::uint64_t seed, double step) {
  constexpr std::size_t K = 6, A = 8, Cin = 5, Cout = 4;
  Rng rng = make_rng(seed, {0xc0b});
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  LayerParams params = LayerParams::initialized(Cin, Cout, A, rng);
  for (double& v : params.kernel_bias.data) v = 0.5 * u(rng);
  for (double& v : params.lift_bias.data) v = 0.5 * u(rng) + 0.5;

  KeypointInput in;
  in.neighbors = K;
  in.anchors = A;
  in.channels = Cin;
  in.relation.resize(K * 4 * A);
  in.features.resize(K * Cin);
  in.neighbor_indices.resize(K);
  std::iota(in.neighbor_indices.begin(), in.neighbor_indices.end(), std::size_t{0});
  for (double& v : in.relation) v = u(rng);
  for (double& v : in.features) v = u(rng);
  std::vector<double> upstream(Cout);
  for (double& v : upstream) v = u(rng);

  const ConvActivation act = conv_forward(params, in);
  const ConvGradients g = conv_backward(params, act, upstream);

  auto objective = [&](const LayerParams& p, const KeypointInput& input) {
    const ConvActivation a = conv_forward(p, input);
    double s = 0.0;
    for (std::size_t o = 0; o < Cout; ++o) s += upstream[o] * a.output[o];
    return s;
  };

  std::vector<TensorGradCheck> out;
  auto check_tensor = [&](const char* name, std::vector<double>& values, const std::vector<double>& analytic,
                          auto&& eval) {
    std::vector<double> numeric(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double up = eval();
      values[i] = saved - step;
      const double down = eval();
      values[i] = saved;
      numeric[i] = (up - down) / (2.0 * step);
    }
    out.push_back({name, values.size(), vector_norm(analytic), vector_norm(numeric), relative_error(analytic, numeric)});
  };
  auto eval_params = [&] { return objective(params, in); };
  check_tensor("kernel", params.kernel.data, g.params.kernel.data, eval_params);
  check_tensor("kernel_bias", params.kernel_bias.data, g.params.kernel_bias.data, eval_params);
  check_tensor("lift", params.lift.data, g.params.lift.data, eval_params);
  check_tensor("lift_bias", params.lift_bias.data, g.params.lift_bias.data, eval_params);
  check_tensor("features", in.features, g.features, eval_params);
  return out;
}

nlohmann::json to_json(const GradCheckConfig& c) {
  return {{"seed", c.seed}, {"instances", c.instances}, {"points", c.points}, {"step", c.step}, {"tolerance", c.tolerance}};
}

void apply_json(const nlohmann::json& j, GradCheckConfig& c) {
  read(j, "seed", c.seed);
  read(j, "instances", c.instances);
  read(j, "points", c.points);
  read(j, "step", c.step);
  read(j, "tolerance", c.tolerance);
}

RunReport run_grad_check(const GradCheckConfig& config) {
  const auto start = Clock::now();
  RunReport report;
  report.experiment = "grad-check";
  report.config = to_json(config);

  auto to_rows = [](const std::vector<TensorGradCheck>& checks, double& worst) {
    nlohmann::json rows = nlohmann::json::array();
    for (const TensorGradCheck& c : checks) {
      worst = std::max(worst, c.relative_error);
      rows.push_back({{"tensor", c.name},
                      {"size", c.size},
                      {"analytic_norm", c.analytic_norm},
                      {"numeric_norm", c.numeric_norm},
                      {"relative_error", c.relative_error}});
    }
    return rows;
  };

  double worst = 0.0;
  nlohmann::json conv = nlohmann::json::array();
  nlohmann::json network = nlohmann::json::array();
  std::size_t degenerate = 0;
  for (std::size_t i = 0; i < config.instances; ++i) {
    conv.push_back(to_rows(conv_gradient_check(derive_seed(config.seed, {0xc, i}), config.step), worst));
    const std::size_t classes = 3;
    const GcaNetwork net = GcaNetwork::create(grad_check_network_config(classes), derive_seed(config.seed, {0xa, i}));
    const std::vector<Vec3> cloud = random_cloud(config.points, derive_seed(config.seed, {0xb, i}));
    degenerate += network_forward(net, cloud).degenerate_count;
    network.push_back(to_rows(network_gradient_check(net, cloud, i % classes, config.step), worst));
  }
  report.pass = worst < config.tolerance;
  report.degenerate_lrf_count = degenerate;
  report.results = {{"max_relative_error", worst}, {"conv", conv}, {"network", network}};
  report.wall_seconds = seconds_since(start);
  return report;
}

// ------------------------------------------------------------- LRF benchmark

std::vector<LrfBenchInput> default_lrf_bench_inputs(std::size_t points, std::uint64_t seed) {
  return {{"bumpy_sphere", generate_bumpy_sphere(points, 6, derive_seed(seed, {0xb5}))},
          {"warped_torus", asymmetric_warp(generate_shape(ShapeKind::Torus, points, 0.0, derive_seed(seed, {0x70})),
                                           derive_seed(seed, {0x71}))},
          {"warped_cone", asymmetric_warp(generate_shape(ShapeKind::Cone, points, 0.0, derive_seed(seed, {0xc0})),
                                          derive_seed(seed, {0xc1}))}};
}

std::vector<LrfVariant> lrf_bench_variants() {
  return {{"weighted_o", {true, true}}, {"unweighted_o", {false, true}}, {"unweighted_no_o", {false, false}}};
}

nlohmann::json to_json(const LrfBenchConfig& c) {
  const RepeatabilityConfig& r = c.repeatability;
  return {{"seeds", c.seeds},
          {"model_points", c.model_points},
          {"margin", c.margin},
          {"subsample_ratio", r.subsample_ratio},
          {"noise_sigma_factor", r.noise_sigma_factor},
          {"n_pairs", r.n_pairs},
          {"k_neighbors", r.k_neighbors},
          {"weighted_keypoints", r.weighted_keypoints}};
}

void apply_json(const nlohmann::json& j, LrfBenchConfig& c) {
  read(j, "seeds", c.seeds);
  read(j, "model_points", c.model_points);
  read(j, "margin", c.margin);
  read(j, "subsample_ratio", c.repeatability.subsample_ratio);
  read(j, "noise_sigma_factor", c.repeatability.noise_sigma_factor);
  read(j, "n_pairs", c.repeatability.n_pairs);
  read(j, "k_neighbors", c.repeatability.k_neighbors);
  read(j, "weighted_keypoints", c.repeatability.weighted_keypoints);
}

RunReport run_lrf_bench(const std::vector<LrfBenchInput>& inputs, const LrfBenchConfig& config,
                        const std::optional<std::filesystem::path>& out_dir) {
  const auto start = Clock::now();
  RunReport report;
  report.experiment = "lrf-bench";
  report.config = to_json(config);
  report.config["inputs"] = nlohmann::json::array();
  for (const LrfBenchInput& in : inputs) report.config["inputs"].push_back(in.name);

  const std::vector<LrfVariant> variants = lrf_bench_variants();
  nlohmann::json runs = nlohmann::json::array();
  std::string summary = "input,seed,variant,pairs,degenerate,mean_error_deg\n";
  bool pass = true;
  std::size_t degenerate = 0;
  for (const LrfBenchInput& in : inputs) {
    for (std::uint64_t seed : config.seeds) {
      std::vector<double> means;
      for (const LrfVariant& v : variants) {
        RepeatabilityConfig rc = config.repeatability;
        rc.seed = seed;
        rc.lrf = v.lrf;
        const RepeatabilityResult r = repeatability_experiment(in.cloud, rc);
        means.push_back(r.mean_error);
        degenerate += r.degenerate_count;
        const std::string stem = in.name + "_" + v.name + "_seed" + std::to_string(seed);
        if (out_dir) write_text(*out_dir / (stem + ".csv"), r.histogram.to_csv());
        runs.push_back({{"input", in.name},
                        {"seed", seed},
                        {"variant", v.name},
                        {"pairs", r.pairs},
                        {"degenerate_count", r.degenerate_count},
                        {"mean_error_deg", r.mean_error},
                        {"mesh_resolution", r.mesh_resolution},
                        {"noise_sigma", r.noise_sigma},
                        {"scene_size", r.scene_size},
                        {"histogram", r.histogram.counts}});
        char line[256];
        std::snprintf(line, sizeof line, "%s,%llu,%s,%zu,%zu,%.6f\n", in.name.c_str(),
                      static_cast<unsigned long long>(seed), v.name.c_str(), r.pairs, r.degenerate_count,
                      r.mean_error);
        summary += line;
      }
      for (std::size_t i = 1; i < means.size(); ++i)
        if (!(means[0] < (1.0 - config.margin) * means[i])) pass = false;
    }
  }
  if (out_dir) write_text(*out_dir / "summary.csv", summary);
  report.pass = pass;
  report.degenerate_lrf_count = degenerate;
  report.results = {{"runs", runs}};
  report.wall_seconds = seconds_since(start);
  return report;
}

// ----------------------------------------------------------- protocol eval

NetworkConfig make_network_config(const std::string& arch, std::size_t num_classes, const ConvFlags& flags,
                                  std::size_t anchors, std::size_t k_neighbors) {
  if (arch == "toy") return NetworkConfig::toy(num_classes, flags, anchors, k_neighbors);
  if (arch == "full") return NetworkConfig::full(num_classes, flags, anchors, k_neighbors);
  throw std::invalid_argument("unknown architecture '" + arch + "' (expected toy or full)");
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

nlohmann::json to_json(const ProtocolEvalConfig& c) {
  nlohmann::json train = train_config_to_json(c.train);
  return {{"dataset", to_json(c.dataset)},
          {"train", train},
          {"arch", c.arch},
          {"anchors", c.anchors},
          {"k_neighbors", c.k_neighbors},
          {"flags", to_json(c.flags)},
          {"min_zz_accuracy", c.min_zz_accuracy},
          {"max_zz_zso3_gap", c.max_zz_zso3_gap},
          {"max_protocol_std", c.max_protocol_std}};
}

void apply_json(const nlohmann::json& j, ProtocolEvalConfig& c) {
  if (j.contains("dataset")) apply_json(j.at("dataset"), c.dataset);
  if (j.contains("train")) apply_json(j.at("train"), c.train);
  if (j.contains("flags")) apply_json(j.at("flags"), c.flags);
  read(j, "arch", c.arch);
  read(j, "anchors", c.anchors);
  read(j, "k_neighbors", c.k_neighbors);
  read(j, "min_zz_accuracy", c.min_zz_accuracy);
  read(j, "max_zz_zso3_gap", c.max_zz_zso3_gap);
  read(j, "max_protocol_std", c.max_protocol_std);
}

RunReport run_protocol_eval(const ProtocolEvalConfig& config, const std::optional<std::filesystem::path>& out_dir) {
  const auto start = Clock::now();
  RunReport report;
  report.experiment = "protocol-eval";
  report.config = to_json(config);

  const ShapeDataset data = make_shape_dataset(config.dataset);
  const NetworkConfig net_cfg =
      make_network_config(config.arch, data.classes.size(), config.flags, config.anchors, config.k_neighbors);
  const std::size_t threads = resolve_threads(config.train.threads);

  struct Trained {
    GcaNetwork net;
    Metrics metrics;
  };
  auto train_model = [&](RotationMode mode) {
    TrainConfig tc = config.train;
    tc.rotation_mode_train = mode;
    tc.rotation_mode_test = mode;
    tc.threads = threads;
    Trained t{GcaNetwork::create(net_cfg, config.train.seed), {}};
    t.metrics = train(t.net, data.train, data.test, tc);
    return t;
  };
  const Trained z_model = train_model(RotationMode::AroundZ);
  const Trained so3_model = train_model(RotationMode::SO3);

  const std::uint64_t eval_seed = derive_seed(config.train.seed, {0xe7});
  const EvalResult zz = evaluate(z_model.net, data.test, RotationMode::AroundZ, eval_seed, threads);
  const EvalResult zso3 = evaluate(z_model.net, data.test, RotationMode::SO3, eval_seed, threads);
  const EvalResult so3so3 = evaluate(so3_model.net, data.test, RotationMode::SO3, eval_seed, threads);
  const EvalResult znone = evaluate(z_model.net, data.test, RotationMode::None, eval_seed, threads);

  // per-sample agreement between unrotated and SO3-rotated evaluation
  double max_logit_diff = 0.0;
  std::size_t disagreements = 0;
  for (std::size_t i = 0; i < zso3.logits.size(); ++i) {
    for (std::size_t c = 0; c < zso3.logits[i].size(); ++c)
      max_logit_diff = std::max(max_logit_diff, std::abs(zso3.logits[i][c] - znone.logits[i][c]));
    if (zso3.predictions[i] != znone.predictions[i]) ++disagreements;
  }

  const std::vector<double> accs{zz.accuracy, so3so3.accuracy, zso3.accuracy};
  const double mean = (accs[0] + accs[1] + accs[2]) / 3.0;
  const double std_dev = sample_std(accs);
  const double gap = std::abs(zz.accuracy - zso3.accuracy);
  report.pass = zz.accuracy >= config.min_zz_accuracy && gap <= config.max_zz_zso3_gap &&
                std_dev <= config.max_protocol_std;
  report.degenerate_lrf_count = zz.degenerate_keypoints + zso3.degenerate_keypoints + so3so3.degenerate_keypoints;
  report.results = {{"accuracy", {{"z/z", zz.accuracy}, {"SO3/SO3", so3so3.accuracy}, {"z/SO3", zso3.accuracy}}},
                    {"average_accuracy", mean},
                    {"accuracy_std", std_dev},
                    {"zz_zso3_gap", gap},
                    {"none_vs_so3_max_logit_diff", max_logit_diff},
                    {"none_vs_so3_prediction_disagreements", disagreements},
                    {"k_neighbors", config.k_neighbors},
                    {"network", config_to_json(net_cfg)},
                    {"eval", {{"z/z", eval_to_json(zz)}, {"SO3/SO3", eval_to_json(so3so3)}, {"z/SO3", eval_to_json(zso3)}}},
                    {"training", {{"z", metrics_to_json(z_model.metrics)}, {"SO3", metrics_to_json(so3_model.metrics)}}}};
  if (out_dir) {
    save_network(z_model.net, *out_dir / "model_z.json");
    save_network(so3_model.net, *out_dir / "model_so3.json");
    write_text(*out_dir / "train_log_z.csv", training_log_csv(z_model.metrics));
    write_text(*out_dir / "train_log_so3.csv", training_log_csv(so3_model.metrics));
    write_text(*out_dir / "protocols.csv", "protocol,accuracy\nz/z," + std::to_string(zz.accuracy) + "\nSO3/SO3," +
                                               std::to_string(so3so3.accuracy) + "\nz/SO3," +
                                               std::to_string(zso3.accuracy) + "\n");
  }
  report.wall_seconds = seconds_since(start);
  return report;
}

// ----------------------------------------------------------------- ablation

TrainConfig ablation_train_defaults() {
  TrainConfig t;
  t.epochs = 20;
  t.eval_every = 0;
  t.rotation_mode_train = RotationMode::SO3;
  t.rotation_mode_test = RotationMode::SO3;
  return t;
}

std::vector<AblationSetting> ablation_settings(const std::string& sweep) {
  const ConvFlags full{};
  ConvFlags no_weight = full;
  no_weight.weighted_lrf = false;
  ConvFlags no_weight_no_o = no_weight;
  no_weight_no_o.use_o_vector = false;
  ConvFlags no_anchor = full;
  no_anchor.use_anchors = false;

  std::vector<AblationSetting> anchors{{"anchors1", full, 1}, {"anchors2", full, 2}, {"anchors4", full, 4}};
  std::vector<AblationSetting> toggles{{"no_weight", no_weight, 8}, {"no_weight_no_o", no_weight_no_o, 8},
                                       {"no_anchor", no_anchor, 8}};
  if (sweep == "anchors") {
    anchors.push_back({"anchors8", full, 8});
    return anchors;
  }
  if (sweep == "toggles") {
    toggles.insert(toggles.begin(), {"full", full, 8});
    return toggles;
  }
  if (sweep == "all") {
    anchors.push_back({"full", full, 8});
    anchors.insert(anchors.end(), toggles.begin(), toggles.end());
    return anchors;
  }
  throw std::invalid_argument("unknown ablation sweep '" + sweep + "' (expected anchors, toggles or all)");
}

nlohmann::json to_json(const AblationConfig& c) {
  return {{"sweep", c.sweep},
          {"seeds", c.seeds},
          {"dataset", to_json(c.dataset)},
          {"train", train_config_to_json(c.train)},
          {"k_neighbors", c.k_neighbors}};
}

void apply_json(const nlohmann::json& j, AblationConfig& c) {
  read(j, "sweep", c.sweep);
  read(j, "seeds", c.seeds);
  read(j, "k_neighbors", c.k_neighbors);
  if (j.contains("dataset")) apply_json(j.at("dataset"), c.dataset);
  if (j.contains("train")) apply_json(j.at("train"), c.train);
}

RunReport run_ablation(const AblationConfig& config, const std::optional<std::filesystem::path>& out_dir) {
  const auto start = Clock::now();
  RunReport report;
  report.experiment = "ablation";
  report.config = to_json(config);

  const ShapeDataset data = make_shape_dataset(config.dataset);
  const std::vector<AblationSetting> settings = ablation_settings(config.sweep);
  const std::size_t threads = resolve_threads(config.train.threads);

  nlohmann::json rows = nlohmann::json::array();
  std::string table = "setting,weighted_lrf,use_o_vector,use_anchors,anchors,seed,accuracy\n";
  std::vector<std::pair<std::string, double>> means;
  std::size_t degenerate = 0;
  for (const AblationSetting& s : settings) {
    const NetworkConfig net_cfg = NetworkConfig::toy(data.classes.size(), s.flags, s.anchors, config.k_neighbors);
    std::vector<double> accs;
    for (std::uint64_t seed : config.seeds) {
      TrainConfig tc = config.train;
      tc.seed = seed;
      tc.threads = threads;
      GcaNetwork net = GcaNetwork::create(net_cfg, seed);
      const Metrics m = train(net, data.train, data.test, tc);
      accs.push_back(m.final_test.accuracy);
      degenerate += m.final_test.degenerate_keypoints;
      char line[256];
      std::snprintf(line, sizeof line, "%s,%d,%d,%d,%zu,%llu,%.6f\n", s.name.c_str(), s.flags.weighted_lrf,
                    s.flags.use_o_vector, s.flags.use_anchors, s.anchors, static_cast<unsigned long long>(seed),
                    m.final_test.accuracy);
      table += line;
    }
    const double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
    means.emplace_back(s.name, mean);
    rows.push_back({{"setting", s.name},
                    {"flags", to_json(s.flags)},
                    {"anchors", s.anchors},
                    {"per_seed_accuracy", accs},
                    {"mean_accuracy", mean}});
  }
  auto mean_of = [&](const std::string& name) -> std::optional<double> {
    for (const auto& [n, m] : means)
      if (n == name) return m;
    return std::nullopt;
  };
  const auto a8 = mean_of("full") ? mean_of("full") : mean_of("anchors8");
  const auto a1 = mean_of("anchors1");
  const auto no_anchor = mean_of("no_anchor");
  nlohmann::json checks = nlohmann::json::object();
  bool pass = true;
  if (a8 && a1) {
    checks["anchors8_ge_anchors1"] = *a8 >= *a1;
    pass = pass && *a8 >= *a1;
  }
  if (a8 && no_anchor) {
    checks["full_ge_no_anchor"] = *a8 >= *no_anchor;
    pass = pass && *a8 >= *no_anchor;
  }
  report.pass = pass;
  report.degenerate_lrf_count = degenerate;
  report.results = {{"settings", rows}, {"checks", checks}};
  if (out_dir) write_text(*out_dir / "ablation.csv", table);
  report.wall_seconds = seconds_since(start);
  return report;
}

// ------------------------------------------------------------------ extract

nlohmann::json to_json(const ExtractConfig& c) {
  return {{"arch", c.arch},       {"num_classes", c.num_classes},   {"seed", c.seed},
          {"anchors", c.anchors}, {"k_neighbors", c.k_neighbors}, {"flags", to_json(c.flags)},
          {"dump_anchors", c.dump_anchors}};
}

void apply_json(const nlohmann::json& j, ExtractConfig& c) {
  read(j, "arch", c.arch);
  read(j, "num_classes", c.num_classes);
  read(j, "seed", c.seed);
  read(j, "anchors", c.anchors);
  read(j, "k_neighbors", c.k_neighbors);
  read(j, "dump_anchors", c.dump_anchors);
  if (j.contains("flags")) apply_json(j.at("flags"), c.flags);
}

RunReport run_extract(const PointCloud& cloud, const GcaNetwork& net, const ExtractConfig& config,
                      const std::optional<std::filesystem::path>& out_dir) {
  const auto start = Clock::now();
  RunReport report;
  report.experiment = "extract";
  report.config = to_json(config);
  report.config["input"] = cloud.source;
  report.config["network"] = config_to_json(net.config);

  const NetworkActivation act = network_forward(net, cloud.points);
  report.degenerate_lrf_count = act.degenerate_count;
  report.results = {{"points", cloud.size()},
                    {"global_feature", act.global_feature},
                    {"logits", act.logits},
                    {"degenerate_keypoints", act.degenerate_count},
                    {"o_fallback_keypoints", act.fallback_count}};

  if (out_dir) {
    std::string csv = "layer,keypoint,point_index,x,y,z,degenerate";
    const std::size_t c_last = net.config.layers.back().c_out;
    for (std::size_t c = 0; c < c_last; ++c) csv += ",f" + std::to_string(c);
    csv += "\n";
    char buf[128];
    const std::size_t L = act.layers.size();
    const LayerForward& last = act.layers.back();
    for (std::size_t i = 0; i < last.keypoints.indices.size(); ++i) {
      const Vec3& p = last.points[last.keypoints.indices[i]];
      std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.17g,%.17g,%.17g,%d", L - 1, i, last.keypoints.indices[i], p.x,
                    p.y, p.z, static_cast<int>(last.degenerate[i]));
      csv += buf;
      for (std::size_t c = 0; c < c_last; ++c) {
        std::snprintf(buf, sizeof buf, ",%.17g", last.output[i * c_last + c]);
        csv += buf;
      }
      csv += "\n";
    }
    write_text(*out_dir / "keypoint_features.csv", csv);

    if (config.dump_anchors) {
      std::string anchors_out = "layer,keypoint,bin,x,y,z,occupancy\n";
      for (std::size_t l = 0; l < L; ++l) {
        const LayerConfig& lc = net.config.layers[l];
        if (!lc.flags.use_anchors) continue;
        const LayerForward& lf = act.layers[l];
        const std::span<const Vec3> source =
            lc.flags.anchors_from_input_cloud ? std::span<const Vec3>(cloud.points) : std::span<const Vec3>(lf.points);
        for (std::size_t i = 0; i < lf.frames.size(); ++i) {
          const AnchorSet set = make_anchors(source, lf.frames[i], lc.anchor_count);
          for (std::size_t k = 0; k < set.size(); ++k) {
            const Vec3& a = set.anchors_local[k];
            char line[256];
            std::snprintf(line, sizeof line, "%zu,%zu,%zu,%.17g,%.17g,%.17g,%zu\n", l, i, k, a.x, a.y, a.z,
                          set.occupancy[k]);
            anchors_out += line;
          }
        }
      }
      write_text(*out_dir / "anchors.csv", anchors_out);
    }
  }
  report.wall_seconds = seconds_since(start);
  return report;
}

}  // namespace gca
