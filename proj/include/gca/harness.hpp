#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "gca/learner.hpp"
#include "gca/lrf.hpp"
#include "gca/network.hpp"
#include "gca/pcio.hpp"

namespace gca {

/// Self-describing result of one experiment run.
struct RunReport {
  std::string experiment;
  nlohmann::json config;
  nlohmann::json results;
  bool pass = true;
  double wall_seconds = 0.0;
  std::size_t degenerate_lrf_count = 0;

  std::string config_hash() const;
  nlohmann::json to_json() const;
};

nlohmann::json to_json(const ShapeDatasetConfig& c);
void apply_json(const nlohmann::json& j, ShapeDatasetConfig& c);
void apply_json(const nlohmann::json& j, TrainConfig& c);
nlohmann::json to_json(const ConvFlags& f);
void apply_json(const nlohmann::json& j, ConvFlags& f);

/// FNV-1a over the compact JSON dump, as 16 hex digits.
std::string hash_json(const nlohmann::json& j);

// ---------------------------------------------------------------- invariance

struct InvarianceCheckConfig {
  std::size_t trials = 100;
  std::size_t points = 256;
  std::uint64_t seed = 0;
  double tolerance = 1e-6;
  bool identity_rotation = false;
  std::size_t threads = 1;
};

nlohmann::json to_json(const InvarianceCheckConfig& c);
void apply_json(const nlohmann::json& j, InvarianceCheckConfig& c);

/// Random cloud uniform in [-1, 1]^3.
std::vector<Vec3> random_cloud(std::size_t n, std::uint64_t seed);

RunReport run_invariance_check(const InvarianceCheckConfig& config);

// ------------------------------------------------------------ gradient check

/// Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||, 1e-8)
/// for one tensor.
struct TensorGradCheck {
  std::string name;
  std::size_t size = 0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
  double relative_error = 0.0;
};

double relative_error(std::span<const double> analytic, std::span<const double> numeric);

/// Central differences of the cross-entropy loss for every network tensor.
std::vector<TensorGradCheck> network_gradient_check(const GcaNetwork& net, std::span<const Vec3> cloud,
                                                     std::size_t label, double step);

/// Central differences of sum(upstream . output) for one convolution, over all
/// parameter tensors and the input features.
std::vector<TensorGradCheck> conv_gradient_check(std::uint64_t seed, double step);

/// Small network used by gradient checks: keypoints 24/12/6, k 8, channels
/// 5/6/7, head {6}.
NetworkConfig grad_check_network_config(std::size_t num_classes);

struct GradCheckConfig {
  std::uint64_t seed = 0;
  std::size_t instances = 3;
  std::size_t points = 48;
  double step = 1e-6;
  double tolerance = 1e-4;
};

nlohmann::json to_json(const GradCheckConfig& c);
void apply_json(const nlohmann::json& j, GradCheckConfig& c);

RunReport run_grad_check(const GradCheckConfig& config);

// ------------------------------------------------------------- LRF benchmark

struct LrfBenchInput {
  std::string name;
  PointCloud cloud;
};

/// Bumpy sphere, warped torus and warped cone models with `points` points each.
std::vector<LrfBenchInput> default_lrf_bench_inputs(std::size_t points, std::uint64_t seed);

struct LrfBenchConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  RepeatabilityConfig repeatability;
  std::size_t model_points = 4096;
  double margin = 0.10;  // required relative margin of weighted over unweighted
};

nlohmann::json to_json(const LrfBenchConfig& c);
void apply_json(const nlohmann::json& j, LrfBenchConfig& c);

struct LrfVariant {
  std::string name;
  LrfConfig lrf;
};

/// weighted+O, unweighted+O, unweighted without O.
std::vector<LrfVariant> lrf_bench_variants();

/// Writes one histogram CSV per (input, variant, seed) into `out_dir` when
/// given. Passes when weighted+O beats both unweighted variants by `margin`
/// on every input and seed.
RunReport run_lrf_bench(const std::vector<LrfBenchInput>& inputs, const LrfBenchConfig& config,
                        const std::optional<std::filesystem::path>& out_dir);

// ----------------------------------------------------------- protocol eval

struct ProtocolEvalConfig {
  ShapeDatasetConfig dataset;
  TrainConfig train;
  std::string arch = "toy";
  std::size_t anchors = 8;
  std::size_t k_neighbors = 32;
  ConvFlags flags;
  // Thresholds checked for PASS.
  double min_zz_accuracy = 0.90;
  double max_zz_zso3_gap = 0.02;
  double max_protocol_std = 0.01;
};

nlohmann::json to_json(const ProtocolEvalConfig& c);
void apply_json(const nlohmann::json& j, ProtocolEvalConfig& c);

NetworkConfig make_network_config(const std::string& arch, std::size_t num_classes, const ConvFlags& flags,
                                  std::size_t anchors, std::size_t k_neighbors);

/// Sample standard deviation (n - 1 denominator).
double sample_std(std::span<const double> values);

/// Trains a z-augmented and an SO3-augmented model and reports z/z,
/// SO3/SO3 and z/SO3 test accuracy. Writes models and logs to `out_dir`
/// when given.
RunReport run_protocol_eval(const ProtocolEvalConfig& config, const std::optional<std::filesystem::path>& out_dir);

// ----------------------------------------------------------------- ablation

struct AblationSetting {
  std::string name;
  ConvFlags flags;
  std::size_t anchors = 8;
};

/// SO3 train and test, 20 epochs, final evaluation only.
TrainConfig ablation_train_defaults();

struct AblationConfig {
  std::string sweep = "all";  // "anchors", "toggles" or "all"
  std::vector<std::uint64_t> seeds{0, 1, 2};
  ShapeDatasetConfig dataset;
  TrainConfig train = ablation_train_defaults();
  std::size_t k_neighbors = 32;
};

nlohmann::json to_json(const AblationConfig& c);
void apply_json(const nlohmann::json& j, AblationConfig& c);

std::vector<AblationSetting> ablation_settings(const std::string& sweep);

/// One toy model per (setting, seed). Passes when mean accuracy satisfies
/// anchors8 >= anchors1 and full >= no-anchor (for whichever are present).
RunReport run_ablation(const AblationConfig& config, const std::optional<std::filesystem::path>& out_dir);

// ------------------------------------------------------------------ extract

struct ExtractConfig {
  std::string arch = "toy";
  std::size_t num_classes = 5;
  std::uint64_t seed = 0;
  std::size_t anchors = 8;
  std::size_t k_neighbors = 32;
  ConvFlags flags;
  bool dump_anchors = false;
};

nlohmann::json to_json(const ExtractConfig& c);
void apply_json(const nlohmann::json& j, ExtractConfig& c);

/// Runs the network on `cloud` and writes global feature, logits and
/// per-keypoint features (and optionally anchors) under `out_dir`.
RunReport run_extract(const PointCloud& cloud, const GcaNetwork& net, const ExtractConfig& config,
                      const std::optional<std::filesystem::path>& out_dir);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace gca
