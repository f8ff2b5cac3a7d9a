#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gca/network.hpp"
#include "gca/pcio.hpp"

namespace gca {

struct CrossEntropy {
  double loss = 0.0;
  std::vector<double> grad;  // softmax - one_hot
};

/// -log softmax(logits)[label] with max subtraction. Throws on non-finite
/// logits or an out-of-range label.
CrossEntropy cross_entropy(std::span<const double> logits, std::size_t label);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  NetworkParams m;
  NetworkParams v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const NetworkParams& params);
};

/// One bias-corrected Adam update of a flat parameter block. `step` is the
/// 1-based step number.
void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m, std::span<double> v,
                 std::uint64_t step, const AdamConfig& config);

void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state, const AdamConfig& config);

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  AdamConfig adam;
  std::uint64_t seed = 0;
  RotationMode rotation_mode_train = RotationMode::AroundZ;
  RotationMode rotation_mode_test = RotationMode::AroundZ;
  std::size_t threads = 1;
  // Test-set evaluation cadence in epochs; 0 disables per-epoch evaluation.
  std::size_t eval_every = 1;
};

nlohmann::json train_config_to_json(const TrainConfig& config);

struct EvalResult {
  RotationMode rotation_mode = RotationMode::None;
  std::uint64_t seed = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<std::size_t> predictions;
  std::vector<std::vector<double>> logits;
  std::size_t degenerate_keypoints = 0;
};

struct Metrics {
  TrainConfig config;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_test_accuracy;  // NaN where not evaluated
  EvalResult final_test;
  bool loss_regression = false;
};

nlohmann::json eval_to_json(const EvalResult& r, bool include_logits = false);
nlohmann::json metrics_to_json(const Metrics& m);
/// "epoch,loss,test_acc"; test_acc empty on epochs that were not evaluated.
std::string training_log_csv(const Metrics& m);

/// Deterministic in `seed`: sample i is rotated by a draw from the stream
/// (seed, i), independent of thread count.
EvalResult evaluate(const GcaNetwork& net, std::span<const PointCloud> samples, RotationMode mode,
                    std::uint64_t seed, std::size_t threads = 1);

/// Loss and accumulated parameter gradient for one labelled cloud.
double sample_gradient(const GcaNetwork& net, std::span<const Vec3> cloud, std::size_t label, NetworkParams& grads);

Metrics train(GcaNetwork& net, std::span<const PointCloud> train_set, std::span<const PointCloud> test_set,
              const TrainConfig& config);

/// True when the trailing-window mean loss rises after `after_epoch`.
bool detect_loss_regression(std::span<const double> epoch_loss, std::size_t after_epoch = 5, std::size_t window = 3);

}  // namespace gca
