#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gca/anchors.hpp"
#include "gca/gca_layer.hpp"
#include "gca/geometry.hpp"
#include "gca/lrf.hpp"

namespace gca {

struct DenseParams {
  std::size_t in = 0;
  std::size_t out = 0;
  Tensor weight;  // (in, out)
  Tensor bias;    // (out)

  static DenseParams zeros(std::size_t in, std::size_t out);
  friend bool operator==(const DenseParams&, const DenseParams&) = default;
};

struct NetworkConfig {
  std::vector<LayerConfig> layers;
  std::vector<std::size_t> head_hidden;
  std::size_t num_classes = 0;

  /// Scaled-down classifier: channels 16/32/64, keypoints 64/32/16, head {32}.
  static NetworkConfig toy(std::size_t num_classes, const ConvFlags& flags = {}, std::size_t anchors = 8,
                           std::size_t k_neighbors = 32);
  /// Full-size classifier: channels 128/256/512, keypoints 512/128/32, head {256, 128}.
  static NetworkConfig full(std::size_t num_classes, const ConvFlags& flags = {}, std::size_t anchors = 8,
                            std::size_t k_neighbors = 32);

  /// Throws std::invalid_argument on inconsistent channel counts, anchor
  /// counts, or non-decreasing keypoint counts.
  void validate() const;
  std::size_t min_points() const { return layers.empty() ? 1 : layers.front().keypoints_out; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

inline constexpr std::size_t kInputChannels = 4;

struct NetworkParams {
  std::vector<LayerParams> layers;
  std::vector<DenseParams> head;

  static NetworkParams zeros(const NetworkConfig& config);
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;
  /// Names matching tensors(), e.g. "layer0.kernel", "head1.bias".
  std::vector<std::string> tensor_names() const;
  void fill(double value);
  void add_scaled(const NetworkParams& other, double scale);

  friend bool operator==(const NetworkParams&, const NetworkParams&) = default;
};

struct GcaNetwork {
  NetworkConfig config;
  NetworkParams params;
  std::uint64_t seed = 0;

  /// Glorot-uniform weights, zero biases, deterministic in `seed`.
  static GcaNetwork create(const NetworkConfig& config, std::uint64_t seed);
};

struct LayerForward {
  std::vector<Vec3> points;  // layer input
  KeypointSet keypoints;
  std::vector<Lrf> frames;   // as used; degenerate frames replaced by identity
  std::vector<char> degenerate;
  std::vector<ConvActivation> activations;
  std::vector<double> output;  // keypoints x c_out
  std::size_t degenerate_count = 0;
  std::size_t fallback_count = 0;
};

struct NetworkActivation {
  std::vector<LayerForward> layers;
  std::vector<double> global_feature;
  std::vector<std::size_t> global_argmax;
  std::vector<std::vector<double>> head_inputs;  // input to each dense layer
  std::vector<std::vector<double>> head_pre;     // pre-activation of each dense layer
  std::vector<double> logits;
  std::size_t degenerate_count = 0;
  std::size_t fallback_count = 0;
};

NetworkActivation network_forward(const GcaNetwork& net, std::span<const Vec3> cloud);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
void network_backward(const GcaNetwork& net, const NetworkActivation& act, std::span<const double> dlogits,
                      NetworkParams& grads);

nlohmann::json config_to_json(const NetworkConfig& config);
NetworkConfig config_from_json(const nlohmann::json& j);
nlohmann::json network_to_json(const GcaNetwork& net);
GcaNetwork network_from_json(const nlohmann::json& j);
void save_network(const GcaNetwork& net, const std::filesystem::path& path);
GcaNetwork load_network(const std::filesystem::path& path);

}  // namespace gca
