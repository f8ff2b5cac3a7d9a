#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "gca/geometry.hpp"
#include "gca/rng.hpp"

namespace gca {

/// Dense row-major array of doubles.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  static Tensor zeros(std::vector<std::size_t> shape);
  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Fills with U(-limit, limit), limit = sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// Ablation switches for one convolution layer.
struct ConvFlags {
  bool weighted_lrf = true;
  bool use_o_vector = true;
  bool use_anchors = true;
  // Bin anchors over the network input cloud instead of the layer's points.
  bool anchors_from_input_cloud = false;

  friend bool operator==(const ConvFlags&, const ConvFlags&) = default;
};

struct LayerConfig {
  std::size_t keypoints_out = 0;
  std::size_t k_neighbors = 32;
  std::size_t anchor_count = 8;
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  ConvFlags flags;

  /// Anchor rows actually fed to the kernel: 1 (the local origin) when
  /// anchors are disabled.
  std::size_t relation_anchors() const { return flags.use_anchors ? anchor_count : 1; }
  friend bool operator==(const LayerConfig&, const LayerConfig&) = default;
};

/// Learnable state of one GCA convolution.
///
/// kernel has shape (c_in, 4, A): per modulated channel, a linear map over the
/// A x 4 relation matrix of a neighbour. lift has shape (c_in, c_out).
struct LayerParams {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  std::size_t anchors = 0;
  Tensor kernel;
  Tensor kernel_bias;
  Tensor lift;
  Tensor lift_bias;

  static LayerParams zeros(std::size_t c_in, std::size_t c_out, std::size_t anchors);
  static LayerParams initialized(std::size_t c_in, std::size_t c_out, std::size_t anchors, Rng& rng);

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

/// Per-keypoint input to the convolution. Relation rows are stored
/// channel-major: relation[j * 4A + r * A + k] = h_j[k][r].
struct KeypointInput {
  std::size_t neighbors = 0;
  std::size_t anchors = 0;
  std::size_t channels = 0;
  std::vector<double> relation;  // neighbors x 4 x anchors
  std::vector<double> features;  // neighbors x channels
  std::vector<std::size_t> neighbor_indices;

  /// Packs row-major A x 4 relation matrices (one per neighbour).
  void set_relation(std::size_t j, std::span<const double> rows_a_by_4);
};

struct ConvActivation {
  std::size_t c_in = 0;
  std::size_t c_out = 0;
  KeypointInput input;
  std::vector<double> weights;         // neighbors x c_in, w_j
  std::vector<double> pooled;          // c_in
  std::vector<std::size_t> argmax;     // c_in, neighbour slot of the max
  std::vector<double> pre_activation;  // c_out
  std::vector<double> output;          // c_out
};

/// (x', |x'|) per neighbour, flattened K x 4.
std::vector<double> initial_features(std::span<const Vec3> local_coords);

/// w_j = K * h_j + b; pooled = max_j (w_j . f_j); output = ReLU(lift^T pooled + lift_bias).
/// Max ties go to the lowest neighbour slot.
ConvActivation conv_forward(const LayerParams& params, KeypointInput input);

/// Accumulates parameter gradients into `grads` and writes d(features) into
/// `feature_grads` (neighbors x c_in, overwritten). Throws on shape mismatch.
void conv_backward(const LayerParams& params, const ConvActivation& act, std::span<const double> upstream,
                   LayerParams& grads, std::span<double> feature_grads);

struct ConvGradients {
  LayerParams params;
  std::vector<double> features;
};

ConvGradients conv_backward(const LayerParams& params, const ConvActivation& act,
                            std::span<const double> upstream);

}  // namespace gca
