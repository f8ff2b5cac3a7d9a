#include "gca/gca_layer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace gca {

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  Tensor t;
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  t.shape = std::move(shape);
  t.data.assign(n, 0.0);
  return t;
}

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.data) v = dist(rng);
}

LayerParams LayerParams::zeros(std::size_t c_in, std::size_t c_out, std::size_t anchors) {
  LayerParams p;
  p.c_in = c_in;
  p.c_out = c_out;
  p.anchors = anchors;
  p.kernel = Tensor::zeros({c_in, 4, anchors});
  p.kernel_bias = Tensor::zeros({c_in});
  p.lift = Tensor::zeros({c_in, c_out});
  p.lift_bias = Tensor::zeros({c_out});
  return p;
}

LayerParams LayerParams::initialized(std::size_t c_in, std::size_t c_out, std::size_t anchors, Rng& rng) {
  LayerParams p = zeros(c_in, c_out, anchors);
  glorot_uniform(p.kernel, 4 * anchors, c_in, rng);
  glorot_uniform(p.lift, c_in, c_out, rng);
  return p;
}

void KeypointInput::set_relation(std::size_t j, std::span<const double> rows_a_by_4) {
  if (rows_a_by_4.size() != anchors * 4) throw std::invalid_argument("set_relation: size mismatch");
  double* dst = relation.data() + j * 4 * anchors;
  for (std::size_t k = 0; k < anchors; ++k)
    for (std::size_t r = 0; r < 4; ++r) dst[r * anchors + k] = rows_a_by_4[k * 4 + r];
}

std::vector<double> initial_features(std::span<const Vec3> local_coords) {
  std::vector<double> f;
  f.reserve(local_coords.size() * 4);
  for (const Vec3& x : local_coords) {
    f.push_back(x.x);
    f.push_back(x.y);
    f.push_back(x.z);
    f.push_back(norm(x));
  }
  return f;
}

namespace {

void check_shapes(const LayerParams& params, const KeypointInput& in) {
  if (in.channels != params.c_in || in.anchors != params.anchors || in.neighbors == 0 ||
      in.relation.size() != in.neighbors * 4 * in.anchors || in.features.size() != in.neighbors * in.channels ||
      params.kernel.size() != params.c_in * 4 * params.anchors || params.kernel_bias.size() != params.c_in ||
      params.lift.size() != params.c_in * params.c_out || params.lift_bias.size() != params.c_out) {
    throw std::invalid_argument("conv: shape mismatch between parameters and keypoint input");
  }
}

}  // namespace

ConvActivation conv_forward(const LayerParams& params, KeypointInput input) {
  check_shapes(params, input);
  const std::size_t K = input.neighbors;
  const std::size_t C = params.c_in;
  const std::size_t span = 4 * params.anchors;

  ConvActivation act;
  act.c_in = C;
  act.c_out = params.c_out;
  act.weights.resize(K * C);
  act.pooled.assign(C, 0.0);
  act.argmax.assign(C, 0);

  const double* kernel = params.kernel.data.data();
  for (std::size_t j = 0; j < K; ++j) {
    const double* h = input.relation.data() + j * span;
    double* w = act.weights.data() + j * C;
    for (std::size_t c = 0; c < C; ++c) {
      const double* kc = kernel + c * span;
      double s = params.kernel_bias[c];
      for (std::size_t t = 0; t < span; ++t) s += kc[t] * h[t];
      w[c] = s;
    }
  }
  for (std::size_t c = 0; c < C; ++c) {
    double best = act.weights[c] * input.features[c];
    std::size_t arg = 0;
    for (std::size_t j = 1; j < K; ++j) {
      const double m = act.weights[j * C + c] * input.features[j * C + c];
      if (m > best) {
        best = m;
        arg = j;
      }
    }
    act.pooled[c] = best;
    act.argmax[c] = arg;
  }

  act.pre_activation.assign(params.lift_bias.data.begin(), params.lift_bias.data.end());
  for (std::size_t i = 0; i < C; ++i) {
    const double v = act.pooled[i];
    const double* row = params.lift.data.data() + i * params.c_out;
    for (std::size_t o = 0; o < params.c_out; ++o) act.pre_activation[o] += row[o] * v;
  }
  act.output.resize(params.c_out);
  for (std::size_t o = 0; o < params.c_out; ++o) act.output[o] = std::max(0.0, act.pre_activation[o]);
  act.input = std::move(input);
  return act;
}

void conv_backward(const LayerParams& params, const ConvActivation& act, std::span<const double> upstream,
                   LayerParams& grads, std::span<double> feature_grads) {
  const KeypointInput& in = act.input;
  const std::size_t C = params.c_in;
  if (act.c_in != C || act.c_out != params.c_out || upstream.size() != params.c_out ||
      act.pooled.size() != C || act.weights.size() != in.neighbors * C)
    throw std::invalid_argument("conv_backward: activation does not match parameters");
  if (grads.kernel.size() != params.kernel.size() || grads.lift.size() != params.lift.size() ||
      grads.kernel_bias.size() != C || grads.lift_bias.size() != params.c_out)
    throw std::invalid_argument("conv_backward: gradient buffer shape mismatch");
  if (feature_grads.size() != in.neighbors * C)
    throw std::invalid_argument("conv_backward: feature gradient size mismatch");
  check_shapes(params, in);

  std::fill(feature_grads.begin(), feature_grads.end(), 0.0);
  std::vector<double> dpre(params.c_out);
  bool any = false;
  for (std::size_t o = 0; o < params.c_out; ++o) {
    dpre[o] = act.pre_activation[o] > 0.0 ? upstream[o] : 0.0;
    any = any || dpre[o] != 0.0;
  }
  if (!any) return;

  const std::size_t span = 4 * params.anchors;
  for (std::size_t o = 0; o < params.c_out; ++o) grads.lift_bias[o] += dpre[o];
  for (std::size_t c = 0; c < C; ++c) {
    const double* lift_row = params.lift.data.data() + c * params.c_out;
    double* glift_row = grads.lift.data.data() + c * params.c_out;
    double dpooled = 0.0;
    for (std::size_t o = 0; o < params.c_out; ++o) {
      glift_row[o] += act.pooled[c] * dpre[o];
      dpooled += lift_row[o] * dpre[o];
    }
    if (dpooled == 0.0) continue;
    const std::size_t j = act.argmax[c];
    const double f = in.features[j * C + c];
    const double w = act.weights[j * C + c];
    feature_grads[j * C + c] = dpooled * w;
    const double dw = dpooled * f;
    if (dw == 0.0) continue;
    grads.kernel_bias[c] += dw;
    const double* h = in.relation.data() + j * span;
    double* gk = grads.kernel.data.data() + c * span;
    for (std::size_t t = 0; t < span; ++t) gk[t] += dw * h[t];
  }
}

ConvGradients conv_backward(const LayerParams& params, const ConvActivation& act,
                            std::span<const double> upstream) {
  ConvGradients g;
  g.params = LayerParams::zeros(params.c_in, params.c_out, params.anchors);
  g.features.assign(act.input.neighbors * params.c_in, 0.0);
  conv_backward(params, act, upstream, g.params, g.features);
  return g;
}

}  // namespace gca
