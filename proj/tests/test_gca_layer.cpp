#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "gca/gca_layer.hpp"
#include "gca/harness.hpp"

using namespace gca;

namespace {

KeypointInput random_input(std::size_t k, std::size_t a, std::size_t c, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  KeypointInput in;
  in.neighbors = k;
  in.anchors = a;
  in.channels = c;
  in.relation.resize(k * 4 * a);
  in.features.resize(k * c);
  in.neighbor_indices.resize(k);
  std::iota(in.neighbor_indices.begin(), in.neighbor_indices.end(), std::size_t{0});
  for (double& v : in.relation) v = u(rng);
  for (double& v : in.features) v = u(rng);
  return in;
}

KeypointInput permuted(const KeypointInput& in, const std::vector<std::size_t>& perm) {
  KeypointInput out = in;
  const std::size_t span = 4 * in.anchors;
  for (std::size_t j = 0; j < in.neighbors; ++j) {
    std::copy_n(in.relation.begin() + perm[j] * span, span, out.relation.begin() + j * span);
    std::copy_n(in.features.begin() + perm[j] * in.channels, in.channels, out.features.begin() + j * in.channels);
    out.neighbor_indices[j] = in.neighbor_indices[perm[j]];
  }
  return out;
}

}  // namespace

TEST_CASE("initial features") {
  const std::vector<Vec3> x{{0, 0, 0}, {1, 0, 0}, {1, 2, 2}};
  const auto f = initial_features(x);
  CHECK(f == std::vector<double>{0, 0, 0, 0, 1, 0, 0, 1, 1, 2, 2, 3});
}

TEST_CASE("glorot initialization") {
  Rng rng(1);
  Tensor t = Tensor::zeros({20, 30});
  glorot_uniform(t, 20, 30, rng);
  const double limit = std::sqrt(6.0 / 50.0);
  double mx = 0.0;
  for (double v : t.data) mx = std::max(mx, std::abs(v));
  CHECK(mx <= limit);
  CHECK(mx > 0.8 * limit);

  Rng a(5), b(5);
  const LayerParams p = LayerParams::initialized(4, 8, 8, a);
  CHECK(p == LayerParams::initialized(4, 8, 8, b));
  for (double v : p.kernel_bias.data) CHECK(v == 0.0);
  for (double v : p.lift_bias.data) CHECK(v == 0.0);
  CHECK(p.kernel.shape == std::vector<std::size_t>{4, 4, 8});
  CHECK(p.lift.shape == std::vector<std::size_t>{4, 8});
}

TEST_CASE("single neighbour, single anchor, single channel by hand") {
  LayerParams p = LayerParams::zeros(1, 1, 1);
  const double kernel[4] = {0.5, -1.0, 2.0, 0.25};
  for (std::size_t r = 0; r < 4; ++r) p.kernel[r] = kernel[r];
  p.kernel_bias[0] = 0.1;
  p.lift[0] = 0.5;
  p.lift_bias[0] = -1.0;

  KeypointInput in;
  in.neighbors = 1;
  in.anchors = 1;
  in.channels = 1;
  in.relation.resize(4);
  in.features = {2.0};
  in.neighbor_indices = {0};
  const double h[4] = {1.0, 2.0, 3.0, std::sqrt(14.0)};
  in.set_relation(0, h);

  const double w = 0.5 * 1.0 - 1.0 * 2.0 + 2.0 * 3.0 + 0.25 * std::sqrt(14.0) + 0.1;
  const double expected = std::max(0.0, 0.5 * (w * 2.0) - 1.0);
  const ConvActivation act = conv_forward(p, in);
  CHECK(act.weights[0] == doctest::Approx(w).epsilon(1e-15));
  CHECK(act.output[0] == doctest::Approx(expected).epsilon(1e-15));

  p.lift_bias[0] = -100.0;
  CHECK(conv_forward(p, in).output[0] == 0.0);
}

TEST_CASE("bias-only weights pool the raw features") {
  Rng rng(3);
  const std::size_t K = 6, A = 8, C = 5;
  LayerParams p = LayerParams::zeros(C, C, A);
  for (double& v : p.kernel_bias.data) v = 1.0;
  for (std::size_t i = 0; i < C; ++i) p.lift[i * C + i] = 1.0;
  const KeypointInput in = random_input(K, A, C, rng);
  const ConvActivation act = conv_forward(p, in);
  for (std::size_t c = 0; c < C; ++c) {
    double mx = -1e300;
    for (std::size_t j = 0; j < K; ++j) mx = std::max(mx, in.features[j * C + c]);
    CHECK(act.output[c] == std::max(0.0, mx));
  }
}

TEST_CASE("max ties go to the lowest neighbour") {
  LayerParams p = LayerParams::zeros(1, 1, 1);
  p.kernel_bias[0] = 1.0;
  p.lift[0] = 1.0;
  KeypointInput in;
  in.neighbors = 3;
  in.anchors = 1;
  in.channels = 1;
  in.relation.assign(12, 0.0);
  in.features = {0.5, 2.0, 2.0};
  in.neighbor_indices = {0, 1, 2};
  CHECK(conv_forward(p, in).argmax[0] == 1);
}

TEST_CASE("neighbour order does not change the output") {
  Rng rng(7);
  const LayerParams p = LayerParams::initialized(6, 9, 8, rng);
  const KeypointInput in = random_input(12, 8, 6, rng);
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (int t = 0; t < 10; ++t) {
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK(conv_forward(p, permuted(in, perm)).output == conv_forward(p, in).output);
  }
}

TEST_CASE("shape mismatches are rejected") {
  Rng rng(2);
  const LayerParams p = LayerParams::initialized(4, 4, 8, rng);
  CHECK_THROWS_AS(conv_forward(p, random_input(5, 4, 4, rng)), std::invalid_argument);
  CHECK_THROWS_AS(conv_forward(p, random_input(5, 8, 3, rng)), std::invalid_argument);
  const ConvActivation act = conv_forward(p, random_input(5, 8, 4, rng));
  const std::vector<double> up(3, 1.0);
  CHECK_THROWS_AS(conv_backward(p, act, up), std::invalid_argument);
}

TEST_CASE("conv backward") {
  Rng rng(13);
  LayerParams p = LayerParams::initialized(5, 4, 8, rng);
  for (double& v : p.lift_bias.data) v = 0.5;
  const KeypointInput in = random_input(7, 8, 5, rng);
  const ConvActivation act = conv_forward(p, in);

  const std::vector<double> zero(4, 0.0);
  const ConvGradients gz = conv_backward(p, act, zero);
  for (const Tensor* t : {&gz.params.kernel, &gz.params.kernel_bias, &gz.params.lift, &gz.params.lift_bias})
    for (double v : t->data) CHECK(v == 0.0);
  for (double v : gz.features) CHECK(v == 0.0);

  const std::vector<double> up{0.3, -1.0, 0.7, 0.2};
  const ConvGradients g = conv_backward(p, act, up);
  for (std::size_t j = 0; j < 7; ++j)
    for (std::size_t c = 0; c < 5; ++c)
      if (act.argmax[c] != j) CHECK(g.features[j * 5 + c] == 0.0);
  const ConvGradients g2 = conv_backward(p, act, up);
  CHECK(g2.params == g.params);
  CHECK(g2.features == g.features);

  // the accumulating overload adds onto existing gradients
  LayerParams acc = g.params;
  std::vector<double> fg(7 * 5);
  conv_backward(p, act, up, acc, fg);
  for (std::size_t i = 0; i < acc.kernel.size(); ++i) CHECK(acc.kernel[i] == 2.0 * g.params.kernel[i]);
  CHECK(fg == g.features);
}

TEST_CASE("conv gradients match central differences") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const TensorGradCheck& c : conv_gradient_check(seed, 1e-6)) {
      INFO(c.name);
      CHECK(c.analytic_norm > 0.0);
      CHECK(c.relative_error < 1e-4);
    }
  }
}
