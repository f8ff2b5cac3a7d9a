#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <vector>

#include "gca/harness.hpp"
#include "gca/network.hpp"

using namespace gca;

namespace {

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_CASE("toy and full configurations") {
  const NetworkConfig toy = NetworkConfig::toy(5);
  REQUIRE(toy.layers.size() == 3);
  CHECK(toy.layers[0].keypoints_out == 64);
  CHECK(toy.layers[1].keypoints_out == 32);
  CHECK(toy.layers[2].keypoints_out == 16);
  CHECK(toy.layers[0].c_in == kInputChannels);
  CHECK(toy.layers[2].c_out == 64);
  CHECK(toy.head_hidden == std::vector<std::size_t>{32});
  CHECK(toy.min_points() == 64);
  toy.validate();

  const NetworkConfig full = NetworkConfig::full(40);
  CHECK(full.layers[0].keypoints_out == 512);
  CHECK(full.layers[2].c_out == 512);
  CHECK(full.head_hidden == std::vector<std::size_t>{256, 128});
  full.validate();

  NetworkConfig bad = toy;
  bad.layers[1].c_in = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = toy;
  bad.layers[1].keypoints_out = 100;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = toy;
  bad.layers[0].anchor_count = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("forward pass shapes") {
  const GcaNetwork net = GcaNetwork::create(NetworkConfig::toy(5), 1);
  const auto cloud = random_cloud(256, 2);
  const NetworkActivation act = network_forward(net, cloud);
  CHECK(act.logits.size() == 5);
  CHECK(act.global_feature.size() == 64);
  REQUIRE(act.layers.size() == 3);
  CHECK(act.layers[0].output.size() == 64 * 16);
  CHECK(act.layers[1].points.size() == 64);
  CHECK(act.degenerate_count == 0);
  for (double z : act.logits) CHECK(std::isfinite(z));

  CHECK_THROWS_AS(network_forward(net, random_cloud(63, 2)), std::invalid_argument);
  // fewer points than k neighbours still runs
  const GcaNetwork small = GcaNetwork::create(NetworkConfig::toy(5), 1);
  CHECK(network_forward(small, random_cloud(64, 3)).logits.size() == 5);
}

TEST_CASE("initialization is deterministic and seeded") {
  const NetworkConfig cfg = NetworkConfig::toy(5);
  CHECK(GcaNetwork::create(cfg, 4).params == GcaNetwork::create(cfg, 4).params);
  CHECK_FALSE(GcaNetwork::create(cfg, 4).params == GcaNetwork::create(cfg, 5).params);
  const NetworkParams p = GcaNetwork::create(cfg, 4).params;
  const auto names = p.tensor_names();
  CHECK(names.size() == p.tensors().size());
  CHECK(names.front() == "layer0.kernel");
  CHECK(names.back() == "head1.bias");
}

TEST_CASE("logits are rotation invariant for every ablation path") {
  Rng rng(31);
  ConvFlags no_anchor;
  no_anchor.use_anchors = false;
  ConvFlags unweighted;
  unweighted.weighted_lrf = false;
  ConvFlags input_anchors;
  input_anchors.anchors_from_input_cloud = true;
  for (const ConvFlags& flags : {ConvFlags{}, no_anchor, unweighted, input_anchors}) {
    for (std::size_t anchors : {1, 4, 8}) {
      const GcaNetwork net = GcaNetwork::create(NetworkConfig::toy(5, flags, anchors), rng());
      for (int t = 0; t < 3; ++t) {
        const auto cloud = random_cloud(256, rng());
        const Rotation r = sample_rotation(RotationMode::SO3, rng);
        const NetworkActivation a = network_forward(net, cloud);
        const NetworkActivation b = network_forward(net, apply_rotation(cloud, r));
        CHECK(a.degenerate_count == 0);
        CHECK(max_abs_diff(a.logits, b.logits) <= 1e-6);
      }
    }
  }
}

TEST_CASE("logits survive a permutation of the input cloud") {
  Rng rng(41);
  const GcaNetwork net = GcaNetwork::create(NetworkConfig::toy(5), 9);
  for (int t = 0; t < 5; ++t) {
    const auto cloud = random_cloud(256, rng());
    // index 0 stays first so farthest point sampling starts from the same point
    std::vector<std::size_t> perm(cloud.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin() + 1, perm.end(), rng);
    std::vector<Vec3> shuffled(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) shuffled[i] = cloud[perm[i]];

    const NetworkActivation a = network_forward(net, cloud);
    const NetworkActivation b = network_forward(net, shuffled);
    for (std::size_t i = 0; i < a.layers[0].keypoints.indices.size(); ++i)
      CHECK(perm[b.layers[0].keypoints.indices[i]] == a.layers[0].keypoints.indices[i]);
    CHECK(max_abs_diff(a.logits, b.logits) <= 1e-12);
  }
}

TEST_CASE("network gradients") {
  const GcaNetwork net = GcaNetwork::create(grad_check_network_config(3), 17);
  const auto cloud = random_cloud(48, 18);
  for (const TensorGradCheck& c : network_gradient_check(net, cloud, 1, 1e-6)) {
    INFO(c.name);
    CHECK(c.relative_error < 1e-4);
  }

  const NetworkActivation act = network_forward(net, cloud);
  NetworkParams zero = NetworkParams::zeros(net.config);
  network_backward(net, act, std::vector<double>(3, 0.0), zero);
  for (const Tensor* t : zero.tensors())
    for (double v : t->data) CHECK(v == 0.0);

  const std::vector<double> d{0.2, -0.5, 0.3};
  NetworkParams g1 = NetworkParams::zeros(net.config);
  NetworkParams g2 = NetworkParams::zeros(net.config);
  network_backward(net, act, d, g1);
  network_backward(net, act, d, g2);
  CHECK(g1 == g2);
  CHECK_THROWS_AS(network_backward(net, act, std::vector<double>(2, 0.0), g1), std::invalid_argument);
}

TEST_CASE("serialization round trip is bit exact") {
  const GcaNetwork net = GcaNetwork::create(NetworkConfig::toy(4, {}, 2, 16), 23);
  const GcaNetwork back = network_from_json(network_to_json(net));
  CHECK(back.config == net.config);
  CHECK(back.params == net.params);
  CHECK(back.seed == net.seed);

  const auto path = std::filesystem::temp_directory_path() / "gca_test_net.json";
  save_network(net, path);
  const GcaNetwork loaded = load_network(path);
  CHECK(loaded.params == net.params);
  const auto cloud = random_cloud(128, 4);
  CHECK(network_forward(loaded, cloud).logits == network_forward(net, cloud).logits);
  std::filesystem::remove(path);

  auto j = network_to_json(net);
  j["layers"][0]["lift_bias"].erase(0);
  CHECK_THROWS(network_from_json(j));
  CHECK(config_from_json(config_to_json(net.config)) == net.config);
}
