#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <vector>

#include "gca/harness.hpp"
#include "gca/learner.hpp"

using namespace gca;

namespace {

std::vector<PointCloud> tiny_set(std::size_t per_class, std::size_t points, std::uint64_t seed) {
  std::vector<PointCloud> out;
  const ShapeKind kinds[] = {ShapeKind::Sphere, ShapeKind::Box, ShapeKind::Torus, ShapeKind::Cone, ShapeKind::Cylinder};
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      PointCloud cloud = generate_shape(kinds[c], points, 0.01, derive_seed(seed, {c, i}));
      cloud.label = static_cast<int>(c);
      out.push_back(std::move(cloud));
    }
  return out;
}

}  // namespace

TEST_CASE("cross entropy") {
  const std::vector<double> uniform(5, 0.3);
  const CrossEntropy ce = cross_entropy(uniform, 2);
  CHECK(ce.loss == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  for (std::size_t i = 0; i < 5; ++i) CHECK(ce.grad[i] == doctest::Approx(i == 2 ? 0.2 - 1.0 : 0.2));

  const std::vector<double> confident{50.0, 0.0, 0.0};
  CHECK(cross_entropy(confident, 0).loss < 1e-20);
  CHECK(cross_entropy(confident, 0).loss > 0.0);
  CHECK(cross_entropy(confident, 1).loss == doctest::Approx(50.0));

  std::vector<double> z{0.3, -1.2, 2.0, 0.7};
  const CrossEntropy g = cross_entropy(z, 3);
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double h = 1e-6;
    std::vector<double> up = z, down = z;
    up[i] += h;
    down[i] -= h;
    const double numeric = (cross_entropy(up, 3).loss - cross_entropy(down, 3).loss) / (2 * h);
    CHECK(std::abs(numeric - g.grad[i]) < 1e-6);
  }

  CHECK_THROWS_AS(cross_entropy(z, 4), std::invalid_argument);
  z[1] = std::nan("");
  CHECK_THROWS_AS(cross_entropy(z, 0), std::invalid_argument);
}

TEST_CASE("adam") {
  AdamConfig cfg;
  std::vector<double> p{0.0}, m{0.0}, v{0.0};
  const std::vector<double> g{1.0};
  adam_update(p, g, m, v, 1, cfg);
  // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
  CHECK(p[0] == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-15));

  std::vector<double> q{0.5, -2.0}, mq(2, 0.0), vq(2, 0.0);
  const std::vector<double> zero(2, 0.0);
  adam_update(q, zero, mq, vq, 1, cfg);
  CHECK(q == std::vector<double>{0.5, -2.0});
  CHECK_THROWS_AS(adam_update(q, g, mq, vq, 1, cfg), std::invalid_argument);
  CHECK_THROWS_AS(adam_update(q, zero, mq, vq, 0, cfg), std::invalid_argument);

  GcaNetwork a = GcaNetwork::create(grad_check_network_config(3), 1);
  GcaNetwork b = a;
  NetworkParams grads = NetworkParams::zeros(a.config);
  sample_gradient(a, random_cloud(48, 2), 0, grads);
  AdamState sa = AdamState::zeros_like(a.params), sb = AdamState::zeros_like(b.params);
  for (int i = 0; i < 3; ++i) {
    adam_step(a.params, grads, sa, cfg);
    adam_step(b.params, grads, sb, cfg);
  }
  CHECK(a.params == b.params);
  CHECK(sa.step == 3);
}

TEST_CASE("loss regression detector") {
  const std::vector<double> falling{2.0, 1.8, 1.5, 1.3, 1.2, 1.1, 1.0, 0.9, 0.85};
  CHECK_FALSE(detect_loss_regression(falling));
  const std::vector<double> rising{2.0, 1.8, 1.5, 1.3, 1.2, 1.1, 1.0, 1.5, 1.9};
  CHECK(detect_loss_regression(rising));
  const std::vector<double> early{1.0, 3.0, 1.0, 0.9, 0.8, 0.7, 0.6};
  CHECK_FALSE(detect_loss_regression(early, 5, 1));
}

TEST_CASE("evaluation") {
  const GcaNetwork net = GcaNetwork::create(NetworkConfig::toy(5), 3);
  const auto samples = tiny_set(1, 128, 4);

  const EvalResult none = evaluate(net, samples, RotationMode::None, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto logits = network_forward(net, samples[i].points).logits;
    CHECK(none.logits[i] == logits);
    const auto pred = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    CHECK(none.predictions[i] == pred);
    if (pred == static_cast<std::size_t>(*samples[i].label)) ++correct;
  }
  CHECK(none.correct == correct);
  CHECK(none.accuracy == doctest::Approx(static_cast<double>(correct) / 5.0));
  std::size_t row_total = 0;
  for (const auto& row : none.confusion)
    for (std::size_t v : row) row_total += v;
  CHECK(row_total == 5);

  // rotation by angle 0 about z is the identity
  CHECK(network_forward(net, apply_rotation(samples[0].points, Rotation::about_z(0.0))).logits == none.logits[0]);

  const EvalResult so3 = evaluate(net, samples, RotationMode::SO3, 7);
  CHECK(so3.predictions == none.predictions);
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t c = 0; c < 5; ++c) CHECK(std::abs(so3.logits[i][c] - none.logits[i][c]) <= 1e-6);
  CHECK(evaluate(net, samples, RotationMode::SO3, 7, 2).logits == so3.logits);
}

TEST_CASE("training smoke run and argument checks") {
  GcaNetwork net = GcaNetwork::create(NetworkConfig::toy(5), 1);
  const auto train_set = tiny_set(2, 128, 5);
  TrainConfig cfg;
  cfg.epochs = 1;
  const Metrics m = train(net, train_set, train_set, cfg);
  REQUIRE(m.epoch_loss.size() == 1);
  CHECK(std::isfinite(m.epoch_loss[0]));
  CHECK(m.final_test.total == 10);

  std::vector<PointCloud> one_class(train_set.begin(), train_set.begin() + 2);
  CHECK_THROWS_AS(train(net, one_class, {}, cfg), std::invalid_argument);
  TrainConfig zero = cfg;
  zero.epochs = 0;
  CHECK_THROWS_AS(train(net, train_set, {}, zero), std::invalid_argument);
  TrainConfig bad_lr = cfg;
  bad_lr.adam.learning_rate = 0.0;
  CHECK_THROWS_AS(train(net, train_set, {}, bad_lr), std::invalid_argument);
}

TEST_CASE("training is deterministic and independent of thread count") {
  const auto train_set = tiny_set(2, 96, 6);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 11;
  GcaNetwork a = GcaNetwork::create(NetworkConfig::toy(5), 2);
  GcaNetwork b = a;
  const Metrics ma = train(a, train_set, {}, cfg);
  cfg.threads = 3;
  const Metrics mb = train(b, train_set, {}, cfg);
  CHECK(a.params == b.params);
  CHECK(ma.epoch_loss == mb.epoch_loss);
}

TEST_CASE("loss keeps falling on a fixed full batch") {
  const auto batch = tiny_set(2, 96, 8);
  std::vector<PointCloud> eight(batch.begin(), batch.begin() + 8);
  GcaNetwork net = GcaNetwork::create(NetworkConfig::toy(5), 4);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_size = 8;
  cfg.rotation_mode_train = RotationMode::None;
  cfg.eval_every = 0;
  const Metrics m = train(net, eight, {}, cfg);
  CHECK_FALSE(m.loss_regression);
  CHECK(m.epoch_loss.back() < m.epoch_loss.front());
}

TEST_CASE("overfits twenty samples") {
  const auto samples = tiny_set(4, 128, 9);
  GcaNetwork net = GcaNetwork::create(NetworkConfig::toy(5), 5);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 20;
  cfg.eval_every = 0;
  cfg.rotation_mode_train = RotationMode::None;
  cfg.rotation_mode_test = RotationMode::None;
  const Metrics m = train(net, samples, samples, cfg);
  CHECK(m.final_test.accuracy == 1.0);

  // save, load and evaluate reproduces the logits
  const auto path = std::filesystem::temp_directory_path() / "gca_test_trained.json";
  save_network(net, path);
  const GcaNetwork loaded = load_network(path);
  const EvalResult a = evaluate(net, samples, RotationMode::SO3, 3);
  const EvalResult b = evaluate(loaded, samples, RotationMode::SO3, 3);
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t c = 0; c < 5; ++c) CHECK(std::abs(a.logits[i][c] - b.logits[i][c]) <= 1e-12);
  std::filesystem::remove(path);
}
