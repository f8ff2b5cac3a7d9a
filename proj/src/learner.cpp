#include "gca/learner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "gca/parallel.hpp"

namespace gca {

std::size_t resolve_threads(std::size_t requested) {
  if (const char* env = std::getenv("GCA_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  if (requested > 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

CrossEntropy cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) throw std::invalid_argument("cross_entropy: label out of range");
  double mx = -std::numeric_limits<double>::infinity();
  for (double z : logits) {
    if (!std::isfinite(z)) throw std::invalid_argument("cross_entropy: non-finite logit");
    mx = std::max(mx, z);
  }
  double sum = 0.0;
  CrossEntropy ce;
  ce.grad.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    ce.grad[i] = std::exp(logits[i] - mx);
    sum += ce.grad[i];
  }
  double others = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (i != label) others += ce.grad[i];
  // log1p keeps the loss accurate when the label dominates
  ce.loss = logits[label] == mx ? std::log1p(others) : std::log(sum) - (logits[label] - mx);
  for (double& g : ce.grad) g /= sum;
  ce.grad[label] -= 1.0;
  return ce;
}

AdamState AdamState::zeros_like(const NetworkParams& params) {
  AdamState s;
  s.m = params;
  s.m.fill(0.0);
  s.v = s.m;
  return s;
}

void adam_update(std::span<double> params, std::span<const double> grads, std::span<double> m, std::span<double> v,
                 std::uint64_t step, const AdamConfig& config) {
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size())
    throw std::invalid_argument("adam_update: shape mismatch");
  if (step == 0) throw std::invalid_argument("adam_update: step is 1-based");
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grads[i];
    v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grads[i] * grads[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    params[i] -= config.learning_rate * mhat / (std::sqrt(vhat) + config.epsilon);
  }
}

void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& state, const AdamConfig& config) {
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw std::invalid_argument("adam_step: structure mismatch");
  ++state.step;
  for (std::size_t t = 0; t < p.size(); ++t)
    adam_update(p[t]->data, g[t]->data, m[t]->data, v[t]->data, state.step, config);
}

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"seed", c.seed},
          {"rotation_mode_train", rotation_mode_name(c.rotation_mode_train)},
          {"rotation_mode_test", rotation_mode_name(c.rotation_mode_test)},
          {"eval_every", c.eval_every}};
}

nlohmann::json eval_to_json(const EvalResult& r, bool include_logits) {
  nlohmann::json j{{"rotation_mode", rotation_mode_name(r.rotation_mode)},
                   {"seed", r.seed},
                   {"correct", r.correct},
                   {"total", r.total},
                   {"accuracy", r.accuracy},
                   {"confusion", r.confusion},
                   {"degenerate_keypoints", r.degenerate_keypoints}};
  if (include_logits) {
    j["predictions"] = r.predictions;
    j["logits"] = r.logits;
  }
  return j;
}

nlohmann::json metrics_to_json(const Metrics& m) {
  nlohmann::json acc = nlohmann::json::array();
  for (double a : m.epoch_test_accuracy) acc.push_back(std::isnan(a) ? nlohmann::json(nullptr) : nlohmann::json(a));
  return {{"config", train_config_to_json(m.config)},
          {"epoch_loss", m.epoch_loss},
          {"epoch_test_accuracy", acc},
          {"final_test", eval_to_json(m.final_test)},
          {"loss_regression", m.loss_regression}};
}

std::string training_log_csv(const Metrics& m) {
  std::string out = "epoch,loss,test_acc\n";
  char buf[96];
  for (std::size_t e = 0; e < m.epoch_loss.size(); ++e) {
    const double a = e < m.epoch_test_accuracy.size() ? m.epoch_test_accuracy[e] : std::nan("");
    if (std::isnan(a))
      std::snprintf(buf, sizeof buf, "%zu,%.10g,\n", e + 1, m.epoch_loss[e]);
    else
      std::snprintf(buf, sizeof buf, "%zu,%.10g,%.6f\n", e + 1, m.epoch_loss[e], a);
    out += buf;
  }
  return out;
}

namespace {

constexpr std::uint64_t kEvalStream = 0xe7a1;
constexpr std::uint64_t kTrainRotationStream = 0x7a19;
constexpr std::uint64_t kShuffleStream = 0x5f1e;

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::size_t label_of(const PointCloud& c) {
  if (!c.label || *c.label < 0) throw std::invalid_argument("sample has no label");
  return static_cast<std::size_t>(*c.label);
}

}  // namespace

EvalResult evaluate(const GcaNetwork& net, std::span<const PointCloud> samples, RotationMode mode,
                    std::uint64_t seed, std::size_t threads) {
  const std::size_t C = net.config.num_classes;
  EvalResult r;
  r.rotation_mode = mode;
  r.seed = seed;
  r.total = samples.size();
  r.confusion.assign(C, std::vector<std::size_t>(C, 0));
  r.predictions.resize(samples.size());
  r.logits.resize(samples.size());
  std::vector<std::size_t> degenerate(samples.size(), 0);
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    Rng rng = make_rng(seed, {kEvalStream, i});
    const Rotation rot = sample_rotation(mode, rng);
    const std::vector<Vec3> pts = apply_rotation(samples[i].points, rot);
    NetworkActivation act = network_forward(net, pts);
    r.logits[i] = act.logits;
    r.predictions[i] = argmax(act.logits);
    degenerate[i] = act.degenerate_count;
  });
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::size_t y = label_of(samples[i]);
    if (y >= C) throw std::invalid_argument("evaluate: label out of range");
    ++r.confusion[y][r.predictions[i]];
    if (r.predictions[i] == y) ++r.correct;
    r.degenerate_keypoints += degenerate[i];
  }
  r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
  return r;
}

double sample_gradient(const GcaNetwork& net, std::span<const Vec3> cloud, std::size_t label, NetworkParams& grads) {
  const NetworkActivation act = network_forward(net, cloud);
  const CrossEntropy ce = cross_entropy(act.logits, label);
  network_backward(net, act, ce.grad, grads);
  return ce.loss;
}

bool detect_loss_regression(std::span<const double> epoch_loss, std::size_t after_epoch, std::size_t window) {
  if (window == 0) window = 1;
  auto smoothed = [&](std::size_t e) {
    const std::size_t lo = e + 1 >= window ? e + 1 - window : 0;
    double s = 0.0;
    for (std::size_t i = lo; i <= e; ++i) s += epoch_loss[i];
    return s / static_cast<double>(e + 1 - lo);
  };
  for (std::size_t e = std::max<std::size_t>(after_epoch, 1); e < epoch_loss.size(); ++e)
    if (smoothed(e) > smoothed(e - 1) * (1.0 + 1e-9)) return true;
  return false;
}

Metrics train(GcaNetwork& net, std::span<const PointCloud> train_set, std::span<const PointCloud> test_set,
              const TrainConfig& config) {
  if (config.epochs == 0 || config.batch_size == 0) throw std::invalid_argument("train: counts must be positive");
  if (!(config.adam.learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be positive");
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  {
    std::vector<char> seen(net.config.num_classes, 0);
    for (const PointCloud& c : train_set) {
      const std::size_t y = label_of(c);
      if (y >= seen.size()) throw std::invalid_argument("train: label out of range");
      seen[y] = 1;
    }
    if (std::count(seen.begin(), seen.end(), 1) < 2) throw std::invalid_argument("train: need at least 2 classes");
  }

  Metrics metrics;
  metrics.config = config;
  AdamState state = AdamState::zeros_like(net.params);
  const std::size_t threads = std::max<std::size_t>(1, config.threads);
  std::vector<std::size_t> order(train_set.size());
  std::vector<NetworkParams> sample_grads(std::min(config.batch_size, train_set.size()),
                                          NetworkParams::zeros(net.config));
  std::vector<double> sample_loss(sample_grads.size());
  NetworkParams batch_grad = NetworkParams::zeros(net.config);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng = make_rng(config.seed, {kShuffleStream, epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      parallel_for(count, threads, [&](std::size_t b) {
        const std::size_t idx = order[start + b];
        Rng rng = make_rng(config.seed, {kTrainRotationStream, epoch, idx});
        const Rotation rot = sample_rotation(config.rotation_mode_train, rng);
        const std::vector<Vec3> pts = apply_rotation(train_set[idx].points, rot);
        sample_grads[b].fill(0.0);
        sample_loss[b] = sample_gradient(net, pts, label_of(train_set[idx]), sample_grads[b]);
      });
      batch_grad.fill(0.0);
      for (std::size_t b = 0; b < count; ++b) {
        batch_grad.add_scaled(sample_grads[b], 1.0 / static_cast<double>(count));
        epoch_loss += sample_loss[b];
      }
      adam_step(net.params, batch_grad, state, config.adam);
    }
    metrics.epoch_loss.push_back(epoch_loss / static_cast<double>(order.size()));

    const bool eval_now = !test_set.empty() && config.eval_every > 0 &&
                          ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs);
    if (eval_now) {
      metrics.epoch_test_accuracy.push_back(
          evaluate(net, test_set, config.rotation_mode_test, config.seed, threads).accuracy);
    } else {
      metrics.epoch_test_accuracy.push_back(std::nan(""));
    }
  }
  if (!test_set.empty()) metrics.final_test = evaluate(net, test_set, config.rotation_mode_test, config.seed, threads);
  metrics.loss_regression = detect_loss_regression(metrics.epoch_loss);
  return metrics;
}

}  // namespace gca
