#include "gca/network.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <stdexcept>

namespace gca {

DenseParams DenseParams::zeros(std::size_t in, std::size_t out) {
  DenseParams d;
  d.in = in;
  d.out = out;
  d.weight = Tensor::zeros({in, out});
  d.bias = Tensor::zeros({out});
  return d;
}

namespace {

NetworkConfig make_config(std::size_t num_classes, const ConvFlags& flags, std::size_t anchors,
                          std::size_t k_neighbors, std::initializer_list<std::size_t> keypoints,
                          std::initializer_list<std::size_t> channels, std::vector<std::size_t> head) {
  NetworkConfig c;
  c.num_classes = num_classes;
  c.head_hidden = std::move(head);
  std::size_t c_in = kInputChannels;
  auto kp = keypoints.begin();
  for (std::size_t c_out : channels) {
    c.layers.push_back({*kp++, k_neighbors, anchors, c_in, c_out, flags});
    c_in = c_out;
  }
  return c;
}

}  // namespace

NetworkConfig NetworkConfig::toy(std::size_t num_classes, const ConvFlags& flags, std::size_t anchors,
                                 std::size_t k_neighbors) {
  return make_config(num_classes, flags, anchors, k_neighbors, {64, 32, 16}, {16, 32, 64}, {32});
}

NetworkConfig NetworkConfig::full(std::size_t num_classes, const ConvFlags& flags, std::size_t anchors,
                                  std::size_t k_neighbors) {
  return make_config(num_classes, flags, anchors, k_neighbors, {512, 128, 32}, {128, 256, 512}, {256, 128});
}

void NetworkConfig::validate() const {
  if (layers.empty()) throw std::invalid_argument("network needs at least one convolution layer");
  if (num_classes < 1) throw std::invalid_argument("network needs at least one class");
  std::size_t c_in = kInputChannels;
  std::size_t prev_kp = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerConfig& lc = layers[l];
    const std::string where = "layer " + std::to_string(l) + ": ";
    if (lc.c_in != c_in) throw std::invalid_argument(where + "c_in does not match previous layer output");
    if (lc.c_out == 0 || lc.keypoints_out == 0 || lc.k_neighbors == 0)
      throw std::invalid_argument(where + "counts must be positive");
    if (!is_valid_anchor_count(lc.anchor_count))
      throw std::invalid_argument(where + "anchor count must be 1, 2, 4 or 8");
    if (l > 0 && lc.keypoints_out > prev_kp)
      throw std::invalid_argument(where + "keypoints_out exceeds incoming point count");
    prev_kp = lc.keypoints_out;
    c_in = lc.c_out;
  }
  for (std::size_t h : head_hidden)
    if (h == 0) throw std::invalid_argument("head layer width must be positive");
}

NetworkParams NetworkParams::zeros(const NetworkConfig& config) {
  config.validate();
  NetworkParams p;
  for (const LayerConfig& lc : config.layers)
    p.layers.push_back(LayerParams::zeros(lc.c_in, lc.c_out, lc.relation_anchors()));
  std::size_t in = config.layers.back().c_out;
  for (std::size_t h : config.head_hidden) {
    p.head.push_back(DenseParams::zeros(in, h));
    in = h;
  }
  p.head.push_back(DenseParams::zeros(in, config.num_classes));
  return p;
}

std::vector<Tensor*> NetworkParams::tensors() {
  std::vector<Tensor*> out;
  for (LayerParams& l : layers) {
    out.push_back(&l.kernel);
    out.push_back(&l.kernel_bias);
    out.push_back(&l.lift);
    out.push_back(&l.lift_bias);
  }
  for (DenseParams& d : head) {
    out.push_back(&d.weight);
    out.push_back(&d.bias);
  }
  return out;
}

std::vector<const Tensor*> NetworkParams::tensors() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<NetworkParams*>(this)->tensors()) out.push_back(t);
  return out;
}

std::vector<std::string> NetworkParams::tensor_names() const {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < layers.size(); ++l)
    for (const char* n : {"kernel", "kernel_bias", "lift", "lift_bias"})
      out.push_back("layer" + std::to_string(l) + "." + n);
  for (std::size_t h = 0; h < head.size(); ++h)
    for (const char* n : {"weight", "bias"}) out.push_back("head" + std::to_string(h) + "." + n);
  return out;
}

void NetworkParams::fill(double value) {
  for (Tensor* t : tensors()) std::fill(t->data.begin(), t->data.end(), value);
}

void NetworkParams::add_scaled(const NetworkParams& other, double scale) {
  auto mine = tensors();
  auto theirs = other.tensors();
  if (mine.size() != theirs.size()) throw std::invalid_argument("add_scaled: structure mismatch");
  for (std::size_t t = 0; t < mine.size(); ++t) {
    if (mine[t]->size() != theirs[t]->size()) throw std::invalid_argument("add_scaled: shape mismatch");
    for (std::size_t i = 0; i < mine[t]->size(); ++i) mine[t]->data[i] += scale * theirs[t]->data[i];
  }
}

GcaNetwork GcaNetwork::create(const NetworkConfig& config, std::uint64_t seed) {
  GcaNetwork net;
  net.config = config;
  net.seed = seed;
  net.params = NetworkParams::zeros(config);
  for (std::size_t l = 0; l < config.layers.size(); ++l) {
    LayerParams& lp = net.params.layers[l];
    Rng kernel_rng = make_rng(seed, {1, l, 0});
    Rng lift_rng = make_rng(seed, {1, l, 1});
    glorot_uniform(lp.kernel, 4 * lp.anchors, lp.c_in, kernel_rng);
    glorot_uniform(lp.lift, lp.c_in, lp.c_out, lift_rng);
  }
  for (std::size_t h = 0; h < net.params.head.size(); ++h) {
    DenseParams& d = net.params.head[h];
    Rng rng = make_rng(seed, {2, h});
    glorot_uniform(d.weight, d.in, d.out, rng);
  }
  return net;
}

NetworkActivation network_forward(const GcaNetwork& net, std::span<const Vec3> cloud) {
  const NetworkConfig& config = net.config;
  if (cloud.size() < config.min_points())
    throw std::invalid_argument("network_forward: cloud has " + std::to_string(cloud.size()) +
                                " points, first layer needs " + std::to_string(config.min_points()));
  NetworkActivation act;
  act.layers.resize(config.layers.size());

  std::vector<Vec3> points(cloud.begin(), cloud.end());
  std::vector<double> features;  // empty before the first layer
  std::vector<Vec3> local;
  std::vector<double> rows;

  for (std::size_t l = 0; l < config.layers.size(); ++l) {
    const LayerConfig& lc = config.layers[l];
    const LayerParams& lp = net.params.layers[l];
    LayerForward& lf = act.layers[l];
    const std::size_t n = points.size();
    if (lc.keypoints_out > n) throw std::invalid_argument("network_forward: keypoints_out exceeds layer points");
    const std::size_t k = std::min(lc.k_neighbors, n);
    const std::size_t A = lc.relation_anchors();
    const LrfConfig lrf_cfg{lc.flags.weighted_lrf, lc.flags.use_o_vector};
    const std::span<const Vec3> bin_source =
        lc.flags.anchors_from_input_cloud ? cloud : std::span<const Vec3>(points);

    lf.points = points;
    lf.keypoints = farthest_point_sampling(points, lc.keypoints_out);
    std::vector<Vec3> q;
    q.reserve(lf.keypoints.indices.size());
    for (std::size_t i : lf.keypoints.indices) q.push_back(points[i]);

    const std::size_t M = q.size();
    lf.frames.reserve(M);
    lf.degenerate.reserve(M);
    lf.activations.reserve(M);
    lf.output.resize(M * lc.c_out);
    rows.resize(A * 4);

    for (std::size_t i = 0; i < M; ++i) {
      const Vec3& p = q[i];
      Lrf frame = build_keypoint_lrf(points, q, p, lrf_cfg, k);
      if (frame.o_fallback_used) ++lf.fallback_count;
      const bool degenerate = frame.degenerate;
      if (degenerate) {
        ++lf.degenerate_count;
        frame.axes = Mat3::identity();
        frame.degenerate = false;
      }
      lf.degenerate.push_back(degenerate ? 1 : 0);

      AnchorSet anchors;
      if (lc.flags.use_anchors) {
        local.resize(bin_source.size());
        for (std::size_t t = 0; t < bin_source.size(); ++t) local[t] = transpose_times(frame.axes, bin_source[t] - p);
        anchors = make_anchors_local(local, A);
      } else {
        anchors.anchors_local.assign(1, Vec3{});
        anchors.occupancy.assign(1, n);
      }

      const Neighborhood nb = knn(points, p, k);
      KeypointInput in;
      in.neighbors = k;
      in.anchors = A;
      in.channels = lc.c_in;
      in.relation.resize(k * 4 * A);
      in.features.resize(k * lc.c_in);
      in.neighbor_indices = nb.indices;
      for (std::size_t j = 0; j < k; ++j) {
        const Vec3 xl = transpose_times(frame.axes, points[nb.indices[j]] - p);
        relation_rows(xl, anchors, rows);
        in.set_relation(j, rows);
        double* f = in.features.data() + j * lc.c_in;
        if (l == 0) {
          f[0] = xl.x;
          f[1] = xl.y;
          f[2] = xl.z;
          f[3] = norm(xl);
        } else {
          std::copy_n(features.data() + nb.indices[j] * lc.c_in, lc.c_in, f);
        }
      }
      lf.frames.push_back(frame);
      ConvActivation a = conv_forward(lp, std::move(in));
      std::copy(a.output.begin(), a.output.end(), lf.output.begin() + static_cast<std::ptrdiff_t>(i * lc.c_out));
      lf.activations.push_back(std::move(a));
    }
    act.degenerate_count += lf.degenerate_count;
    act.fallback_count += lf.fallback_count;
    points = std::move(q);
    features = lf.output;
  }

  const std::size_t C = config.layers.back().c_out;
  const std::size_t M = points.size();
  act.global_feature.assign(C, 0.0);
  act.global_argmax.assign(C, 0);
  for (std::size_t c = 0; c < C; ++c) {
    double best = features[c];
    std::size_t arg = 0;
    for (std::size_t i = 1; i < M; ++i) {
      if (features[i * C + c] > best) {
        best = features[i * C + c];
        arg = i;
      }
    }
    act.global_feature[c] = best;
    act.global_argmax[c] = arg;
  }

  std::vector<double> x = act.global_feature;
  for (std::size_t h = 0; h < net.params.head.size(); ++h) {
    const DenseParams& d = net.params.head[h];
    std::vector<double> z(d.bias.data);
    for (std::size_t i = 0; i < d.in; ++i) {
      const double* row = d.weight.data.data() + i * d.out;
      for (std::size_t o = 0; o < d.out; ++o) z[o] += row[o] * x[i];
    }
    act.head_inputs.push_back(x);
    act.head_pre.push_back(z);
    const bool last = h + 1 == net.params.head.size();
    if (!last)
      for (double& v : z) v = std::max(0.0, v);
    x = std::move(z);
  }
  act.logits = std::move(x);
  return act;
}

void network_backward(const GcaNetwork& net, const NetworkActivation& act, std::span<const double> dlogits,
                      NetworkParams& grads) {
  const NetworkConfig& config = net.config;
  if (dlogits.size() != config.num_classes) throw std::invalid_argument("network_backward: dlogits size mismatch");
  if (act.layers.size() != config.layers.size() || act.head_inputs.size() != net.params.head.size())
    throw std::invalid_argument("network_backward: activation does not match network");

  std::vector<double> dz(dlogits.begin(), dlogits.end());
  for (std::size_t h = net.params.head.size(); h-- > 0;) {
    const DenseParams& d = net.params.head[h];
    DenseParams& g = grads.head[h];
    const std::vector<double>& x = act.head_inputs[h];
    std::vector<double> dx(d.in, 0.0);
    for (std::size_t o = 0; o < d.out; ++o) g.bias[o] += dz[o];
    for (std::size_t i = 0; i < d.in; ++i) {
      const double* row = d.weight.data.data() + i * d.out;
      double* grow = g.weight.data.data() + i * d.out;
      double s = 0.0;
      for (std::size_t o = 0; o < d.out; ++o) {
        grow[o] += x[i] * dz[o];
        s += row[o] * dz[o];
      }
      dx[i] = s;
    }
    if (h > 0) {
      const std::vector<double>& pre = act.head_pre[h - 1];
      for (std::size_t i = 0; i < d.in; ++i)
        if (!(pre[i] > 0.0)) dx[i] = 0.0;
    }
    dz = std::move(dx);
  }

  const std::size_t L = config.layers.size();
  const std::size_t C_last = config.layers.back().c_out;
  std::vector<double> dout(act.layers.back().activations.size() * C_last, 0.0);
  for (std::size_t c = 0; c < C_last; ++c) dout[act.global_argmax[c] * C_last + c] += dz[c];

  std::vector<double> fgrad;
  for (std::size_t l = L; l-- > 0;) {
    const LayerConfig& lc = config.layers[l];
    const LayerForward& lf = act.layers[l];
    std::vector<double> din;
    if (l > 0) din.assign(lf.points.size() * lc.c_in, 0.0);
    for (std::size_t i = 0; i < lf.activations.size(); ++i) {
      const ConvActivation& a = lf.activations[i];
      fgrad.resize(a.input.neighbors * lc.c_in);
      conv_backward(net.params.layers[l], a,
                    std::span<const double>(dout.data() + i * lc.c_out, lc.c_out), grads.layers[l], fgrad);
      if (l == 0) continue;
      for (std::size_t j = 0; j < a.input.neighbors; ++j) {
        double* dst = din.data() + a.input.neighbor_indices[j] * lc.c_in;
        const double* src = fgrad.data() + j * lc.c_in;
        for (std::size_t c = 0; c < lc.c_in; ++c) dst[c] += src[c];
      }
    }
    dout = std::move(din);
  }
}

namespace {

nlohmann::json nested(const Tensor& t) {
  // row-major nesting following t.shape
  std::function<nlohmann::json(std::size_t, std::size_t)> build = [&](std::size_t dim, std::size_t offset) {
    nlohmann::json arr = nlohmann::json::array();
    std::size_t stride = 1;
    for (std::size_t d = dim + 1; d < t.shape.size(); ++d) stride *= t.shape[d];
    for (std::size_t i = 0; i < t.shape[dim]; ++i) {
      if (dim + 1 == t.shape.size())
        arr.push_back(t.data[offset + i]);
      else
        arr.push_back(build(dim + 1, offset + i * stride));
    }
    return arr;
  };
  return build(0, 0);
}

void flatten_into(const nlohmann::json& j, Tensor& t, const std::string& name) {
  std::vector<double> flat;
  std::function<void(const nlohmann::json&, std::size_t)> walk = [&](const nlohmann::json& node, std::size_t dim) {
    if (dim == t.shape.size()) {
      flat.push_back(node.get<double>());
      return;
    }
    if (!node.is_array() || node.size() != t.shape[dim])
      throw std::runtime_error("network json: tensor '" + name + "' has wrong shape");
    for (const auto& child : node) walk(child, dim + 1);
  };
  walk(j, 0);
  t.data = std::move(flat);
}

}  // namespace

nlohmann::json config_to_json(const NetworkConfig& config) {
  nlohmann::json j;
  j["num_classes"] = config.num_classes;
  j["head_hidden"] = config.head_hidden;
  j["layers"] = nlohmann::json::array();
  for (const LayerConfig& lc : config.layers) {
    j["layers"].push_back({{"keypoints_out", lc.keypoints_out},
                           {"k_neighbors", lc.k_neighbors},
                           {"anchor_count", lc.anchor_count},
                           {"c_in", lc.c_in},
                           {"c_out", lc.c_out},
                           {"weighted_lrf", lc.flags.weighted_lrf},
                           {"use_o_vector", lc.flags.use_o_vector},
                           {"use_anchors", lc.flags.use_anchors},
                           {"anchors_from_input_cloud", lc.flags.anchors_from_input_cloud}});
  }
  return j;
}

NetworkConfig config_from_json(const nlohmann::json& j) {
  NetworkConfig c;
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.head_hidden = j.at("head_hidden").get<std::vector<std::size_t>>();
  for (const auto& lj : j.at("layers")) {
    LayerConfig lc;
    lc.keypoints_out = lj.at("keypoints_out").get<std::size_t>();
    lc.k_neighbors = lj.at("k_neighbors").get<std::size_t>();
    lc.anchor_count = lj.at("anchor_count").get<std::size_t>();
    lc.c_in = lj.at("c_in").get<std::size_t>();
    lc.c_out = lj.at("c_out").get<std::size_t>();
    lc.flags.weighted_lrf = lj.value("weighted_lrf", true);
    lc.flags.use_o_vector = lj.value("use_o_vector", true);
    lc.flags.use_anchors = lj.value("use_anchors", true);
    lc.flags.anchors_from_input_cloud = lj.value("anchors_from_input_cloud", false);
    c.layers.push_back(lc);
  }
  c.validate();
  return c;
}

nlohmann::json network_to_json(const GcaNetwork& net) {
  nlohmann::json j;
  j["config"] = config_to_json(net.config);
  j["seed"] = net.seed;
  j["layers"] = nlohmann::json::array();
  for (const LayerParams& lp : net.params.layers) {
    j["layers"].push_back({{"kernel", nested(lp.kernel)},
                           {"kernel_bias", lp.kernel_bias.data},
                           {"lift", nested(lp.lift)},
                           {"lift_bias", lp.lift_bias.data}});
  }
  nlohmann::json head = nlohmann::json::array();
  for (const DenseParams& d : net.params.head) head.push_back({{"weight", nested(d.weight)}, {"bias", d.bias.data}});
  j["head"] = {{"layers", head}};
  return j;
}

GcaNetwork network_from_json(const nlohmann::json& j) {
  GcaNetwork net;
  net.config = config_from_json(j.at("config"));
  net.seed = j.value("seed", std::uint64_t{0});
  net.params = NetworkParams::zeros(net.config);
  const auto& layers = j.at("layers");
  if (layers.size() != net.params.layers.size()) throw std::runtime_error("network json: layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    LayerParams& lp = net.params.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    flatten_into(layers[l].at("kernel"), lp.kernel, prefix + "kernel");
    flatten_into(layers[l].at("kernel_bias"), lp.kernel_bias, prefix + "kernel_bias");
    flatten_into(layers[l].at("lift"), lp.lift, prefix + "lift");
    flatten_into(layers[l].at("lift_bias"), lp.lift_bias, prefix + "lift_bias");
  }
  const auto& head = j.at("head").at("layers");
  if (head.size() != net.params.head.size()) throw std::runtime_error("network json: head layer count mismatch");
  for (std::size_t h = 0; h < head.size(); ++h) {
    flatten_into(head[h].at("weight"), net.params.head[h].weight, "head.weight");
    flatten_into(head[h].at("bias"), net.params.head[h].bias, "head.bias");
  }
  return net;
}

void save_network(const GcaNetwork& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << network_to_json(net).dump() << '\n';
}

GcaNetwork load_network(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return network_from_json(nlohmann::json::parse(in));
}

}  // namespace gca
