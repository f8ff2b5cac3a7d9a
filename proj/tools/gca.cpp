// gca: experiment driver for the rotation-invariant point convolution library.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gca/harness.hpp"
#include "gca/learner.hpp"
#include "gca/network.hpp"
#include "gca/parallel.hpp"
#include "gca/pcio.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitFail = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  std::string out = "gca_out";
  std::size_t threads = 0;  // 0 = all cores
  std::string config_path;
  CLI::Option* seed_opt = nullptr;
};

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config '" + path + "': " + e.what());
  }
}

bool given(const CLI::Option* opt) { return opt && opt->count() > 0; }

template <typename T>
void override_if(const CLI::Option* opt, T& field, const T& value) {
  if (given(opt)) field = value;
}

int finish(const gca::RunReport& report, const fs::path& out) {
  gca::write_json(out / "config.json", report.config);
  gca::write_json(out / "report.json", report.to_json());
  std::printf("%s: %s (%.2f s, report %s)\n", report.experiment.c_str(), report.pass ? "PASS" : "FAIL",
              report.wall_seconds, (out / "report.json").string().c_str());
  return report.pass ? kExitPass : kExitFail;
}

// Dataset and training flags shared by protocol-eval and ablation.
struct TrainFlags {
  std::size_t epochs = 0, batch = 0, eval_every = 0, train_per_class = 0, test_per_class = 0, points = 0;
  double lr = 0.0, jitter = 0.0;
  CLI::Option *epochs_opt = nullptr, *batch_opt = nullptr, *eval_opt = nullptr, *train_opt = nullptr;
  CLI::Option *test_opt = nullptr, *points_opt = nullptr, *lr_opt = nullptr, *jitter_opt = nullptr;

  void add(CLI::App* sub) {
    epochs_opt = sub->add_option("--epochs", epochs, "Training epochs");
    batch_opt = sub->add_option("--batch-size", batch, "Mini-batch size");
    eval_opt = sub->add_option("--eval-every", eval_every, "Test evaluation cadence in epochs (0 = final only)");
    lr_opt = sub->add_option("--lr", lr, "Adam learning rate");
    train_opt = sub->add_option("--train-per-class", train_per_class, "Training clouds per class");
    test_opt = sub->add_option("--test-per-class", test_per_class, "Test clouds per class");
    points_opt = sub->add_option("--points", points, "Points per cloud");
    jitter_opt = sub->add_option("--jitter", jitter, "Gaussian jitter sigma");
  }
  void apply(gca::ShapeDatasetConfig& d, gca::TrainConfig& t) const {
    override_if(epochs_opt, t.epochs, epochs);
    override_if(batch_opt, t.batch_size, batch);
    override_if(eval_opt, t.eval_every, eval_every);
    override_if(lr_opt, t.adam.learning_rate, lr);
    override_if(train_opt, d.train_per_class, train_per_class);
    override_if(test_opt, d.test_per_class, test_per_class);
    override_if(points_opt, d.points_per_cloud, points);
    override_if(jitter_opt, d.jitter, jitter);
  }
};

struct FlagToggles {
  bool no_weight = false, no_o = false, no_anchors = false, input_anchors = false;
  void add(CLI::App* sub) {
    sub->add_flag("--no-weight", no_weight, "Unweighted local PCA frames");
    sub->add_flag("--no-o-vector", no_o, "Sign frames by first nonzero component instead of O");
    sub->add_flag("--no-anchors", no_anchors, "Single anchor at the local origin");
    sub->add_flag("--anchors-from-input", input_anchors, "Bin anchors over the input cloud");
  }
  void apply(gca::ConvFlags& f) const {
    if (no_weight) f.weighted_lrf = false;
    if (no_o) f.use_o_vector = false;
    if (no_anchors) f.use_anchors = false;
    if (input_anchors) f.anchors_from_input_cloud = true;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotation-invariant point cloud convolution experiments"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  g.seed_opt = app.add_option("--seed", g.seed, "Base random seed");
  app.add_option("--out", g.out, "Output directory");
  auto* threads_opt = app.add_option("--threads", g.threads, "Worker threads (GCA_THREADS overrides; 0 = all cores)");
  app.add_option("--config", g.config_path, "JSON config; explicit flags take precedence");

  // gen-shapes
  auto* gen = app.add_subcommand("gen-shapes", "Write the synthetic 5-class dataset as XYZ files plus manifest");
  TrainFlags gen_flags;
  gen_flags.train_opt = gen->add_option("--train-per-class", gen_flags.train_per_class, "Training clouds per class");
  gen_flags.test_opt = gen->add_option("--test-per-class", gen_flags.test_per_class, "Test clouds per class");
  gen_flags.points_opt = gen->add_option("--points", gen_flags.points, "Points per cloud");
  gen_flags.jitter_opt = gen->add_option("--jitter", gen_flags.jitter, "Gaussian jitter sigma");

  // extract
  auto* ext = app.add_subcommand("extract", "Run the network on one cloud and dump features");
  std::string ext_input, ext_format, ext_model, ext_arch = "toy";
  std::size_t ext_anchors = 8, ext_k = 32, ext_classes = 5;
  bool ext_dump = false;
  FlagToggles ext_toggles;
  ext->add_option("--input", ext_input, "Point cloud file (.xyz, .off, .ply)")->required();
  ext->add_option("--format", ext_format, "Override format: xyz, off or ply");
  ext->add_option("--model", ext_model, "Trained model JSON; random weights from --seed otherwise");
  auto* ext_arch_opt = ext->add_option("--arch", ext_arch, "toy or full");
  auto* ext_anchor_opt = ext->add_option("--anchors", ext_anchors, "Anchor count 1, 2, 4 or 8");
  auto* ext_k_opt = ext->add_option("--k", ext_k, "Neighbors per keypoint");
  auto* ext_cls_opt = ext->add_option("--num-classes", ext_classes, "Output classes for random networks");
  ext->add_flag("--dump-anchors", ext_dump, "Write per-keypoint anchors CSV");
  ext_toggles.add(ext);

  // invariance-check
  auto* inv = app.add_subcommand("invariance-check", "Logit difference under random SO3 rotations");
  std::size_t inv_trials = 0, inv_points = 0;
  double inv_tol = 0.0;
  bool inv_identity = false;
  auto* inv_trials_opt = inv->add_option("--trials", inv_trials, "Random trials");
  auto* inv_points_opt = inv->add_option("--points", inv_points, "Points per cloud");
  auto* inv_tol_opt = inv->add_option("--tolerance", inv_tol, "Max absolute logit difference");
  inv->add_flag("--identity", inv_identity, "Use the identity rotation");

  // grad-check
  auto* grad = app.add_subcommand("grad-check", "Finite-difference gradient check");
  std::size_t grad_instances = 0, grad_points = 0;
  double grad_step = 0.0, grad_tol = 0.0;
  auto* grad_inst_opt = grad->add_option("--instances", grad_instances, "Random network instances");
  auto* grad_points_opt = grad->add_option("--points", grad_points, "Points per cloud");
  auto* grad_step_opt = grad->add_option("--step", grad_step, "Central difference step");
  auto* grad_tol_opt = grad->add_option("--tolerance", grad_tol, "Max relative error");

  // lrf-bench
  auto* bench = app.add_subcommand("lrf-bench", "LRF repeatability under subsampling and noise");
  std::vector<std::string> bench_inputs;
  std::vector<std::uint64_t> bench_seeds;
  std::size_t bench_model_points = 0, bench_pairs = 0, bench_k = 0;
  double bench_ratio = 0.0, bench_noise = 0.0, bench_margin = 0.0;
  bench->add_option("--inputs", bench_inputs, "Model files; defaults to bumpy sphere, torus and cone");
  auto* bench_seeds_opt = bench->add_option("--seeds", bench_seeds, "Perturbation seeds");
  auto* bench_mp_opt = bench->add_option("--model-points", bench_model_points, "Points per generated model");
  auto* bench_pairs_opt = bench->add_option("--pairs", bench_pairs, "Keypoint pairs per run");
  auto* bench_k_opt = bench->add_option("--k", bench_k, "Neighbors for unweighted frames");
  auto* bench_ratio_opt = bench->add_option("--ratio", bench_ratio, "Scene subsample ratio");
  auto* bench_noise_opt = bench->add_option("--noise", bench_noise, "Noise sigma in mean NN distances");
  auto* bench_margin_opt = bench->add_option("--margin", bench_margin, "Required relative margin");

  // protocol-eval
  auto* proto = app.add_subcommand("protocol-eval", "Train z and SO3 models; evaluate z/z, SO3/SO3, z/SO3");
  TrainFlags proto_flags;
  proto_flags.add(proto);
  FlagToggles proto_toggles;
  proto_toggles.add(proto);
  std::string proto_arch;
  std::size_t proto_anchors = 0, proto_k = 0;
  auto* proto_arch_opt = proto->add_option("--arch", proto_arch, "toy or full");
  auto* proto_anchor_opt = proto->add_option("--anchors", proto_anchors, "Anchor count 1, 2, 4 or 8");
  auto* proto_k_opt = proto->add_option("--k", proto_k, "Neighbors per keypoint");

  // ablation
  auto* abl = app.add_subcommand("ablation", "Anchor-count and component ablations over 3 seeds");
  TrainFlags abl_flags;
  abl_flags.add(abl);
  std::string abl_sweep;
  std::vector<std::uint64_t> abl_seeds;
  std::size_t abl_k = 0;
  auto* abl_sweep_opt = abl->add_option("--sweep", abl_sweep, "anchors, toggles or all");
  auto* abl_seeds_opt = abl->add_option("--seeds", abl_seeds, "Training seeds");
  auto* abl_k_opt = abl->add_option("--k", abl_k, "Neighbors per keypoint");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitUsage;
  }

  const fs::path out(g.out);
  const bool seeded = given(g.seed_opt);
  try {
    const json file = load_config(g.config_path);
    fs::create_directories(out);
    const std::size_t threads = gca::resolve_threads(given(threads_opt) ? g.threads : file.value("threads", g.threads));

    if (gen->parsed()) {
      gca::ShapeDatasetConfig cfg;
      gca::apply_json(file, cfg);
      if (seeded) cfg.seed = g.seed;
      gca::TrainConfig unused;
      gen_flags.apply(cfg, unused);
      const gca::ShapeDataset data = gca::make_shape_dataset(cfg);
      const gca::DatasetManifest manifest = gca::write_shape_dataset(data, cfg, out);
      gca::RunReport report;
      report.experiment = "gen-shapes";
      report.config = {{"train_per_class", cfg.train_per_class}, {"test_per_class", cfg.test_per_class},
                       {"points_per_cloud", cfg.points_per_cloud}, {"jitter", cfg.jitter}, {"seed", cfg.seed}};
      report.results = {{"classes", data.classes}, {"train", data.train.size()}, {"test", data.test.size()},
                        {"files", manifest.entries.size()}};
      return finish(report, out);
    }

    if (ext->parsed()) {
      gca::ExtractConfig cfg;
      gca::apply_json(file, cfg);
      if (seeded) cfg.seed = g.seed;
      override_if(ext_arch_opt, cfg.arch, ext_arch);
      override_if(ext_anchor_opt, cfg.anchors, ext_anchors);
      override_if(ext_k_opt, cfg.k_neighbors, ext_k);
      override_if(ext_cls_opt, cfg.num_classes, ext_classes);
      if (ext_dump) cfg.dump_anchors = true;
      ext_toggles.apply(cfg.flags);
      const gca::PointCloud cloud =
          ext_format.empty() ? gca::load_cloud(ext_input) : gca::load_cloud(ext_input, gca::parse_cloud_format(ext_format));
      const gca::GcaNetwork net =
          ext_model.empty()
              ? gca::GcaNetwork::create(
                    gca::make_network_config(cfg.arch, cfg.num_classes, cfg.flags, cfg.anchors, cfg.k_neighbors), cfg.seed)
              : gca::load_network(ext_model);
      if (cloud.size() < net.config.min_points())
        throw UsageError("input has " + std::to_string(cloud.size()) + " points; network needs at least " +
                         std::to_string(net.config.min_points()));
      gca::RunReport report = gca::run_extract(cloud, net, cfg, out);
      if (!ext_model.empty()) report.config["model"] = ext_model;
      return finish(report, out);
    }

    if (inv->parsed()) {
      gca::InvarianceCheckConfig cfg;
      gca::apply_json(file, cfg);
      if (seeded) cfg.seed = g.seed;
      override_if(inv_trials_opt, cfg.trials, inv_trials);
      override_if(inv_points_opt, cfg.points, inv_points);
      override_if(inv_tol_opt, cfg.tolerance, inv_tol);
      if (inv_identity) cfg.identity_rotation = true;
      cfg.threads = threads;
      return finish(gca::run_invariance_check(cfg), out);
    }

    if (grad->parsed()) {
      gca::GradCheckConfig cfg;
      gca::apply_json(file, cfg);
      if (seeded) cfg.seed = g.seed;
      override_if(grad_inst_opt, cfg.instances, grad_instances);
      override_if(grad_points_opt, cfg.points, grad_points);
      override_if(grad_step_opt, cfg.step, grad_step);
      override_if(grad_tol_opt, cfg.tolerance, grad_tol);
      return finish(gca::run_grad_check(cfg), out);
    }

    if (bench->parsed()) {
      gca::LrfBenchConfig cfg;
      gca::apply_json(file, cfg);
      if (seeded && !given(bench_seeds_opt) && !file.contains("seeds")) cfg.seeds = {g.seed, g.seed + 1, g.seed + 2};
      override_if(bench_seeds_opt, cfg.seeds, bench_seeds);
      override_if(bench_mp_opt, cfg.model_points, bench_model_points);
      override_if(bench_pairs_opt, cfg.repeatability.n_pairs, bench_pairs);
      override_if(bench_k_opt, cfg.repeatability.k_neighbors, bench_k);
      override_if(bench_ratio_opt, cfg.repeatability.subsample_ratio, bench_ratio);
      override_if(bench_noise_opt, cfg.repeatability.noise_sigma_factor, bench_noise);
      override_if(bench_margin_opt, cfg.margin, bench_margin);
      std::vector<gca::LrfBenchInput> inputs;
      if (bench_inputs.empty()) {
        inputs = gca::default_lrf_bench_inputs(cfg.model_points, seeded ? g.seed : 0);
      } else {
        for (const std::string& path : bench_inputs) inputs.push_back({fs::path(path).stem().string(), gca::load_cloud(path)});
      }
      return finish(gca::run_lrf_bench(inputs, cfg, out), out);
    }

    if (proto->parsed()) {
      gca::ProtocolEvalConfig cfg;
      gca::apply_json(file, cfg);
      if (seeded) cfg.dataset.seed = cfg.train.seed = g.seed;
      proto_flags.apply(cfg.dataset, cfg.train);
      proto_toggles.apply(cfg.flags);
      override_if(proto_arch_opt, cfg.arch, proto_arch);
      override_if(proto_anchor_opt, cfg.anchors, proto_anchors);
      override_if(proto_k_opt, cfg.k_neighbors, proto_k);
      cfg.train.threads = threads;
      return finish(gca::run_protocol_eval(cfg, out), out);
    }

    if (abl->parsed()) {
      gca::AblationConfig cfg;
      gca::apply_json(file, cfg);
      if (seeded) {
        cfg.dataset.seed = g.seed;
        if (!given(abl_seeds_opt) && !file.contains("seeds")) cfg.seeds = {g.seed, g.seed + 1, g.seed + 2};
      }
      abl_flags.apply(cfg.dataset, cfg.train);
      override_if(abl_sweep_opt, cfg.sweep, abl_sweep);
      override_if(abl_seeds_opt, cfg.seeds, abl_seeds);
      override_if(abl_k_opt, cfg.k_neighbors, abl_k);
      cfg.train.threads = threads;
      return finish(gca::run_ablation(cfg, out), out);
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const gca::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "error: bad config value: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
