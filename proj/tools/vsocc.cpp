// Command-line front end: dataset generation, training, evaluation, ablation
// sweeps, and the gradient verification suite. Exit codes: 0 success,
// 1 verification failure, 2 usage/validation error, 3 numeric divergence.

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "vsocc/config.hpp"
#include "vsocc/gradcheck.hpp"
#include "vsocc/io.hpp"
#include "vsocc/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace vsocc;

namespace {

std::string digest_of(const void* data, std::size_t n) {
  return "fnv1a64:" + digest_hex(fnv1a64(data, n));
}

// Collects everything a command writes under --out, then drops a
// manifest.json beside it: inputs, seeds, artifact digests. No timestamps,
// so reruns with identical flags produce identical bytes.
struct ArtifactLog {
  fs::path dir;
  ordered_json inputs = ordered_json::object();
  std::vector<std::uint64_t> seeds;
  ordered_json artifacts = ordered_json::array();

  explicit ArtifactLog(const std::string& out) : dir(out) { fs::create_directories(dir); }

  void note_input(const std::string& key, const std::string& path) {
    auto bytes = read_file_bytes(path);
    inputs[key] = {{"path", path}, {"digest", digest_of(bytes.data(), bytes.size())}};
  }

  void add_text(const std::string& name, const std::string& text) {
    write_file_text((dir / name).string(), text);
    artifacts.push_back({{"path", name},
                         {"bytes", text.size()},
                         {"digest", digest_of(text.data(), text.size())}});
  }

  // For files already written into dir by the binary-format helpers.
  void add_file(const std::string& name) {
    auto bytes = read_file_bytes((dir / name).string());
    artifacts.push_back({{"path", name},
                         {"bytes", bytes.size()},
                         {"digest", digest_of(bytes.data(), bytes.size())}});
  }

  void write_manifest(const std::string& command,
                      ordered_json extra = ordered_json::object()) {
    ordered_json m;
    m["command"] = command;
    m["inputs"] = inputs;
    m["seeds"] = seeds;
    for (auto& [k, v] : extra.items()) m[k] = v;
    m["artifacts"] = artifacts;
    write_file_text((dir / "manifest.json").string(), m.dump(2) + "\n");
  }
};

std::vector<std::string> class_names(const SceneConfig& scene, i64 K) {
  std::vector<std::string> names(static_cast<std::size_t>(K));
  if (K > 0) names[0] = "empty";
  for (const ClassHeightProfile& p : scene.classes) {
    if (p.class_id >= 0 && p.class_id < K) names[static_cast<std::size_t>(p.class_id)] = p.name;
  }
  return names;
}

void print_report(const MetricsReport& r, const std::vector<std::string>& names) {
  for (i64 c = 1; c < r.num_classes; ++c) {
    const std::size_t ci = static_cast<std::size_t>(c);
    const std::string label =
        ci < names.size() && !names[ci].empty() ? names[ci] : "class_" + std::to_string(c);
    const Real iou = r.per_class_iou[ci - 1];
    if (std::isnan(iou)) {
      std::printf("  %-12s IoU    -   (absent)\n", label.c_str());
    } else {
      std::printf("  %-12s IoU %.4f\n", label.c_str(), iou);
    }
  }
  std::printf("  mIoU %.4f   geometric IoU %.4f\n", r.miou, r.geo_iou);
}

int cmd_gen_data(const std::string& config_path, const std::string& out, i64 count,
                 std::uint64_t seed) {
  if (count < 1) throw ConfigError("--count must be >= 1");
  ExperimentConfig cfg = config_from_file(config_path);
  ArtifactLog log(out);
  log.note_input("config", config_path);
  ordered_json samples = ordered_json::array();
  for (i64 i = 0; i < count; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    SceneSample sample = generate(cfg.scene, s);
    char base[32];
    std::snprintf(base, sizeof base, "sample_%04lld", static_cast<long long>(i));
    const std::string cam = std::string(base) + ".cam.ten";
    const std::string lidar = std::string(base) + ".lidar.ten";
    const std::string lab = std::string(base) + ".lab";
    write_tensor((log.dir / cam).string(), sample.feat_cam);
    write_tensor((log.dir / lidar).string(), sample.feat_lidar);
    write_labels((log.dir / lab).string(), sample.gt);
    log.add_file(cam);
    log.add_file(lidar);
    log.add_file(lab);
    samples.push_back({{"cam", cam}, {"lidar", lidar}, {"labels", lab}, {"seed", s}});
    log.seeds.push_back(s);
  }
  log.add_text("config.txt", config_to_text(cfg));
  log.write_manifest("gen-data", {{"count", count}, {"samples", samples}});
  std::printf("wrote %lld samples to %s\n", static_cast<long long>(count), out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out) {
  ExperimentConfig cfg = config_from_file(config_path);
  const std::string effective = config_to_text(cfg);
  ArtifactLog log(out);
  log.note_input("config", config_path);

  auto [train_data, val_data] =
      make_datasets(cfg.scene, cfg.train.n_train, cfg.train.n_val, cfg.train.data_seed);
  Model model = Model::build(cfg.model, cfg.scene);
  TrainResult r = train(model, cfg.train, train_data, val_data, cfg.loss);

  write_checkpoint((log.dir / "model.ckpt").string(), snapshot(model.params, effective));
  log.add_file("model.ckpt");
  log.add_text("config.txt", effective);

  std::string steps_csv = "step,loss\n";
  char buf[128];
  for (std::size_t i = 0; i < r.loss_history.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, r.loss_history[i]);
    steps_csv += buf;
  }
  log.add_text("train_log.csv", steps_csv);

  std::string trace_csv = "step,val_loss,miou,geo_iou\n";
  for (const auto& [step, ev] : r.trace) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g\n", static_cast<long long>(step),
                  ev.mean_loss, ev.report.miou, ev.report.geo_iou);
    trace_csv += buf;
  }
  log.add_text("val_trace.csv", trace_csv);

  const EvalResult& final_eval = r.trace.back().second;
  const auto names = class_names(cfg.scene, cfg.model.classes);
  log.add_text("metrics.csv", metrics_csv(final_eval.report, names));
  log.add_text("metrics.json", metrics_json(final_eval.report));

  log.seeds = {cfg.model.seed, cfg.train.data_seed};
  log.write_manifest("train", {{"steps", cfg.train.steps}});

  std::printf("trained %lld steps: loss %.5f -> %.5f\n",
              static_cast<long long>(cfg.train.steps), r.loss_initial, r.loss_final);
  print_report(final_eval.report, names);
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& out) {
  Checkpoint ckpt = read_checkpoint(ckpt_path);
  ExperimentConfig cfg = config_from_text(ckpt.config_text);
  Model model = Model::build(cfg.model, cfg.scene);
  load_into(model.params, ckpt);

  const std::string manifest_path = (fs::path(data_dir) / "manifest.json").string();
  nlohmann::json m = nlohmann::json::parse(read_file_text(manifest_path));
  if (!m.contains("samples") || !m["samples"].is_array() || m["samples"].empty()) {
    throw ValidationError(manifest_path + ": no samples listed");
  }
  std::vector<SceneSample> samples;
  for (const auto& e : m["samples"]) {
    SceneSample s;
    s.feat_cam = read_tensor((fs::path(data_dir) / e.at("cam").get<std::string>()).string());
    s.feat_lidar =
        read_tensor((fs::path(data_dir) / e.at("lidar").get<std::string>()).string());
    s.gt = read_labels((fs::path(data_dir) / e.at("labels").get<std::string>()).string());
    s.seed = e.value("seed", std::uint64_t{0});
    samples.push_back(std::move(s));
  }

  EvalResult res = evaluate(model, samples, cfg.loss);
  const auto names = class_names(cfg.scene, cfg.model.classes);
  std::printf("evaluated %zu samples, mean loss %.5f\n", samples.size(), res.mean_loss);
  print_report(res.report, names);

  if (!out.empty()) {
    ArtifactLog log(out);
    log.note_input("checkpoint", ckpt_path);
    log.note_input("data_manifest", manifest_path);
    for (const SceneSample& s : samples) log.seeds.push_back(s.seed);
    log.add_text("metrics.csv", metrics_csv(res.report, names));
    log.add_text("metrics.json", metrics_json(res.report));
    log.write_manifest("eval", {{"samples", samples.size()}});
  }
  return 0;
}

int cmd_ablate(const std::string& suite, const std::string& config_path,
               const std::string& out, i64 jobs) {
  ExperimentConfig cfg = config_from_file(config_path);
  ArtifactLog log(out);
  log.note_input("config", config_path);

  AblateResult r = ablate(suite, cfg.model, cfg.train, cfg.scene, cfg.loss, jobs);
  log.add_text("ablate.csv", ablate_csv(r));
  log.add_text("config.txt", config_to_text(cfg));
  log.seeds = cfg.train.seeds;

  ordered_json means = ordered_json::object();
  for (const std::string& v : r.variants) means[v] = r.mean_miou(v);
  log.write_manifest("ablate", {{"suite", suite}, {"mean_miou", means}});

  std::printf("suite %s over %zu seeds:\n", suite.c_str(), cfg.train.seeds.size());
  for (const std::string& v : r.variants) {
    std::printf("  %-16s mean mIoU %.4f\n", v.c_str(), r.mean_miou(v));
  }
  return 0;
}

int cmd_gradcheck(const std::string& module, const std::string& corrupt) {
  GradCheckOptions opt;
  opt.module = module;
  opt.corrupt = corrupt;
  std::vector<GradCheckResult> results = run_gradchecks(opt);
  std::fputs(gradcheck_report(results).c_str(), stdout);
  if (!all_passed(results)) {
    std::fputs("gradient verification failed\n", stderr);
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"voxel semantic occupancy: height-sliced fusion toolkit"};
  app.require_subcommand(0, 1);

  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults,
               "print the built-in default config and exit");

  std::string config_path, out_dir, ckpt_path, data_dir, suite, module, corrupt;
  i64 count = 0, jobs = 1;
  std::uint64_t seed = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", config_path, "experiment config file")->required();
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--count", count, "number of samples")->required();
  gen->add_option("--seed", seed, "seed of the first sample")->capture_default_str();

  CLI::App* tr = app.add_subcommand("train", "train a model from config");
  tr->add_option("--config", config_path, "experiment config file")->required();
  tr->add_option("--out", out_dir, "output directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on generated data");
  ev->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "dataset directory (from gen-data)")->required();
  ev->add_option("--out", out_dir, "optional output directory for metrics");

  CLI::App* ab = app.add_subcommand("ablate", "run an ablation suite");
  ab->add_option("--suite", suite, "slices, strategy, attention, or fusion")->required();
  ab->add_option("--config", config_path, "experiment config file")->required();
  ab->add_option("--out", out_dir, "output directory")->required();
  ab->add_option("--jobs", jobs, "parallel training runs")->capture_default_str()
      ->check(CLI::PositiveNumber);

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc->add_option("--module", module, "restrict to core, attention, vsf, losses, or pipeline");
  gc->add_option("--corrupt", corrupt, "fault injection: perturb this case's gradient")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (print_defaults) {
      std::fputs(config_to_text(default_config()).c_str(), stdout);
      return 0;
    }
    if (gen->parsed()) return cmd_gen_data(config_path, out_dir, count, seed);
    if (tr->parsed()) return cmd_train(config_path, out_dir);
    if (ev->parsed()) return cmd_eval(ckpt_path, data_dir, out_dir);
    if (ab->parsed()) return cmd_ablate(suite, config_path, out_dir, jobs);
    if (gc->parsed()) return cmd_gradcheck(module, corrupt);
    std::fputs(app.help().c_str(), stderr);
    return 2;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "error: %s (step %lld)\n", e.what(),
                 static_cast<long long>(e.step()));
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
