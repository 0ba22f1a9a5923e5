// segrob: dataset generation, adversarial training, and robustness
// evaluation of toy segmentation models from one command-line tool.

#include "segrob/attack.hpp"
#include "segrob/data.hpp"
#include "segrob/losses.hpp"
#include "segrob/metrics.hpp"
#include "segrob/model.hpp"
#include "segrob/parallel.hpp"
#include "segrob/report.hpp"
#include "segrob/rng.hpp"
#include "segrob/sea.hpp"
#include "segrob/softmax.hpp"
#include "segrob/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace segrob;

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

// ---------------------------------------------------------------------------
// strict config handling: one JSON file, unknown keys rejected, flags override

const std::map<std::string, std::set<std::string>> kAllowedKeys = {
    {"", {"dataset", "model", "backbone", "out", "source", "split", "eps", "seed", "workers",
          "losses", "attack", "train", "gen", "report"}},
    {"attack", {"iterations", "loss", "schedule", "restarts", "step_scale", "dump_images"}},
    {"train", {"epochs", "steps", "eps", "step_size", "lr", "batch", "init", "probe_images",
               "patch", "patches_per_image", "pretrain_epochs"}},
    {"gen", {"train_images", "val_images", "height", "width", "classes"}},
    {"report", {"formats", "masks"}},
};

void validate_keys(const json& j, const std::string& block) {
  const auto it = kAllowedKeys.find(block);
  check(it != kAllowedKeys.end(), "config: unknown block '" + block + "'");
  for (const auto& [key, value] : j.items()) {
    if (!it->second.count(key))
      throw std::invalid_argument("config: unknown key '" + (block.empty() ? key : block + "." + key) +
                                  "'");
    if (value.is_object()) validate_keys(value, key);
  }
}

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  json j = json::parse(in);
  check(j.is_object(), "config: top level must be an object");
  validate_keys(j, "");
  return j;
}

double parse_eps_token(const std::string& token) {
  const auto slash = token.find('/');
  double value = 0.0;
  if (slash == std::string::npos) {
    value = std::stod(token);
  } else {
    value = std::stod(token.substr(0, slash)) / std::stod(token.substr(slash + 1));
  }
  check(value >= 0.0 && value <= 0.5, "epsilon out of range [0, 0.5]: " + token);
  return value;
}

std::vector<double> parse_eps_list(const std::string& list) {
  std::vector<double> eps;
  std::stringstream ss(list);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) eps.push_back(parse_eps_token(token));
  }
  check(!eps.empty(), "empty epsilon list");
  return eps;
}

std::vector<LossKind> parse_loss_list(const std::string& list) {
  std::vector<LossKind> losses;
  std::stringstream ss(list);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) losses.push_back(loss_kind_from_string(token));
  }
  check(!losses.empty(), "empty loss list");
  return losses;
}

/// Everything a command needs, resolved from config file + flag overrides.
struct Run {
  json cfg;

  std::string str(const std::string& key, const std::string& fallback = "") const {
    return cfg.value(key, fallback);
  }
  std::string require_str(const std::string& key) const {
    check(cfg.contains(key) && cfg[key].is_string() && !cfg[key].get<std::string>().empty(),
          "config: missing required '" + key + "'");
    return cfg[key].get<std::string>();
  }
  const json& block(const std::string& name) const {
    static const json empty = json::object();
    return cfg.contains(name) ? cfg.at(name) : empty;
  }
  std::uint64_t seed() const { return cfg.value("seed", std::uint64_t(0)); }
  int workers() const {
    const int hw = int(std::thread::hardware_concurrency());
    return cfg.value("workers", hw > 0 ? hw : 1);
  }
  std::vector<double> eps_list() const {
    check(cfg.contains("eps"), "config: missing epsilon list (--eps)");
    std::vector<double> eps = cfg.at("eps").get<std::vector<double>>();
    for (double e : eps) check(e >= 0.0 && e <= 0.5, "config: epsilon out of range [0, 0.5]");
    return eps;
  }

  AttackConfig attack_config() const {
    const json& a = block("attack");
    AttackConfig c;
    c.iterations = a.value("iterations", 300);
    c.loss = loss_kind_from_string(a.value("loss", std::string("mce")));
    c.schedule = schedule_from_string(a.value("schedule", std::string("red-eps")));
    c.restarts = a.value("restarts", 1);
    c.step_scale = a.value("step_scale", 1.0);
    c.seed = seed();
    return c;
  }

  TrainConfig train_config() const {
    const json& t = block("train");
    TrainConfig c;
    c.epochs = t.value("epochs", 16);
    c.attack_steps = t.value("steps", 2);
    c.train_epsilon = t.value("eps", 8.0 / 255.0);
    c.pgd_step = t.value("step_size", 2.0 / 255.0);
    c.learning_rate = t.value("lr", 0.15);
    c.batch_size = t.value("batch", 8);
    c.init_mode = t.value("init", std::string("clean"));
    c.probe_images = t.value("probe_images", 8);
    c.seed = seed();
    return c;
  }

  /// Echo of the fully resolved configuration embedded in every report.
  json echo(const std::string& command) const {
    json e = cfg;
    e["command"] = command;
    e["seed"] = seed();
    e["workers"] = workers();
    return e;
  }
};

struct LoadedData {
  Dataset train;
  Dataset eval;
  ClassWeights weights;  // 1/N_s from the train split
};

LoadedData load_data(const Run& run) {
  const std::string root = run.require_str("dataset");
  LoadedData d;
  d.train = load_dataset((fs::path(root) / "train").string());
  const std::string split = run.str("split", "val");
  d.eval = split == "train" ? d.train : load_dataset((fs::path(root) / split).string());
  const DatasetManifest train_manifest = load_manifest((fs::path(root) / "train").string());
  d.weights = ClassWeights::from_pixel_counts(train_manifest.class_stats.pixels_per_class.cast<double>());
  return d;
}

// ---------------------------------------------------------------------------
// commands

int cmd_gen(const Run& run) {
  const std::string out = run.require_str("out");
  const json& g = run.block("gen");
  const int train_images = g.value("train_images", 200);
  const int val_images = g.value("val_images", 50);
  const int height = g.value("height", 32);
  const int width = g.value("width", 32);
  const int classes = g.value("classes", 6);

  const std::uint64_t train_seed = derive_seed(run.seed(), "dataset-train");
  const std::uint64_t val_seed = derive_seed(run.seed(), "dataset-val");
  const Dataset train = generate_dataset(train_seed, train_images, height, width, classes);
  const Dataset val = generate_dataset(val_seed, val_images, height, width, classes);
  write_dataset(train, train_seed, out, "train");
  write_dataset(val, val_seed, out, "val");
  write_json_file(run.echo("gen"), (fs::path(out) / "gen_config.json").string());
  std::cout << "wrote " << train_images << " train / " << val_images << " val images under " << out
            << "\n";
  return 0;
}

int cmd_train(const Run& run) {
  const std::string out = run.require_str("out");
  fs::create_directories(out);
  const LoadedData data = load_data(run);
  const TrainConfig config = run.train_config();

  BackboneCheckpoint backbone;
  const BackboneCheckpoint* backbone_ptr = nullptr;
  if (config.init_mode == "robust") {
    backbone = load_backbone(run.require_str("backbone"));
    backbone_ptr = &backbone;
  }

  const ArchSpec spec = ArchSpec::small_conv(data.train.num_classes);
  const double t0 = now_seconds();
  const TrainResult result = train(spec, config, data.train, &data.eval, backbone_ptr, run.workers());
  const double elapsed = now_seconds() - t0;

  save_checkpoint(result.params, (fs::path(out) / "checkpoint.json").string());
  std::string log;
  for (const auto& rec : result.log) {
    json line{{"epoch", rec.epoch},
              {"lr", rec.learning_rate},
              {"clean_loss", rec.clean_loss},
              {"adv_loss", rec.adv_loss},
              {"probe_robust_acc", rec.probe_robust_accuracy}};
    log += line.dump() + "\n";
  }
  write_text_file((fs::path(out) / "train_log.jsonl").string(), log);
  write_json_file(run.echo("train"), (fs::path(out) / "train_config.json").string());
  write_json_file(json{{"wall_clock_sec", elapsed}}, (fs::path(out) / "train_timing.json").string());
  std::cout << "trained " << config.epochs << " epochs (" << config.init_mode << " init) -> " << out
            << "\n";
  return 0;
}

int cmd_pretrain(const Run& run) {
  const std::string out = run.require_str("out");
  fs::create_directories(out);
  const LoadedData data = load_data(run);
  const json& t = run.block("train");
  TrainConfig config = run.train_config();
  // patch classification wants gentler steps and a stronger inner attack
  config.learning_rate = t.value("lr", 0.03);
  config.attack_steps = t.value("steps", 5);
  config.train_epsilon = t.value("eps", 4.0 / 255.0);

  const int patch = t.value("patch", 16);
  const int per_image = t.value("patches_per_image", 5);
  config.epochs = t.value("pretrain_epochs", config.epochs);

  const ArchSpec spec = ArchSpec::small_conv(data.train.num_classes);
  const PatchDataset patches =
      make_patch_dataset(data.train, patch, per_image, derive_seed(config.seed, "patch-data"));
  const PretrainResult result = pretrain_robust_backbone(spec, patches, config, run.workers());
  save_backbone(result.checkpoint, (fs::path(out) / "backbone.json").string());
  write_json_file(json{{"provenance", result.checkpoint.provenance},
                       {"pretrain_epsilon", result.checkpoint.pretrain_epsilon},
                       {"classifier_clean_acc", result.stats.clean_accuracy},
                       {"classifier_robust_acc", result.stats.robust_accuracy},
                       {"config", run.echo("pretrain")}},
                  (fs::path(out) / "pretrain_report.json").string());
  std::cout << "pretrained backbone (" << result.checkpoint.provenance
            << ", robust acc " << format_metric(result.stats.robust_accuracy) << ") -> " << out << "\n";
  return 0;
}

int cmd_attack(const Run& run) {
  const std::string out = run.require_str("out");
  fs::create_directories(out);
  const LoadedData data = load_data(run);
  const ModelParams model = load_checkpoint(run.require_str("model"));
  const bool dump = run.block("attack").value("dump_images", false);

  std::string csv = metrics_csv_header(model.spec.num_classes);
  {
    const ConfusionAccumulator clean = clean_eval(model, data.eval, run.workers());
    csv += metrics_csv_row(0.0, "clean", clean);
  }

  json manifest{{"config", run.echo("attack")}, {"records", json::array()}};
  const double t0 = now_seconds();
  for (const double eps : run.eps_list()) {
    AttackConfig config = run.attack_config();
    config.epsilon = eps;
    const DatasetAttackResult result =
        attack_dataset(model, config, data.eval, &data.weights, run.workers());
    csv += metrics_csv_row(eps, loss_kind_name(config.loss), result.confusion);
    for (const auto& rec : attack_records_json(result.per_image, eps, loss_kind_name(config.loss)))
      manifest["records"].push_back(rec);
    if (dump) {
      const fs::path adv_dir = fs::path(out) / ("adv_" + format_metric(eps));
      fs::create_directories(adv_dir);
      for (const auto& r : result.per_image) {
        save_image_f64(r.adversarial, (adv_dir / (r.image_id + ".f64")).string());
        save_image_ppm(r.adversarial, (adv_dir / (r.image_id + ".ppm")).string());
      }
    }
  }
  manifest["wall_clock_sec"] = now_seconds() - t0;
  write_json_file(manifest, (fs::path(out) / "attack_manifest.json").string());
  write_text_file((fs::path(out) / "metrics.csv").string(), csv);
  std::cout << "attack metrics -> " << out << "/metrics.csv\n";
  return 0;
}

int cmd_sea(const Run& run) {
  const std::string out = run.require_str("out");
  fs::create_directories(out);
  const LoadedData data = load_data(run);
  const ModelParams model = load_checkpoint(run.require_str("model"));
  const int iterations = run.block("attack").value("iterations", 300);
  std::vector<LossKind> components = {LossKind::MaskedCe, LossKind::MaskedCeBalanced, LossKind::Js};
  if (run.cfg.contains("losses")) components = parse_loss_list(run.cfg.at("losses").get<std::string>());

  const ConfusionAccumulator clean = clean_eval(model, data.eval, run.workers());
  std::vector<SeaEpsilonRow> rows;
  const double t0 = now_seconds();
  for (const double eps : run.eps_list()) {
    const EnsembleResult ensemble = sea_attack(model, data.eval, eps, iterations, run.seed(),
                                               data.weights, run.workers(), components);
    rows.push_back(make_sea_row(eps, clean, ensemble));
  }
  write_sea_report(out, run.echo("sea"), rows);
  write_json_file(json{{"wall_clock_sec", now_seconds() - t0}},
                  (fs::path(out) / "sea_timing.json").string());
  std::cout << "SEA report -> " << out << "/sea_report.{json,csv}\n";
  return 0;
}

int cmd_ablate(const Run& run) {
  const std::string out = run.require_str("out");
  fs::create_directories(out);
  const LoadedData data = load_data(run);
  const ModelParams model = load_checkpoint(run.require_str("model"));
  const int iterations = run.block("attack").value("iterations", 300);
  std::vector<LossKind> losses = {LossKind::MaskedCe, LossKind::MaskedCeBalanced, LossKind::Js};
  if (run.cfg.contains("losses")) losses = parse_loss_list(run.cfg.at("losses").get<std::string>());

  struct Mode {
    const char* name;
    Schedule schedule;
    int restarts;
  };
  const Mode modes[3] = {{"const-eps", Schedule::ConstEps, 1},
                         {"const-eps-x3", Schedule::ConstEps, 3},
                         {"red-eps", Schedule::RedEps, 1}};

  json report{{"config", run.echo("ablate")}, {"rows", json::array()}};
  std::string csv = "epsilon,loss,mode,aAcc,mIoU\n";
  for (const double eps : run.eps_list()) {
    for (const Mode& mode : modes) {
      std::vector<std::vector<ImageCounts>> per_loss_counts;
      for (const LossKind loss : losses) {
        AttackConfig config = run.attack_config();
        config.epsilon = eps;
        config.iterations = iterations;
        config.loss = loss;
        config.schedule = mode.schedule;
        config.restarts = mode.restarts;
        config.seed = derive_seed(run.seed(), std::string("ablate-") + mode.name);
        const DatasetAttackResult result =
            attack_dataset(model, config, data.eval, &data.weights, run.workers());
        csv += format_metric(eps) + "," + loss_kind_name(loss) + "," + mode.name + "," +
               format_metric(pixel_accuracy(result.confusion)) + "," +
               format_metric(miou(result.confusion)) + "\n";
        report["rows"].push_back(json{{"epsilon", eps},
                                      {"loss", loss_kind_name(loss)},
                                      {"mode", mode.name},
                                      {"aAcc", pixel_accuracy(result.confusion)},
                                      {"mIoU", miou(result.confusion)}});
        std::vector<ImageCounts> counts;
        for (const auto& r : result.per_image) counts.push_back(r.counts);
        per_loss_counts.push_back(std::move(counts));
      }
      const WorstCaseAccuracy worst = worst_case_accuracy(per_loss_counts);
      const WorstCaseMiou worst_miou = greedy_worst_case_miou(
          per_loss_counts, model.spec.num_classes, derive_seed(run.seed(), "ablate-shuffle"));
      csv += format_metric(eps) + ",worst-case," + mode.name + "," +
             format_metric(worst.accuracy) + "," + format_metric(worst_miou.miou) + "\n";
      report["rows"].push_back(json{{"epsilon", eps},
                                    {"loss", "worst-case"},
                                    {"mode", mode.name},
                                    {"aAcc", worst.accuracy},
                                    {"mIoU", worst_miou.miou}});
    }
  }
  write_json_file(report, (fs::path(out) / "ablate_report.json").string());
  write_text_file((fs::path(out) / "ablate_report.csv").string(), csv);
  std::cout << "ablation report -> " << out << "/ablate_report.{json,csv}\n";
  return 0;
}

int cmd_transfer(const Run& run) {
  const std::string out = run.require_str("out");
  fs::create_directories(out);
  const LoadedData data = load_data(run);
  const ModelParams target = load_checkpoint(run.require_str("model"));
  const std::string source = run.require_str("source");

  std::string csv = metrics_csv_header(target.spec.num_classes);
  json report{{"config", run.echo("transfer")}, {"rows", json::array()}};
  for (const double eps : run.eps_list()) {
    const fs::path adv_dir = fs::path(source) / ("adv_" + format_metric(eps));
    check(fs::exists(adv_dir), "transfer: missing adversarial dump " + adv_dir.string() +
                                   " (run attack with dump_images)");
    std::vector<AttackResult> sources(data.eval.size());
    for (std::size_t i = 0; i < data.eval.size(); ++i) {
      sources[i].image_id = data.eval.ids[i];
      sources[i].adversarial = load_image_f64((adv_dir / (data.eval.ids[i] + ".f64")).string());
      check(is_feasible(data.eval.images[i], sources[i].adversarial, eps, 1e-12),
            "transfer: source perturbation infeasible for image " + data.eval.ids[i]);
    }
    const ConfusionAccumulator acc = transfer_eval(sources, target, data.eval, run.workers());
    csv += metrics_csv_row(eps, "transfer", acc);
    report["rows"].push_back(json{{"epsilon", eps}, {"metrics", accumulator_to_json(acc)}});
  }
  write_json_file(report, (fs::path(out) / "transfer_report.json").string());
  write_text_file((fs::path(out) / "transfer_report.csv").string(), csv);
  std::cout << "transfer report -> " << out << "/transfer_report.{json,csv}\n";
  return 0;
}

int cmd_report(const Run& run) {
  const std::string out = run.require_str("out");
  fs::create_directories(out);
  const LoadedData data = load_data(run);
  const ModelParams model = load_checkpoint(run.require_str("model"));
  const bool masks = run.block("report").value("masks", true);

  std::string csv = metrics_csv_header(model.spec.num_classes);
  const ConfusionAccumulator clean = clean_eval(model, data.eval, run.workers());
  csv += metrics_csv_row(0.0, "clean", clean);

  if (masks) {
    const fs::path mask_dir = fs::path(out) / "masks_pred";
    fs::create_directories(mask_dir);
    for (std::size_t i = 0; i < data.eval.size(); ++i) {
      const PredictionMap pred = predict(forward(model, data.eval.images[i]));
      LabelMap as_labels(pred.height, pred.width, pred.labels);
      save_mask_visualization(as_labels, model.spec.num_classes,
                              (mask_dir / (data.eval.ids[i] + ".ppm")).string());
    }
  }

  if (run.cfg.contains("source")) {
    const std::string source = run.cfg.at("source").get<std::string>();
    for (const double eps : run.eps_list()) {
      const fs::path adv_dir = fs::path(source) / ("adv_" + format_metric(eps));
      check(fs::exists(adv_dir), "report: missing adversarial dump " + adv_dir.string());
      ConfusionAccumulator acc(model.spec.num_classes);
      const fs::path mask_dir = fs::path(out) / ("masks_adv_" + format_metric(eps));
      if (masks) fs::create_directories(mask_dir);
      for (std::size_t i = 0; i < data.eval.size(); ++i) {
        const ImageTensor adv = load_image_f64((adv_dir / (data.eval.ids[i] + ".f64")).string());
        const PredictionMap pred = predict(forward(model, adv));
        accumulate(acc, pred, data.eval.labels[i], data.eval.ids[i]);
        if (masks) {
          LabelMap as_labels(pred.height, pred.width, pred.labels);
          save_mask_visualization(as_labels, model.spec.num_classes,
                                  (mask_dir / (data.eval.ids[i] + ".ppm")).string());
        }
      }
      csv += metrics_csv_row(eps, "adv", acc);
    }
  }
  write_text_file((fs::path(out) / "metrics.csv").string(), csv);
  write_json_file(run.echo("report"), (fs::path(out) / "report_config.json").string());
  std::cout << "report -> " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robustness evaluation and adversarial training for toy segmentation models"};
  app.require_subcommand(1);

  std::string config_path, dataset, model, backbone, out, source, split, eps_list, loss, schedule,
      init, losses;
  std::uint64_t seed = 0;
  int iters = 0, steps = 0, workers = 0, restarts = 0, epochs = 0;
  bool dump_images = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; flags override it");
    cmd->add_option("--dataset", dataset, "dataset root directory (train/ + val/)");
    cmd->add_option("--model", model, "model checkpoint path");
    cmd->add_option("--backbone", backbone, "backbone checkpoint path");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--source", source, "source directory (transfer/report)");
    cmd->add_option("--split", split, "evaluation split (default val)");
    cmd->add_option("--eps", eps_list, "comma list of radii, decimals or fractions like 8/255");
    cmd->add_option("--iters", iters, "attack iteration budget (default 300)");
    cmd->add_option("--loss", loss, "ce|js|mce|mce-bal|segpgd|cospgd");
    cmd->add_option("--losses", losses, "comma list restricting the ensemble");
    cmd->add_option("--schedule", schedule, "red-eps|const-eps");
    cmd->add_option("--restarts", restarts, "const-eps restarts");
    cmd->add_option("--steps", steps, "PGD steps for training");
    cmd->add_option("--epochs", epochs, "training epochs");
    cmd->add_option("--init", init, "clean|robust");
    cmd->add_option("--seed", seed, "root seed");
    cmd->add_option("--workers", workers, "worker threads (1 = bit-reproducible)");
    cmd->add_flag("--dump-images", dump_images, "dump adversarial images");
    return cmd;
  };

  CLI::App* gen = add_common(app.add_subcommand("gen", "generate a synthetic dataset"));
  CLI::App* train_cmd = add_common(app.add_subcommand("train", "adversarial training (AT/PIR-AT)"));
  CLI::App* pretrain = add_common(
      app.add_subcommand("pretrain", "robust backbone pretraining on patch classification"));
  CLI::App* attack = add_common(app.add_subcommand("attack", "single attack over a dataset"));
  CLI::App* sea = add_common(app.add_subcommand("sea", "ensemble attack with worst-case metrics"));
  CLI::App* ablate = add_common(app.add_subcommand("ablate", "const-eps vs red-eps comparison"));
  CLI::App* transfer = add_common(app.add_subcommand("transfer", "evaluate transferred attacks"));
  CLI::App* report = add_common(app.add_subcommand("report", "render metrics and mask images"));

  CLI11_PARSE(app, argc, argv);

  try {
    Run run;
    run.cfg = load_config(config_path);

    auto set_if = [&](const char* key, const auto& value, bool given) {
      if (given) run.cfg[key] = value;
    };
    CLI::App* cmd = app.get_subcommands().front();
    set_if("dataset", dataset, cmd->count("--dataset") > 0);
    set_if("model", model, cmd->count("--model") > 0);
    set_if("backbone", backbone, cmd->count("--backbone") > 0);
    set_if("out", out, cmd->count("--out") > 0);
    set_if("source", source, cmd->count("--source") > 0);
    set_if("split", split, cmd->count("--split") > 0);
    set_if("seed", seed, cmd->count("--seed") > 0);
    set_if("workers", workers, cmd->count("--workers") > 0);
    set_if("losses", losses, cmd->count("--losses") > 0);
    if (cmd->count("--eps")) run.cfg["eps"] = parse_eps_list(eps_list);
    if (cmd->count("--iters")) run.cfg["attack"]["iterations"] = iters;
    if (cmd->count("--loss")) run.cfg["attack"]["loss"] = loss;
    if (cmd->count("--schedule")) run.cfg["attack"]["schedule"] = schedule;
    if (cmd->count("--restarts")) run.cfg["attack"]["restarts"] = restarts;
    if (cmd->count("--dump-images")) run.cfg["attack"]["dump_images"] = dump_images;
    if (cmd->count("--steps")) run.cfg["train"]["steps"] = steps;
    if (cmd->count("--epochs")) run.cfg["train"]["epochs"] = epochs;
    if (cmd->count("--init")) run.cfg["train"]["init"] = init;
    validate_keys(run.cfg, "");

    if (cmd == gen) return cmd_gen(run);
    if (cmd == train_cmd) return cmd_train(run);
    if (cmd == pretrain) return cmd_pretrain(run);
    if (cmd == attack) return cmd_attack(run);
    if (cmd == sea) return cmd_sea(run);
    if (cmd == ablate) return cmd_ablate(run);
    if (cmd == transfer) return cmd_transfer(run);
    if (cmd == report) return cmd_report(run);
    throw std::logic_error("unhandled subcommand");
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}}.dump() << "\n";
    return 1;
  }
}
