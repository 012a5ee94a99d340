// seqmri: data generation, training, evaluation, comparison, gradient
// checking, and ablation grids for the sequential k-space sampling framework.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "seqmri/baselines.hpp"
#include "seqmri/checks.hpp"
#include "seqmri/phantom.hpp"
#include "seqmri/pipeline.hpp"

using json = nlohmann::json;
using namespace seqmri;

namespace {

using Scalar = float;  // training/evaluation precision; gradcheck uses double

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  TrainConfig train;
  PhantomSpec phantom;
  int count = 100;  // datagen image count
};

void reject_unknown(const json& j, const std::vector<std::string>& allowed,
                    const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw IoError("config: unknown key '" + it.key() + "' in " + where);
  }
}

RunConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw IoError("config: parse failure in " + path + ": " + e.what());
  }
  reject_unknown(j,
                 {"mode", "extent", "accel", "steps", "epochs", "lr", "lr_half_every",
                  "batch", "seed", "ste_slope", "recon_base", "sampler_base",
                  "mlp_hidden", "count", "phantom"},
                 "top level");
  RunConfig cfg;
  if (j.contains("mode")) {
    const std::string m = j["mode"];
    if (m == "line")
      cfg.train.mode = MaskMode::kLine;
    else if (m == "point")
      cfg.train.mode = MaskMode::kPoint;
    else
      throw IoError("config: mode must be 'line' or 'point'");
  }
  if (j.contains("extent")) cfg.train.extent = j["extent"];
  if (j.contains("accel")) cfg.train.accel = j["accel"];
  if (j.contains("steps")) cfg.train.steps = j["steps"];
  if (j.contains("epochs")) cfg.train.epochs = j["epochs"];
  if (j.contains("lr")) cfg.train.lr = j["lr"];
  if (j.contains("lr_half_every")) cfg.train.lr_half_every = j["lr_half_every"];
  if (j.contains("batch")) cfg.train.batch = j["batch"];
  if (j.contains("seed")) cfg.train.seed = j["seed"];
  if (j.contains("ste_slope")) cfg.train.ste_slope = j["ste_slope"];
  if (j.contains("recon_base")) cfg.train.recon_base = j["recon_base"];
  if (j.contains("sampler_base")) cfg.train.sampler_base = j["sampler_base"];
  if (j.contains("mlp_hidden")) cfg.train.mlp_hidden = j["mlp_hidden"];
  if (j.contains("count")) cfg.count = j["count"];
  if (j.contains("phantom")) {
    const json& p = j["phantom"];
    reject_unknown(p,
                   {"min_ellipses", "max_ellipses", "min_intensity", "max_intensity",
                    "major_min", "major_max", "minor_min", "minor_max",
                    "orientation_jitter", "rotation_min", "rotation_max", "smoothing"},
                   "phantom");
    if (p.contains("min_ellipses")) cfg.phantom.min_ellipses = p["min_ellipses"];
    if (p.contains("max_ellipses")) cfg.phantom.max_ellipses = p["max_ellipses"];
    if (p.contains("min_intensity")) cfg.phantom.min_intensity = p["min_intensity"];
    if (p.contains("max_intensity")) cfg.phantom.max_intensity = p["max_intensity"];
    if (p.contains("major_min")) cfg.phantom.major_min = p["major_min"];
    if (p.contains("major_max")) cfg.phantom.major_max = p["major_max"];
    if (p.contains("minor_min")) cfg.phantom.minor_min = p["minor_min"];
    if (p.contains("minor_max")) cfg.phantom.minor_max = p["minor_max"];
    if (p.contains("orientation_jitter"))
      cfg.phantom.orientation_jitter = p["orientation_jitter"];
    if (p.contains("rotation_min")) cfg.phantom.rotation_min = p["rotation_min"];
    if (p.contains("rotation_max")) cfg.phantom.rotation_max = p["rotation_max"];
    if (p.contains("smoothing")) cfg.phantom.smoothing = p["smoothing"];
  }
  cfg.phantom.extent = cfg.train.extent;
  cfg.phantom.seed = cfg.train.seed;
  return cfg;
}

json resolved_json(const RunConfig& cfg) {
  json j;
  j["mode"] = cfg.train.mode == MaskMode::kLine ? "line" : "point";
  j["extent"] = cfg.train.extent;
  j["accel"] = cfg.train.accel;
  j["steps"] = cfg.train.steps;
  j["epochs"] = cfg.train.epochs;
  j["lr"] = cfg.train.lr;
  j["lr_half_every"] = cfg.train.lr_half_every;
  j["batch"] = cfg.train.batch;
  j["seed"] = cfg.train.seed;
  j["ste_slope"] = cfg.train.ste_slope;
  j["recon_base"] = cfg.train.recon_base;
  j["sampler_base"] = cfg.train.sampler_base;
  j["mlp_hidden"] = cfg.train.mlp_hidden;
  j["count"] = cfg.count;
  j["phantom"] = {{"min_ellipses", cfg.phantom.min_ellipses},
                  {"max_ellipses", cfg.phantom.max_ellipses},
                  {"min_intensity", cfg.phantom.min_intensity},
                  {"max_intensity", cfg.phantom.max_intensity},
                  {"major_min", cfg.phantom.major_min},
                  {"major_max", cfg.phantom.major_max},
                  {"minor_min", cfg.phantom.minor_min},
                  {"minor_max", cfg.phantom.minor_max},
                  {"orientation_jitter", cfg.phantom.orientation_jitter},
                  {"rotation_min", cfg.phantom.rotation_min},
                  {"rotation_max", cfg.phantom.rotation_max},
                  {"smoothing", cfg.phantom.smoothing}};
  return j;
}

std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// writes <out>/config.resolved.json and returns the config hash
std::string write_resolved(const RunConfig& cfg, const std::string& out) {
  std::filesystem::create_directories(out);
  json j = resolved_json(cfg);
  const std::string hash = fnv1a_hex(j.dump());
  j["config_hash"] = hash;
  std::ofstream os(out + "/config.resolved.json");
  if (!os) throw IoError("cannot write " + out + "/config.resolved.json");
  os << j.dump(2) << "\n";
  return hash;
}

void apply_overrides(RunConfig& cfg, const std::string& mode, double accel, int steps,
                     long long seed) {
  if (!mode.empty()) {
    if (mode == "line")
      cfg.train.mode = MaskMode::kLine;
    else if (mode == "point")
      cfg.train.mode = MaskMode::kPoint;
    else
      throw IoError("--mode must be 'line' or 'point'");
  }
  if (accel > 0) cfg.train.accel = accel;
  if (steps > 0) cfg.train.steps = steps;
  if (seed >= 0) {
    cfg.train.seed = static_cast<std::uint64_t>(seed);
    cfg.phantom.seed = cfg.train.seed;
  }
}

// ---------------------------------------------------------------------------
// metrics CSV
// ---------------------------------------------------------------------------

void write_metrics_csv(const std::string& path, const std::vector<EvalRecord>& recs,
                       const std::string& hash) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os.precision(17);
  os << "# config_hash=" << hash << "\n";
  os << "index,ssim,psnr,accel\n";
  for (std::size_t i = 0; i < recs.size(); ++i)
    os << i << "," << recs[i].ssim << "," << recs[i].psnr << "," << recs[i].accel << "\n";
}

std::vector<double> read_ssim_column(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<double> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("index", 0) == 0) continue;
    std::stringstream ss(line);
    std::string cell;
    std::getline(ss, cell, ',');  // index
    if (!std::getline(ss, cell, ',')) throw IoError("malformed metrics row in " + path);
    out.push_back(std::stod(cell));
  }
  if (out.empty()) throw IoError("no metric rows in " + path);
  return out;
}

std::vector<Tensor<Scalar>> split_images(const Dataset<Scalar>& ds, const std::string& name) {
  if (name == "all") return ds.images;
  if (name == "train") return ds.split(Split::kTrain);
  if (name == "val") return ds.split(Split::kVal);
  if (name == "test") return ds.split(Split::kTest);
  throw IoError("--split must be one of train|val|test|all");
}

// ---------------------------------------------------------------------------
// training arms
// ---------------------------------------------------------------------------

TrainResult<Scalar> train_arm(const std::string& arm, const TrainConfig& cfg,
                              const std::vector<Tensor<Scalar>>& tr,
                              const std::vector<Tensor<Scalar>>& va) {
  if (arm == "sequential") return train(cfg, tr, va);
  if (arm == "loupe") return loupe_style_train(cfg, tr, va);
  if (arm == "nonseq") return nonseq_variant_train(cfg, tr, va);
  if (arm == "random-recon") {
    const AccelSpec spec = cfg.accel_spec();
    MaskSampler masks = [spec](Rng& r) { return random_mask(spec, r); };
    return recon_only_train(cfg, tr, va, masks);
  }
  if (arm == "codesign-off") {
    // pre-train the reconstructor against random masks, freeze it, then train
    // the sampler only
    const AccelSpec spec = cfg.accel_spec();
    MaskSampler masks = [spec](Rng& r) { return random_mask(spec, r); };
    auto pre = recon_only_train(cfg, tr, va, masks);
    Params<Scalar> init = pre.best_params;
    Rng init_rng = Rng(cfg.seed).fork(3);
    sampler_init(init, cfg.sampler_config(), init_rng);
    return train(cfg, tr, va, &init, [](const std::string& name) {
      return name.rfind("sampler.", 0) == 0;
    });
  }
  throw IoError("--arm must be sequential|loupe|nonseq|random-recon|codesign-off");
}

std::vector<EvalRecord> eval_arm(const std::string& arm, const Params<Scalar>& params,
                                 const TrainConfig& cfg,
                                 const std::vector<Tensor<Scalar>>& images,
                                 std::uint64_t eval_seed) {
  if (arm == "sequential" || arm == "codesign-off")
    return evaluate(params, cfg, images, eval_seed);
  if (arm == "loupe") return evaluate_loupe(params, cfg, images, eval_seed);
  if (arm == "nonseq") return evaluate_nonseq(params, cfg, images, eval_seed);
  if (arm == "random-recon") {
    const AccelSpec spec = cfg.accel_spec();
    MaskSampler masks = [spec](Rng& r) { return random_mask(spec, r); };
    return evaluate_static(params, cfg, images, masks, eval_seed);
  }
  throw IoError("--arm must be sequential|loupe|nonseq|random-recon|codesign-off");
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

int cmd_datagen(const RunConfig& cfg, const std::string& out) {
  const std::string hash = write_resolved(cfg, out);
  auto ds = generate_dataset<Scalar>(cfg.phantom, cfg.count);
  write_dataset(out + "/dataset.sqds", ds);
  std::cout << "wrote " << out << "/dataset.sqds (" << cfg.count << " images, hash "
            << hash << ")\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& dataset, const std::string& out,
              const std::string& arm) {
  const std::string hash = write_resolved(cfg, out);
  auto ds = load_dataset<Scalar>(dataset, cfg.train.seed);
  auto tr = ds.split(Split::kTrain);
  auto va = ds.split(Split::kVal);
  auto result = train_arm(arm, cfg.train, tr, va);
  save_checkpoint(out + "/checkpoint.best.sqsm", result.best_params);
  save_checkpoint(out + "/checkpoint.last.sqsm", result.params, &result.adam);
  write_log_jsonl(out + "/log.jsonl", result.log);
  std::cout << "arm=" << arm << " best_epoch=" << result.best_epoch
            << " best_val_ssim=" << result.best_val << " hash=" << hash << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& checkpoint, const std::string& dataset,
             const std::string& out, const std::string& arm, const std::string& split,
             std::uint64_t eval_seed) {
  const std::string hash = write_resolved(cfg, out);
  auto ds = load_dataset<Scalar>(dataset, cfg.train.seed);
  auto images = split_images(ds, split);
  auto params = load_checkpoint<Scalar>(checkpoint);
  auto recs = eval_arm(arm, params, cfg.train, images, eval_seed);
  write_metrics_csv(out + "/metrics.csv", recs, hash);
  double mean = 0;
  for (const auto& r : recs) mean += r.ssim;
  mean /= recs.empty() ? 1.0 : static_cast<double>(recs.size());
  std::cout << "arm=" << arm << " split=" << split << " n=" << recs.size()
            << " mean_ssim=" << mean << "\n";
  return 0;
}

int cmd_compare(const std::string& a_path, const std::string& b_path,
                const std::string& out) {
  auto a = read_ssim_column(a_path);
  auto b = read_ssim_column(b_path);
  auto report = compare(a, b);
  std::filesystem::create_directories(out);
  std::ofstream os(out + "/report.json");
  if (!os) throw IoError("cannot write " + out + "/report.json");
  os << report_to_json(report) << "\n";
  std::cout << report_to_json(report) << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& dataset, const std::string& out) {
  const std::string hash = write_resolved(cfg, out);
  auto ds = load_dataset<Scalar>(dataset, cfg.train.seed);
  auto tr = ds.split(Split::kTrain);
  auto va = ds.split(Split::kVal);
  auto te = ds.split(Split::kTest);
  json grid = json::array();
  std::ofstream csv(out + "/ablate.csv");
  csv << "# config_hash=" << hash << "\nsteps,codesign,mean_ssim\n";
  csv.precision(17);
  for (int T : {1, 2, 4}) {
    TrainConfig tc = cfg.train;
    tc.steps = T;
    for (const bool codesign : {true, false}) {
      const std::string arm = codesign ? "sequential" : "codesign-off";
      auto result = train_arm(arm, tc, tr, va);
      auto recs = eval_arm(arm, result.best_params, tc, te, 12345);
      double mean = 0;
      for (const auto& r : recs) mean += r.ssim;
      mean /= recs.empty() ? 1.0 : static_cast<double>(recs.size());
      grid.push_back({{"steps", T}, {"codesign", codesign}, {"mean_ssim", mean}});
      csv << T << "," << (codesign ? 1 : 0) << "," << mean << "\n";
      std::cout << "steps=" << T << " codesign=" << codesign << " mean_ssim=" << mean
                << "\n";
    }
  }
  json j = {{"config_hash", hash}, {"grid", grid}};
  std::ofstream os(out + "/ablate.json");
  os << j.dump(2) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradient-check table
// ---------------------------------------------------------------------------

int cmd_gradcheck() {
  const auto rows = gradcheck_table();
  bool ok = true;
  std::printf("%-24s %-12s %s\n", "operator", "rel_err", "status");
  for (const auto& r : rows) {
    const bool pass = r.err < 1e-4;
    ok = ok && pass;
    std::printf("%-24s %-12.3e %s\n", r.name.c_str(), r.err, pass ? "PASS" : "FAIL");
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sequential k-space sampling and reconstruction"};
  app.require_subcommand(1);

  std::string config_path, dataset_path, out_dir = "runs/out", checkpoint_path;
  std::string arm = "sequential", split = "test", mode_override;
  std::string a_path, b_path;
  double accel_override = -1;
  int steps_override = -1;
  long long seed_override = -1;
  std::uint64_t eval_seed = 20240501;

  auto add_common = [&](CLI::App* cmd, bool needs_dataset) {
    cmd->add_option("--config", config_path, "JSON run configuration")->required();
    if (needs_dataset)
      cmd->add_option("--dataset", dataset_path, "dataset file (SQDS)")->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed-override", seed_override, "override config seed");
    cmd->add_option("--mode", mode_override, "override mode: line|point");
    cmd->add_option("--accel", accel_override, "override acceleration factor");
    cmd->add_option("--steps", steps_override, "override step count T");
  };

  auto* datagen = app.add_subcommand("datagen", "generate a phantom dataset");
  add_common(datagen, false);

  auto* train_cmd = app.add_subcommand("train", "train a model arm");
  add_common(train_cmd, true);
  train_cmd->add_option("--arm", arm,
                        "sequential|loupe|nonseq|random-recon|codesign-off");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval_cmd, true);
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval_cmd->add_option("--arm", arm, "evaluation arm");
  eval_cmd->add_option("--split", split, "train|val|test|all");
  eval_cmd->add_option("--eval-seed", eval_seed, "fixed evaluation seed");

  auto* compare_cmd = app.add_subcommand("compare", "paired comparison of two metric files");
  compare_cmd->add_option("--a", a_path, "metrics CSV for method A")->required();
  compare_cmd->add_option("--b", b_path, "metrics CSV for method B")->required();
  compare_cmd->add_option("--out", out_dir, "output directory");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference operator table");
  (void)gradcheck_cmd;

  auto* ablate_cmd = app.add_subcommand("ablate", "steps x co-design ablation grid");
  add_common(ablate_cmd, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand(gradcheck_cmd)) return cmd_gradcheck();
    if (app.got_subcommand(compare_cmd)) return cmd_compare(a_path, b_path, out_dir);
    RunConfig cfg = parse_config(config_path);
    apply_overrides(cfg, mode_override, accel_override, steps_override, seed_override);
    if (app.got_subcommand(datagen)) return cmd_datagen(cfg, out_dir);
    if (app.got_subcommand(train_cmd)) return cmd_train(cfg, dataset_path, out_dir, arm);
    if (app.got_subcommand(eval_cmd))
      return cmd_eval(cfg, checkpoint_path, dataset_path, out_dir, arm, split, eval_seed);
    if (app.got_subcommand(ablate_cmd)) return cmd_ablate(cfg, dataset_path, out_dir);
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
