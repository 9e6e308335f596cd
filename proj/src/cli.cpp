#include "brainage/cli.hpp"

#include <CLI11.hpp>
#include <atomic>
#include <exception>
#include <iostream>
#include <mutex>
#include <thread>

#include "brainage/io.hpp"
#include "brainage/nifti.hpp"
#include "brainage/pipeline.hpp"
#include "brainage/preprocess.hpp"

namespace brainage {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::IoFailure, "cannot create " + dir.string());
}

void echo_config(const fs::path& dir, const nlohmann::json& config) {
  write_text_atomic(dir / "effective_config.json", config.dump(2) + "\n");
}

/// Runs fn(i) for i in [0, count) on at most `workers` threads; the first exception is rethrown.
void parallel_for(std::size_t count, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = static_cast<std::size_t>(std::clamp(workers, 1, 64));
  if (threads == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(threads, count); ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct SynthArgs {
  int n = 10;
  std::uint64_t seed = 1;
  std::string out;
  double age_min = 55.0;
  double age_max = 96.0;
  double train_fraction = 0.8;
  bool test_cohort = false;
  std::vector<int> dims{kMniDims[0], kMniDims[1], kMniDims[2]};
  double noise_sigma = 5.0;
};

void run_synth(const SynthArgs& a, std::ostream& err) {
  SyntheticOptions opts;
  opts.n = a.n;
  opts.seed = a.seed;
  opts.age_range = {a.age_min, a.age_max};
  opts.dims = {a.dims[0], a.dims[1], a.dims[2]};
  opts.noise_sigma = a.noise_sigma;
  const fs::path out(a.out);
  Manifest cohort = generate_synthetic_cohort(opts, out);
  Manifest manifest;
  if (a.test_cohort) {
    manifest = cohort;
    for (auto& r : manifest.records) r.split = Split::Test;
  } else {
    manifest = split_manifest(cohort.records, a.train_fraction, a.seed);
  }
  write_manifest(manifest, out / "manifest.csv");
  echo_config(out, {{"command", "synth"},
                    {"n", a.n},
                    {"seed", a.seed},
                    {"age_range", {a.age_min, a.age_max}},
                    {"train_fraction", a.train_fraction},
                    {"test_cohort", a.test_cohort},
                    {"dims", a.dims},
                    {"noise_sigma", a.noise_sigma}});
  err << "wrote " << manifest.records.size() << " subjects to " << out.string() << '\n';
}

void run_hist_ref(const std::string& manifest_path, int q, int max_volumes, const std::string& out, std::ostream& err) {
  const Manifest manifest = read_manifest(manifest_path);
  auto train = manifest.subset(Split::Train);
  if (train.empty()) fail(ErrorKind::EmptySplit, "manifest has no training subjects");
  if (max_volumes > 0 && static_cast<int>(train.size()) > max_volumes) train.resize(static_cast<std::size_t>(max_volumes));
  std::vector<Volume> volumes;
  for (const auto& r : train) volumes.push_back(read_nifti(manifest.resolve(r)).volume);
  const QuantileTable table = build_reference_histogram(volumes, q);
  const fs::path out_path(out);
  if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
  write_quantile_table(table, out_path);
  err << "reference table from " << volumes.size() << " volumes, " << q << " levels\n";
}

void run_preprocess(const std::string& manifest_path, const std::string& ref_path, const std::string& out, int workers,
                    std::ostream& err) {
  const Manifest manifest = read_manifest(manifest_path);
  const QuantileTable ref = read_quantile_table(ref_path);
  const fs::path out_dir(out);
  ensure_dir(out_dir);
  Manifest result;
  result.base_dir = out_dir;
  result.records = manifest.records;
  parallel_for(manifest.records.size(), workers, [&](std::size_t i) {
    const auto& r = manifest.records[i];
    const Volume v = minmax_normalize(histogram_match(read_nifti(manifest.resolve(r)).volume, ref));
    result.records[i].volume_path = r.subject_id + ".nii";
    write_nifti(v, out_dir / result.records[i].volume_path);
  });
  write_manifest(result, out_dir / "manifest.csv");
  echo_config(out_dir, {{"command", "preprocess"},
                        {"manifest", manifest_path},
                        {"ref", ref_path},
                        {"steps", {"histogram_match", "minmax_normalize"}}});
  err << "preprocessed " << result.records.size() << " volumes into " << out_dir.string() << '\n';
}

struct TrainArgs {
  std::string config;
  std::string manifest;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<int> batch_size;
  std::optional<double> lr;
};

void run_train(const TrainArgs& a, std::ostream& err) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(a.config));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::BadConfig, a.config + ": " + e.what());
  }
  if (a.seed) {
    j["seed"] = *a.seed;
    j["augment"]["seed"] = *a.seed;
  }
  if (a.epochs) {
    j["epochs"] = *a.epochs;
    j["schedule"]["total_epochs"] = *a.epochs;
  }
  if (a.batch_size) j["batch_size"] = *a.batch_size;
  if (a.lr) j["schedule"]["initial_lr"] = *a.lr;
  const TrainConfig cfg = j.get<TrainConfig>();

  const Manifest manifest = read_manifest(a.manifest);
  const fs::path out_dir(a.out);
  ensure_dir(out_dir);
  const TrainResult result = train_model(manifest, cfg, &err);
  save_checkpoint(result.checkpoint, out_dir / "checkpoint.cxa");
  write_text_atomic(out_dir / "train_log.csv", format_train_log(result.log));
  echo_config(out_dir, nlohmann::json(cfg));
  err << "best epoch " << result.checkpoint.epoch << " val_mae " << result.checkpoint.best_val_mae << '\n';
}

void run_predict(const std::string& checkpoint, const std::string& volume, const std::string& subject_id,
                 std::ostream& out) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const auto p = predict_subject(ckpt, read_nifti(volume).volume, subject_id);
  nlohmann::json j{{"subject_id", p.subject_id}, {"predicted_age", p.predicted_age},
                   {"model_kind", to_string(ckpt.model.spec().kind)}};
  if (p.slice_predictions) j["slice_predictions"] = *p.slice_predictions;
  out << j.dump() << '\n';
}

void run_eval(const std::string& checkpoint, const std::string& manifest_path, const std::string& split,
              const std::string& out, std::ostream& err) {
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Manifest manifest = read_manifest(manifest_path);
  const EvalReport report = evaluate_mae(ckpt, manifest, split_from_string(split));
  const fs::path out_dir(out);
  export_report(report, out_dir);
  echo_config(out_dir, {{"command", "eval"}, {"checkpoint", checkpoint}, {"manifest", manifest_path}, {"split", split}});
  err << report.split << " MAE " << report.mae_years << " years over " << report.per_subject.size() << " subjects\n";
}

void run_report(const std::string& eval_dir, std::ostream& out) {
  nlohmann::json metrics;
  try {
    metrics = nlohmann::json::parse(read_text(fs::path(eval_dir) / "metrics.json"));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::BadConfig, std::string("metrics.json: ") + e.what());
  }
  out << metrics.dump() << '\n';
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UsageError: return kExitUsage;
    case ErrorKind::NonFinite:
    case ErrorKind::DivergedLoss: return kExitNumeric;
    default: return kExitData;
  }
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Brain-age regression toolkit: synthetic cohorts, preprocessing, 2D/3D CNN training and evaluation",
               "brainage"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic cohort and its manifest");
  synth_cmd->add_option("--n", synth.n, "Number of subjects")->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth.seed, "Random seed")->required();
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--age-min", synth.age_min, "Lower age bound (years)");
  synth_cmd->add_option("--age-max", synth.age_max, "Upper age bound (years)");
  synth_cmd->add_option("--train-fraction", synth.train_fraction, "Fraction assigned to the train split");
  synth_cmd->add_flag("--test-cohort", synth.test_cohort, "Tag every subject as held-out test");
  synth_cmd->add_option("--dims", synth.dims, "Grid extents X Y Z")->expected(3);
  synth_cmd->add_option("--noise-sigma", synth.noise_sigma, "Gaussian noise (intensity units)");

  std::string manifest, ref, out_path, config, checkpoint, volume, split = "test", eval_dir, subject_id;
  int q = kDefaultQuantiles, max_volumes = 50, workers = 1;

  auto* hist_cmd = app.add_subcommand("hist-ref", "Build the reference quantile table from train-split volumes");
  hist_cmd->add_option("--manifest", manifest, "Manifest CSV")->required();
  hist_cmd->add_option("--q", q, "Quantile levels")->check(CLI::Range(2, 1000000));
  hist_cmd->add_option("--max-volumes", max_volumes, "Use at most this many train volumes (0 = all)");
  hist_cmd->add_option("--out", out_path, "Output CSV")->required();

  auto* pre_cmd = app.add_subcommand("preprocess", "Histogram-match and min-max scale every volume");
  pre_cmd->add_option("--manifest", manifest, "Manifest CSV")->required();
  pre_cmd->add_option("--ref", ref, "Reference quantile table CSV")->required();
  pre_cmd->add_option("--out", out_path, "Output directory")->required();
  pre_cmd->add_option("--workers", workers, "Parallel volume workers")->check(CLI::Range(1, 64));

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoint.cxa and train_log.csv");
  train_cmd->add_option("--config", train.config, "Training JSON config")->required();
  train_cmd->add_option("--manifest", train.manifest, "Manifest CSV of preprocessed volumes")->required();
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--seed", train.seed, "Override the config seed");
  train_cmd->add_option("--epochs", train.epochs, "Override epochs (and the decay horizon)");
  train_cmd->add_option("--batch-size", train.batch_size, "Override batch size");
  train_cmd->add_option("--lr", train.lr, "Override the initial learning rate");

  auto* predict_cmd = app.add_subcommand("predict", "Predict one preprocessed volume; prints JSON");
  predict_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  predict_cmd->add_option("--volume", volume, "Preprocessed NIfTI volume")->required();
  predict_cmd->add_option("--subject-id", subject_id, "Identifier echoed in the output");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate MAE on a manifest split and export report files");
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--manifest", manifest, "Manifest CSV of preprocessed volumes")->required();
  eval_cmd->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  eval_cmd->add_option("--out", out_path, "Output directory")->required();

  auto* report_cmd = app.add_subcommand("report", "Print the metrics of an eval directory as JSON");
  report_cmd->add_option("--eval-dir", eval_dir, "Directory written by eval")->required();

  std::vector<std::string> argv_store{"brainage"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : argv_store) argv.push_back(s.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*synth_cmd) run_synth(synth, err);
    else if (*hist_cmd) run_hist_ref(manifest, q, max_volumes, out_path, err);
    else if (*pre_cmd) run_preprocess(manifest, ref, out_path, workers, err);
    else if (*train_cmd) run_train(train, err);
    else if (*predict_cmd) run_predict(checkpoint, volume, subject_id, out);
    else if (*eval_cmd) run_eval(checkpoint, manifest, split, out_path, err);
    else if (*report_cmd) run_report(eval_dir, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

}  // namespace brainage
