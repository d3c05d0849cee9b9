// Command line front end: synthetic data generation, splitting, training,
// conformal calibration, experiment grids, aggregation, and embedding export.

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "pitot/baseline.hpp"
#include "pitot/conformal.hpp"
#include "pitot/dataset.hpp"
#include "pitot/evaluation.hpp"
#include "pitot/model.hpp"
#include "pitot/synthetic.hpp"
#include "pitot/training.hpp"

namespace fs = std::filesystem;
using namespace pitot;

namespace {

constexpr const char* kVersion = "0.1.0";

std::uint64_t env_default_seed() {
  const char* v = std::getenv("RUNTIME_ORACLE_SEED");
  if (!v || !*v) return 0;
  try {
    return std::stoull(v);
  } catch (...) {
    return 0;
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

/// Required input paths are checked up front so a typo exits with a usage
/// error before any compute starts.
void require_exists(const std::string& path, const char* what) {
  if (!fs::exists(path))
    throw ValidationError(std::string(what) + " not found: " + path);
}

void write_manifest(const std::string& dir, const std::string& command,
                    const nlohmann::json& config) {
  nlohmann::json m;
  m["tool"] = "pitot";
  m["version"] = kVersion;
  m["command"] = command;
  m["config"] = config;
  write_text_file(dir + "/manifest.json", m.dump(2) + "\n");
}

DataFormat parse_format(const std::string& f) {
  if (f == "jsonl") return DataFormat::canonical_jsonl;
  if (f == "csv") return DataFormat::canonical_csv;
  throw ValidationError("unknown format: " + f);
}

struct FeaturePrep {
  bool standardize = true;
  ColumnTransform transform;  // identity when standardize is off
};

FeaturePrep prepare_features(Dataset& ds, std::span<const int> train_ids,
                             bool standardize) {
  FeaturePrep prep;
  prep.standardize = standardize;
  if (standardize) {
    prep.transform = platform_feature_transform(ds, train_ids);
  } else {
    prep.transform.mean.assign(ds.features.platform_features.cols, 0.0);
    prep.transform.scale.assign(ds.features.platform_features.cols, 1.0);
  }
  ds.features.platform_features = apply_transform(ds.features.platform_features,
                                                  prep.transform);
  return prep;
}

std::string transform_to_json(const FeaturePrep& prep) {
  nlohmann::json j;
  j["standardize"] = prep.standardize;
  j["platform_mean"] = prep.transform.mean;
  j["platform_scale"] = prep.transform.scale;
  return j.dump() + "\n";
}

ColumnTransform transform_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ColumnTransform t;
  t.mean = j.at("platform_mean").get<std::vector<double>>();
  t.scale = j.at("platform_scale").get<std::vector<double>>();
  return t;
}

void apply_saved_transform(Dataset& ds, const std::string& transform_path) {
  if (!fs::exists(transform_path)) return;  // trained without standardization
  const ColumnTransform t = transform_from_json(read_text_file(transform_path));
  if (t.mean.size() != ds.features.platform_features.cols)
    throw ValidationError("feature transform width does not match the dataset");
  ds.features.platform_features = apply_transform(ds.features.platform_features, t);
}

ObjectiveKind parse_objective(const std::string& s) {
  if (s == "log_residual") return ObjectiveKind::log_residual;
  if (s == "log") return ObjectiveKind::log;
  if (s == "proportional") return ObjectiveKind::proportional;
  throw ValidationError("unknown objective: " + s);
}

InterferencePolicy parse_interference(const std::string& s) {
  if (s == "model") return InterferencePolicy::model;
  if (s == "discard") return InterferencePolicy::discard;
  if (s == "ignore") return InterferencePolicy::ignore;
  throw ValidationError("unknown interference policy: " + s);
}

InterferenceActivation parse_activation(const std::string& s) {
  if (s == "leaky_relu") return InterferenceActivation::leaky_relu;
  if (s == "identity") return InterferenceActivation::identity;
  throw ValidationError("unknown activation: " + s);
}

// ---------------------------------------------------------------------------
// shared option bundles

struct NetFlags {
  std::vector<int> hidden = {128, 128};
  int embed_dim = 32;
  int learned_dim = 1;
  int types = 2;
  std::vector<double> quantiles = {0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99};
  double leaky_slope = 0.1;
  std::string activation = "leaky_relu";

  void add(CLI::App* cmd) {
    cmd->add_option("--hidden", hidden, "Hidden layer widths")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--embed-dim", embed_dim, "Embedding dimension r")
        ->capture_default_str();
    cmd->add_option("--learned-dim", learned_dim, "Learned feature dimension q")
        ->capture_default_str();
    cmd->add_option("--types", types, "Interference types s")->capture_default_str();
    cmd->add_option("--quantiles", quantiles, "Quantile head targets")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--leaky-slope", leaky_slope, "Leaky ReLU negative slope")
        ->capture_default_str();
    cmd->add_option("--activation", activation, "Interference activation")
        ->check(CLI::IsMember({"leaky_relu", "identity"}))
        ->capture_default_str();
  }

  NetworkConfig to_config(bool mean_mode) const {
    NetworkConfig cfg;
    cfg.hidden_sizes = hidden;
    cfg.embed_dim = embed_dim;
    cfg.learned_dim = learned_dim;
    cfg.interference_types = types;
    cfg.quantile_targets = quantiles;
    cfg.mean_mode = mean_mode;
    cfg.leaky_slope = leaky_slope;
    cfg.activation = parse_activation(activation);
    return cfg;
  }

  nlohmann::json to_json() const {
    return {{"hidden", hidden},           {"embed_dim", embed_dim},
            {"learned_dim", learned_dim}, {"types", types},
            {"quantiles", quantiles},     {"leaky_slope", leaky_slope},
            {"activation", activation}};
  }
};

struct TrainFlags {
  long long steps = 20000;
  int batch_per_mode = 512;
  int eval_every = 200;
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double interference_weight = 0.5;

  void add(CLI::App* cmd) {
    cmd->add_option("--steps", steps, "Training steps")->capture_default_str();
    cmd->add_option("--batch-per-mode", batch_per_mode,
                    "Batch size per interference mode")
        ->capture_default_str();
    cmd->add_option("--eval-every", eval_every, "Validation cadence in steps")
        ->capture_default_str();
    cmd->add_option("--lr", lr, "AdaMax learning rate")->capture_default_str();
    cmd->add_option("--beta1", beta1, "AdaMax beta1")->capture_default_str();
    cmd->add_option("--beta2", beta2, "AdaMax beta2")->capture_default_str();
    cmd->add_option("--interference-weight", interference_weight,
                    "Objective weight beta shared by the interference modes")
        ->capture_default_str();
  }

  TrainConfig to_config(std::uint64_t seed) const {
    TrainConfig cfg;
    cfg.steps = steps;
    cfg.batch_per_mode = batch_per_mode;
    cfg.eval_every = eval_every;
    cfg.learning_rate = lr;
    cfg.beta1 = beta1;
    cfg.beta2 = beta2;
    cfg.seed = seed;
    return cfg;
  }

  nlohmann::json to_json() const {
    return {{"steps", steps},   {"batch_per_mode", batch_per_mode},
            {"eval_every", eval_every}, {"lr", lr},
            {"beta1", beta1},   {"beta2", beta2},
            {"interference_weight", interference_weight}};
  }
};

// ---------------------------------------------------------------------------

int cmd_synth(const SyntheticConfig& cfg, std::uint64_t seed, const std::string& out,
              const std::string& format) {
  ensure_dir(out);
  auto [ds, oracle] = generate_synthetic(cfg, seed);
  save_dataset(ds, out, parse_format(format));
  write_text_file(out + "/oracle.json", oracle_to_json(oracle));
  write_manifest(out, "synth",
                 {{"n_workloads", cfg.n_workloads},
                  {"n_platforms", cfg.n_platforms},
                  {"d_w", cfg.d_w},
                  {"d_p", cfg.d_p},
                  {"true_rank", cfg.true_rank},
                  {"true_types", cfg.true_types},
                  {"obs_per_mode", cfg.n_obs_per_mode},
                  {"noise_sigma", cfg.noise_sigma},
                  {"interference_scale", cfg.interference_scale},
                  {"feature_noise", cfg.feature_noise},
                  {"leaky_slope", cfg.leaky_slope},
                  {"seed", seed},
                  {"format", format}});
  std::cout << "wrote " << ds.observations.size() << " observations to " << out << "\n";
  return 0;
}

int cmd_split(const std::string& data, const std::string& format, double fraction,
              std::uint64_t seed, const std::string& out) {
  require_exists(data, "dataset directory");
  Dataset ds = load_dataset(data, parse_format(format));
  Split split = make_split(ds, fraction, seed);
  ensure_dir(out);
  const std::string path = out + "/" + split_file_name(seed, fraction);
  write_text_file(path, split_to_json(split));
  std::cout << "wrote " << path << " (train=" << split.train_ids.size()
            << " calval=" << split.calval_ids.size() << " test=" << split.test_ids.size()
            << ")\n";
  return 0;
}

int cmd_train(const std::string& data, const std::string& format,
              const std::string& split_path, const std::string& out,
              const std::string& mode, const std::string& objective_str,
              bool no_standardize, const NetFlags& net, const TrainFlags& tf,
              std::uint64_t seed) {
  require_exists(data, "dataset directory");
  require_exists(split_path, "split file");
  const ObjectiveKind objective = parse_objective(objective_str);
  const bool mean_mode = mode == "mean";
  if (!mean_mode && mode != "quantile")
    throw ValidationError("--mode must be mean or quantile");
  if (!mean_mode && objective == ObjectiveKind::proportional)
    throw ValidationError("proportional objective applies to mean mode only");

  Dataset ds = load_dataset(data, parse_format(format));
  Split split = split_from_json(read_text_file(split_path));
  ensure_dir(out);

  const FeaturePrep prep = prepare_features(ds, split.train_ids, !no_standardize);
  write_text_file(out + "/feature_transform.json", transform_to_json(prep));

  BaselineModel base = objective == ObjectiveKind::log_residual
                           ? fit_baseline(ds, split.train_ids)
                           : BaselineModel::zeros(ds.n_workloads, ds.n_platforms);
  write_text_file(out + "/baseline.json", baseline_to_json(base));

  const NetworkConfig cfg = net.to_config(mean_mode);
  PitotModel model = init_model(cfg, static_cast<int>(ds.features.workload_features.cols),
                                static_cast<int>(ds.features.platform_features.cols),
                                ds.n_workloads, ds.n_platforms, base, seed);
  const LossKind kind = !mean_mode ? LossKind::pinball
                        : objective == ObjectiveKind::proportional
                            ? LossKind::proportional
                            : LossKind::squared;
  TrainResult result = train(ds, split, model, tf.to_config(seed),
                             LossConfig{tf.interference_weight}, kind);

  write_text_file(out + "/best_model.json", model_to_json(result.best_model));
  write_text_file(out + "/final_model.json", model_to_json(result.final_model));
  write_text_file(out + "/training_log.csv", training_log_to_csv(result.log));
  nlohmann::json config = {{"data", data},
                           {"split", split_path},
                           {"mode", mode},
                           {"objective", objective_str},
                           {"standardize", !no_standardize},
                           {"seed", seed},
                           {"net", net.to_json()},
                           {"train", tf.to_json()}};
  write_manifest(out, "train", config);
  std::cout << "best step " << result.best_step << " calval loss "
            << format_g17(result.best_calval_loss) << "\n";
  return 0;
}

int cmd_calibrate(const std::string& model_path, const std::string& data,
                  const std::string& format, const std::string& split_path,
                  const std::string& transform_path, const std::string& out,
                  std::vector<double> epsilons, bool fallback_largest) {
  require_exists(model_path, "model file");
  require_exists(data, "dataset directory");
  require_exists(split_path, "split file");
  PitotModel model = model_from_json(read_text_file(model_path));
  if (model.config.mean_mode)
    throw ValidationError("quantile-mode model required (this model was trained with --mode mean)");
  Dataset ds = load_dataset(data, parse_format(format));
  const std::string tpath = transform_path.empty()
                                ? (fs::path(model_path).parent_path() / "feature_transform.json").string()
                                : transform_path;
  apply_saved_transform(ds, tpath);
  Split split = split_from_json(read_text_file(split_path));

  CalibrationTable table = build_calibration(model, ds, split.calval_ids, epsilons);
  table.fallback_to_largest_pool = fallback_largest;
  ensure_dir(out);
  write_text_file(out + "/calibration.json", calibration_to_json(table));
  write_manifest(out, "calibrate",
                 {{"model", model_path},
                  {"data", data},
                  {"split", split_path},
                  {"epsilons", epsilons},
                  {"fallback_largest_pool", fallback_largest}});
  std::cout << "calibrated " << table.pools.size() << " pools at " << epsilons.size()
            << " miscoverage rates\n";
  return 0;
}

int cmd_evaluate(const std::string& data, const std::string& format,
                 const ExperimentSpec& spec, int jobs, const std::string& out,
                 const nlohmann::json& config) {
  require_exists(data, "dataset directory");
  Dataset ds = load_dataset(data, parse_format(format));
  spec.validate();
  ensure_dir(out);

  struct Task {
    std::size_t fi;
    int rep;
  };
  std::vector<Task> tasks;
  for (std::size_t fi = 0; fi < spec.train_fractions.size(); ++fi)
    for (int rep = 0; rep < spec.replicates; ++rep) tasks.push_back({fi, rep});

  std::vector<MetricsReport> reports(tasks.size());
  std::vector<std::vector<RawPrediction>> raws(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) return;
      try {
        reports[t] = run_single(ds, spec, tasks[t].fi, tasks[t].rep, &raws[t]);
      } catch (const std::exception& e) {
        reports[t].fraction = spec.train_fractions[tasks[t].fi];
        reports[t].replicate = tasks[t].rep;
        reports[t].seed = replicate_seed(spec.seed_base, tasks[t].fi, tasks[t].rep);
        reports[t].status = e.what();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  std::vector<std::thread> threads;
  for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
  for (auto& th : threads) th.join();

  std::string metrics;
  for (const auto& r : reports) metrics += report_to_json(r) + "\n";
  write_text_file(out + "/metrics.jsonl", metrics);

  std::string raw_csv = "fraction,replicate,observation,pool,actual_s,predicted_s";
  for (double eps : spec.epsilons) raw_csv += ",bound_" + format_shortest(eps);
  raw_csv += "\n";
  for (const auto& rows : raws)
    for (const auto& row : rows) {
      raw_csv += format_shortest(row.fraction) + "," + std::to_string(row.replicate) +
                 "," + std::to_string(row.observation_id) + "," +
                 std::to_string(row.pool) + "," + format_g17(row.actual_s) + "," +
                 (std::isfinite(row.predicted_s) ? format_g17(row.predicted_s) : "") ;
      for (double b : row.bounds_s)
        raw_csv += "," + (std::isfinite(b) ? format_g17(b) : std::string());
      raw_csv += "\n";
    }
  write_text_file(out + "/predictions.csv", raw_csv);
  write_manifest(out, "evaluate", config);

  int failed = 0;
  for (const auto& r : reports)
    if (r.status != "ok") ++failed;
  std::cout << "ran " << reports.size() << " replicates (" << failed << " failed); results in "
            << out << "\n";
  return 0;
}

int cmd_summarize(const std::vector<std::string>& run_dirs, const std::string& out) {
  std::vector<MetricsReport> reports;
  for (const auto& dir : run_dirs) {
    const std::string path = fs::is_directory(dir) ? dir + "/metrics.jsonl" : dir;
    for (const auto& line : split_string(read_text_file(path), '\n')) {
      if (line.empty()) continue;
      reports.push_back(report_from_json(line));
    }
  }
  ensure_dir(out);
  summarize(reports, out);
  write_manifest(out, "summarize", {{"runs", run_dirs}, {"reports", reports.size()}});
  std::cout << "aggregated " << reports.size() << " reports into " << out << "\n";
  return 0;
}

int cmd_export(const std::string& model_path, const std::string& data,
               const std::string& format, const std::string& transform_path,
               const std::string& out) {
  require_exists(model_path, "model file");
  require_exists(data, "dataset directory");
  PitotModel model = model_from_json(read_text_file(model_path));
  Dataset ds = load_dataset(data, parse_format(format));
  const std::string tpath = transform_path.empty()
                                ? (fs::path(model_path).parent_path() / "feature_transform.json").string()
                                : transform_path;
  apply_saved_transform(ds, tpath);
  ensure_dir(out);
  export_embeddings(model, ds.features, out);
  write_manifest(out, "export-embeddings", {{"model", model_path}, {"data", data}});
  std::cout << "exported embeddings for " << model.n_workloads << " workloads and "
            << model.n_platforms << " platforms\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pitot: interference-aware runtime prediction with conformal bounds"};
  app.require_subcommand(1);
  app.set_config("--config", "", "Config file (key=value; [subcommand] sections)");
  app.allow_config_extras(CLI::config_extras_mode::error);

  const std::uint64_t seed_default = env_default_seed();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset with a known oracle");
  SyntheticConfig scfg;
  std::string synth_out, synth_format = "jsonl";
  std::uint64_t synth_seed = seed_default;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--n-workloads", scfg.n_workloads, "Workload count")->capture_default_str();
  synth->add_option("--n-platforms", scfg.n_platforms, "Platform count")->capture_default_str();
  synth->add_option("--d-w", scfg.d_w, "Workload feature columns")->capture_default_str();
  synth->add_option("--d-p", scfg.d_p, "Platform feature columns")->capture_default_str();
  synth->add_option("--true-rank", scfg.true_rank, "Planted factor rank")->capture_default_str();
  synth->add_option("--true-types", scfg.true_types, "Planted interference types")->capture_default_str();
  synth->add_option("--obs-per-mode", scfg.n_obs_per_mode, "Observations per |K| in 0..3")->capture_default_str();
  synth->add_option("--noise-sigma", scfg.noise_sigma, "Log-space noise std dev")->capture_default_str();
  synth->add_option("--interference-scale", scfg.interference_scale, "Planted interference factor scale")->capture_default_str();
  synth->add_option("--feature-noise", scfg.feature_noise, "Feature probe noise")->capture_default_str();
  synth->add_option("--leaky-slope", scfg.leaky_slope, "Oracle activation slope")->capture_default_str();
  synth->add_option("--seed", synth_seed, "RNG seed")->capture_default_str();
  synth->add_option("--format", synth_format, "Observation file format")
      ->check(CLI::IsMember({"jsonl", "csv"}))->capture_default_str();

  // split
  auto* split = app.add_subcommand("split", "Create a train/calval/test split");
  std::string split_data, split_format = "jsonl", split_out;
  double split_fraction = 0.8;
  std::uint64_t split_seed = seed_default;
  split->add_option("--data", split_data, "Dataset directory")->required();
  split->add_option("--format", split_format, "Observation file format")
      ->check(CLI::IsMember({"jsonl", "csv"}))->capture_default_str();
  split->add_option("--train-fraction", split_fraction, "Fraction used for train+calval")->capture_default_str();
  split->add_option("--seed", split_seed, "RNG seed")->capture_default_str();
  split->add_option("--out", split_out, "Output directory (defaults to --data)");

  // train
  auto* tr = app.add_subcommand("train", "Fit the baseline and train a model");
  std::string tr_data, tr_format = "jsonl", tr_split, tr_out, tr_mode = "mean";
  std::string tr_objective = "log_residual";
  bool tr_no_std = false;
  std::uint64_t tr_seed = seed_default;
  NetFlags tr_net;
  TrainFlags tr_train;
  tr->add_option("--data", tr_data, "Dataset directory")->required();
  tr->add_option("--format", tr_format, "Observation file format")
      ->check(CLI::IsMember({"jsonl", "csv"}))->capture_default_str();
  tr->add_option("--split", tr_split, "Split json file")->required();
  tr->add_option("--out", tr_out, "Output directory")->required();
  tr->add_option("--mode", tr_mode, "mean (squared loss) or quantile (pinball heads)")
      ->check(CLI::IsMember({"mean", "quantile"}))->capture_default_str();
  tr->add_option("--objective", tr_objective, "log_residual, log, or proportional")
      ->check(CLI::IsMember({"log_residual", "log", "proportional"}))->capture_default_str();
  tr->add_flag("--no-standardize", tr_no_std, "Skip platform feature z-scoring");
  tr->add_option("--seed", tr_seed, "RNG seed")->capture_default_str();
  tr_net.add(tr);
  tr_train.add(tr);

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "Split-conformal calibration of a quantile model");
  std::string cal_model, cal_data, cal_format = "jsonl", cal_split, cal_transform, cal_out;
  std::vector<double> cal_eps = default_epsilons();
  bool cal_fallback = false;
  cal->add_option("--model", cal_model, "Trained quantile-mode model json")->required();
  cal->add_option("--data", cal_data, "Dataset directory")->required();
  cal->add_option("--format", cal_format, "Observation file format")
      ->check(CLI::IsMember({"jsonl", "csv"}))->capture_default_str();
  cal->add_option("--split", cal_split, "Split json file")->required();
  cal->add_option("--transform", cal_transform,
                  "feature_transform.json (default: next to the model)");
  cal->add_option("--out", cal_out, "Output directory")->required();
  cal->add_option("--epsilons", cal_eps, "Miscoverage rates")->delimiter(',')->capture_default_str();
  cal->add_flag("--fallback-largest-pool", cal_fallback,
                "Map unseen |K| to the largest calibrated pool instead of erroring");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Run the (fraction x replicate) experiment grid");
  std::string ev_data, ev_format = "jsonl", ev_out;
  std::string ev_objective = "log_residual", ev_interference = "model";
  bool ev_no_wf = false, ev_no_pf = false, ev_no_std = false, ev_no_bounds = false,
       ev_no_error = false;
  int ev_replicates = 5, ev_jobs = 1;
  std::vector<double> ev_fractions = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> ev_eps = default_epsilons();
  std::uint64_t ev_seed = seed_default;
  NetFlags ev_net;
  TrainFlags ev_train;
  ev->add_option("--data", ev_data, "Dataset directory")->required();
  ev->add_option("--format", ev_format, "Observation file format")
      ->check(CLI::IsMember({"jsonl", "csv"}))->capture_default_str();
  ev->add_option("--out", ev_out, "Output directory")->required();
  ev->add_option("--fractions", ev_fractions, "Training fractions")->delimiter(',')->capture_default_str();
  ev->add_option("--replicates", ev_replicates, "Replicates per fraction")->capture_default_str();
  ev->add_option("--objective", ev_objective, "log_residual, log, or proportional")
      ->check(CLI::IsMember({"log_residual", "log", "proportional"}))->capture_default_str();
  ev->add_option("--interference", ev_interference, "model, discard, or ignore")
      ->check(CLI::IsMember({"model", "discard", "ignore"}))->capture_default_str();
  ev->add_flag("--no-workload-features", ev_no_wf, "Drop workload side information");
  ev->add_flag("--no-platform-features", ev_no_pf, "Drop platform side information");
  ev->add_flag("--no-standardize", ev_no_std, "Skip platform feature z-scoring");
  ev->add_flag("--no-bounds", ev_no_bounds, "Skip quantile training and calibration");
  ev->add_flag("--no-error", ev_no_error, "Skip mean-mode training and MAPE");
  ev->add_option("--epsilons", ev_eps, "Miscoverage rates")->delimiter(',')->capture_default_str();
  ev->add_option("--epsilon", ev_eps, "Alias for --epsilons")->delimiter(',');
  ev->add_option("--seed", ev_seed, "Base seed for replicate derivation")->capture_default_str();
  ev->add_option("--jobs", ev_jobs, "Parallel replicate workers")->capture_default_str();
  ev_net.add(ev);
  ev_train.add(ev);

  // summarize
  auto* su = app.add_subcommand("summarize", "Aggregate run outputs into plot-ready CSVs");
  std::vector<std::string> su_runs;
  std::string su_out;
  su->add_option("runs", su_runs, "Run directories (or metrics.jsonl files)")->required();
  su->add_option("--out", su_out, "Output directory")->required();

  // export-embeddings
  auto* ex = app.add_subcommand("export-embeddings", "Export learned embeddings as CSV");
  std::string ex_model, ex_data, ex_format = "jsonl", ex_transform, ex_out;
  ex->add_option("--model", ex_model, "Trained model json")->required();
  ex->add_option("--data", ex_data, "Dataset directory")->required();
  ex->add_option("--format", ex_format, "Observation file format")
      ->check(CLI::IsMember({"jsonl", "csv"}))->capture_default_str();
  ex->add_option("--transform", ex_transform,
                 "feature_transform.json (default: next to the model)");
  ex->add_option("--out", ex_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(scfg, synth_seed, synth_out, synth_format);
    if (split->parsed())
      return cmd_split(split_data, split_format, split_fraction, split_seed,
                       split_out.empty() ? split_data : split_out);
    if (tr->parsed())
      return cmd_train(tr_data, tr_format, tr_split, tr_out, tr_mode, tr_objective,
                       tr_no_std, tr_net, tr_train, tr_seed);
    if (cal->parsed())
      return cmd_calibrate(cal_model, cal_data, cal_format, cal_split, cal_transform,
                           cal_out, cal_eps, cal_fallback);
    if (ev->parsed()) {
      ExperimentSpec spec;
      spec.train_fractions = ev_fractions;
      spec.replicates = ev_replicates;
      spec.objective = parse_objective(ev_objective);
      spec.interference = parse_interference(ev_interference);
      spec.use_workload_features = !ev_no_wf;
      spec.use_platform_features = !ev_no_pf;
      spec.standardize_features = !ev_no_std;
      spec.with_bounds = !ev_no_bounds;
      spec.with_error = !ev_no_error;
      spec.net = ev_net.to_config(true);  // mean_mode toggled per stage inside run_single
      spec.net.mean_mode = false;
      spec.train_cfg = ev_train.to_config(ev_seed);
      spec.loss = LossConfig{ev_train.interference_weight};
      spec.epsilons = ev_eps;
      spec.seed_base = ev_seed;
      nlohmann::json config = {{"data", ev_data},
                               {"fractions", ev_fractions},
                               {"replicates", ev_replicates},
                               {"objective", ev_objective},
                               {"interference", ev_interference},
                               {"workload_features", !ev_no_wf},
                               {"platform_features", !ev_no_pf},
                               {"standardize", !ev_no_std},
                               {"bounds", !ev_no_bounds},
                               {"error", !ev_no_error},
                               {"epsilons", ev_eps},
                               {"seed", ev_seed},
                               {"jobs", ev_jobs},
                               {"net", ev_net.to_json()},
                               {"train", ev_train.to_json()}};
      return cmd_evaluate(ev_data, ev_format, spec, ev_jobs, ev_out, config);
    }
    if (su->parsed()) return cmd_summarize(su_runs, su_out);
    if (ex->parsed()) return cmd_export(ex_model, ex_data, ex_format, ex_transform, ex_out);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const IndexError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
