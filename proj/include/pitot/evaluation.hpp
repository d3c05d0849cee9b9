#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "pitot/baseline.hpp"
#include "pitot/conformal.hpp"
#include "pitot/dataset.hpp"
#include "pitot/errors.hpp"
#include "pitot/model.hpp"
#include "pitot/training.hpp"
#include "pitot/util.hpp"

namespace pitot {

/// Mean absolute percent error, as a fraction.
inline double mape(std::span<const double> predictions_s,
                   std::span<const double> actuals_s) {
  if (predictions_s.size() != actuals_s.size())
    throw ValidationError("mape: length mismatch");
  if (predictions_s.empty()) throw ValidationError("mape: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < predictions_s.size(); ++i) {
    if (!(actuals_s[i] > 0.0)) throw ValidationError("mape: actuals must be positive");
    s += std::abs(predictions_s[i] - actuals_s[i]) / actuals_s[i];
  }
  return s / static_cast<double>(predictions_s.size());
}

enum class ObjectiveKind { log_residual, log, proportional };
enum class InterferencePolicy { model, discard, ignore };

struct ExperimentSpec {
  std::vector<double> train_fractions{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  int replicates = 5;
  ObjectiveKind objective = ObjectiveKind::log_residual;
  bool use_workload_features = true;
  bool use_platform_features = true;
  InterferencePolicy interference = InterferencePolicy::model;
  bool standardize_features = true;
  bool with_error = true;   // mean-mode training + MAPE
  bool with_bounds = true;  // quantile-mode training + calibration
  NetworkConfig net;
  TrainConfig train_cfg;
  LossConfig loss;
  std::vector<double> epsilons = default_epsilons();
  std::uint64_t seed_base = 0;

  void validate() const {
    if (replicates < 1) throw ValidationError("replicates must be >= 1");
    if (train_fractions.empty()) throw ValidationError("train_fractions must be non-empty");
    for (double f : train_fractions)
      if (!(f > 0.0 && f < 1.0)) throw ValidationError("fractions must lie in (0,1)");
    if (!with_error && !with_bounds)
      throw ValidationError("nothing to evaluate: error and bounds both disabled");
  }
};

struct MetricsReport {
  double fraction = 0.0;
  int replicate = 0;
  std::uint64_t seed = 0;
  std::string status = "ok";  // or the error message
  double mape_no_interference = std::numeric_limits<double>::quiet_NaN();
  double mape_interference = std::numeric_limits<double>::quiet_NaN();
  std::map<int, double> pool_mape;
  std::map<double, double> margin;    // per epsilon, over all covered test points
  std::map<double, double> coverage;  // per epsilon
  std::map<int, std::map<double, double>> pool_margin;
  std::map<int, std::map<double, double>> pool_coverage;
};

struct RawPrediction {
  double fraction = 0.0;
  int replicate = 0;
  int observation_id = 0;
  int pool = 0;
  double actual_s = 0.0;
  double predicted_s = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> bounds_s;  // aligned with spec.epsilons; NaN when unavailable
};

struct ExperimentResult {
  std::vector<MetricsReport> reports;
  std::vector<RawPrediction> raw;
};

/// Test hook: receives every id set handed to a pipeline stage.
using StageObserver = std::function<void(const std::string& stage, std::span<const int> ids)>;

inline std::uint64_t replicate_seed(std::uint64_t seed_base, std::size_t fraction_index,
                                    int replicate) {
  return seed_base * 1000000ull + fraction_index * 10000ull +
         static_cast<std::uint64_t>(replicate);
}

namespace detail {

struct PreparedRun {
  Dataset data;  // features transformed; observations rewritten per policy
  std::vector<int> train_ids, calval_ids;
  bool predict_with_interference = true;
};

inline PreparedRun prepare_run(const Dataset& ds, const Split& split,
                               const ExperimentSpec& spec) {
  PreparedRun run;
  run.data = ds;
  run.train_ids = split.train_ids;
  run.calval_ids = split.calval_ids;

  switch (spec.interference) {
    case InterferencePolicy::model:
      break;
    case InterferencePolicy::discard: {
      auto keep_clean = [&](std::vector<int>& ids) {
        std::vector<int> kept;
        for (int id : ids)
          if (ds.observations[static_cast<std::size_t>(id)].mode() == 0) kept.push_back(id);
        ids = std::move(kept);
      };
      keep_clean(run.train_ids);
      keep_clean(run.calval_ids);
      run.predict_with_interference = false;
      break;
    }
    case InterferencePolicy::ignore:
      for (auto& o : run.data.observations) o.interference.clear();
      run.predict_with_interference = false;
      break;
  }
  if (run.train_ids.empty() || run.calval_ids.empty())
    throw ValidationError("interference policy left an empty train or calval set");

  if (!spec.use_workload_features) {
    run.data.features.workload_features =
        Matrix(static_cast<std::size_t>(ds.n_workloads), 0);
    run.data.features.workload_feature_names.clear();
  }
  if (!spec.use_platform_features) {
    run.data.features.platform_features =
        Matrix(static_cast<std::size_t>(ds.n_platforms), 0);
    run.data.features.platform_feature_names.clear();
  } else if (spec.standardize_features) {
    const ColumnTransform t = platform_feature_transform(run.data, run.train_ids);
    run.data.features.platform_features =
        apply_transform(run.data.features.platform_features, t);
  }
  return run;
}

inline BaselineModel fit_run_baseline(const PreparedRun& run, const ExperimentSpec& spec,
                                      const StageObserver& observer) {
  if (spec.objective != ObjectiveKind::log_residual)
    return BaselineModel::zeros(run.data.n_workloads, run.data.n_platforms);
  if (observer) observer("fit_baseline", run.train_ids);
  return fit_baseline(run.data, run.train_ids);
}

}  // namespace detail

/// One (fraction, replicate) run: split, baseline, training, calibration, and
/// test metrics grouped by interference pool.
inline MetricsReport run_single(const Dataset& ds, const ExperimentSpec& spec,
                                std::size_t fraction_index, int replicate,
                                std::vector<RawPrediction>* raw = nullptr,
                                const StageObserver& observer = nullptr) {
  const double fraction = spec.train_fractions.at(fraction_index);
  MetricsReport report;
  report.fraction = fraction;
  report.replicate = replicate;
  report.seed = replicate_seed(spec.seed_base, fraction_index, replicate);

  const Split split = make_split(ds, fraction, report.seed);
  if (observer) {
    observer("train", split.train_ids);
    observer("calval", split.calval_ids);
    observer("test", split.test_ids);
  }
  detail::PreparedRun run = detail::prepare_run(ds, split, spec);
  const BaselineModel base = detail::fit_run_baseline(run, spec, observer);

  Split run_split;
  run_split.train_ids = run.train_ids;
  run_split.calval_ids = run.calval_ids;
  run_split.seed = report.seed;
  run_split.train_fraction = fraction;

  TrainConfig tcfg = spec.train_cfg;
  tcfg.seed = report.seed;

  std::vector<RawPrediction> rows;
  if (raw) {
    rows.reserve(split.test_ids.size());
    for (int id : split.test_ids) {
      const Observation& o = ds.observations[static_cast<std::size_t>(id)];
      RawPrediction r;
      r.fraction = fraction;
      r.replicate = replicate;
      r.observation_id = id;
      r.pool = o.mode();
      r.actual_s = o.runtime_s;
      r.bounds_s.assign(spec.epsilons.size(), std::numeric_limits<double>::quiet_NaN());
      rows.push_back(std::move(r));
    }
  }

  if (spec.with_error) {
    NetworkConfig net = spec.net;
    net.mean_mode = true;
    PitotModel model = init_model(net, static_cast<int>(run.data.features.workload_features.cols),
                                  static_cast<int>(run.data.features.platform_features.cols),
                                  ds.n_workloads, ds.n_platforms, base, report.seed);
    const LossKind kind = spec.objective == ObjectiveKind::proportional
                              ? LossKind::proportional
                              : LossKind::squared;
    TrainResult tr = train(run.data, run_split, model, tcfg, spec.loss, kind);
    const EmbeddingCache cache = compute_embeddings(tr.best_model, run.data.features);

    std::map<int, std::vector<double>> preds, actuals;
    for (std::size_t t = 0; t < split.test_ids.size(); ++t) {
      const Observation& o =
          ds.observations[static_cast<std::size_t>(split.test_ids[t])];
      const double pred_log =
          baseline_log(base, o.workload_id, o.platform_id) +
          predict_residual_cached(tr.best_model, cache, o, 0, run.predict_with_interference);
      const double pred_s = std::exp(pred_log);
      preds[o.mode()].push_back(pred_s);
      actuals[o.mode()].push_back(o.runtime_s);
      if (raw) rows[t].predicted_s = pred_s;
    }
    std::vector<double> interf_preds, interf_actuals;
    for (const auto& [pool, ps] : preds) {
      report.pool_mape[pool] = mape(ps, actuals[pool]);
      if (pool > 0) {
        interf_preds.insert(interf_preds.end(), ps.begin(), ps.end());
        interf_actuals.insert(interf_actuals.end(), actuals[pool].begin(),
                              actuals[pool].end());
      }
    }
    if (preds.count(0)) report.mape_no_interference = report.pool_mape[0];
    if (!interf_preds.empty()) report.mape_interference = mape(interf_preds, interf_actuals);
  }

  if (spec.with_bounds && spec.interference == InterferencePolicy::model) {
    NetworkConfig net = spec.net;
    net.mean_mode = false;
    PitotModel model = init_model(net, static_cast<int>(run.data.features.workload_features.cols),
                                  static_cast<int>(run.data.features.platform_features.cols),
                                  ds.n_workloads, ds.n_platforms, base, report.seed);
    TrainResult tr = train(run.data, run_split, model, tcfg, spec.loss, LossKind::pinball);
    if (observer) observer("calibrate", run.calval_ids);
    const CalibrationTable table =
        build_calibration(tr.best_model, run.data, run.calval_ids, spec.epsilons);
    const EmbeddingCache cache = compute_embeddings(tr.best_model, run.data.features);

    for (std::size_t e = 0; e < spec.epsilons.size(); ++e) {
      const double eps = spec.epsilons[e];
      std::map<int, std::vector<double>> bounds, actuals;
      for (std::size_t t = 0; t < split.test_ids.size(); ++t) {
        const Observation& o =
            ds.observations[static_cast<std::size_t>(split.test_ids[t])];
        auto it = table.pools.find(o.mode());
        if (it == table.pools.end() || !it->second.feasible[e]) continue;
        const int h = it->second.selected_head[e];
        const double gamma =
            it->second.offsets[static_cast<std::size_t>(h) * spec.epsilons.size() + e];
        const double bound_s =
            std::exp(baseline_log(base, o.workload_id, o.platform_id) +
                     predict_residual_cached(tr.best_model, cache, o, h) + gamma);
        bounds[o.mode()].push_back(bound_s);
        actuals[o.mode()].push_back(o.runtime_s);
        if (raw) rows[t].bounds_s[e] = bound_s;
      }
      std::vector<double> all_bounds, all_actuals;
      for (const auto& [pool, bs] : bounds) {
        const auto& as = actuals[pool];
        report.pool_margin[pool][eps] = overprovisioning_margin(bs, as);
        std::size_t covered = 0;
        for (std::size_t o = 0; o < bs.size(); ++o)
          if (as[o] <= bs[o]) ++covered;
        report.pool_coverage[pool][eps] =
            static_cast<double>(covered) / static_cast<double>(bs.size());
        all_bounds.insert(all_bounds.end(), bs.begin(), bs.end());
        all_actuals.insert(all_actuals.end(), as.begin(), as.end());
      }
      if (!all_bounds.empty()) {
        report.margin[eps] = overprovisioning_margin(all_bounds, all_actuals);
        std::size_t covered = 0;
        for (std::size_t o = 0; o < all_bounds.size(); ++o)
          if (all_actuals[o] <= all_bounds[o]) ++covered;
        report.coverage[eps] =
            static_cast<double>(covered) / static_cast<double>(all_bounds.size());
      }
    }
  }

  if (raw) raw->insert(raw->end(), rows.begin(), rows.end());
  return report;
}

/// Full grid over (fraction, replicate). A failed replicate is recorded with
/// its error message, never silently dropped.
inline ExperimentResult run_experiment(const Dataset& ds, const ExperimentSpec& spec,
                                       const StageObserver& observer = nullptr) {
  spec.validate();
  ExperimentResult result;
  for (std::size_t fi = 0; fi < spec.train_fractions.size(); ++fi) {
    for (int rep = 0; rep < spec.replicates; ++rep) {
      try {
        result.reports.push_back(
            run_single(ds, spec, fi, rep, &result.raw, observer));
      } catch (const std::exception& e) {
        MetricsReport failed;
        failed.fraction = spec.train_fractions[fi];
        failed.replicate = rep;
        failed.seed = replicate_seed(spec.seed_base, fi, rep);
        failed.status = e.what();
        result.reports.push_back(std::move(failed));
      }
    }
  }
  return result;
}

// --- embedding export -----------------------------------------------------------

/// Largest singular value via power iteration on F^T F.
inline double spectral_norm(const Matrix& f, int iterations = 200) {
  if (f.rows == 0 || f.cols == 0) return 0.0;
  std::vector<double> v(f.cols, 1.0 / std::sqrt(static_cast<double>(f.cols)));
  std::vector<double> fv(f.rows), ftfv(f.cols);
  double sigma = 0.0;
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t r = 0; r < f.rows; ++r) fv[r] = dot(f.row(r), std::span<const double>(v));
    std::fill(ftfv.begin(), ftfv.end(), 0.0);
    for (std::size_t r = 0; r < f.rows; ++r) {
      const auto row = f.row(r);
      for (std::size_t c = 0; c < f.cols; ++c) ftfv[c] += row[c] * fv[r];
    }
    double norm = std::sqrt(dot(std::span<const double>(ftfv), std::span<const double>(ftfv)));
    if (norm == 0.0) return 0.0;
    for (std::size_t c = 0; c < f.cols; ++c) v[c] = ftfv[c] / norm;
    double fv_norm = 0.0;
    for (std::size_t r = 0; r < f.rows; ++r) fv_norm += fv[r] * fv[r];
    sigma = std::sqrt(fv_norm);
  }
  return sigma;
}

/// Materialized interference matrix F_j = sum_t v_s^(t) v_g^(t)^T.
inline Matrix interference_matrix(const PitotModel& m, const FeatureTable& f, int j) {
  const PlatformEmbedding e = embed_platform(m, f, j);
  const auto r = static_cast<std::size_t>(m.config.embed_dim);
  Matrix out(r, r);
  for (std::size_t t = 0; t < e.v_s.rows; ++t)
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < r; ++b)
        out.at(a, b) += e.v_s.at(t, a) * e.v_g.at(t, b);
  return out;
}

/// Writes workload_embeddings.csv (one row per workload, Q*r columns) and
/// platform_embeddings.csv (platform embedding, interference vectors, and the
/// spectral norm of the materialized interference matrix).
inline void export_embeddings(const PitotModel& m, const FeatureTable& f,
                              const std::string& dir) {
  const int q_heads = m.config.head_count();
  const int r = m.config.embed_dim;
  const int s = m.config.interference_types;

  std::string w_csv = "workload";
  for (int h = 0; h < q_heads; ++h)
    for (int e = 0; e < r; ++e) w_csv += ",h" + std::to_string(h) + "_e" + std::to_string(e);
  w_csv += '\n';
  for (int i = 0; i < m.n_workloads; ++i) {
    const Matrix emb = embed_workload(m, f, i);
    w_csv += std::to_string(i);
    for (double v : emb.data) w_csv += "," + format_g17(v);
    w_csv += '\n';
  }
  write_text_file(dir + "/workload_embeddings.csv", w_csv);

  std::string p_csv = "platform";
  for (int e = 0; e < r; ++e) p_csv += ",p_e" + std::to_string(e);
  for (int t = 0; t < s; ++t) {
    for (int e = 0; e < r; ++e) p_csv += ",vs" + std::to_string(t) + "_e" + std::to_string(e);
    for (int e = 0; e < r; ++e) p_csv += ",vg" + std::to_string(t) + "_e" + std::to_string(e);
  }
  p_csv += ",f_spectral_norm\n";
  for (int j = 0; j < m.n_platforms; ++j) {
    const PlatformEmbedding emb = embed_platform(m, f, j);
    p_csv += std::to_string(j);
    for (double v : emb.p) p_csv += "," + format_g17(v);
    for (std::size_t t = 0; t < emb.v_s.rows; ++t) {
      for (double v : emb.v_s.row(t)) p_csv += "," + format_g17(v);
      for (double v : emb.v_g.row(t)) p_csv += "," + format_g17(v);
    }
    p_csv += "," + format_g17(spectral_norm(interference_matrix(m, f, j))) + '\n';
  }
  write_text_file(dir + "/platform_embeddings.csv", p_csv);
}

// --- aggregation ------------------------------------------------------------------

/// Plot-ready CSVs aggregated over successful replicates.
inline void summarize(std::span<const MetricsReport> reports, const std::string& out_dir) {
  if (reports.empty()) throw ValidationError("summarize: no runs");

  std::map<double, std::map<std::string, std::vector<double>>> error_rows;
  std::map<std::pair<double, double>, std::vector<double>> margin_rows, coverage_rows;
  for (const auto& rep : reports) {
    if (rep.status != "ok") continue;
    if (std::isfinite(rep.mape_no_interference))
      error_rows[rep.fraction]["no_interference"].push_back(rep.mape_no_interference);
    if (std::isfinite(rep.mape_interference))
      error_rows[rep.fraction]["interference"].push_back(rep.mape_interference);
    for (const auto& [eps, v] : rep.margin) margin_rows[{rep.fraction, eps}].push_back(v);
    for (const auto& [eps, v] : rep.coverage)
      coverage_rows[{rep.fraction, eps}].push_back(v);
  }

  std::string err_csv = "fraction,mode,mean_mape,stderr,replicates\n";
  for (const auto& [fraction, modes] : error_rows)
    for (const auto& [mode, vals] : modes)
      err_csv += format_shortest(fraction) + "," + mode + "," + format_g17(mean(vals)) +
                 "," + format_g17(standard_error(vals)) + "," +
                 std::to_string(vals.size()) + "\n";
  write_text_file(out_dir + "/error_vs_fraction.csv", err_csv);

  auto emit_eps = [](const std::map<std::pair<double, double>, std::vector<double>>& rows,
                     const std::string& value_name) {
    std::string csv = "fraction,epsilon,mean_" + value_name + ",stderr,replicates\n";
    for (const auto& [key, vals] : rows)
      csv += format_shortest(key.first) + "," + format_shortest(key.second) + "," +
             format_g17(mean(vals)) + "," + format_g17(standard_error(vals)) + "," +
             std::to_string(vals.size()) + "\n";
    return csv;
  };
  write_text_file(out_dir + "/margin_vs_epsilon.csv", emit_eps(margin_rows, "margin"));
  write_text_file(out_dir + "/coverage_vs_epsilon.csv",
                  emit_eps(coverage_rows, "coverage"));
}

// --- report serialization ------------------------------------------------------------

inline std::string report_to_json(const MetricsReport& r) {
  std::string out = "{\"fraction\":" + format_g17(r.fraction) +
                    ",\"replicate\":" + std::to_string(r.replicate) +
                    ",\"seed\":" + std::to_string(r.seed) + ",\"status\":";
  out += nlohmann::json(r.status).dump();
  auto emit_opt = [&out](const char* key, double v) {
    out += std::string(",\"") + key + "\":";
    out += std::isfinite(v) ? format_g17(v) : "null";
  };
  emit_opt("mape_no_interference", r.mape_no_interference);
  emit_opt("mape_interference", r.mape_interference);
  auto emit_eps_map = [&out](const char* key, const std::map<double, double>& m) {
    out += std::string(",\"") + key + "\":{";
    bool first = true;
    for (const auto& [eps, v] : m) {
      if (!first) out += ',';
      first = false;
      out += "\"" + format_shortest(eps) + "\":" + format_g17(v);
    }
    out += '}';
  };
  emit_eps_map("margin", r.margin);
  emit_eps_map("coverage", r.coverage);
  out += ",\"pool_mape\":{";
  bool first = true;
  for (const auto& [pool, v] : r.pool_mape) {
    if (!first) out += ',';
    first = false;
    out += "\"" + std::to_string(pool) + "\":" + format_g17(v);
  }
  out += '}';
  auto emit_pool_eps = [&out](const char* key,
                              const std::map<int, std::map<double, double>>& m) {
    out += std::string(",\"") + key + "\":{";
    bool first_pool = true;
    for (const auto& [pool, eps_map] : m) {
      if (!first_pool) out += ',';
      first_pool = false;
      out += "\"" + std::to_string(pool) + "\":{";
      bool first_eps = true;
      for (const auto& [eps, v] : eps_map) {
        if (!first_eps) out += ',';
        first_eps = false;
        out += "\"" + format_shortest(eps) + "\":" + format_g17(v);
      }
      out += '}';
    }
    out += '}';
  };
  emit_pool_eps("pool_margin", r.pool_margin);
  emit_pool_eps("pool_coverage", r.pool_coverage);
  out += '}';
  return out;
}

inline MetricsReport report_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  MetricsReport r;
  r.fraction = j.at("fraction").get<double>();
  r.replicate = j.at("replicate").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.status = j.at("status").get<std::string>();
  if (!j.at("mape_no_interference").is_null())
    r.mape_no_interference = j.at("mape_no_interference").get<double>();
  if (!j.at("mape_interference").is_null())
    r.mape_interference = j.at("mape_interference").get<double>();
  for (const auto& [k, v] : j.at("margin").items())
    r.margin[parse_double(k, "margin key")] = v.get<double>();
  for (const auto& [k, v] : j.at("coverage").items())
    r.coverage[parse_double(k, "coverage key")] = v.get<double>();
  const nlohmann::json pool_mape = j.value("pool_mape", nlohmann::json::object());
  for (const auto& [k, v] : pool_mape.items()) r.pool_mape[std::stoi(k)] = v.get<double>();
  auto parse_pool_eps = [&j](const char* key, std::map<int, std::map<double, double>>& m) {
    const nlohmann::json obj = j.value(key, nlohmann::json::object());
    for (const auto& [pool, eps_map] : obj.items())
      for (const auto& [eps, v] : eps_map.items())
        m[std::stoi(pool)][parse_double(eps, key)] = v.get<double>();
  };
  parse_pool_eps("pool_margin", r.pool_margin);
  parse_pool_eps("pool_coverage", r.pool_coverage);
  return r;
}

}  // namespace pitot
