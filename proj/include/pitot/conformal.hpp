#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pitot/dataset.hpp"
#include "pitot/errors.hpp"
#include "pitot/model.hpp"
#include "pitot/util.hpp"

namespace pitot {

struct ConformalOffset {
  bool feasible = false;
  double gamma = 0.0;
};

namespace detail {

/// ceil((n+1)(1-eps)) with near-integer snapping, so decimal eps values whose
/// product is mathematically integral do not tip over to the next rank.
inline long long conformal_rank(std::size_t n, double epsilon) {
  const double x = static_cast<double>(n + 1) * (1.0 - epsilon);
  const double nearest = std::round(x);
  if (std::abs(x - nearest) < 1e-9) return static_cast<long long>(nearest);
  return static_cast<long long>(std::ceil(x));
}

}  // namespace detail

/// k-th smallest residual with k = ceil((n+1)(1-eps)); infeasible when k > n.
inline ConformalOffset conformal_offset(std::span<const double> residuals,
                                        double epsilon) {
  if (residuals.empty()) throw ValidationError("conformal_offset: empty residuals");
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw ValidationError("epsilon must be in (0,1)");
  const long long k = detail::conformal_rank(residuals.size(), epsilon);
  if (k > static_cast<long long>(residuals.size())) return {false, 0.0};
  std::vector<double> sorted(residuals.begin(), residuals.end());
  std::sort(sorted.begin(), sorted.end());
  return {true, sorted[static_cast<std::size_t>(k - 1)]};
}

/// Mean relative excess of bounds over actuals; under-prediction contributes 0.
inline double overprovisioning_margin(std::span<const double> bounds,
                                      std::span<const double> actuals) {
  if (bounds.size() != actuals.size())
    throw ValidationError("overprovisioning_margin: length mismatch");
  if (bounds.empty()) throw ValidationError("overprovisioning_margin: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    if (!(actuals[i] > 0.0)) throw ValidationError("actual runtimes must be positive");
    s += std::max(bounds[i] - actuals[i], 0.0) / actuals[i];
  }
  return s / static_cast<double>(bounds.size());
}

inline std::vector<double> default_epsilons() {
  return {0.10, 0.09, 0.08, 0.07, 0.06, 0.05, 0.04, 0.03, 0.02, 0.01};
}

/// Conformal offsets and per-epsilon head selection for one calibration pool.
/// `offsets` and `margins` are head-major: entry [h * n_eps + e].
struct CalibrationPool {
  int size = 0;
  std::vector<double> offsets;
  std::vector<double> margins;       // calval margin of the calibrated head
  std::vector<int> selected_head;    // per epsilon; -1 when infeasible
  std::vector<bool> feasible;        // per epsilon
};

struct CalibrationTable {
  std::vector<double> epsilons;
  std::map<int, CalibrationPool> pools;  // keyed by |K|
  bool fallback_to_largest_pool = false;

  int epsilon_index(double eps) const {
    for (std::size_t e = 0; e < epsilons.size(); ++e)
      if (std::abs(epsilons[e] - eps) < 1e-12) return static_cast<int>(e);
    return -1;
  }
};

/// Calibrates every (pool, head, epsilon) combination on the calval set and
/// selects, per (pool, epsilon), the head whose calibrated bound has the
/// smallest overprovisioning margin on that same pool. Ties break toward the
/// larger target quantile.
inline CalibrationTable build_calibration(const PitotModel& model,
                                          const Dataset& ds,
                                          std::span<const int> calval_ids,
                                          std::vector<double> epsilons = default_epsilons()) {
  if (calval_ids.empty()) throw ValidationError("build_calibration: empty calval set");
  for (double e : epsilons)
    if (!(e > 0.0 && e < 1.0)) throw ValidationError("epsilon must be in (0,1)");

  const EmbeddingCache cache = compute_embeddings(model, ds.features);
  const int q_heads = model.config.head_count();
  const std::size_t n_eps = epsilons.size();

  std::map<int, std::vector<int>> pool_ids;
  for (int id : calval_ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= ds.observations.size())
      throw IndexError("observation id out of range: " + std::to_string(id));
    pool_ids[ds.observations[static_cast<std::size_t>(id)].mode()].push_back(id);
  }

  CalibrationTable table;
  table.epsilons = std::move(epsilons);
  for (auto& [pool_key, ids] : pool_ids) {
    CalibrationPool pool;
    pool.size = static_cast<int>(ids.size());
    pool.offsets.assign(static_cast<std::size_t>(q_heads) * n_eps, 0.0);
    pool.margins.assign(static_cast<std::size_t>(q_heads) * n_eps, 0.0);
    pool.selected_head.assign(n_eps, -1);
    pool.feasible.assign(n_eps, false);

    const std::size_t n = ids.size();
    Matrix pred_log(static_cast<std::size_t>(q_heads), n);
    std::vector<double> actual(n);
    for (std::size_t o = 0; o < n; ++o) {
      const Observation& obs = ds.observations[static_cast<std::size_t>(ids[o])];
      actual[o] = obs.runtime_s;
      const double base = baseline_log(model.baseline, obs.workload_id, obs.platform_id);
      for (int h = 0; h < q_heads; ++h)
        pred_log.at(static_cast<std::size_t>(h), o) =
            base + predict_residual_cached(model, cache, obs, h);
    }

    std::vector<double> residuals(n), bounds(n);
    for (int h = 0; h < q_heads; ++h) {
      for (std::size_t o = 0; o < n; ++o)
        residuals[o] = std::log(actual[o]) - pred_log.at(static_cast<std::size_t>(h), o);
      std::sort(residuals.begin(), residuals.end());
      for (std::size_t e = 0; e < n_eps; ++e) {
        const long long k = detail::conformal_rank(n, table.epsilons[e]);
        const std::size_t idx = static_cast<std::size_t>(h) * n_eps + e;
        if (k > static_cast<long long>(n)) continue;  // infeasible for every head
        const double gamma = residuals[static_cast<std::size_t>(k - 1)];
        pool.offsets[idx] = gamma;
        for (std::size_t o = 0; o < n; ++o)
          bounds[o] = std::exp(pred_log.at(static_cast<std::size_t>(h), o) + gamma);
        pool.margins[idx] = overprovisioning_margin(bounds, actual);
      }
    }
    for (std::size_t e = 0; e < n_eps; ++e) {
      if (detail::conformal_rank(n, table.epsilons[e]) > static_cast<long long>(n)) continue;
      pool.feasible[e] = true;
      int best = 0;
      for (int h = 1; h < q_heads; ++h)
        if (pool.margins[static_cast<std::size_t>(h) * n_eps + e] <=
            pool.margins[static_cast<std::size_t>(best) * n_eps + e])
          best = h;  // ties go to the larger target quantile
      pool.selected_head[e] = best;
    }
    table.pools[pool_key] = std::move(pool);
  }
  return table;
}

/// Runtime upper bound exp(forward of the selected head + gamma) for the
/// pool |K| at the requested miscoverage rate.
inline double predict_bound(const PitotModel& model, const FeatureTable& features,
                            const CalibrationTable& table, int i, int j,
                            std::span<const int> interference, double epsilon) {
  const int e = table.epsilon_index(epsilon);
  if (e < 0)
    throw ValidationError("epsilon " + format_shortest(epsilon) + " was not calibrated");
  int pool_key = static_cast<int>(interference.size());
  auto it = table.pools.find(pool_key);
  if (it == table.pools.end()) {
    if (!table.fallback_to_largest_pool || table.pools.empty())
      throw UnknownPoolError("no calibration pool for |K|=" + std::to_string(pool_key));
    it = std::prev(table.pools.end());
  }
  const CalibrationPool& pool = it->second;
  if (!pool.feasible[static_cast<std::size_t>(e)])
    throw InfeasibleError("pool |K|=" + std::to_string(pool_key) + " has too few points (" +
                          std::to_string(pool.size) + ") for epsilon " +
                          format_shortest(epsilon));
  const int h = pool.selected_head[static_cast<std::size_t>(e)];
  const double gamma =
      pool.offsets[static_cast<std::size_t>(h) * table.epsilons.size() +
                   static_cast<std::size_t>(e)];
  return std::exp(forward(model, features, i, j, interference, h) + gamma);
}

// --- serialization ---------------------------------------------------------------

inline std::string calibration_to_json(const CalibrationTable& t) {
  const std::size_t n_eps = t.epsilons.size();
  std::string out = "{\n\"epsilons\":[";
  for (std::size_t e = 0; e < n_eps; ++e) {
    if (e) out += ',';
    out += format_g17(t.epsilons[e]);
  }
  out += "],\n\"fallback_to_largest_pool\":";
  out += t.fallback_to_largest_pool ? "true" : "false";
  out += ",\n\"pools\":{";
  bool first_pool = true;
  for (const auto& [key, pool] : t.pools) {
    if (!first_pool) out += ',';
    first_pool = false;
    out += "\n\"" + std::to_string(key) + "\":{\"size\":" + std::to_string(pool.size);
    const auto heads = pool.offsets.size() / n_eps;
    out += ",\"offsets\":{";
    for (std::size_t h = 0; h < heads; ++h) {
      if (h) out += ',';
      out += "\"head_" + std::to_string(h) + "\":{";
      for (std::size_t e = 0; e < n_eps; ++e) {
        if (e) out += ',';
        out += "\"" + format_shortest(t.epsilons[e]) + "\":";
        out += pool.feasible[e] ? format_g17(pool.offsets[h * n_eps + e]) : "null";
      }
      out += '}';
    }
    out += "},\"margins\":{";
    for (std::size_t h = 0; h < heads; ++h) {
      if (h) out += ',';
      out += "\"head_" + std::to_string(h) + "\":{";
      for (std::size_t e = 0; e < n_eps; ++e) {
        if (e) out += ',';
        out += "\"" + format_shortest(t.epsilons[e]) + "\":";
        out += pool.feasible[e] ? format_g17(pool.margins[h * n_eps + e]) : "null";
      }
      out += '}';
    }
    out += "},\"selected_head\":{";
    for (std::size_t e = 0; e < n_eps; ++e) {
      if (e) out += ',';
      out += "\"" + format_shortest(t.epsilons[e]) + "\":" +
             (pool.feasible[e] ? std::to_string(pool.selected_head[e]) : "null");
    }
    out += "}}";
  }
  out += "\n}\n}\n";
  return out;
}

inline CalibrationTable calibration_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  CalibrationTable t;
  t.epsilons = j.at("epsilons").get<std::vector<double>>();
  t.fallback_to_largest_pool = j.value("fallback_to_largest_pool", false);
  const std::size_t n_eps = t.epsilons.size();
  for (const auto& [key, pj] : j.at("pools").items()) {
    CalibrationPool pool;
    pool.size = pj.at("size").get<int>();
    const auto& oj = pj.at("offsets");
    const std::size_t heads = oj.size();
    pool.offsets.assign(heads * n_eps, 0.0);
    pool.margins.assign(heads * n_eps, 0.0);
    pool.selected_head.assign(n_eps, -1);
    pool.feasible.assign(n_eps, false);
    const auto& sj = pj.at("selected_head");
    const auto& mj = pj.at("margins");
    for (std::size_t e = 0; e < n_eps; ++e) {
      const std::string ekey = format_shortest(t.epsilons[e]);
      if (sj.at(ekey).is_null()) continue;
      pool.feasible[e] = true;
      pool.selected_head[e] = sj.at(ekey).get<int>();
      for (std::size_t h = 0; h < heads; ++h) {
        const std::string hkey = "head_" + std::to_string(h);
        pool.offsets[h * n_eps + e] = oj.at(hkey).at(ekey).get<double>();
        pool.margins[h * n_eps + e] = mj.at(hkey).at(ekey).get<double>();
      }
    }
    t.pools[std::stoi(key)] = std::move(pool);
  }
  return t;
}

}  // namespace pitot
