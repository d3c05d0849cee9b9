#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "pitot/dataset.hpp"
#include "pitot/errors.hpp"
#include "pitot/util.hpp"

namespace pitot {

/// Interference-blind linear scaling baseline: log runtime ~ w_bar[i] + p_bar[j].
/// Gauge-fixed so that mean(p_bar) == 0.
struct BaselineModel {
  std::vector<double> w_bar;
  std::vector<double> p_bar;
  std::vector<int> fallback_workloads;  // never observed interference-free
  std::vector<int> fallback_platforms;

  static BaselineModel zeros(int n_w, int n_p) {
    BaselineModel m;
    m.w_bar.assign(static_cast<std::size_t>(n_w), 0.0);
    m.p_bar.assign(static_cast<std::size_t>(n_p), 0.0);
    return m;
  }
};

inline double baseline_log(const BaselineModel& m, int i, int j) {
  if (i < 0 || static_cast<std::size_t>(i) >= m.w_bar.size())
    throw IndexError("workload index out of range: " + std::to_string(i));
  if (j < 0 || static_cast<std::size_t>(j) >= m.p_bar.size())
    throw IndexError("platform index out of range: " + std::to_string(j));
  return m.w_bar[static_cast<std::size_t>(i)] + m.p_bar[static_cast<std::size_t>(j)];
}

/// Alternating closed-form sweeps on the interference-free observations in ids.
/// Stops when the squared-log loss decreases by less than tol between sweeps.
/// Optionally records the loss after every sweep.
inline BaselineModel fit_baseline(const Dataset& ds, std::span<const int> ids,
                                  int max_iters = 1000, double tol = 1e-10,
                                  std::vector<double>* sweep_losses = nullptr) {
  if (max_iters < 1) throw ValidationError("max_iters must be >= 1");
  if (!(tol > 0.0)) throw ValidationError("tol must be > 0");

  struct Entry {
    int i, j;
    double log_t;
  };
  std::vector<Entry> entries;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= ds.observations.size())
      throw IndexError("observation id out of range: " + std::to_string(id));
    const Observation& o = ds.observations[static_cast<std::size_t>(id)];
    if (o.mode() != 0) continue;
    entries.push_back({o.workload_id, o.platform_id, std::log(o.runtime_s)});
  }
  if (entries.empty())
    throw ValidationError("no interference-free observations to fit the baseline");

  const auto nw = static_cast<std::size_t>(ds.n_workloads);
  const auto np = static_cast<std::size_t>(ds.n_platforms);
  std::vector<std::vector<int>> by_w(nw), by_p(np);
  for (std::size_t e = 0; e < entries.size(); ++e) {
    by_w[static_cast<std::size_t>(entries[e].i)].push_back(static_cast<int>(e));
    by_p[static_cast<std::size_t>(entries[e].j)].push_back(static_cast<int>(e));
  }

  BaselineModel m = BaselineModel::zeros(ds.n_workloads, ds.n_platforms);
  auto loss = [&]() {
    double s = 0.0;
    for (const Entry& e : entries) {
      const double r = e.log_t - m.w_bar[static_cast<std::size_t>(e.i)] -
                       m.p_bar[static_cast<std::size_t>(e.j)];
      s += r * r;
    }
    return s;
  };

  double prev = loss();
  for (int iter = 0; iter < max_iters; ++iter) {
    for (std::size_t i = 0; i < nw; ++i) {
      if (by_w[i].empty()) continue;
      double s = 0.0;
      for (int e : by_w[i])
        s += entries[static_cast<std::size_t>(e)].log_t -
             m.p_bar[static_cast<std::size_t>(entries[static_cast<std::size_t>(e)].j)];
      m.w_bar[i] = s / static_cast<double>(by_w[i].size());
    }
    for (std::size_t j = 0; j < np; ++j) {
      if (by_p[j].empty()) continue;
      double s = 0.0;
      for (int e : by_p[j])
        s += entries[static_cast<std::size_t>(e)].log_t -
             m.w_bar[static_cast<std::size_t>(entries[static_cast<std::size_t>(e)].i)];
      m.p_bar[j] = s / static_cast<double>(by_p[j].size());
    }
    const double cur = loss();
    if (sweep_losses) sweep_losses->push_back(cur);
    if (prev - cur < tol) break;
    prev = cur;
  }

  // fallbacks: entities never observed interference-free get the observed mean
  double w_sum = 0.0, p_sum = 0.0;
  std::size_t w_n = 0, p_n = 0;
  for (std::size_t i = 0; i < nw; ++i)
    if (!by_w[i].empty()) {
      w_sum += m.w_bar[i];
      ++w_n;
    }
  for (std::size_t j = 0; j < np; ++j)
    if (!by_p[j].empty()) {
      p_sum += m.p_bar[j];
      ++p_n;
    }
  for (std::size_t i = 0; i < nw; ++i)
    if (by_w[i].empty()) {
      m.w_bar[i] = w_sum / static_cast<double>(w_n);
      m.fallback_workloads.push_back(static_cast<int>(i));
    }
  for (std::size_t j = 0; j < np; ++j)
    if (by_p[j].empty()) {
      m.p_bar[j] = p_sum / static_cast<double>(p_n);
      m.fallback_platforms.push_back(static_cast<int>(j));
    }

  // gauge fix: mean(p_bar) = 0
  double c = 0.0;
  for (double v : m.p_bar) c += v;
  c /= static_cast<double>(np);
  for (double& v : m.p_bar) v -= c;
  for (double& v : m.w_bar) v += c;
  return m;
}

/// Log-residuals y = ln(runtime) - (w_bar[i] + p_bar[j]); interference ignored.
inline std::vector<double> residual_targets(const BaselineModel& m,
                                            std::span<const Observation> obs) {
  std::vector<double> ys;
  ys.reserve(obs.size());
  for (const Observation& o : obs)
    ys.push_back(std::log(o.runtime_s) - baseline_log(m, o.workload_id, o.platform_id));
  return ys;
}

// --- serialization --------------------------------------------------------------

inline std::string baseline_to_json(const BaselineModel& m) {
  auto darr = [](std::span<const double> xs) {
    std::string s = "[";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) s += ',';
      s += format_g17(xs[i]);
    }
    return s + "]";
  };
  auto iarr = [](std::span<const int> xs) {
    std::string s = "[";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) s += ',';
      s += std::to_string(xs[i]);
    }
    return s + "]";
  };
  return "{\"w_bar\":" + darr(m.w_bar) + ",\"p_bar\":" + darr(m.p_bar) +
         ",\"fallback_workloads\":" + iarr(m.fallback_workloads) +
         ",\"fallback_platforms\":" + iarr(m.fallback_platforms) + "}\n";
}

inline BaselineModel baseline_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  BaselineModel m;
  m.w_bar = j.at("w_bar").get<std::vector<double>>();
  m.p_bar = j.at("p_bar").get<std::vector<double>>();
  m.fallback_workloads = j.value("fallback_workloads", std::vector<int>{});
  m.fallback_platforms = j.value("fallback_platforms", std::vector<int>{});
  return m;
}

}  // namespace pitot
