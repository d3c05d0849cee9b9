#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pitot/dataset.hpp"
#include "pitot/errors.hpp"
#include "pitot/util.hpp"

namespace pitot {

struct SyntheticConfig {
  int n_workloads = 20;
  int n_platforms = 10;
  int d_w = 8;   // workload feature columns
  int d_p = 6;   // platform feature columns
  int true_rank = 4;
  int true_types = 1;
  int n_obs_per_mode = 100;  // observations for each |K| in {0,1,2,3}
  double noise_sigma = 0.0;
  double interference_scale = 0.1;  // factor std = interference_scale / sqrt(true_rank)
  double feature_noise = 0.05;
  double leaky_slope = 0.1;

  void validate() const {
    if (n_workloads < 1 || n_platforms < 1 || d_w < 1 || d_p < 1 || true_rank < 1 ||
        true_types < 1 || n_obs_per_mode < 1)
      throw ValidationError("synthetic config counts must be >= 1");
    if (noise_sigma < 0.0) throw ValidationError("noise_sigma must be >= 0");
    if (interference_scale < 0.0) throw ValidationError("interference_scale must be >= 0");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
      throw ValidationError("leaky_slope must be in (0,1)");
  }
};

/// Ground-truth generator state: planted baseline, residual factors, and
/// per-platform interference factors. Evaluates the exact planted log-runtime.
struct SyntheticOracle {
  SyntheticConfig config;
  std::uint64_t seed = 0;
  std::vector<double> w_bar, p_bar;
  Matrix workload_factors;              // N_w x r*
  Matrix platform_factors;              // N_p x r*
  std::vector<Matrix> susceptibility;   // per platform: s* x r*
  std::vector<Matrix> magnitude;        // per platform: s* x r*

  double activation(double x) const {
    return x >= 0.0 ? x : config.leaky_slope * x;
  }

  double eval_log(int i, int j, std::span<const int> interference) const {
    double v = w_bar[static_cast<std::size_t>(i)] + p_bar[static_cast<std::size_t>(j)] +
               dot(workload_factors.row(static_cast<std::size_t>(i)),
                   platform_factors.row(static_cast<std::size_t>(j)));
    if (!interference.empty()) {
      const Matrix& vs = susceptibility[static_cast<std::size_t>(j)];
      const Matrix& vg = magnitude[static_cast<std::size_t>(j)];
      for (std::size_t t = 0; t < vs.rows; ++t) {
        double g = 0.0;
        for (int k : interference)
          g += dot(workload_factors.row(static_cast<std::size_t>(k)), vg.row(t));
        v += dot(workload_factors.row(static_cast<std::size_t>(i)), vs.row(t)) *
             activation(g);
      }
    }
    return v;
  }
};

namespace detail {

/// Feature matrix as a noisy linear probe of per-entity planted vectors,
/// optionally shifted per column so every entry is non-negative.
inline Matrix probe_features(const std::vector<std::vector<double>>& planted, int d_out,
                             double noise, bool non_negative, Rng& rng) {
  const std::size_t n = planted.size();
  const std::size_t d_in = planted[0].size();
  Matrix probe(static_cast<std::size_t>(d_out), d_in);
  for (double& v : probe.data) v = draw_gaussian(rng, 1.0 / std::sqrt(static_cast<double>(d_in)));
  Matrix out(n, static_cast<std::size_t>(d_out));
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < static_cast<std::size_t>(d_out); ++c)
      out.at(r, c) = dot(probe.row(c), std::span<const double>(planted[r])) +
                     draw_gaussian(rng, noise);
  if (non_negative) {
    for (std::size_t c = 0; c < out.cols; ++c) {
      double lo = 0.0;
      for (std::size_t r = 0; r < out.rows; ++r) lo = std::min(lo, out.at(r, c));
      for (std::size_t r = 0; r < out.rows; ++r) out.at(r, c) -= lo;
    }
  }
  return out;
}

}  // namespace detail

inline std::pair<Dataset, SyntheticOracle> generate_synthetic(const SyntheticConfig& cfg,
                                                              std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  SyntheticOracle oracle;
  oracle.config = cfg;
  oracle.seed = seed;

  const auto nw = static_cast<std::size_t>(cfg.n_workloads);
  const auto np = static_cast<std::size_t>(cfg.n_platforms);
  const auto r = static_cast<std::size_t>(cfg.true_rank);
  const auto s = static_cast<std::size_t>(cfg.true_types);
  const double factor_std = 1.0 / std::sqrt(static_cast<double>(cfg.true_rank));
  const double interf_std = cfg.interference_scale / std::sqrt(static_cast<double>(cfg.true_rank));

  oracle.w_bar.resize(nw);
  for (auto& v : oracle.w_bar) v = draw_uniform(rng, -1.0, 1.0);
  oracle.p_bar.resize(np);
  for (auto& v : oracle.p_bar) v = draw_uniform(rng, -1.0, 1.0);
  oracle.workload_factors = Matrix(nw, r);
  for (auto& v : oracle.workload_factors.data) v = draw_gaussian(rng, factor_std);
  oracle.platform_factors = Matrix(np, r);
  for (auto& v : oracle.platform_factors.data) v = draw_gaussian(rng, factor_std);
  oracle.susceptibility.resize(np);
  oracle.magnitude.resize(np);
  for (std::size_t j = 0; j < np; ++j) {
    oracle.susceptibility[j] = Matrix(s, r);
    for (auto& v : oracle.susceptibility[j].data) v = draw_gaussian(rng, interf_std);
    oracle.magnitude[j] = Matrix(s, r);
    for (auto& v : oracle.magnitude[j].data) v = draw_gaussian(rng, interf_std);
  }

  Dataset ds;
  ds.n_workloads = cfg.n_workloads;
  ds.n_platforms = cfg.n_platforms;

  std::vector<std::vector<double>> wp(nw), pp(np);
  for (std::size_t i = 0; i < nw; ++i) {
    wp[i].push_back(oracle.w_bar[i]);
    auto row = oracle.workload_factors.row(i);
    wp[i].insert(wp[i].end(), row.begin(), row.end());
  }
  for (std::size_t j = 0; j < np; ++j) {
    pp[j].push_back(oracle.p_bar[j]);
    auto row = oracle.platform_factors.row(j);
    pp[j].insert(pp[j].end(), row.begin(), row.end());
    for (std::size_t t = 0; t < s; ++t) {
      auto vs = oracle.susceptibility[j].row(t);
      pp[j].insert(pp[j].end(), vs.begin(), vs.end());
      auto vg = oracle.magnitude[j].row(t);
      pp[j].insert(pp[j].end(), vg.begin(), vg.end());
    }
  }
  ds.features.workload_features =
      detail::probe_features(wp, cfg.d_w, cfg.feature_noise, /*non_negative=*/true, rng);
  ds.features.platform_features =
      detail::probe_features(pp, cfg.d_p, cfg.feature_noise, /*non_negative=*/false, rng);
  for (int c = 0; c < cfg.d_w; ++c)
    ds.features.workload_feature_names.push_back("wf" + std::to_string(c));
  for (int c = 0; c < cfg.d_p; ++c)
    ds.features.platform_feature_names.push_back("pf" + std::to_string(c));

  for (int mode = 0; mode <= kMaxInterferers; ++mode) {
    for (int n = 0; n < cfg.n_obs_per_mode; ++n) {
      Observation o;
      o.workload_id = static_cast<int>(draw_index(rng, nw));
      o.platform_id = static_cast<int>(draw_index(rng, np));
      for (int k = 0; k < mode; ++k)
        o.interference.push_back(static_cast<int>(draw_index(rng, nw)));
      std::sort(o.interference.begin(), o.interference.end());
      const double log_c = oracle.eval_log(o.workload_id, o.platform_id, o.interference) +
                           (cfg.noise_sigma > 0.0 ? draw_gaussian(rng, cfg.noise_sigma) : 0.0);
      o.runtime_s = std::exp(log_c);
      ds.observations.push_back(std::move(o));
    }
  }
  validate_dataset(ds);
  return {std::move(ds), std::move(oracle)};
}

// --- oracle serialization (inspection / reproduction aid) ----------------------

inline std::string oracle_to_json(const SyntheticOracle& o) {
  auto arr = [](std::span<const double> xs) {
    std::string s = "[";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (i) s += ',';
      s += format_g17(xs[i]);
    }
    return s + "]";
  };
  std::string out = "{\n";
  out += "  \"seed\": " + std::to_string(o.seed) + ",\n";
  out += "  \"config\": {\"n_workloads\": " + std::to_string(o.config.n_workloads) +
         ", \"n_platforms\": " + std::to_string(o.config.n_platforms) +
         ", \"d_w\": " + std::to_string(o.config.d_w) +
         ", \"d_p\": " + std::to_string(o.config.d_p) +
         ", \"true_rank\": " + std::to_string(o.config.true_rank) +
         ", \"true_types\": " + std::to_string(o.config.true_types) +
         ", \"n_obs_per_mode\": " + std::to_string(o.config.n_obs_per_mode) +
         ", \"noise_sigma\": " + format_g17(o.config.noise_sigma) +
         ", \"interference_scale\": " + format_g17(o.config.interference_scale) +
         ", \"feature_noise\": " + format_g17(o.config.feature_noise) +
         ", \"leaky_slope\": " + format_g17(o.config.leaky_slope) + "},\n";
  out += "  \"w_bar\": " + arr(o.w_bar) + ",\n";
  out += "  \"p_bar\": " + arr(o.p_bar) + ",\n";
  out += "  \"workload_factors\": " + arr(o.workload_factors.data) + ",\n";
  out += "  \"platform_factors\": " + arr(o.platform_factors.data) + ",\n";
  out += "  \"susceptibility\": [";
  for (std::size_t j = 0; j < o.susceptibility.size(); ++j) {
    if (j) out += ',';
    out += arr(o.susceptibility[j].data);
  }
  out += "],\n  \"magnitude\": [";
  for (std::size_t j = 0; j < o.magnitude.size(); ++j) {
    if (j) out += ',';
    out += arr(o.magnitude[j].data);
  }
  out += "]\n}\n";
  return out;
}

}  // namespace pitot
