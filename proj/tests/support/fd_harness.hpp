// Shared test harness: random gradcheck fixtures and a central finite
// difference oracle for the analytic gradients. Test-only code.
#pragma once

#include <cmath>
#include <numeric>

#include "pitot/baseline.hpp"
#include "pitot/synthetic.hpp"
#include "pitot/training.hpp"

namespace pitot::testsupport {

struct GradFixture {
  Dataset ds;
  PitotModel model;
  std::vector<double> targets;
  Batches batches;
};

/// Random model + batches over all four interference modes. Draws landing
/// within `kink_margin` of a pinball or leaky-ReLU kink are rejected: finite
/// differences are not a valid oracle across a kink.
inline GradFixture gradcheck_fixture(NetworkConfig cfg, LossKind kind, std::uint64_t seed,
                                     int per_mode = 6, double kink_margin = 1e-3) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    SyntheticConfig scfg;
    scfg.n_workloads = 9;
    scfg.n_platforms = 5;
    scfg.d_w = 3;
    scfg.d_p = 3;
    scfg.noise_sigma = 0.3;
    scfg.n_obs_per_mode = per_mode;
    auto [ds, oracle] = generate_synthetic(scfg, seed * 977 + attempt);
    std::vector<int> ids(ds.observations.size());
    std::iota(ids.begin(), ids.end(), 0);
    BaselineModel base = fit_baseline(ds, ids);
    PitotModel model = init_model(cfg, scfg.d_w, scfg.d_p, 9, 5, base, seed * 31 + attempt);
    for (auto& layer : model.workload_net.layers)
      for (auto& v : layer.w.data) v *= 2.0;
    for (auto& layer : model.platform_net.layers)
      for (auto& v : layer.w.data) v *= 2.0;

    GradFixture f{std::move(ds), std::move(model), {}, {}};
    f.targets = residual_targets(f.model.baseline, f.ds.observations);
    for (std::size_t o = 0; o < f.ds.observations.size(); ++o)
      f.batches.by_mode[static_cast<std::size_t>(f.ds.observations[o].mode())].push_back(
          static_cast<int>(o));

    const EmbeddingCache cache = compute_embeddings(f.model, f.ds.features);
    const auto r = static_cast<std::size_t>(cfg.embed_dim);
    const auto s = static_cast<std::size_t>(cfg.interference_types);
    bool ok = true;
    for (std::size_t oi = 0; oi < f.ds.observations.size() && ok; ++oi) {
      const Observation& o = f.ds.observations[oi];
      for (int h = 0; h < cfg.head_count() && ok; ++h) {
        const double pred = predict_residual_cached(f.model, cache, o, h);
        if (kind == LossKind::pinball && std::abs(pred - f.targets[oi]) < kink_margin)
          ok = false;
        if (cfg.activation == InterferenceActivation::leaky_relu &&
            !o.interference.empty()) {
          const auto p_row = cache.p_out.row(static_cast<std::size_t>(o.platform_id));
          for (std::size_t t = 0; t < s && ok; ++t) {
            double g = 0.0;
            for (int k : o.interference)
              g += dot(cache.w_out.row(static_cast<std::size_t>(k))
                           .subspan(static_cast<std::size_t>(h) * r, r),
                       p_row.subspan((1 + s + t) * r, r));
            if (std::abs(g) < kink_margin) ok = false;
          }
        }
      }
    }
    if (ok) return f;
  }
}

/// Central finite differences (h = 1e-5) on randomly sampled parameters;
/// returns the worst relative error against the analytic gradient.
inline double max_fd_rel_error(GradFixture& f, const LossConfig& loss_cfg, LossKind kind,
                               int n_samples, std::uint64_t seed) {
  ModelGrad grad = ModelGrad::zeros_like(f.model);
  loss_and_gradient(f.model, f.ds.features, f.ds.observations, f.targets, f.batches,
                    loss_cfg, kind, grad);
  auto params = detail::param_arrays(f.model);
  auto grads = detail::param_arrays(grad);
  std::size_t total = 0;
  for (const auto& a : params) total += a.size();

  const double h = 1e-5;
  Rng rng(seed);
  double worst = 0.0;
  for (int n = 0; n < n_samples; ++n) {
    std::size_t flat = draw_index(rng, total);
    std::size_t a = 0;
    while (flat >= params[a].size()) flat -= params[a++].size();
    const double saved = params[a][flat];
    params[a][flat] = saved + h;
    const double up = total_loss(f.model, f.ds.features, f.ds.observations, f.targets,
                                 f.batches, loss_cfg, kind);
    params[a][flat] = saved - h;
    const double dn = total_loss(f.model, f.ds.features, f.ds.observations, f.targets,
                                 f.batches, loss_cfg, kind);
    params[a][flat] = saved;
    const double fd = (up - dn) / (2.0 * h);
    const double an = grads[a][flat];
    if (std::abs(fd) < 1e-8 && std::abs(an) < 1e-8) continue;
    worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6}));
  }
  return worst;
}

}  // namespace pitot::testsupport
