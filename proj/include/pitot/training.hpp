#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pitot/baseline.hpp"
#include "pitot/dataset.hpp"
#include "pitot/errors.hpp"
#include "pitot/model.hpp"
#include "pitot/util.hpp"

namespace pitot {

// --- losses -----------------------------------------------------------------------

inline double squared_log_loss(double pred_log, double target_log) {
  const double d = pred_log - target_log;
  return d * d;
}

/// Non-negative pinball loss; minimized at the xi-quantile of the targets.
inline double pinball_loss(double pred_log, double target_log, double xi) {
  if (!(xi > 0.0 && xi < 1.0)) throw ValidationError("pinball xi must be in (0,1)");
  return xi * std::max(target_log - pred_log, 0.0) +
         (1.0 - xi) * std::max(pred_log - target_log, 0.0);
}

enum class LossKind { squared, pinball, proportional };

namespace detail {

inline double head_loss(LossKind kind, double pred, double target, double xi) {
  switch (kind) {
    case LossKind::squared:
      return squared_log_loss(pred, target);
    case LossKind::pinball:
      return pinball_loss(pred, target, xi);
    case LossKind::proportional: {
      // squared relative error in linear space: ((C_hat - C*) / C*)^2
      const double e = std::expm1(pred - target);
      return e * e;
    }
  }
  return 0.0;
}

/// d(head_loss)/d(pred); pinball subgradient at the kink is 0.
inline double head_loss_grad(LossKind kind, double pred, double target, double xi) {
  switch (kind) {
    case LossKind::squared:
      return 2.0 * (pred - target);
    case LossKind::pinball:
      if (pred < target) return -xi;
      if (pred > target) return 1.0 - xi;
      return 0.0;
    case LossKind::proportional: {
      const double d = pred - target;
      return 2.0 * std::expm1(d) * std::exp(d);
    }
  }
  return 0.0;
}

}  // namespace detail

// --- configuration ------------------------------------------------------------------

struct LossConfig {
  double interference_weight = 0.5;  // beta

  double mode_weight(int mode) const {
    if (interference_weight < 0.0)
      throw ValidationError("interference_weight must be >= 0");
    return mode == 0 ? 1.0 : interference_weight / 3.0;
  }
};

struct TrainConfig {
  long long steps = 20000;
  int batch_per_mode = 512;
  int eval_every = 200;
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps < 0) throw ValidationError("steps must be >= 0");
    if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
    if (batch_per_mode < 1) throw ValidationError("batch_per_mode must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  }
};

/// Per-interference-mode batches of observation ids.
struct Batches {
  std::array<std::vector<int>, kMaxInterferers + 1> by_mode;
};

/// Gradient (or any parameter-shaped buffer) for the trainable parameters:
/// both networks and the learned features. Baseline parameters are constants.
struct ModelGrad {
  Mlp workload_net;
  Mlp platform_net;
  Matrix phi_w, phi_p;

  static ModelGrad zeros_like(const PitotModel& m) {
    ModelGrad g;
    g.workload_net = m.workload_net;
    g.workload_net.fill(0.0);
    g.platform_net = m.platform_net;
    g.platform_net.fill(0.0);
    g.phi_w = Matrix(m.phi_w.rows, m.phi_w.cols);
    g.phi_p = Matrix(m.phi_p.rows, m.phi_p.cols);
    return g;
  }
};

namespace detail {

inline void collect_arrays(Mlp& net, std::vector<std::span<double>>& out) {
  for (auto& layer : net.layers) {
    out.emplace_back(layer.w.data);
    out.emplace_back(layer.b);
  }
}

inline std::vector<std::span<double>> param_arrays(PitotModel& m) {
  std::vector<std::span<double>> out;
  collect_arrays(m.workload_net, out);
  collect_arrays(m.platform_net, out);
  out.emplace_back(m.phi_w.data);
  out.emplace_back(m.phi_p.data);
  return out;
}

inline std::vector<std::span<double>> param_arrays(ModelGrad& g) {
  std::vector<std::span<double>> out;
  collect_arrays(g.workload_net, out);
  collect_arrays(g.platform_net, out);
  out.emplace_back(g.phi_w.data);
  out.emplace_back(g.phi_p.data);
  return out;
}

}  // namespace detail

// --- loss over batches ---------------------------------------------------------------

/// Weighted multi-objective loss: per mode, the batch mean of the head-mean loss,
/// scaled by that mode's weight. Targets are baseline log-residuals indexed by
/// observation id.
inline double total_loss(const PitotModel& m, const FeatureTable& features,
                         std::span<const Observation> observations,
                         std::span<const double> targets, const Batches& batches,
                         const LossConfig& loss_cfg, LossKind kind) {
  const EmbeddingCache cache = compute_embeddings(m, features);
  const int q_heads = m.config.head_count();
  double total = 0.0;
  for (int mode = 0; mode <= kMaxInterferers; ++mode) {
    const auto& ids = batches.by_mode[static_cast<std::size_t>(mode)];
    if (ids.empty()) continue;
    const double coef = loss_cfg.mode_weight(mode) /
                        (static_cast<double>(ids.size()) * static_cast<double>(q_heads));
    for (int id : ids) {
      const Observation& o = observations[static_cast<std::size_t>(id)];
      const double y = targets[static_cast<std::size_t>(id)];
      for (int h = 0; h < q_heads; ++h) {
        const double pred = predict_residual_cached(m, cache, o, h);
        const double xi = m.config.mean_mode ? 0.5 : m.config.quantile_targets[static_cast<std::size_t>(h)];
        total += coef * detail::head_loss(kind, pred, y, xi);
      }
    }
  }
  return total;
}

/// Exact reverse-mode gradient of total_loss w.r.t. every trainable parameter.
/// Returns the loss value.
inline double loss_and_gradient(const PitotModel& m, const FeatureTable& features,
                                std::span<const Observation> observations,
                                std::span<const double> targets, const Batches& batches,
                                const LossConfig& loss_cfg, LossKind kind,
                                ModelGrad& grad) {
  const EmbeddingCache cache = compute_embeddings(m, features, /*for_training=*/true);
  const auto r = static_cast<std::size_t>(m.config.embed_dim);
  const auto s = static_cast<std::size_t>(m.config.interference_types);
  const int q_heads = m.config.head_count();

  Matrix d_wout(cache.w_out.rows, cache.w_out.cols);
  Matrix d_pout(cache.p_out.rows, cache.p_out.cols);
  std::vector<bool> w_touched(cache.w_out.rows, false), p_touched(cache.p_out.rows, false);

  double total = 0.0;
  std::vector<double> g_vals(s), s_vals(s), sum_k(r);
  for (int mode = 0; mode <= kMaxInterferers; ++mode) {
    const auto& ids = batches.by_mode[static_cast<std::size_t>(mode)];
    if (ids.empty()) continue;
    const double coef = loss_cfg.mode_weight(mode) /
                        (static_cast<double>(ids.size()) * static_cast<double>(q_heads));
    for (int id : ids) {
      const Observation& o = observations[static_cast<std::size_t>(id)];
      const double y = targets[static_cast<std::size_t>(id)];
      const auto ks = detail::canonical_interferers(o.interference);
      const auto i = static_cast<std::size_t>(o.workload_id);
      const auto j = static_cast<std::size_t>(o.platform_id);
      const auto p_row = cache.p_out.row(j);
      const auto p_emb = p_row.subspan(0, r);
      w_touched[i] = true;
      p_touched[j] = true;
      for (int k : ks) w_touched[static_cast<std::size_t>(k)] = true;

      for (int h = 0; h < q_heads; ++h) {
        const auto hb = static_cast<std::size_t>(h) * r;
        const auto w = cache.w_out.row(i).subspan(hb, r);
        double pred = dot(w, p_emb);
        if (!ks.empty()) {
          std::fill(sum_k.begin(), sum_k.end(), 0.0);
          for (int k : ks) {
            const auto wk = cache.w_out.row(static_cast<std::size_t>(k)).subspan(hb, r);
            for (std::size_t e = 0; e < r; ++e) sum_k[e] += wk[e];
          }
          for (std::size_t t = 0; t < s; ++t) {
            const auto v_s = p_row.subspan((1 + t) * r, r);
            const auto v_g = p_row.subspan((1 + s + t) * r, r);
            s_vals[t] = dot(w, v_s);
            g_vals[t] = dot(std::span<const double>(sum_k), v_g);
            pred += s_vals[t] * interference_alpha(m.config, g_vals[t]);
          }
        }
        const double xi =
            m.config.mean_mode ? 0.5 : m.config.quantile_targets[static_cast<std::size_t>(h)];
        total += coef * detail::head_loss(kind, pred, y, xi);
        const double dpred = coef * detail::head_loss_grad(kind, pred, y, xi);
        if (dpred == 0.0) continue;

        auto dw = d_wout.row(i).subspan(hb, r);
        auto dp = d_pout.row(j);
        for (std::size_t e = 0; e < r; ++e) {
          dw[e] += dpred * p_emb[e];
          dp[e] += dpred * w[e];
        }
        if (!ks.empty()) {
          for (std::size_t t = 0; t < s; ++t) {
            const double a = interference_alpha(m.config, g_vals[t]);
            const double ap = interference_alpha_prime(m.config, g_vals[t]);
            const auto v_s = p_row.subspan((1 + t) * r, r);
            const auto v_g = p_row.subspan((1 + s + t) * r, r);
            auto dv_s = dp.subspan((1 + t) * r, r);
            auto dv_g = dp.subspan((1 + s + t) * r, r);
            for (std::size_t e = 0; e < r; ++e) {
              dw[e] += dpred * a * v_s[e];
              dv_s[e] += dpred * a * w[e];
              dv_g[e] += dpred * s_vals[t] * ap * sum_k[e];
            }
            const double k_coef = dpred * s_vals[t] * ap;
            for (int k : ks) {
              auto dwk = d_wout.row(static_cast<std::size_t>(k)).subspan(hb, r);
              for (std::size_t e = 0; e < r; ++e) dwk[e] += k_coef * v_g[e];
            }
          }
        }
      }
    }
  }

  // backprop through the towers; learned-feature gradients come from the
  // trailing q entries of each input gradient
  const auto q = static_cast<std::size_t>(m.config.learned_dim);
  std::vector<double> d_in;
  for (std::size_t i = 0; i < cache.w_out.rows; ++i) {
    if (!w_touched[i]) continue;
    d_in.assign(m.workload_net.input_dim(), 0.0);
    mlp_backward(m.workload_net, cache.w_caches[i], d_wout.row(i), grad.workload_net,
                 &d_in);
    auto gphi = grad.phi_w.row(i);
    for (std::size_t e = 0; e < q; ++e) gphi[e] += d_in[d_in.size() - q + e];
  }
  for (std::size_t j = 0; j < cache.p_out.rows; ++j) {
    if (!p_touched[j]) continue;
    d_in.assign(m.platform_net.input_dim(), 0.0);
    mlp_backward(m.platform_net, cache.p_caches[j], d_pout.row(j), grad.platform_net,
                 &d_in);
    auto gphi = grad.phi_p.row(j);
    for (std::size_t e = 0; e < q; ++e) gphi[e] += d_in[d_in.size() - q + e];
  }
  return total;
}

/// Gradient of total_loss for every trainable parameter (phi included).
inline ModelGrad backward(const PitotModel& m, const FeatureTable& features,
                          std::span<const Observation> observations,
                          std::span<const double> targets, const Batches& batches,
                          const LossConfig& loss_cfg, LossKind kind) {
  ModelGrad grad = ModelGrad::zeros_like(m);
  loss_and_gradient(m, features, observations, targets, batches, loss_cfg, kind, grad);
  return grad;
}

// --- AdaMax --------------------------------------------------------------------------

/// First moment and infinity-norm accumulators, shaped like the parameters.
struct OptimizerState {
  ModelGrad m;
  ModelGrad u;
  long long t = 0;

  static OptimizerState zeros_like(const PitotModel& model) {
    return {ModelGrad::zeros_like(model), ModelGrad::zeros_like(model), 0};
  }
};

inline void adamax_update(double& param, double g, double& m, double& u, long long t,
                          const TrainConfig& cfg) {
  constexpr double kEps = 1e-8;
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
  u = std::max(cfg.beta2 * u, std::abs(g));
  const double rate = cfg.learning_rate / (1.0 - std::pow(cfg.beta1, static_cast<double>(t)));
  param -= rate * m / (u + kEps);
}

inline void adamax_step(PitotModel& model, ModelGrad& grads, OptimizerState& state,
                        const TrainConfig& cfg) {
  ++state.t;
  auto ps = detail::param_arrays(model);
  auto gs = detail::param_arrays(grads);
  auto ms = detail::param_arrays(state.m);
  auto us = detail::param_arrays(state.u);
  for (std::size_t a = 0; a < ps.size(); ++a)
    for (std::size_t e = 0; e < ps[a].size(); ++e)
      adamax_update(ps[a][e], gs[a][e], ms[a][e], us[a][e], state.t, cfg);
}

// --- training loop ----------------------------------------------------------------------

struct TrainLogRow {
  long long step = 0;
  double train_loss = 0.0;
  double calval_loss = 0.0;
  bool is_best = false;
};

struct TrainResult {
  PitotModel best_model;
  PitotModel final_model;
  std::vector<TrainLogRow> log;
  long long best_step = 0;
  double best_calval_loss = std::numeric_limits<double>::infinity();
};

namespace detail {

inline Batches pools_by_mode(std::span<const Observation> observations,
                             std::span<const int> ids) {
  Batches pools;
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= observations.size())
      throw IndexError("observation id out of range: " + std::to_string(id));
    pools.by_mode[static_cast<std::size_t>(observations[static_cast<std::size_t>(id)].mode())]
        .push_back(id);
  }
  return pools;
}

}  // namespace detail

/// Seeded stochastic training with per-mode batches sampled with replacement.
/// Every eval_every steps (and at the final step) the full calval loss is
/// computed with the training mode weights; the lowest-loss checkpoint wins.
inline TrainResult train(const Dataset& ds, const Split& split, const PitotModel& initial,
                         const TrainConfig& cfg, const LossConfig& loss_cfg,
                         LossKind kind) {
  cfg.validate();
  if (split.train_ids.empty()) throw ValidationError("train set is empty");
  if ((kind == LossKind::pinball) == initial.config.mean_mode)
    throw ValidationError(initial.config.mean_mode
                              ? "pinball loss requires a quantile-mode model"
                              : "quantile-mode model requires the pinball loss");

  const std::vector<double> targets = residual_targets(initial.baseline, ds.observations);
  const Batches train_pools = detail::pools_by_mode(ds.observations, split.train_ids);
  const Batches calval_pools = detail::pools_by_mode(ds.observations, split.calval_ids);

  TrainResult result;
  result.best_model = initial;
  result.final_model = initial;
  if (cfg.steps == 0) return result;

  PitotModel model = initial;
  OptimizerState opt = OptimizerState::zeros_like(model);
  ModelGrad grad = ModelGrad::zeros_like(model);
  Rng rng(cfg.seed);

  for (long long step = 1; step <= cfg.steps; ++step) {
    Batches batch;
    for (int mode = 0; mode <= kMaxInterferers; ++mode) {
      const auto& pool = train_pools.by_mode[static_cast<std::size_t>(mode)];
      if (pool.empty()) continue;
      auto& out = batch.by_mode[static_cast<std::size_t>(mode)];
      out.reserve(static_cast<std::size_t>(cfg.batch_per_mode));
      for (int b = 0; b < cfg.batch_per_mode; ++b)
        out.push_back(pool[draw_index(rng, pool.size())]);
    }
    grad = ModelGrad::zeros_like(model);
    const double train_loss = loss_and_gradient(model, ds.features, ds.observations,
                                                targets, batch, loss_cfg, kind, grad);
    adamax_step(model, grad, opt, cfg);

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      const double calval = total_loss(model, ds.features, ds.observations, targets,
                                       calval_pools, loss_cfg, kind);
      const bool is_best = calval < result.best_calval_loss;
      if (is_best) {
        result.best_calval_loss = calval;
        result.best_model = model;
        result.best_step = step;
      }
      result.log.push_back({step, train_loss, calval, is_best});
    }
  }
  result.final_model = std::move(model);
  return result;
}

inline std::string training_log_to_csv(std::span<const TrainLogRow> rows) {
  std::string out = "step,train_loss,calval_loss,is_best\n";
  for (const auto& row : rows)
    out += std::to_string(row.step) + "," + format_g17(row.train_loss) + "," +
           format_g17(row.calval_loss) + "," + (row.is_best ? "1" : "0") + "\n";
  return out;
}

}  // namespace pitot
