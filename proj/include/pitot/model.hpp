#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pitot/baseline.hpp"
#include "pitot/dataset.hpp"
#include "pitot/errors.hpp"
#include "pitot/mlp.hpp"
#include "pitot/util.hpp"

namespace pitot {

enum class InterferenceActivation { leaky_relu, identity };

struct NetworkConfig {
  std::vector<int> hidden_sizes{128, 128};
  int embed_dim = 32;        // r
  int learned_dim = 1;       // q, extra learned features per entity
  int interference_types = 2;  // s
  std::vector<double> quantile_targets{0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98, 0.99};
  bool mean_mode = false;  // one head, squared loss, instead of pinball heads
  double leaky_slope = 0.1;
  InterferenceActivation activation = InterferenceActivation::leaky_relu;

  int head_count() const {
    return mean_mode ? 1 : static_cast<int>(quantile_targets.size());
  }

  void validate() const {
    if (embed_dim < 1) throw ValidationError("embed_dim must be >= 1");
    if (learned_dim < 0) throw ValidationError("learned_dim must be >= 0");
    if (interference_types < 0) throw ValidationError("interference_types must be >= 0");
    if (!(leaky_slope > 0.0 && leaky_slope < 1.0))
      throw ValidationError("leaky_slope must be in (0,1)");
    if (!mean_mode) {
      if (quantile_targets.empty()) throw ValidationError("quantile_targets must be non-empty");
      for (std::size_t i = 0; i < quantile_targets.size(); ++i) {
        if (!(quantile_targets[i] > 0.0 && quantile_targets[i] < 1.0))
          throw ValidationError("quantile targets must lie in (0,1)");
        if (i && !(quantile_targets[i] > quantile_targets[i - 1]))
          throw ValidationError("quantile targets must be strictly increasing");
      }
    }
  }
};

inline double interference_alpha(const NetworkConfig& cfg, double x) {
  if (cfg.activation == InterferenceActivation::identity) return x;
  return x >= 0.0 ? x : cfg.leaky_slope * x;
}

inline double interference_alpha_prime(const NetworkConfig& cfg, double x) {
  if (cfg.activation == InterferenceActivation::identity) return 1.0;
  return x >= 0.0 ? 1.0 : cfg.leaky_slope;
}

/// Two-tower model: the workload network emits one r-block per quantile head,
/// the platform network emits the platform embedding followed by s
/// susceptibility and s magnitude vectors. phi_* are learned per-entity
/// features appended to the side information.
struct PitotModel {
  NetworkConfig config;
  int d_w = 0, d_p = 0;
  int n_workloads = 0, n_platforms = 0;
  Mlp workload_net;
  Mlp platform_net;
  Matrix phi_w;  // N_w x q
  Matrix phi_p;  // N_p x q
  BaselineModel baseline;

  std::size_t workload_out_dim() const {
    return static_cast<std::size_t>(config.head_count()) *
           static_cast<std::size_t>(config.embed_dim);
  }
  std::size_t platform_out_dim() const {
    return static_cast<std::size_t>(config.embed_dim) *
           static_cast<std::size_t>(1 + 2 * config.interference_types);
  }
};

inline PitotModel init_model(const NetworkConfig& config, int d_w, int d_p, int n_w,
                             int n_p, const BaselineModel& baseline, std::uint64_t seed) {
  config.validate();
  if (d_w < 0 || d_p < 0) throw ValidationError("feature dimensions must be >= 0");
  if (n_w < 1 || n_p < 1) throw ValidationError("entity counts must be >= 1");
  if (d_w + config.learned_dim < 1 || d_p + config.learned_dim < 1)
    throw ValidationError("network input width would be zero; need features or learned_dim > 0");
  if (baseline.w_bar.size() != static_cast<std::size_t>(n_w) ||
      baseline.p_bar.size() != static_cast<std::size_t>(n_p))
    throw ValidationError("baseline dimensions do not match entity counts");

  PitotModel m;
  m.config = config;
  m.d_w = d_w;
  m.d_p = d_p;
  m.n_workloads = n_w;
  m.n_platforms = n_p;
  m.baseline = baseline;

  const auto q = static_cast<std::size_t>(config.learned_dim);
  m.workload_net = Mlp::shaped(static_cast<std::size_t>(d_w) + q, config.hidden_sizes,
                               m.workload_out_dim());
  m.platform_net = Mlp::shaped(static_cast<std::size_t>(d_p) + q, config.hidden_sizes,
                               m.platform_out_dim());
  Rng rng(seed);
  m.workload_net.init(rng);
  m.platform_net.init(rng);
  m.phi_w = Matrix(static_cast<std::size_t>(n_w), q);
  for (double& v : m.phi_w.data) v = draw_gaussian(rng, 0.01);
  m.phi_p = Matrix(static_cast<std::size_t>(n_p), q);
  for (double& v : m.phi_p.data) v = draw_gaussian(rng, 0.01);
  return m;
}

// --- embeddings ------------------------------------------------------------------

inline std::vector<double> workload_input(const PitotModel& m, const FeatureTable& f,
                                          int i) {
  if (i < 0 || i >= m.n_workloads)
    throw IndexError("workload index out of range: " + std::to_string(i));
  const auto row = f.workload_features.row(static_cast<std::size_t>(i));
  std::vector<double> x(row.begin(), row.end());
  const auto phi = m.phi_w.row(static_cast<std::size_t>(i));
  x.insert(x.end(), phi.begin(), phi.end());
  return x;
}

inline std::vector<double> platform_input(const PitotModel& m, const FeatureTable& f,
                                          int j) {
  if (j < 0 || j >= m.n_platforms)
    throw IndexError("platform index out of range: " + std::to_string(j));
  const auto row = f.platform_features.row(static_cast<std::size_t>(j));
  std::vector<double> x(row.begin(), row.end());
  const auto phi = m.phi_p.row(static_cast<std::size_t>(j));
  x.insert(x.end(), phi.begin(), phi.end());
  return x;
}

/// One r-dim embedding per quantile head, as a Q x r matrix.
inline Matrix embed_workload(const PitotModel& m, const FeatureTable& f, int i) {
  const auto out = mlp_forward(m.workload_net, workload_input(m, f, i));
  Matrix e(static_cast<std::size_t>(m.config.head_count()),
           static_cast<std::size_t>(m.config.embed_dim));
  std::copy(out.begin(), out.end(), e.data.begin());
  return e;
}

struct PlatformEmbedding {
  std::vector<double> p;  // r
  Matrix v_s;             // s x r
  Matrix v_g;             // s x r
};

inline PlatformEmbedding embed_platform(const PitotModel& m, const FeatureTable& f, int j) {
  const auto out = mlp_forward(m.platform_net, platform_input(m, f, j));
  const auto r = static_cast<std::size_t>(m.config.embed_dim);
  const auto s = static_cast<std::size_t>(m.config.interference_types);
  PlatformEmbedding e;
  e.p.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(r));
  e.v_s = Matrix(s, r);
  e.v_g = Matrix(s, r);
  for (std::size_t t = 0; t < s; ++t)
    for (std::size_t k = 0; k < r; ++k) {
      e.v_s.at(t, k) = out[(1 + t) * r + k];
      e.v_g.at(t, k) = out[(1 + s + t) * r + k];
    }
  return e;
}

// --- forward pass ------------------------------------------------------------------

namespace detail {

/// Residual prediction from raw network outputs. `w_rows[0]` is the predicted
/// workload's full Q*r output; the rest are the interferers' outputs, already
/// in canonical (sorted) order so the result is independent of K's ordering.
inline double residual_from_outputs(const NetworkConfig& cfg,
                                    std::span<const double> w_out,
                                    std::span<const double> p_out,
                                    const std::vector<std::span<const double>>& k_outs,
                                    int head) {
  const auto r = static_cast<std::size_t>(cfg.embed_dim);
  const auto s = static_cast<std::size_t>(cfg.interference_types);
  const auto w = w_out.subspan(static_cast<std::size_t>(head) * r, r);
  double v = dot(w, p_out.subspan(0, r));
  if (!k_outs.empty()) {
    for (std::size_t t = 0; t < s; ++t) {
      const auto v_s = p_out.subspan((1 + t) * r, r);
      const auto v_g = p_out.subspan((1 + s + t) * r, r);
      double g = 0.0;
      for (const auto& k_out : k_outs)
        g += dot(k_out.subspan(static_cast<std::size_t>(head) * r, r), v_g);
      v += dot(w, v_s) * interference_alpha(cfg, g);
    }
  }
  return v;
}

inline std::vector<int> canonical_interferers(std::span<const int> interference) {
  std::vector<int> ks(interference.begin(), interference.end());
  std::sort(ks.begin(), ks.end());
  return ks;
}

}  // namespace detail

/// Predicted log runtime for workload i on platform j under interference K.
inline double forward(const PitotModel& m, const FeatureTable& f, int i, int j,
                      std::span<const int> interference, int head) {
  if (head < 0 || head >= m.config.head_count())
    throw IndexError("head index out of range: " + std::to_string(head));
  const double base = baseline_log(m.baseline, i, j);
  const auto w_out = mlp_forward(m.workload_net, workload_input(m, f, i));
  const auto p_out = mlp_forward(m.platform_net, platform_input(m, f, j));
  const auto ks = detail::canonical_interferers(interference);
  std::vector<std::vector<double>> k_storage;
  std::vector<std::span<const double>> k_outs;
  k_storage.reserve(ks.size());
  for (int k : ks) {
    k_storage.push_back(mlp_forward(m.workload_net, workload_input(m, f, k)));
    k_outs.emplace_back(k_storage.back());
  }
  return base + detail::residual_from_outputs(m.config, w_out, p_out, k_outs, head);
}

inline double predict_runtime(const PitotModel& m, const FeatureTable& f, int i, int j,
                              std::span<const int> interference, int head) {
  return std::exp(forward(m, f, i, j, interference, head));
}

// --- batched embeddings ---------------------------------------------------------

/// All entity embeddings computed once; rows are raw network outputs.
struct EmbeddingCache {
  Matrix w_out;  // N_w x (Q*r)
  Matrix p_out;  // N_p x ((1+2s)*r)
  std::vector<MlpCache> w_caches;  // populated only when for_training
  std::vector<MlpCache> p_caches;
};

inline EmbeddingCache compute_embeddings(const PitotModel& m, const FeatureTable& f,
                                         bool for_training = false) {
  EmbeddingCache c;
  c.w_out = Matrix(static_cast<std::size_t>(m.n_workloads), m.workload_out_dim());
  c.p_out = Matrix(static_cast<std::size_t>(m.n_platforms), m.platform_out_dim());
  if (for_training) {
    c.w_caches.resize(static_cast<std::size_t>(m.n_workloads));
    c.p_caches.resize(static_cast<std::size_t>(m.n_platforms));
  }
  for (int i = 0; i < m.n_workloads; ++i) {
    const auto out = mlp_forward(m.workload_net, workload_input(m, f, i),
                                 for_training ? &c.w_caches[static_cast<std::size_t>(i)] : nullptr);
    auto row = c.w_out.row(static_cast<std::size_t>(i));
    std::copy(out.begin(), out.end(), row.begin());
  }
  for (int j = 0; j < m.n_platforms; ++j) {
    const auto out = mlp_forward(m.platform_net, platform_input(m, f, j),
                                 for_training ? &c.p_caches[static_cast<std::size_t>(j)] : nullptr);
    auto row = c.p_out.row(static_cast<std::size_t>(j));
    std::copy(out.begin(), out.end(), row.begin());
  }
  return c;
}

/// Residual prediction from cached embeddings; same arithmetic as forward().
inline double predict_residual_cached(const PitotModel& m, const EmbeddingCache& c,
                                      const Observation& o, int head,
                                      bool use_interference = true) {
  const auto ks = detail::canonical_interferers(o.interference);
  std::vector<std::span<const double>> k_outs;
  if (use_interference)
    for (int k : ks) k_outs.push_back(c.w_out.row(static_cast<std::size_t>(k)));
  return detail::residual_from_outputs(
      m.config, c.w_out.row(static_cast<std::size_t>(o.workload_id)),
      c.p_out.row(static_cast<std::size_t>(o.platform_id)), k_outs, head);
}

// --- serialization ----------------------------------------------------------------

namespace detail {

inline void emit_array(std::string& out, std::span<const double> xs) {
  out += '[';
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    out += format_g17(xs[i]);
  }
  out += ']';
}

inline void emit_mlp(std::string& out, const Mlp& net) {
  out += "[";
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (l) out += ',';
    const auto& layer = net.layers[l];
    out += "{\"rows\":" + std::to_string(layer.w.rows) +
           ",\"cols\":" + std::to_string(layer.w.cols) + ",\"weights\":";
    emit_array(out, layer.w.data);
    out += ",\"bias\":";
    emit_array(out, layer.b);
    out += '}';
  }
  out += ']';
}

inline Mlp parse_mlp(const nlohmann::json& j) {
  Mlp net;
  for (const auto& lj : j) {
    DenseLayer layer;
    layer.w = Matrix(lj.at("rows").get<std::size_t>(), lj.at("cols").get<std::size_t>());
    auto w = lj.at("weights").get<std::vector<double>>();
    if (w.size() != layer.w.data.size()) throw ParseError("weight array size mismatch");
    layer.w.data = std::move(w);
    layer.b = lj.at("bias").get<std::vector<double>>();
    if (layer.b.size() != layer.w.rows) throw ParseError("bias array size mismatch");
    net.layers.push_back(std::move(layer));
  }
  if (net.layers.empty()) throw ParseError("network with no layers");
  return net;
}

}  // namespace detail

inline std::string model_to_json(const PitotModel& m) {
  std::string out = "{\n\"format\":\"pitot-model-v1\",\n\"config\":{";
  out += "\"hidden_sizes\":[";
  for (std::size_t i = 0; i < m.config.hidden_sizes.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(m.config.hidden_sizes[i]);
  }
  out += "],\"embed_dim\":" + std::to_string(m.config.embed_dim) +
         ",\"learned_dim\":" + std::to_string(m.config.learned_dim) +
         ",\"interference_types\":" + std::to_string(m.config.interference_types) +
         ",\"quantile_targets\":";
  detail::emit_array(out, m.config.quantile_targets);
  out += ",\"mean_mode\":" + std::string(m.config.mean_mode ? "true" : "false") +
         ",\"leaky_slope\":" + format_g17(m.config.leaky_slope) + ",\"activation\":\"" +
         (m.config.activation == InterferenceActivation::leaky_relu ? "leaky_relu"
                                                                    : "identity") +
         "\"},\n";
  out += "\"dims\":{\"d_w\":" + std::to_string(m.d_w) + ",\"d_p\":" + std::to_string(m.d_p) +
         ",\"n_workloads\":" + std::to_string(m.n_workloads) +
         ",\"n_platforms\":" + std::to_string(m.n_platforms) + "},\n";
  out += "\"baseline\":{\"w_bar\":";
  detail::emit_array(out, m.baseline.w_bar);
  out += ",\"p_bar\":";
  detail::emit_array(out, m.baseline.p_bar);
  out += ",\"fallback_workloads\":[";
  for (std::size_t i = 0; i < m.baseline.fallback_workloads.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(m.baseline.fallback_workloads[i]);
  }
  out += "],\"fallback_platforms\":[";
  for (std::size_t i = 0; i < m.baseline.fallback_platforms.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(m.baseline.fallback_platforms[i]);
  }
  out += "]},\n\"workload_net\":";
  detail::emit_mlp(out, m.workload_net);
  out += ",\n\"platform_net\":";
  detail::emit_mlp(out, m.platform_net);
  out += ",\n\"phi_w\":{\"rows\":" + std::to_string(m.phi_w.rows) +
         ",\"cols\":" + std::to_string(m.phi_w.cols) + ",\"values\":";
  detail::emit_array(out, m.phi_w.data);
  out += "},\n\"phi_p\":{\"rows\":" + std::to_string(m.phi_p.rows) +
         ",\"cols\":" + std::to_string(m.phi_p.cols) + ",\"values\":";
  detail::emit_array(out, m.phi_p.data);
  out += "}\n}\n";
  return out;
}

inline PitotModel model_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("model json: ") + e.what());
  }
  PitotModel m;
  const auto& cj = j.at("config");
  m.config.hidden_sizes = cj.at("hidden_sizes").get<std::vector<int>>();
  m.config.embed_dim = cj.at("embed_dim").get<int>();
  m.config.learned_dim = cj.at("learned_dim").get<int>();
  m.config.interference_types = cj.at("interference_types").get<int>();
  m.config.quantile_targets = cj.at("quantile_targets").get<std::vector<double>>();
  m.config.mean_mode = cj.at("mean_mode").get<bool>();
  m.config.leaky_slope = cj.at("leaky_slope").get<double>();
  m.config.activation = cj.at("activation").get<std::string>() == "identity"
                            ? InterferenceActivation::identity
                            : InterferenceActivation::leaky_relu;
  const auto& dj = j.at("dims");
  m.d_w = dj.at("d_w").get<int>();
  m.d_p = dj.at("d_p").get<int>();
  m.n_workloads = dj.at("n_workloads").get<int>();
  m.n_platforms = dj.at("n_platforms").get<int>();
  const auto& bj = j.at("baseline");
  m.baseline.w_bar = bj.at("w_bar").get<std::vector<double>>();
  m.baseline.p_bar = bj.at("p_bar").get<std::vector<double>>();
  m.baseline.fallback_workloads = bj.value("fallback_workloads", std::vector<int>{});
  m.baseline.fallback_platforms = bj.value("fallback_platforms", std::vector<int>{});
  m.workload_net = detail::parse_mlp(j.at("workload_net"));
  m.platform_net = detail::parse_mlp(j.at("platform_net"));
  auto parse_phi = [](const nlohmann::json& pj) {
    Matrix out(pj.at("rows").get<std::size_t>(), pj.at("cols").get<std::size_t>());
    auto v = pj.at("values").get<std::vector<double>>();
    if (v.size() != out.data.size()) throw ParseError("phi array size mismatch");
    out.data = std::move(v);
    return out;
  };
  m.phi_w = parse_phi(j.at("phi_w"));
  m.phi_p = parse_phi(j.at("phi_p"));
  m.config.validate();
  return m;
}

}  // namespace pitot
