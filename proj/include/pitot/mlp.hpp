#pragma once

#include <cmath>
#include <vector>

#include "pitot/errors.hpp"
#include "pitot/util.hpp"

namespace pitot {

/// Exact-erf GELU: x * Phi(x).
inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
}

inline double gelu_prime(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return cdf + x * pdf;
}

struct DenseLayer {
  Matrix w;               // out x in
  std::vector<double> b;  // out
};

/// Fully connected network: GELU on all hidden layers, linear output.
/// Also used as a gradient buffer (same shape as its parameters).
struct Mlp {
  std::vector<DenseLayer> layers;

  std::size_t input_dim() const { return layers.front().w.cols; }
  std::size_t output_dim() const { return layers.back().w.rows; }

  static Mlp shaped(std::size_t input, const std::vector<int>& hidden, std::size_t output) {
    Mlp net;
    std::size_t in = input;
    for (int h : hidden) {
      if (h < 1) throw ValidationError("hidden layer width must be >= 1");
      net.layers.push_back({Matrix(static_cast<std::size_t>(h), in),
                            std::vector<double>(static_cast<std::size_t>(h), 0.0)});
      in = static_cast<std::size_t>(h);
    }
    net.layers.push_back({Matrix(output, in), std::vector<double>(output, 0.0)});
    return net;
  }

  /// Glorot-normal weights, zero biases.
  void init(Rng& rng) {
    for (auto& layer : layers) {
      const double std_dev =
          std::sqrt(2.0 / static_cast<double>(layer.w.cols + layer.w.rows));
      for (double& v : layer.w.data) v = draw_gaussian(rng, std_dev);
      for (double& v : layer.b) v = 0.0;
    }
  }

  void fill(double v) {
    for (auto& layer : layers) {
      std::fill(layer.w.data.begin(), layer.w.data.end(), v);
      std::fill(layer.b.begin(), layer.b.end(), v);
    }
  }

  bool all_finite() const {
    for (const auto& layer : layers) {
      if (!layer.w.all_finite()) return false;
      for (double v : layer.b)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

/// Per-layer inputs and pre-activations from one forward pass, kept for backprop.
struct MlpCache {
  std::vector<std::vector<double>> inputs;   // input to each layer
  std::vector<std::vector<double>> preacts;  // W x + b for each layer
};

inline std::vector<double> mlp_forward(const Mlp& net, std::span<const double> input,
                                       MlpCache* cache = nullptr) {
  std::vector<double> x(input.begin(), input.end());
  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const DenseLayer& layer = net.layers[l];
    std::vector<double> z(layer.w.rows);
    for (std::size_t r = 0; r < layer.w.rows; ++r)
      z[r] = layer.b[r] + dot(layer.w.row(r), std::span<const double>(x));
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->preacts.push_back(z);
    }
    const bool last = l + 1 == net.layers.size();
    if (!last)
      for (double& v : z) v = gelu(v);
    x = std::move(z);
  }
  return x;
}

/// Accumulates parameter gradients into `grad` (same shape as `net`) and,
/// when `d_input` is non-null, adds the gradient w.r.t. the network input.
inline void mlp_backward(const Mlp& net, const MlpCache& cache,
                         std::span<const double> d_output, Mlp& grad,
                         std::vector<double>* d_input = nullptr) {
  std::vector<double> delta(d_output.begin(), d_output.end());
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const DenseLayer& layer = net.layers[li];
    DenseLayer& glayer = grad.layers[li];
    const auto& in = cache.inputs[li];
    for (std::size_t r = 0; r < layer.w.rows; ++r) {
      glayer.b[r] += delta[r];
      auto grow = glayer.w.row(r);
      for (std::size_t c = 0; c < layer.w.cols; ++c) grow[c] += delta[r] * in[c];
    }
    if (li == 0 && !d_input) break;
    std::vector<double> prev(layer.w.cols, 0.0);
    for (std::size_t r = 0; r < layer.w.rows; ++r) {
      auto wrow = layer.w.row(r);
      for (std::size_t c = 0; c < layer.w.cols; ++c) prev[c] += wrow[c] * delta[r];
    }
    if (li == 0) {
      for (std::size_t c = 0; c < prev.size(); ++c) (*d_input)[c] += prev[c];
      break;
    }
    const auto& z = cache.preacts[li - 1];
    for (std::size_t c = 0; c < prev.size(); ++c) prev[c] *= gelu_prime(z[c]);
    delta = std::move(prev);
  }
}

}  // namespace pitot
