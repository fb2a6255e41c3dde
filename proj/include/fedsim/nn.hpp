#pragma once

// Minimal multilayer perceptron: affine layers with ReLU between them,
// logits out. Parameters live in one flat vector so that aggregation and
// SGD are plain vector arithmetic.
//
// Layer l maps a (B x in_l) activation to (B x out_l) via z = a W_l + b_l,
// with W_l stored row-major as (in_l x out_l) followed by b_l (out_l).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "fedsim/common.hpp"
#include "fedsim/rng.hpp"

namespace fedsim {

enum class Activation { ReLU };

struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims;
  std::size_t num_classes = 0;
  Activation activation = Activation::ReLU;

  void validate() const {
    require(input_dim > 0, "model: input_dim must be positive");
    require(num_classes >= 2, "model: num_classes must be at least 2");
    for (auto h : hidden_dims) require(h > 0, "model: hidden layer widths must be positive");
  }

  bool operator==(const ModelSpec&) const = default;
};

struct LayerShape {
  std::size_t rows = 0;  // fan-in
  std::size_t cols = 0;  // fan-out
  std::size_t bias = 0;  // == cols

  std::size_t size() const { return rows * cols + bias; }
  bool operator==(const LayerShape&) const = default;
};

inline std::vector<LayerShape> layer_shapes(const ModelSpec& spec) {
  std::vector<LayerShape> shapes;
  std::size_t fan_in = spec.input_dim;
  for (auto width : spec.hidden_dims) {
    shapes.push_back({fan_in, width, width});
    fan_in = width;
  }
  shapes.push_back({fan_in, spec.num_classes, spec.num_classes});
  return shapes;
}

struct ModelParams {
  std::vector<double> values;
  std::vector<LayerShape> shapes;

  std::size_t size() const { return values.size(); }
  std::size_t input_dim() const { return shapes.front().rows; }
  std::size_t num_classes() const { return shapes.back().cols; }

  void validate() const {
    require(!shapes.empty(), "params: no layers");
    std::size_t total = 0;
    for (std::size_t l = 0; l < shapes.size(); ++l) {
      require(shapes[l].bias == shapes[l].cols, "params: bias length must equal fan-out");
      if (l > 0) require(shapes[l].rows == shapes[l - 1].cols, "params: layer widths do not chain");
      total += shapes[l].size();
    }
    require(total == values.size(), "params: value count does not match layer shapes");
    for (double v : values) require(std::isfinite(v), "params: non-finite value");
  }

  bool operator==(const ModelParams&) const = default;
};

struct Batch {
  Matrix features;
  std::vector<int> labels;
};

// Weights ~ N(0, sqrt(2 / fan_in)), biases zero. Deterministic in (spec, seed).
inline ModelParams init_params(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams params;
  params.shapes = layer_shapes(spec);
  std::size_t total = 0;
  for (const auto& s : params.shapes) total += s.size();
  params.values.assign(total, 0.0);

  Rng rng = Rng::keyed(seed, {stream::kInit});
  std::size_t offset = 0;
  for (const auto& s : params.shapes) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(s.rows));
    for (std::size_t i = 0; i < s.rows * s.cols; ++i) params.values[offset + i] = rng.normal(0.0, stddev);
    offset += s.size();
  }
  return params;
}

namespace detail {

// Forward pass keeping every layer input (post-activation) and every
// pre-activation, which backward needs.
struct ForwardTrace {
  std::vector<Matrix> inputs;  // inputs[l] feeds layer l
  std::vector<Matrix> pre;     // pre[l] = inputs[l] W_l + b_l
};

inline Matrix affine(const Matrix& a, const double* weights, const double* bias, const LayerShape& s) {
  Matrix z(a.rows, s.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    double* zi = &z.data[i * s.cols];
    for (std::size_t j = 0; j < s.cols; ++j) zi[j] = bias[j];
    const double* ai = &a.data[i * a.cols];
    for (std::size_t k = 0; k < s.rows; ++k) {
      const double aik = ai[k];
      const double* wk = weights + k * s.cols;
      for (std::size_t j = 0; j < s.cols; ++j) zi[j] += aik * wk[j];
    }
  }
  return z;
}

inline ForwardTrace trace_forward(const ModelParams& params, const Matrix& features, bool keep) {
  require(features.cols == params.input_dim(), "forward: feature width does not match model input_dim");
  ForwardTrace trace;
  Matrix a = features;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < params.shapes.size(); ++l) {
    const auto& s = params.shapes[l];
    const double* w = params.values.data() + offset;
    Matrix z = affine(a, w, w + s.rows * s.cols, s);
    offset += s.size();
    if (keep) trace.inputs.push_back(a);
    if (l + 1 < params.shapes.size()) {
      a = z;
      for (auto& v : a.data) v = std::max(v, 0.0);
      if (keep) trace.pre.push_back(std::move(z));
    } else {
      if (keep) trace.pre.push_back(z);
      a = std::move(z);
    }
  }
  if (!keep) trace.pre.push_back(std::move(a));
  return trace;
}

}  // namespace detail

inline Matrix forward_logits(const ModelParams& params, const Matrix& features) {
  auto trace = detail::trace_forward(params, features, false);
  return std::move(trace.pre.back());
}

// log softmax(logits / T), computed with the max subtracted first.
inline std::vector<double> log_softmax_t(std::span<const double> logits, double temperature) {
  require(temperature > 0.0, "softmax: temperature must be positive");
  require(!logits.empty(), "softmax: empty logits");
  const double top = *std::max_element(logits.begin(), logits.end()) / temperature;
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z / temperature - top);
  const double log_norm = top + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t c = 0; c < logits.size(); ++c) out[c] = logits[c] / temperature - log_norm;
  return out;
}

inline std::vector<double> softmax_t(std::span<const double> logits, double temperature) {
  require(temperature > 0.0, "softmax: temperature must be positive");
  require(!logits.empty(), "softmax: empty logits");
  const double top = *std::max_element(logits.begin(), logits.end()) / temperature;
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    out[c] = std::exp(logits[c] / temperature - top);
    sum += out[c];
  }
  for (auto& p : out) p /= sum;
  return out;
}

// Gradient of a loss with respect to all parameters, given the loss gradient
// with respect to the logits of `features`.
inline std::vector<double> backward(const ModelParams& params, const Matrix& features, const Matrix& dloss_dlogits) {
  require(dloss_dlogits.rows == features.rows && dloss_dlogits.cols == params.num_classes(),
          "backward: dloss_dlogits must be B x C");
  auto trace = detail::trace_forward(params, features, true);

  std::vector<std::size_t> offsets(params.shapes.size());
  std::size_t offset = 0;
  for (std::size_t l = 0; l < params.shapes.size(); ++l) {
    offsets[l] = offset;
    offset += params.shapes[l].size();
  }

  std::vector<double> grad(params.size(), 0.0);
  Matrix delta = dloss_dlogits;
  for (std::size_t l = params.shapes.size(); l-- > 0;) {
    const auto& s = params.shapes[l];
    const Matrix& a = trace.inputs[l];
    double* gw = grad.data() + offsets[l];
    double* gb = gw + s.rows * s.cols;
    for (std::size_t i = 0; i < a.rows; ++i) {
      const double* di = &delta.data[i * s.cols];
      const double* ai = &a.data[i * s.rows];
      for (std::size_t k = 0; k < s.rows; ++k) {
        const double aik = ai[k];
        if (aik == 0.0) continue;
        double* gwk = gw + k * s.cols;
        for (std::size_t j = 0; j < s.cols; ++j) gwk[j] += aik * di[j];
      }
      for (std::size_t j = 0; j < s.cols; ++j) gb[j] += di[j];
    }
    if (l == 0) break;

    // delta_prev = (delta W^T) masked by relu'(pre[l-1])
    const double* w = params.values.data() + offsets[l];
    const Matrix& z_prev = trace.pre[l - 1];
    Matrix prev(delta.rows, s.rows);
    for (std::size_t i = 0; i < delta.rows; ++i) {
      const double* di = &delta.data[i * s.cols];
      for (std::size_t k = 0; k < s.rows; ++k) {
        if (z_prev(i, k) <= 0.0) continue;
        const double* wk = w + k * s.cols;
        double acc = 0.0;
        for (std::size_t j = 0; j < s.cols; ++j) acc += wk[j] * di[j];
        prev(i, k) = acc;
      }
    }
    delta = std::move(prev);
  }
  return grad;
}

inline std::vector<double> backward(const ModelParams& params, const Batch& batch, const Matrix& dloss_dlogits) {
  return backward(params, batch.features, dloss_dlogits);
}

// params - lr * gradient.
inline ModelParams sgd_step(ModelParams params, std::span<const double> gradient, double lr) {
  require(gradient.size() == params.size(), "sgd_step: gradient length does not match params");
  for (std::size_t i = 0; i < params.values.size(); ++i) params.values[i] -= lr * gradient[i];
  return params;
}

// Argmax of each logit row; ties go to the lowest index.
inline std::vector<int> predict(const ModelParams& params, const Matrix& features) {
  const Matrix logits = forward_logits(params, features);
  std::vector<int> out(logits.rows);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    const auto row = logits.row(i);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace fedsim
