#include "hpl/layers.hpp"

#include <cmath>
#include <string>

#include "hpl/errors.hpp"

namespace hpl {

Tensor affine_forward(const Tensor& x, const AffineLayer& layer) {
  const std::size_t in = layer.in_size();
  const std::size_t out = layer.out_size();
  if (x.size() != in) {
    throw ShapeError("affine_forward: input length " +
                     std::to_string(x.size()) + " != layer input size " +
                     std::to_string(in));
  }
  Tensor y({out});
  const double* w = layer.weights.data.data();
  for (std::size_t o = 0; o < out; ++o) {
    double acc = layer.bias[o];
    const double* row = w + o * in;
    for (std::size_t i = 0; i < in; ++i) acc += row[i] * x[i];
    y[o] = acc;
  }
  return y;
}

Tensor tanh_forward(const Tensor& x) {
  Tensor y = x;
  for (double& v : y.data) v = std::tanh(v);
  return y;
}

Tensor tanh_backward(const Tensor& tanh_out, const Tensor& upstream) {
  require_same_shape(tanh_out, upstream, "tanh_backward");
  Tensor g = upstream;
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] *= 1.0 - tanh_out[i] * tanh_out[i];
  }
  return g;
}

AffineGrads affine_backward(const AffineLayer& layer, const Tensor& x,
                            const Tensor& upstream) {
  const std::size_t in = layer.in_size();
  const std::size_t out = layer.out_size();
  if (x.size() != in) throw ShapeError("affine_backward: input size mismatch");
  if (upstream.size() != out) {
    throw ShapeError("affine_backward: upstream size mismatch");
  }
  AffineGrads g;
  g.weights = Tensor({out, in});
  g.bias = upstream;
  g.input = Tensor(x.shape);
  const double* w = layer.weights.data.data();
  for (std::size_t o = 0; o < out; ++o) {
    const double u = upstream[o];
    double* wrow = g.weights.data.data() + o * in;
    const double* row = w + o * in;
    for (std::size_t i = 0; i < in; ++i) {
      wrow[i] = u * x[i];
      g.input[i] += row[i] * u;
    }
  }
  return g;
}

GradStore GradStore::zeros_like(const std::vector<AffineLayer>& params) {
  GradStore g;
  g.layers.reserve(params.size());
  for (const auto& l : params) {
    g.layers.push_back({Tensor(l.weights.shape), Tensor(l.bias.shape)});
  }
  return g;
}

void GradStore::accumulate(const GradStore& other) {
  if (layers.size() != other.layers.size()) {
    throw ShapeError("gradstore: layer count mismatch");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    require_same_shape(layers[i].weights, other.layers[i].weights,
                       "gradstore accumulate");
    require_same_shape(layers[i].bias, other.layers[i].bias,
                       "gradstore accumulate");
    for (std::size_t k = 0; k < layers[i].weights.size(); ++k) {
      layers[i].weights[k] += other.layers[i].weights[k];
    }
    for (std::size_t k = 0; k < layers[i].bias.size(); ++k) {
      layers[i].bias[k] += other.layers[i].bias[k];
    }
  }
}

void GradStore::scale(double factor) {
  for (auto& l : layers) {
    for (double& v : l.weights.data) v *= factor;
    for (double& v : l.bias.data) v *= factor;
  }
}

void GradStore::zero() {
  for (auto& l : layers) {
    std::fill(l.weights.data.begin(), l.weights.data.end(), 0.0);
    std::fill(l.bias.data.begin(), l.bias.data.end(), 0.0);
  }
}

double GradStore::squared_norm() const {
  double s = 0.0;
  for (const auto& l : layers) {
    for (double v : l.weights.data) s += v * v;
    for (double v : l.bias.data) s += v * v;
  }
  return s;
}

void validate_schedule(const SgdSchedule& s) {
  if (!(s.learning_rate > 0.0)) {
    throw ArgumentError("schedule: learning_rate must be positive");
  }
  if (s.momentum < 0.0 || s.momentum >= 1.0) {
    throw ArgumentError("schedule: momentum must lie in [0, 1)");
  }
  if (s.weight_decay < 0.0) {
    throw ArgumentError("schedule: weight_decay must be nonnegative");
  }
  if (s.batch_size < 1) throw ArgumentError("schedule: batch_size must be >= 1");
}

void sgd_step(std::vector<AffineLayer>& params, const GradStore& grads,
              const SgdSchedule& schedule, GradStore& velocity) {
  if (params.size() != grads.layers.size() ||
      params.size() != velocity.layers.size()) {
    throw ShapeError("sgd_step: layer count mismatch");
  }
  for (std::size_t li = 0; li < params.size(); ++li) {
    auto& p = params[li];
    const auto& g = grads.layers[li];
    auto& v = velocity.layers[li];
    require_same_shape(p.weights, g.weights, "sgd_step");
    require_same_shape(p.bias, g.bias, "sgd_step");
    for (std::size_t k = 0; k < p.weights.size(); ++k) {
      v.weights[k] = schedule.momentum * v.weights[k] + g.weights[k] +
                     schedule.weight_decay * p.weights[k];
      p.weights[k] -= schedule.learning_rate * v.weights[k];
    }
    for (std::size_t k = 0; k < p.bias.size(); ++k) {
      v.bias[k] = schedule.momentum * v.bias[k] + g.bias[k] +
                  schedule.weight_decay * p.bias[k];
      p.bias[k] -= schedule.learning_rate * v.bias[k];
    }
  }
}

ForwardTape stack_forward(const AffineTanhStack& stack, const Tensor& x) {
  if (stack.layers.empty()) throw StateError("stack_forward: empty stack");
  ForwardTape tape;
  tape.input = x;
  tape.affine_out.reserve(stack.layers.size());
  tape.tanh_out.reserve(stack.layers.size());
  const Tensor* cur = &tape.input;
  for (const auto& layer : stack.layers) {
    tape.affine_out.push_back(affine_forward(*cur, layer));
    tape.tanh_out.push_back(tanh_forward(tape.affine_out.back()));
    cur = &tape.tanh_out.back();
  }
  tape.recorded = true;
  return tape;
}

StackGrads stack_backward(const AffineTanhStack& stack, const ForwardTape& tape,
                          const Tensor& upstream) {
  if (!tape.recorded) {
    throw StateError("stack_backward: no recorded forward pass");
  }
  if (tape.affine_out.size() != stack.layers.size()) {
    throw StateError("stack_backward: tape does not match stack");
  }
  StackGrads out;
  out.params = GradStore::zeros_like(stack.layers);
  Tensor g = tanh_backward(tape.tanh_out.back(), upstream);
  for (std::size_t li = stack.layers.size(); li-- > 0;) {
    const Tensor& layer_in = (li == 0) ? tape.input : tape.tanh_out[li - 1];
    AffineGrads ag = affine_backward(stack.layers[li], layer_in, g);
    out.params.layers[li].weights = std::move(ag.weights);
    out.params.layers[li].bias = std::move(ag.bias);
    g = std::move(ag.input);
    if (li > 0) g = tanh_backward(tape.tanh_out[li - 1], g);
  }
  out.input = std::move(g);
  return out;
}

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h) {
  if (h < 1e-6 || h > 1e-2) {
    throw ArgumentError("numeric_gradient: h must lie in [1e-6, 1e-2]");
  }
  Tensor grad(x.shape);
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = f(probe);
    probe[i] = orig - h;
    const double fm = f(probe);
    probe[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("numeric_gradient: non-finite function value");
    }
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

}  // namespace hpl
