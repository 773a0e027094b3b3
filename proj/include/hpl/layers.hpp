#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "hpl/tensor.hpp"

namespace hpl {

struct AffineLayer {
  Tensor weights;  // {out, in}
  Tensor bias;     // {out}

  std::size_t in_size() const { return weights.shape[1]; }
  std::size_t out_size() const { return weights.shape[0]; }
};

Tensor affine_forward(const Tensor& x, const AffineLayer& layer);
Tensor tanh_forward(const Tensor& x);

// Backward rules for the two-node vocabulary. tanh_backward takes the
// forward *output* since tanh'(z) = 1 - tanh(z)^2.
Tensor tanh_backward(const Tensor& tanh_out, const Tensor& upstream);

struct AffineGrads {
  Tensor weights;
  Tensor bias;
  Tensor input;
};
AffineGrads affine_backward(const AffineLayer& layer, const Tensor& x,
                            const Tensor& upstream);

// Per-parameter gradients mirroring a layer stack's shapes.
struct GradStore {
  struct Entry {
    Tensor weights;
    Tensor bias;
  };
  std::vector<Entry> layers;

  static GradStore zeros_like(const std::vector<AffineLayer>& params);
  void accumulate(const GradStore& other);
  void scale(double factor);
  void zero();
  double squared_norm() const;
};

struct SgdSchedule {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::size_t epochs = 40;
  std::size_t batch_size = 24;
  std::uint64_t seed = 0;
};

void validate_schedule(const SgdSchedule& s);

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v
void sgd_step(std::vector<AffineLayer>& params, const GradStore& grads,
              const SgdSchedule& schedule, GradStore& velocity);

// A stack of affine layers, each followed by tanh. This is the whole layer
// vocabulary of the project; gradients are hand-derived rather than taped
// through a generic graph.
struct AffineTanhStack {
  std::vector<AffineLayer> layers;
};

struct ForwardTape {
  Tensor input;
  std::vector<Tensor> affine_out;  // pre-tanh output per layer
  std::vector<Tensor> tanh_out;    // post-tanh output per layer
  bool recorded = false;

  const Tensor& logits() const { return affine_out.back(); }
  const Tensor& relaxed() const { return tanh_out.back(); }
};

ForwardTape stack_forward(const AffineTanhStack& stack, const Tensor& x);

struct StackGrads {
  GradStore params;
  Tensor input;  // gradient with respect to the stack input
};

// Reverse pass through the recorded composition. `upstream` is the loss
// gradient with respect to the final tanh output. Input gradients are
// first-class: attacks differentiate with respect to pixels.
StackGrads stack_backward(const AffineTanhStack& stack, const ForwardTape& tape,
                          const Tensor& upstream);

// Central-difference gradient oracle: (f(x+h e_i) - f(x-h e_i)) / 2h.
// h must lie in [1e-6, 1e-2].
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f,
                        const Tensor& x, double h);

}  // namespace hpl
