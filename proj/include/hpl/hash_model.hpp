#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "hpl/data.hpp"
#include "hpl/hamming.hpp"
#include "hpl/layers.hpp"
#include "hpl/tensor.hpp"

namespace hpl {

struct HashModelConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  std::vector<std::size_t> hidden_sizes{64};
  std::size_t code_length = 16;  // K, must be >= 4
  std::uint64_t seed = 0;

  std::size_t input_size() const { return height * width * channels; }
  bool same_architecture(const HashModelConfig& o) const {
    return height == o.height && width == o.width && channels == o.channels &&
           hidden_sizes == o.hidden_sizes && code_length == o.code_length;
  }
};

// The hashing network: flatten -> [affine + tanh]* -> affine(K) -> tanh.
// hash_forward takes the sign of the pre-tanh logits (sign(0) = +1);
// relaxed_forward is the tanh relaxation used by every optimization loop.
struct HashModel {
  HashModelConfig config;
  AffineTanhStack net;

  static HashModel init(const HashModelConfig& cfg);

  ForwardTape forward(const Tensor& image) const;
  Tensor relaxed_forward(const Tensor& image) const;
  Tensor logits(const Tensor& image) const;
  HashCode hash_forward(const Tensor& image) const;

  bool same_parameters(const HashModel& o) const;
};

struct PairwiseLossConfig {
  double margin = 0.0;  // defaults to K/2 when left at 0
  double quantization_weight = 0.01;

  static PairwiseLossConfig defaults_for(std::size_t code_length);
};

struct BatchLoss {
  double value = 0.0;
  std::vector<Tensor> code_grads;  // d loss / d code, per batch element
};

// Contrastive loss on relaxed Hamming distance: similar pairs are pulled to
// distance 0, dissimilar pairs pushed beyond the margin, plus a light
// quantization term driving |code| -> 1. Mean over ordered pairs i < j.
BatchLoss pairwise_batch_loss(const std::vector<Tensor>& codes,
                              const std::vector<const LabelVector*>& labels,
                              const PairwiseLossConfig& cfg);
BatchLoss pairwise_batch_loss(const std::vector<Tensor>& codes,
                              const std::vector<LabelVector>& labels,
                              const PairwiseLossConfig& cfg);

// Transforms the per-sample parameter gradients of one batch into the
// gradient actually applied. Per-sample gradients are scaled so that their
// mean equals the batch-loss gradient; the default hook sums and divides by
// the batch size. Defenses plug per-sample clipping/noising in here.
using PerSampleGradHook =
    std::function<GradStore(std::vector<GradStore>&& per_sample,
                            std::size_t batch_size)>;

struct TrainResult {
  HashModel model;
  std::vector<double> epoch_losses;
};

// Seeded, bit-reproducible SGD training over shuffled pairwise batches.
// Batches with fewer than 2 samples are skipped (no pairs to form).
TrainResult train(const HashModel& initial, const Dataset& train_set,
                  const SgdSchedule& schedule, const PairwiseLossConfig& cfg,
                  const PerSampleGradHook& hook = nullptr);

// Checkpoint format "HPL1": config block then little-endian f64 parameter
// arrays in layer order (weights, bias per layer).
void save_checkpoint(const HashModel& model, const std::filesystem::path& path);
HashModel load_checkpoint(const std::filesystem::path& path);
HashModel load_checkpoint(const std::filesystem::path& path,
                          const HashModelConfig& expected);

}  // namespace hpl
