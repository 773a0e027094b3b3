#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <vector>

#include "hpl/data.hpp"
#include "hpl/hash_model.hpp"

namespace hpl {

struct SpectralReport {
  struct ScoredSample {
    std::uint64_t id = 0;
    double score = 0.0;
    bool removed = false;
    bool is_poisoned = false;
  };
  std::vector<ScoredSample> scored;      // database order
  std::vector<std::uint64_t> removed_ids;
  std::size_t clean_removed = 0;
  std::size_t clean_remained = 0;
  std::size_t poisoned_removed = 0;
  std::size_t poisoned_remained = 0;
  std::vector<double> direction;  // top singular direction of the features
};

// Spectral signature filtering: project mean-centered pre-sign hash-layer
// features onto the top singular direction (power iteration) and drop the
// remove_count highest squared projections.
SpectralReport spectral_signature_filter(
    const HashModel& model, const Dataset& class_subset,
    std::size_t remove_count, const std::set<std::uint64_t>& poisoned_ids);

struct PruneReport {
  struct Row {
    std::size_t pruned_count = 0;
    double map = 0.0;
    double tmap = 0.0;
  };
  std::vector<Row> rows;
  std::vector<std::size_t> unit_order;  // pruning order, least active first
};

using PruneEvalFn = std::function<std::pair<double, double>(const HashModel&)>;

// Rank last-hidden units by mean |activation| on clean inputs and zero their
// outgoing weights cumulatively, re-evaluating at each requested count.
// The input model is never modified.
PruneReport prune_dormant(const HashModel& model, const Dataset& clean_set,
                          const std::vector<std::size_t>& prune_counts,
                          const PruneEvalFn& evaluate);

struct DpConfig {
  double clip_bound = 0.3;  // C, per-sample gradient l2 bound
  double noise_scale = 0.0; // sigma, noise stddev is sigma * C per coordinate
  std::uint64_t seed = 0;
};

// Clips a gradient to l2 norm <= bound (no-op when already inside).
void clip_to_norm(GradStore& grad, double bound);

PerSampleGradHook make_dp_hook(const DpConfig& dp);

// DP-SGD style training: per-sample clipping, Gaussian noise on the summed
// gradient, then division by the batch size. With zero noise and a large
// clip bound this is numerically identical to plain train().
TrainResult dp_train(const HashModel& initial, const Dataset& train_set,
                     const SgdSchedule& schedule, const PairwiseLossConfig& cfg,
                     const DpConfig& dp);

}  // namespace hpl
