#include "hpl/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "hpl/errors.hpp"

namespace hpl {

namespace {

// Power iteration for the top eigenvector of the feature covariance,
// applied through the centered feature matrix (n x k).
std::vector<double> top_direction(const std::vector<std::vector<double>>& feats) {
  const std::size_t n = feats.size();
  const std::size_t k = feats.front().size();
  Rng rng(0x5EC70411ULL);
  std::vector<double> v(k), next(k);
  double norm = 0.0;
  for (auto& x : v) {
    x = rng.gaussian();
    norm += x * x;
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;

  for (int iter = 0; iter < 100; ++iter) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double proj = 0.0;
      for (std::size_t t = 0; t < k; ++t) proj += feats[i][t] * v[t];
      for (std::size_t t = 0; t < k; ++t) next[t] += proj * feats[i][t];
    }
    double nn = 0.0;
    for (double x : next) nn += x * x;
    nn = std::sqrt(nn);
    if (nn == 0.0) break;  // degenerate covariance, keep current direction
    for (auto& x : next) x /= nn;
    double cosine = 0.0;
    for (std::size_t t = 0; t < k; ++t) cosine += next[t] * v[t];
    v = next;
    if (1.0 - std::abs(cosine) < 1e-8) break;
  }
  return v;
}

}  // namespace

SpectralReport spectral_signature_filter(
    const HashModel& model, const Dataset& class_subset,
    std::size_t remove_count, const std::set<std::uint64_t>& poisoned_ids) {
  const std::size_t n = class_subset.samples.size();
  if (n == 0) throw ArgumentError("spectral filter: empty subset");
  if (remove_count >= n) {
    throw ArgumentError("spectral filter: remove_count must be < subset size");
  }
  const std::size_t k = model.config.code_length;

  std::vector<std::vector<double>> feats(n, std::vector<double>(k));
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor f = model.logits(class_subset.samples[i].image);
    for (std::size_t t = 0; t < k; ++t) feats[i][t] = f[t];
  }
  std::vector<double> mean(k, 0.0);
  for (const auto& f : feats) {
    for (std::size_t t = 0; t < k; ++t) mean[t] += f[t];
  }
  for (auto& m : mean) m /= static_cast<double>(n);
  for (auto& f : feats) {
    for (std::size_t t = 0; t < k; ++t) f[t] -= mean[t];
  }

  SpectralReport report;
  report.direction = top_direction(feats);
  report.scored.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double proj = 0.0;
    for (std::size_t t = 0; t < k; ++t) proj += feats[i][t] * report.direction[t];
    auto& s = report.scored[i];
    s.id = class_subset.samples[i].id;
    s.score = proj * proj;
    s.is_poisoned = poisoned_ids.count(s.id) > 0;
  }

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (report.scored[a].score != report.scored[b].score) {
      return report.scored[a].score > report.scored[b].score;
    }
    return report.scored[a].id < report.scored[b].id;
  });
  for (std::size_t r = 0; r < remove_count; ++r) {
    report.scored[idx[r]].removed = true;
    report.removed_ids.push_back(report.scored[idx[r]].id);
  }
  std::sort(report.removed_ids.begin(), report.removed_ids.end());

  for (const auto& s : report.scored) {
    if (s.is_poisoned) {
      (s.removed ? report.poisoned_removed : report.poisoned_remained)++;
    } else {
      (s.removed ? report.clean_removed : report.clean_remained)++;
    }
  }
  return report;
}

PruneReport prune_dormant(const HashModel& model, const Dataset& clean_set,
                          const std::vector<std::size_t>& prune_counts,
                          const PruneEvalFn& evaluate) {
  if (model.config.hidden_sizes.empty()) {
    throw ArgumentError("prune_dormant: model has no hidden layer");
  }
  if (clean_set.samples.empty()) {
    throw ArgumentError("prune_dormant: empty clean set");
  }
  const std::size_t width = model.config.hidden_sizes.back();
  for (std::size_t i = 0; i < prune_counts.size(); ++i) {
    if (prune_counts[i] > width) {
      throw ArgumentError("prune_dormant: count exceeds hidden width");
    }
    if (i > 0 && prune_counts[i] <= prune_counts[i - 1]) {
      throw ArgumentError("prune_dormant: counts must be strictly increasing");
    }
  }

  // Mean |tanh activation| of the last hidden layer over clean inputs.
  const std::size_t last_hidden = model.net.layers.size() - 2;
  std::vector<double> mean_act(width, 0.0);
  for (const auto& s : clean_set.samples) {
    const ForwardTape tape = model.forward(s.image);
    const Tensor& act = tape.tanh_out[last_hidden];
    for (std::size_t u = 0; u < width; ++u) mean_act[u] += std::abs(act[u]);
  }
  for (auto& a : mean_act) a /= static_cast<double>(clean_set.samples.size());

  PruneReport report;
  report.unit_order.resize(width);
  std::iota(report.unit_order.begin(), report.unit_order.end(), 0);
  std::stable_sort(report.unit_order.begin(), report.unit_order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return mean_act[a] < mean_act[b];
                   });

  HashModel pruned = model;  // working copy, zeroed cumulatively
  AffineLayer& head = pruned.net.layers.back();
  const std::size_t k = head.out_size();
  std::size_t zeroed = 0;
  for (std::size_t count : prune_counts) {
    while (zeroed < count) {
      const std::size_t unit = report.unit_order[zeroed];
      for (std::size_t o = 0; o < k; ++o) {
        head.weights[o * head.in_size() + unit] = 0.0;
      }
      ++zeroed;
    }
    const auto [map, tmap] = evaluate(pruned);
    report.rows.push_back({count, map, tmap});
  }
  return report;
}

void clip_to_norm(GradStore& grad, double bound) {
  if (!(bound > 0.0)) throw ArgumentError("clip_to_norm: bound must be positive");
  const double norm = std::sqrt(grad.squared_norm());
  if (norm > bound) grad.scale(bound / norm);
}

PerSampleGradHook make_dp_hook(const DpConfig& dp) {
  if (!(dp.clip_bound > 0.0)) {
    throw ArgumentError("dp: clip_bound must be positive");
  }
  if (dp.noise_scale < 0.0) {
    throw ArgumentError("dp: noise_scale must be nonnegative");
  }
  auto rng = std::make_shared<Rng>(dp.seed);
  const double clip = dp.clip_bound;
  const double sigma = dp.noise_scale;
  return [rng, clip, sigma](std::vector<GradStore>&& per_sample,
                            std::size_t batch_size) {
    GradStore total = per_sample.front();
    total.zero();
    for (auto& g : per_sample) {
      clip_to_norm(g, clip);
      total.accumulate(g);
    }
    if (sigma > 0.0) {
      const double stddev = sigma * clip;
      for (auto& layer : total.layers) {
        for (double& v : layer.weights.data) v += stddev * rng->gaussian();
        for (double& v : layer.bias.data) v += stddev * rng->gaussian();
      }
    }
    total.scale(1.0 / static_cast<double>(batch_size));
    return total;
  };
}

TrainResult dp_train(const HashModel& initial, const Dataset& train_set,
                     const SgdSchedule& schedule, const PairwiseLossConfig& cfg,
                     const DpConfig& dp) {
  return train(initial, train_set, schedule, cfg, make_dp_hook(dp));
}

}  // namespace hpl
