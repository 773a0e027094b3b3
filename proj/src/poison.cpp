#include "hpl/poison.hpp"

#include <algorithm>
#include <unordered_map>

#include "hpl/errors.hpp"

namespace hpl {

std::vector<std::uint64_t> select_poison_targets(const Dataset& train,
                                                 std::size_t target_class,
                                                 std::size_t count,
                                                 std::uint64_t seed) {
  std::vector<std::uint64_t> pool;
  for (const auto& s : train.samples) {
    if (target_class < s.label.size() && s.label.bits[target_class]) {
      pool.push_back(s.id);
    }
  }
  if (count > pool.size()) {
    throw ArgumentError("poison selection: count " + std::to_string(count) +
                        " exceeds target-class population " +
                        std::to_string(pool.size()));
  }
  std::sort(pool.begin(), pool.end());
  Rng rng(seed);
  rng.shuffle(pool);
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::pair<Dataset, PoisonManifest> craft_poisoned_set(const Dataset& train,
                                                      const PoisonPlan& plan) {
  PoisonManifest manifest;
  manifest.target_class = plan.target_class;
  manifest.poison_count = plan.poison_count;
  manifest.lambda = plan.lambda;
  manifest.selection_seed = plan.selection_seed;

  Dataset out = train;
  if (plan.poison_count == 0) return {std::move(out), std::move(manifest)};

  manifest.poisoned_ids = select_poison_targets(
      train, plan.target_class, plan.poison_count, plan.selection_seed);

  std::unordered_map<std::uint64_t, const Tensor*> eta_by_id;
  if (plan.perturbations) {
    const auto& set = *plan.perturbations;
    std::vector<std::uint64_t> pert_ids = set.ids;
    std::sort(pert_ids.begin(), pert_ids.end());
    if (pert_ids != manifest.poisoned_ids) {
      throw ArgumentError(
          "craft_poisoned_set: perturbation ids do not match the selected "
          "poison targets");
    }
    for (std::size_t i = 0; i < set.ids.size(); ++i) {
      eta_by_id[set.ids[i]] = &set.etas[i];
    }
  }

  std::unordered_map<std::uint64_t, std::size_t> row_by_id;
  for (std::size_t r = 0; r < out.samples.size(); ++r) {
    row_by_id[out.samples[r].id] = r;
  }
  for (std::uint64_t id : manifest.poisoned_ids) {
    Sample& s = out.samples[row_by_id.at(id)];
    Tensor base = s.image;
    if (plan.perturbations) {
      const Tensor& eta = *eta_by_id.at(id);
      require_same_shape(base, eta, "craft_poisoned_set");
      for (std::size_t e = 0; e < base.size(); ++e) base[e] += eta[e];
      clamp01_inplace(base);
    }
    s.image = inject(base, plan.trigger);
  }
  return {std::move(out), std::move(manifest)};
}

}  // namespace hpl
