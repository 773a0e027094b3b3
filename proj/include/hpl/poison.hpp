#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hpl/attack.hpp"
#include "hpl/data.hpp"

namespace hpl {

struct PoisonPlan {
  std::size_t target_class = 0;
  std::size_t poison_count = 60;  // M
  TriggerSpec trigger;
  std::optional<PerturbationSet> perturbations;
  double lambda = 0.8;  // echoed into the manifest, used at generation time
  std::uint64_t selection_seed = 0;
};

struct PoisonManifest {
  std::vector<std::uint64_t> poisoned_ids;  // sorted
  std::size_t target_class = 0;
  std::size_t poison_count = 0;
  double lambda = 0.8;
  std::uint64_t selection_seed = 0;
  std::string trigger_digest;
  std::string perturbations_digest;  // empty when no perturbations were used
};

// Seeded choice of M target-class training ids; deterministic and shared by
// the perturbation and poisoning stages so the two always agree.
std::vector<std::uint64_t> select_poison_targets(const Dataset& train,
                                                 std::size_t target_class,
                                                 std::size_t count,
                                                 std::uint64_t seed);

// Clean-label poisoning: for each selected id, x_hat = inject(clamp01(x+eta),
// trigger) (or inject(x, trigger) without perturbations). Labels, ids and all
// other samples are untouched.
std::pair<Dataset, PoisonManifest> craft_poisoned_set(const Dataset& train,
                                                      const PoisonPlan& plan);

}  // namespace hpl
