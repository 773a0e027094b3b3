#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hpl/data.hpp"
#include "hpl/hamming.hpp"
#include "hpl/hash_model.hpp"
#include "hpl/tensor.hpp"

namespace hpl {

enum class Corner : std::uint8_t {
  BottomRight = 0,
  BottomLeft = 1,
  TopRight = 2,
  TopLeft = 3,
};

const char* corner_name(Corner c);
Corner corner_from_name(const std::string& name);

// Square patch trigger: pattern p, block mask m and blend ratio beta.
// Injection: x_hat = x(1-m) + [beta*p + (1-beta)*x] m, which is exactly
// x(1-m) + p*m at beta = 1.
struct TriggerSpec {
  Tensor pattern;  // image-shaped, meaningful where mask == 1
  Tensor mask;     // image-shaped, {0,1}, an r x r x C block
  std::size_t size = 0;
  Corner location = Corner::BottomRight;
  double blend = 1.0;

  static TriggerSpec make(std::size_t height, std::size_t width,
                          std::size_t channels, std::size_t size,
                          Corner location = Corner::BottomRight,
                          double blend = 1.0, double fill = 0.5);
};

Tensor inject(const Tensor& image, const TriggerSpec& trigger);

struct TriggerOptConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 32;
  double step_size = 12.0;
  bool normalize_by_batch = true;
  std::uint64_t seed = 0;
};

// Universal adversarial patch: gradient descent on the summed relaxed
// Hamming distance between triggered images and the per-model anchor code
// of the target class. Supports model ensembles (losses averaged).
TriggerSpec generate_trigger(const std::vector<const HashModel*>& models,
                             const Dataset& train_set,
                             const LabelVector& target_label,
                             const TriggerOptConfig& cfg,
                             const TriggerSpec& initial);

struct PerturbationBudget {
  double epsilon = 0.032;
  double step_size = 0.003;
  std::size_t epochs = 20;  // total sign steps per image
  std::size_t batch_size = 20;
  std::uint64_t seed = 0;
};

void validate_budget(const PerturbationBudget& b);

// PGD ascent on d(F'(x+eta), F(x)): push the relaxed code away from the
// original binary code inside the epsilon ball. x+eta is clamped to [0,1]
// at every forward evaluation; eta itself stays within [-eps, eps].
Tensor adversarial_perturbation(const HashModel& model, const Tensor& image,
                                const PerturbationBudget& budget);

// PGD descent on d(F'(x+eta), h_a): pull the relaxed code toward the anchor.
Tensor targeted_perturbation(const HashModel& model, const Tensor& image,
                             const AnchorCode& anchor,
                             const PerturbationBudget& budget);

struct ConfusingLoss {
  double value = 0.0;
  std::vector<Tensor> code_grads;
};

// Mean relaxed Hamming distance over ordered pairs i != j; maximizing it
// disperses the batch in Hamming space.
ConfusingLoss confusing_loss(const std::vector<Tensor>& codes);

struct PerturbationSet {
  double epsilon = 0.0;
  std::vector<std::uint64_t> ids;
  std::vector<Tensor> etas;
};

// Joint PGD maximizing lambda * L_c + (1-lambda) * mean L_a over seeded
// batches, one sign step per image per epoch. Batches of size 1 have no
// dispersion term. Ensembles average per-model gradients.
PerturbationSet confusing_perturbations(
    const std::vector<const HashModel*>& models,
    const std::vector<std::pair<std::uint64_t, const Tensor*>>& targets,
    double lambda, const PerturbationBudget& budget);

// Trigger file "HPT1": dims, size, location, blend, pattern.
void save_trigger(const TriggerSpec& trigger, const std::filesystem::path& path);
TriggerSpec load_trigger(const std::filesystem::path& path);

// Perturbation file "HPE1": dims, epsilon, then (id, eta) records.
void save_perturbations(const PerturbationSet& set,
                        const std::vector<std::size_t>& image_shape,
                        const std::filesystem::path& path);
PerturbationSet load_perturbations(const std::filesystem::path& path);

}  // namespace hpl
