#pragma once

#include <cstdint>

#include "hpl/data.hpp"

namespace hpl {

// Desk-scale synthetic benchmark: each class is a fixed low-frequency
// sinusoid template plus per-image Gaussian noise, clamped to [0,1].
struct SyntheticDatasetSpec {
  std::size_t classes = 10;
  std::size_t per_class_train = 100;
  std::size_t per_class_query = 20;
  std::size_t per_class_db = 200;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 3;
  double template_contrast = 0.6;
  double noise_sigma = 0.08;
  std::uint64_t seed = 0;
};

void validate_spec(const SyntheticDatasetSpec& spec);

// Deterministic per seed. Splits use disjoint id spaces:
// train from 0, query from 1'000'000, database from 2'000'000.
DatasetBundle synthesize_dataset(const SyntheticDatasetSpec& spec);

}  // namespace hpl
