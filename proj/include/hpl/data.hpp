#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "hpl/tensor.hpp"

namespace hpl {

// Multi-hot class membership, bits over {0,1}. Every dataset sample carries
// at least one set bit.
struct LabelVector {
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }
  bool any() const;
  bool operator==(const LabelVector&) const = default;
};

// 1 iff the two label vectors share at least one class.
int pairwise_similarity(const LabelVector& a, const LabelVector& b);

LabelVector single_label(std::size_t cls, std::size_t classes);

struct Sample {
  std::uint64_t id = 0;
  Tensor image;  // {H, W, C}, entries in [0, 1]
  LabelVector label;
};

enum class SplitRole : std::uint8_t { Train = 0, Query = 1, Database = 2 };

struct Dataset {
  std::vector<Sample> samples;
  SplitRole role = SplitRole::Train;
};

// Checks id uniqueness, nonzero labels of the declared width and pixel range.
void validate_dataset(const Dataset& ds, std::size_t classes);

struct DatasetBundle {
  Dataset train;
  Dataset query;
  Dataset database;
  std::size_t classes = 0;
};

// Versioned binary dump ("HPD1"): label width, image dims, then per split
// the role tag, sample count and raw samples.
void save_dataset_bundle(const DatasetBundle& bundle,
                         const std::filesystem::path& path);
DatasetBundle load_dataset_bundle(const std::filesystem::path& path);

void save_dataset(const Dataset& ds, std::size_t classes,
                  const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path, std::size_t* classes_out = nullptr);

}  // namespace hpl
