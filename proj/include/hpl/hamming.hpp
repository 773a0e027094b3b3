#pragma once

#include <cstdint>
#include <vector>

#include "hpl/data.hpp"
#include "hpl/tensor.hpp"

namespace hpl {

// K-bit binary code over {-1, +1}.
struct HashCode {
  std::vector<std::int8_t> bits;

  std::size_t length() const { return bits.size(); }
  bool operator==(const HashCode&) const = default;
};

// Entrywise sign with the project-wide tie rule sign(0) = +1.
HashCode sign_code(const Tensor& logits);

// As a double tensor in {-1.0, +1.0}, for use in relaxed arithmetic.
Tensor code_as_tensor(const HashCode& code);

/// Number of differing positions; equals (K - a.b) / 2.
int hamming_distance(const HashCode& a, const HashCode& b);

/// (K - u.v) / 2 on relaxed codes; coincides with hamming_distance on
/// +-1 inputs. Entries are expected in [-1, 1].
double relaxed_hamming(const Tensor& u, const Tensor& v);
double relaxed_hamming(const HashCode& a, const HashCode& b);

// Binary code minimizing total Hamming distance to a code set, obtained by
// per-component majority voting (ties resolve to +1).
struct AnchorCode {
  HashCode code;
  std::size_t source_count = 0;
};
AnchorCode anchor_code(const std::vector<HashCode>& codes);

// Immutable code collection scanned with packed 64-bit words and popcount.
struct CodeDatabase {
  std::size_t code_length = 0;
  std::size_t words_per_code = 0;
  std::vector<std::uint64_t> packed;
  std::vector<LabelVector> labels;
  std::vector<std::uint64_t> ids;

  static CodeDatabase build(const std::vector<HashCode>& codes,
                            std::vector<LabelVector> labels,
                            std::vector<std::uint64_t> ids);
  std::size_t size() const { return ids.size(); }
  HashCode code_at(std::size_t row) const;
};

struct RankEntry {
  std::uint64_t id = 0;
  std::size_t row = 0;
  int distance = 0;
};

// Exact linear scan, ascending distance, ties broken by ascending id.
// Returns min(top_n, N) entries.
std::vector<RankEntry> rank_by_distance(const HashCode& query,
                                        const CodeDatabase& db,
                                        std::size_t top_n);

}  // namespace hpl
