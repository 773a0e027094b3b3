#include "hpl/hamming.hpp"

#include <algorithm>
#include <bit>
#include <string>

#include "hpl/errors.hpp"

namespace hpl {

HashCode sign_code(const Tensor& logits) {
  HashCode c;
  c.bits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    c.bits[i] = logits[i] >= 0.0 ? 1 : -1;
  }
  return c;
}

Tensor code_as_tensor(const HashCode& code) {
  Tensor t({code.length()});
  for (std::size_t i = 0; i < code.length(); ++i) {
    t[i] = static_cast<double>(code.bits[i]);
  }
  return t;
}

int hamming_distance(const HashCode& a, const HashCode& b) {
  if (a.length() != b.length()) {
    throw ShapeError("hamming_distance: code length mismatch");
  }
  int d = 0;
  for (std::size_t i = 0; i < a.length(); ++i) d += a.bits[i] != b.bits[i];
  return d;
}

double relaxed_hamming(const Tensor& u, const Tensor& v) {
  if (u.size() != v.size()) {
    throw ShapeError("relaxed_hamming: length mismatch");
  }
  return (static_cast<double>(u.size()) - dot(u, v)) / 2.0;
}

double relaxed_hamming(const HashCode& a, const HashCode& b) {
  return relaxed_hamming(code_as_tensor(a), code_as_tensor(b));
}

AnchorCode anchor_code(const std::vector<HashCode>& codes) {
  if (codes.empty()) throw ArgumentError("anchor_code: empty code set");
  const std::size_t k = codes.front().length();
  for (const auto& c : codes) {
    if (c.length() != k) throw ShapeError("anchor_code: code length mismatch");
  }
  AnchorCode a;
  a.source_count = codes.size();
  a.code.bits.resize(k);
  for (std::size_t j = 0; j < k; ++j) {
    long vote = 0;
    for (const auto& c : codes) vote += c.bits[j];
    a.code.bits[j] = vote >= 0 ? 1 : -1;
  }
  return a;
}

CodeDatabase CodeDatabase::build(const std::vector<HashCode>& codes,
                                 std::vector<LabelVector> labels,
                                 std::vector<std::uint64_t> ids) {
  if (codes.size() != labels.size() || codes.size() != ids.size()) {
    throw ShapeError("code database: row count mismatch");
  }
  CodeDatabase db;
  if (codes.empty()) return db;
  db.code_length = codes.front().length();
  db.words_per_code = (db.code_length + 63) / 64;
  db.packed.assign(codes.size() * db.words_per_code, 0);
  for (std::size_t r = 0; r < codes.size(); ++r) {
    if (codes[r].length() != db.code_length) {
      throw ShapeError("code database: code length mismatch");
    }
    std::uint64_t* row = db.packed.data() + r * db.words_per_code;
    for (std::size_t j = 0; j < db.code_length; ++j) {
      if (codes[r].bits[j] > 0) row[j / 64] |= 1ULL << (j % 64);
    }
  }
  db.labels = std::move(labels);
  db.ids = std::move(ids);
  return db;
}

HashCode CodeDatabase::code_at(std::size_t row) const {
  HashCode c;
  c.bits.resize(code_length);
  const std::uint64_t* p = packed.data() + row * words_per_code;
  for (std::size_t j = 0; j < code_length; ++j) {
    c.bits[j] = (p[j / 64] >> (j % 64)) & 1 ? 1 : -1;
  }
  return c;
}

std::vector<RankEntry> rank_by_distance(const HashCode& query,
                                        const CodeDatabase& db,
                                        std::size_t top_n) {
  if (db.size() == 0) throw ArgumentError("rank_by_distance: empty database");
  if (top_n == 0) throw ArgumentError("rank_by_distance: top_n must be >= 1");
  if (query.length() != db.code_length) {
    throw ShapeError("rank_by_distance: query length mismatch");
  }
  std::vector<std::uint64_t> q(db.words_per_code, 0);
  for (std::size_t j = 0; j < db.code_length; ++j) {
    if (query.bits[j] > 0) q[j / 64] |= 1ULL << (j % 64);
  }
  std::vector<RankEntry> entries(db.size());
  for (std::size_t r = 0; r < db.size(); ++r) {
    const std::uint64_t* row = db.packed.data() + r * db.words_per_code;
    int d = 0;
    for (std::size_t w = 0; w < db.words_per_code; ++w) {
      d += std::popcount(row[w] ^ q[w]);
    }
    entries[r] = {db.ids[r], r, d};
  }
  std::sort(entries.begin(), entries.end(),
            [](const RankEntry& a, const RankEntry& b) {
              return a.distance != b.distance ? a.distance < b.distance
                                              : a.id < b.id;
            });
  if (entries.size() > top_n) entries.resize(top_n);
  return entries;
}

}  // namespace hpl
