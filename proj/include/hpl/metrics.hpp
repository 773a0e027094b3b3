#pragma once

#include <cstdint>
#include <vector>

#include "hpl/attack.hpp"
#include "hpl/data.hpp"
#include "hpl/hamming.hpp"
#include "hpl/hash_model.hpp"

namespace hpl {

struct RankedRelevance {
  std::vector<std::uint8_t> rel;   // relevance flags over the ranked top-N
  std::size_t total_relevant = 0;  // relevant items in the whole database
};

// AP over a truncated ranking, normalized by the number of relevant items
// reachable in the list: min(R, N). Zero when nothing is relevant.
double average_precision(const RankedRelevance& r);

// Mean AP over queries; relevance is label sharing against the database.
double map_score(const HashModel& model, const Dataset& queries,
                 const CodeDatabase& db, std::size_t top_n);

// Targeted MAP: every query is patched with the trigger at blend 1 and its
// label replaced by the target. Queries already carrying the target label
// are excluded unless exclude_target_class is off.
double tmap_score(const HashModel& model, const Dataset& queries,
                  const TriggerSpec& trigger, const LabelVector& target_label,
                  const CodeDatabase& db, std::size_t top_n,
                  bool exclude_target_class = true);

struct PrCurve {
  std::vector<std::size_t> cutoffs;
  std::vector<double> precision;
  std::vector<double> recall;
};

// Pooled (micro-averaged) precision/recall at every rank cutoff 1..top_n.
// In targeted mode queries are triggered and relevance is the target label.
PrCurve pr_curves(const HashModel& model, const Dataset& queries,
                  const CodeDatabase& db, std::size_t top_n,
                  const TriggerSpec* trigger = nullptr,
                  const LabelVector* target_label = nullptr,
                  bool exclude_target_class = true);

// Histogram of pairwise Hamming distances over all unordered code pairs,
// K+1 bins.
std::vector<std::size_t> distance_histogram(const std::vector<HashCode>& codes);

double mean_pairwise_distance(const std::vector<HashCode>& codes);

// Hash the whole dataset through the model into a scannable database.
CodeDatabase build_code_database(const HashModel& model, const Dataset& ds);

}  // namespace hpl
