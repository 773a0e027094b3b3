#include "hpl/metrics.hpp"

#include <algorithm>

#include "hpl/errors.hpp"

namespace hpl {

double average_precision(const RankedRelevance& r) {
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t k = 0; k < r.rel.size(); ++k) {
    if (r.rel[k]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  if (hits > r.total_relevant) {
    throw ArgumentError("average_precision: more hits than total_relevant");
  }
  const std::size_t denom = std::min(r.total_relevant, r.rel.size());
  return denom == 0 ? 0.0 : sum / static_cast<double>(denom);
}

namespace {

RankedRelevance rank_relevance(const HashCode& query_code,
                               const LabelVector& relevance_label,
                               const CodeDatabase& db, std::size_t top_n) {
  RankedRelevance rr;
  const auto ranked = rank_by_distance(query_code, db, top_n);
  rr.rel.resize(ranked.size());
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    rr.rel[k] = static_cast<std::uint8_t>(
        pairwise_similarity(relevance_label, db.labels[ranked[k].row]));
  }
  for (const auto& l : db.labels) {
    rr.total_relevant += pairwise_similarity(relevance_label, l);
  }
  return rr;
}

}  // namespace

double map_score(const HashModel& model, const Dataset& queries,
                 const CodeDatabase& db, std::size_t top_n) {
  if (queries.samples.empty()) throw ArgumentError("map_score: empty query set");
  double sum = 0.0;
  for (const auto& q : queries.samples) {
    const HashCode code = model.hash_forward(q.image);
    sum += average_precision(rank_relevance(code, q.label, db, top_n));
  }
  return sum / static_cast<double>(queries.samples.size());
}

double tmap_score(const HashModel& model, const Dataset& queries,
                  const TriggerSpec& trigger, const LabelVector& target_label,
                  const CodeDatabase& db, std::size_t top_n,
                  bool exclude_target_class) {
  if (queries.samples.empty()) throw ArgumentError("tmap_score: empty query set");
  TriggerSpec test_trigger = trigger;
  test_trigger.blend = 1.0;  // test-time trigger is always fully opaque
  double sum = 0.0;
  std::size_t counted = 0;
  for (const auto& q : queries.samples) {
    if (exclude_target_class &&
        pairwise_similarity(q.label, target_label) == 1) {
      continue;
    }
    const HashCode code = model.hash_forward(inject(q.image, test_trigger));
    sum += average_precision(rank_relevance(code, target_label, db, top_n));
    ++counted;
  }
  if (counted == 0) {
    throw ArgumentError("tmap_score: every query was excluded");
  }
  return sum / static_cast<double>(counted);
}

PrCurve pr_curves(const HashModel& model, const Dataset& queries,
                  const CodeDatabase& db, std::size_t top_n,
                  const TriggerSpec* trigger, const LabelVector* target_label,
                  bool exclude_target_class) {
  if (queries.samples.empty()) throw ArgumentError("pr_curves: empty query set");
  if ((trigger == nullptr) != (target_label == nullptr)) {
    throw ArgumentError("pr_curves: trigger and target label come together");
  }
  TriggerSpec test_trigger;
  if (trigger) {
    test_trigger = *trigger;
    test_trigger.blend = 1.0;
  }
  const std::size_t n = std::min(top_n, db.size());
  std::vector<std::size_t> pooled_hits(n, 0);
  std::size_t pooled_relevant = 0;
  std::size_t counted = 0;
  for (const auto& q : queries.samples) {
    const LabelVector& rel_label = target_label ? *target_label : q.label;
    if (trigger && exclude_target_class &&
        pairwise_similarity(q.label, *target_label) == 1) {
      continue;
    }
    const Tensor image = trigger ? inject(q.image, test_trigger) : q.image;
    const HashCode code = model.hash_forward(image);
    const RankedRelevance rr = rank_relevance(code, rel_label, db, n);
    std::size_t hits = 0;
    for (std::size_t k = 0; k < rr.rel.size(); ++k) {
      hits += rr.rel[k];
      pooled_hits[k] += hits;
    }
    pooled_relevant += rr.total_relevant;
    ++counted;
  }
  if (counted == 0) throw ArgumentError("pr_curves: every query was excluded");
  PrCurve curve;
  curve.cutoffs.resize(n);
  curve.precision.resize(n);
  curve.recall.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    curve.cutoffs[k] = k + 1;
    curve.precision[k] = static_cast<double>(pooled_hits[k]) /
                         (static_cast<double>(counted) * (k + 1));
    curve.recall[k] = pooled_relevant == 0
                          ? 0.0
                          : static_cast<double>(pooled_hits[k]) /
                                static_cast<double>(pooled_relevant);
  }
  return curve;
}

std::vector<std::size_t> distance_histogram(const std::vector<HashCode>& codes) {
  if (codes.size() < 2) {
    throw ArgumentError("distance_histogram: need at least 2 codes");
  }
  const std::size_t k = codes.front().length();
  std::vector<std::size_t> bins(k + 1, 0);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    for (std::size_t j = i + 1; j < codes.size(); ++j) {
      ++bins[static_cast<std::size_t>(hamming_distance(codes[i], codes[j]))];
    }
  }
  return bins;
}

double mean_pairwise_distance(const std::vector<HashCode>& codes) {
  const auto bins = distance_histogram(codes);
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t d = 0; d < bins.size(); ++d) {
    total += static_cast<double>(d) * static_cast<double>(bins[d]);
    count += bins[d];
  }
  return total / static_cast<double>(count);
}

CodeDatabase build_code_database(const HashModel& model, const Dataset& ds) {
  std::vector<HashCode> codes;
  std::vector<LabelVector> labels;
  std::vector<std::uint64_t> ids;
  codes.reserve(ds.samples.size());
  labels.reserve(ds.samples.size());
  ids.reserve(ds.samples.size());
  for (const auto& s : ds.samples) {
    codes.push_back(model.hash_forward(s.image));
    labels.push_back(s.label);
    ids.push_back(s.id);
  }
  return CodeDatabase::build(codes, std::move(labels), std::move(ids));
}

}  // namespace hpl
