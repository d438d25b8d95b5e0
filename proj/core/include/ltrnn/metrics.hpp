#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltrnn/data.hpp"

namespace ltrnn {

struct PerQueryMetric {
  std::int64_t query_id = 0;
  double value = 0.0;
};

// Gain 2^rel - 1, discount 1/log2(rank + 1), ranking by descending score with
// ties broken by original position. No cutoff when k is empty. A query whose
// ideal DCG is zero scores 1.0.
double ndcg_at_k(std::span<const int> labels, std::span<const float> scores, std::optional<std::size_t> k);

// Documents with grade >= relevance_threshold are relevant. A query without
// relevant documents has average precision 0.
double average_precision(std::span<const int> labels, std::span<const float> scores, int relevance_threshold = 1);

// Mean of per-query average precision over every query; queries with no
// relevant document contribute 0 to the mean.
double mean_average_precision(const std::vector<std::vector<int>>& labels,
                              const std::vector<std::vector<float>>& scores, int relevance_threshold = 1);

struct MetricSpec {
  enum class Kind { kNdcg, kMap } kind = Kind::kNdcg;
  std::optional<std::size_t> cutoff;  // NDCG only
  int relevance_threshold = 1;        // MAP only

  // "ndcg@10", "ndcg", "map"
  static MetricSpec parse(const std::string& name);
  std::string name() const;
};

// `scores` holds one value per document in dataset order.
std::vector<PerQueryMetric> evaluate_per_query(const Dataset& ds, std::span<const float> scores,
                                               const MetricSpec& metric);
double mean_metric(std::span<const PerQueryMetric> values);

inline constexpr std::size_t kDefaultPermutations = 10'000;

// Paired two-sided randomization test over per-query differences. Each sampled
// permutation flips the sign of every difference with probability 1/2; the
// identity permutation is counted in both numerator and denominator.
double fisher_randomization(std::span<const PerQueryMetric> a, std::span<const PerQueryMetric> b,
                            std::size_t permutations = kDefaultPermutations, std::uint64_t seed = 0);

}  // namespace ltrnn
