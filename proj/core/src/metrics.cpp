#include "ltrnn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ltrnn/error.hpp"
#include "ltrnn/rng.hpp"

namespace ltrnn {
namespace {

std::vector<std::size_t> rank_order(std::span<const float> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

double dcg(std::span<const int> labels, std::span<const std::size_t> order, std::size_t cutoff) {
  double sum = 0.0;
  for (std::size_t r = 0; r < std::min(cutoff, order.size()); ++r) {
    const double gain = std::exp2(labels[order[r]]) - 1.0;
    sum += gain / std::log2(static_cast<double>(r) + 2.0);
  }
  return sum;
}

void check_lengths(std::span<const int> labels, std::span<const float> scores) {
  if (labels.size() != scores.size())
    throw ValidationError("label/score length mismatch: " + std::to_string(labels.size()) + " vs " +
                          std::to_string(scores.size()));
}

}  // namespace

double ndcg_at_k(std::span<const int> labels, std::span<const float> scores, std::optional<std::size_t> k) {
  check_lengths(labels, scores);
  if (labels.empty()) throw ValidationError("ndcg needs at least one document");
  const std::size_t cutoff = k.value_or(labels.size());

  std::vector<std::size_t> ideal(labels.size());
  std::iota(ideal.begin(), ideal.end(), std::size_t{0});
  std::stable_sort(ideal.begin(), ideal.end(), [&](std::size_t a, std::size_t b) { return labels[a] > labels[b]; });
  const double idcg = dcg(labels, ideal, cutoff);
  if (idcg == 0.0) return 1.0;
  return dcg(labels, rank_order(scores), cutoff) / idcg;
}

double average_precision(std::span<const int> labels, std::span<const float> scores, int relevance_threshold) {
  check_lengths(labels, scores);
  const auto order = rank_order(scores);
  std::size_t hits = 0;
  double sum = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] >= relevance_threshold) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
  }
  return hits == 0 ? 0.0 : sum / static_cast<double>(hits);
}

double mean_average_precision(const std::vector<std::vector<int>>& labels,
                              const std::vector<std::vector<float>>& scores, int relevance_threshold) {
  if (labels.size() != scores.size()) throw ValidationError("query count mismatch");
  if (labels.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t q = 0; q < labels.size(); ++q) sum += average_precision(labels[q], scores[q], relevance_threshold);
  return sum / static_cast<double>(labels.size());
}

MetricSpec MetricSpec::parse(const std::string& name) {
  MetricSpec m;
  if (name == "map") {
    m.kind = Kind::kMap;
  } else if (name == "ndcg") {
    m.kind = Kind::kNdcg;
  } else if (name.rfind("ndcg@", 0) == 0) {
    m.kind = Kind::kNdcg;
    try {
      std::size_t used = 0;
      const auto k = std::stoul(name.substr(5), &used);
      if (used != name.size() - 5 || k == 0) throw std::invalid_argument(name);
      m.cutoff = k;
    } catch (const std::exception&) {
      throw ValidationError("bad metric '" + name + "'");
    }
  } else {
    throw ValidationError("unknown metric '" + name + "' (expected ndcg@K, ndcg or map)");
  }
  return m;
}

std::string MetricSpec::name() const {
  if (kind == Kind::kMap) return "map";
  return cutoff ? "ndcg@" + std::to_string(*cutoff) : "ndcg";
}

std::vector<PerQueryMetric> evaluate_per_query(const Dataset& ds, std::span<const float> scores,
                                               const MetricSpec& metric) {
  if (scores.size() != ds.num_documents())
    throw ValidationError("run has " + std::to_string(scores.size()) + " scores, dataset has " +
                          std::to_string(ds.num_documents()) + " documents");
  std::vector<PerQueryMetric> out;
  out.reserve(ds.queries.size());
  std::size_t off = 0;
  for (const auto& q : ds.queries) {
    const auto s = scores.subspan(off, q.size());
    off += q.size();
    if (q.size() == 0) continue;
    const double v = metric.kind == MetricSpec::Kind::kMap ? average_precision(q.labels, s, metric.relevance_threshold)
                                                           : ndcg_at_k(q.labels, s, metric.cutoff);
    out.push_back({q.query_id, v});
  }
  return out;
}

double mean_metric(std::span<const PerQueryMetric> values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& v : values) sum += v.value;
  return sum / static_cast<double>(values.size());
}

double fisher_randomization(std::span<const PerQueryMetric> a, std::span<const PerQueryMetric> b,
                            std::size_t permutations, std::uint64_t seed) {
  if (a.size() != b.size()) throw ValidationError("randomization test: runs cover different query sets");
  if (permutations == 0) throw ValidationError("randomization test needs at least one permutation");
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].query_id != b[i].query_id)
      throw ValidationError("randomization test: query " + std::to_string(a[i].query_id) + " is paired with " +
                            std::to_string(b[i].query_id));
    diff[i] = a[i].value - b[i].value;
  }
  if (diff.empty()) return 1.0;

  const double observed = std::fabs(std::accumulate(diff.begin(), diff.end(), 0.0));
  // Sums of the same terms in a different sign pattern can differ from the
  // observed one by rounding alone.
  double magnitude = 0.0;
  for (double d : diff) magnitude += std::fabs(d);
  const double slack = 1e-12 * magnitude;

  Rng rng(seed);
  std::size_t at_least = 1;  // identity permutation
  for (std::size_t p = 0; p < permutations; ++p) {
    double sum = 0.0;
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < diff.size(); ++i) {
      if (i % 64 == 0) bits = rng();
      sum += (bits & 1) ? -diff[i] : diff[i];
      bits >>= 1;
    }
    if (std::fabs(sum) >= observed - slack) ++at_least;
  }
  return static_cast<double>(at_least) / static_cast<double>(permutations + 1);
}

}  // namespace ltrnn
