#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ltrnn/matrix.hpp"

namespace ltrnn {

inline constexpr int kMinLabel = 0;
inline constexpr int kMaxLabel = 4;

// How z-normalization scales centered features.
enum class NormDivisor {
  kVariance,  // x' = (x - mean) / variance
  kStdDev,    // x' = (x - mean) / sqrt(variance)
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> variance;  // population variance, >= 0
  NormDivisor divisor = NormDivisor::kVariance;

  std::size_t num_features() const noexcept { return mean.size(); }
};

struct QueryGroup {
  std::int64_t query_id = 0;
  Matrix documents;  // docs x features
  std::vector<int> labels;
  std::optional<std::vector<float>> teacher_scores;

  std::size_t size() const noexcept { return labels.size(); }
};

struct Dataset {
  std::vector<QueryGroup> queries;
  std::size_t num_features = 0;
  std::optional<NormStats> norm_stats;

  std::size_t num_documents() const noexcept;
  bool has_teacher_scores() const noexcept;

  // All documents stacked in dataset order.
  Matrix stacked_documents() const;
  std::vector<float> stacked_teacher_scores() const;

  // Checks every invariant: shapes, unique query ids, label range.
  void validate() const;
};

struct LoadOptions {
  // Overrides the feature count inferred from the largest index seen.
  std::optional<std::size_t> num_features;
};

// LETOR / SVMLight-with-qid text: `<label> qid:<int> <idx>:<val> ... [# comment]`,
// 1-based feature indices. Documents are grouped by qid in order of first appearance.
Dataset load_ltr_file(const std::filesystem::path& path, const LoadOptions& options = {});
Dataset parse_ltr_text(const std::string& text, const LoadOptions& options = {},
                       const std::string& source = "<memory>");
void write_ltr_file(const std::filesystem::path& path, const Dataset& ds);

// Computes stats over every document when `stats` is empty, otherwise applies
// the given ones. Zero-variance features are centered but not scaled.
std::pair<Dataset, NormStats> z_normalize(const Dataset& ds, const std::optional<NormStats>& stats = std::nullopt,
                                          NormDivisor divisor = NormDivisor::kVariance);
NormStats compute_norm_stats(const Dataset& ds, NormDivisor divisor = NormDivisor::kVariance);
void apply_norm_stats(const NormStats& stats, std::span<float> doc);
Matrix apply_norm_stats(const NormStats& stats, const Matrix& docs);

void save_norm_stats(const std::filesystem::path& path, const NormStats& stats);
NormStats load_norm_stats(const std::filesystem::path& path);

// One decimal per line, one line per document in dataset order.
std::vector<float> load_score_file(const std::filesystem::path& path);
void write_score_file(const std::filesystem::path& path, std::span<const float> scores);

Dataset attach_scores(Dataset ds, std::span<const float> scores);
Dataset attach_scores(const Dataset& ds, const std::filesystem::path& path);

struct DatasetSplit {
  Dataset train;
  Dataset validation;
  Dataset test;
};

// Query-level split in dataset order (no shuffling); fractions of queries.
DatasetSplit split_by_query(const Dataset& ds, double train_fraction, double validation_fraction);

}  // namespace ltrnn
