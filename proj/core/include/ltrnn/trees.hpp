#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ltrnn/data.hpp"
#include "ltrnn/matrix.hpp"

namespace ltrnn {

inline constexpr std::size_t kMaxQsLeaves = 64;

// Regression tree in the flat layout used by LightGBM dumps. Node 0 is the root.
// A child reference c >= 0 is an internal node; c < 0 is leaf ~c.
// A tree without internal nodes has exactly one leaf.
struct Tree {
  struct Node {
    std::uint32_t feature = 0;
    double threshold = 0.0;  // x <= threshold goes left
    std::int32_t left = 0;
    std::int32_t right = 0;
  };

  std::vector<Node> nodes;
  std::vector<double> leaf_values;

  std::size_t num_leaves() const noexcept { return leaf_values.size(); }

  // Single-rooted, every node and leaf referenced exactly once, leaves = nodes + 1.
  void validate(std::size_t num_features) const;

  // Index into leaf_values of the leaf reached by `doc`.
  std::size_t exit_leaf(std::span<const float> doc) const;

  // Leaf ids in left-to-right order.
  std::vector<std::size_t> leaves_in_order() const;
};

struct TreeEnsemble {
  std::vector<Tree> trees;
  std::size_t num_features = 0;
  double base_score = 0.0;

  void validate() const;
  std::size_t max_leaves() const noexcept;
};

enum class EnsembleFormat { kJson, kLightGbmText };

// Format is chosen from the extension when not given: .json -> JSON, anything else -> LightGBM text.
TreeEnsemble load_ensemble(const std::filesystem::path& path);
TreeEnsemble load_ensemble(const std::filesystem::path& path, EnsembleFormat format);
TreeEnsemble parse_ensemble_json(const std::string& text, const std::string& source = "<memory>");
TreeEnsemble parse_ensemble_lightgbm(const std::string& text, const std::string& source = "<memory>");
std::string ensemble_to_json(const TreeEnsemble& ens);
std::string ensemble_to_lightgbm(const TreeEnsemble& ens);
void save_ensemble(const std::filesystem::path& path, const TreeEnsemble& ens, EnsembleFormat format);

// If-then-else traversal; trees summed in order, then base_score added.
double score_naive(const TreeEnsemble& ens, std::span<const float> doc);
std::vector<double> score_naive(const TreeEnsemble& ens, const Matrix& docs);

// Feature-major bitvector index for ensembles whose trees have at most 64 leaves.
class QsIndex {
 public:
  struct Entry {
    double threshold;
    std::uint32_t tree;
    std::uint64_t mask;  // zero bits = leaves of the node's left subtree
  };

  explicit QsIndex(const TreeEnsemble& ens);

  std::size_t num_features() const noexcept { return feature_offsets_.size() - 1; }
  std::size_t num_trees() const noexcept { return leaf_offsets_.size() - 1; }
  double base_score() const noexcept { return base_score_; }

  // Entries for one feature, ascending by threshold.
  std::span<const Entry> entries(std::size_t feature) const noexcept {
    return {entries_.data() + feature_offsets_[feature], feature_offsets_[feature + 1] - feature_offsets_[feature]};
  }
  // Leaf values of one tree, bit j <-> j-th leaf from the left.
  std::span<const double> leaf_values(std::size_t tree) const noexcept {
    return {leaf_values_.data() + leaf_offsets_[tree], leaf_offsets_[tree + 1] - leaf_offsets_[tree]};
  }
  std::uint64_t default_bitvector(std::size_t tree) const noexcept { return defaults_[tree]; }

  double score(std::span<const float> doc) const;
  // `leafidx` is caller-provided scratch of num_trees() words.
  double score(std::span<const float> doc, std::span<std::uint64_t> leafidx) const;

 private:
  std::vector<Entry> entries_;
  std::vector<std::size_t> feature_offsets_;
  std::vector<double> leaf_values_;
  std::vector<std::size_t> leaf_offsets_;
  std::vector<std::uint64_t> defaults_;
  double base_score_ = 0.0;
};

// Throws UnsupportedModelError when any tree has more than 64 leaves.
QsIndex build_qs_index(const TreeEnsemble& ens);
std::vector<double> score_quickscorer(const QsIndex& idx, const Matrix& docs);

// Per-feature sampling support for synthetic training documents.
struct AugmentationTable {
  std::vector<std::vector<float>> midpoints;  // per feature, strictly increasing
  std::vector<float> feature_min;
  std::vector<float> feature_max;

  std::size_t num_features() const noexcept { return midpoints.size(); }
};

// Per feature: split thresholds inside [min, max] plus the training min and max,
// sorted, exact ties removed, then replaced by adjacent-pair midpoints.
AugmentationTable extract_midpoint_table(const TreeEnsemble& ens, const Dataset& ds);

}  // namespace ltrnn
