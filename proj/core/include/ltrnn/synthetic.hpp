#pragma once

#include <cstddef>
#include <cstdint>

#include "ltrnn/data.hpp"
#include "ltrnn/trees.hpp"

namespace ltrnn {

// Desk-scale stand-in for a web ranking collection: graded labels driven by a
// handful of informative features, plus noise features on mixed scales.
struct SyntheticSpec {
  std::size_t queries = 200;
  std::size_t docs_per_query = 50;
  std::size_t features = 10;  // at least 4
  std::size_t trees = 20;
  std::size_t tree_depth = 4;
  double shrinkage = 0.3;
  std::uint64_t seed = 2024;
};

struct SyntheticTask {
  Dataset data;
  TreeEnsemble teacher;  // fitted on the training split only
  DatasetSplit split;    // 60 / 20 / 20 by query
};

Dataset make_synthetic_dataset(const SyntheticSpec& spec);

// Least-squares boosting of depth-limited trees on the labels; each split is
// the best of a few random (feature, quantile) candidates.
TreeEnsemble fit_regression_ensemble(const Dataset& train, std::size_t trees, std::size_t depth, double shrinkage,
                                     std::uint64_t seed);

SyntheticTask make_synthetic_task(const SyntheticSpec& spec = {});

}  // namespace ltrnn
