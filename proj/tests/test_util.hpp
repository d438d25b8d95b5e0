#pragma once

// Hand-rolled generators shared by the unit and acceptance suites.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "ltrnn/matrix.hpp"
#include "ltrnn/rng.hpp"
#include "ltrnn/sparse_kernel.hpp"
#include "ltrnn/trees.hpp"

namespace ltrnn::testing {

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0, double hi = 1.0) {
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = static_cast<float>(uniform(rng, lo, hi));
  return m;
}

// Each entry is zero with probability `sparsity`.
inline Matrix random_sparse_dense(Rng& rng, std::size_t rows, std::size_t cols, double sparsity) {
  Matrix m(rows, cols);
  for (auto& v : m.values())
    if (uniform01(rng) >= sparsity) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  return m;
}

inline std::size_t random_size(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(uniform_index(rng, hi - lo + 1));
}

// Random binary tree with exactly `leaves` leaves over `features` features.
// Thresholds are drawn from a small grid so ties with document values occur.
inline Tree random_tree(Rng& rng, std::size_t leaves, std::size_t features) {
  Tree t;
  std::function<std::int32_t(std::size_t)> build = [&](std::size_t n) -> std::int32_t {
    if (n == 1) {
      t.leaf_values.push_back(uniform(rng, -1.0, 1.0));
      return ~static_cast<std::int32_t>(t.leaf_values.size() - 1);
    }
    const auto id = static_cast<std::int32_t>(t.nodes.size());
    Tree::Node node;
    node.feature = static_cast<std::uint32_t>(uniform_index(rng, features));
    node.threshold = std::round(uniform(rng, -2.0, 2.0) * 8.0) / 8.0;
    t.nodes.push_back(node);
    const std::size_t left = 1 + uniform_index(rng, n - 1);
    const std::int32_t l = build(left);
    const std::int32_t r = build(n - left);
    t.nodes[static_cast<std::size_t>(id)].left = l;
    t.nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  };
  build(leaves);
  return t;
}

inline TreeEnsemble random_ensemble(Rng& rng, std::size_t trees, std::size_t max_leaves, std::size_t features) {
  TreeEnsemble e;
  e.num_features = features;
  e.base_score = uniform(rng, -0.5, 0.5);
  for (std::size_t i = 0; i < trees; ++i) e.trees.push_back(random_tree(rng, random_size(rng, 1, max_leaves), features));
  return e;
}

// Documents on the same 1/8 grid as the thresholds, plus off-grid values.
inline Matrix random_docs(Rng& rng, std::size_t n, std::size_t features) {
  Matrix d(n, features);
  for (auto& v : d.values())
    v = uniform01(rng) < 0.3 ? static_cast<float>(std::round(uniform(rng, -2.5, 2.5) * 8.0) / 8.0)
                             : static_cast<float>(uniform(rng, -2.5, 2.5));
  return d;
}

}  // namespace ltrnn::testing
