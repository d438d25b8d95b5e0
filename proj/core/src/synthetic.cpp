#include "ltrnn/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "ltrnn/error.hpp"
#include "ltrnn/rng.hpp"

namespace ltrnn {
namespace {

constexpr std::size_t kMinLeafDocs = 5;
constexpr int kSplitCandidates = 8;

struct TreeBuilder {
  const Matrix& x;
  const std::vector<double>& residual;
  std::size_t max_depth;
  double shrinkage;
  Rng& rng;
  Tree tree;

  std::int32_t make_leaf(const std::vector<std::size_t>& docs) {
    double s = 0.0;
    for (const auto d : docs) s += residual[d];
    const double v = docs.empty() ? 0.0 : shrinkage * s / static_cast<double>(docs.size());
    tree.leaf_values.push_back(v);
    return ~static_cast<std::int32_t>(tree.leaf_values.size() - 1);
  }

  static double sse_gain(double sum_l, std::size_t n_l, double sum_r, std::size_t n_r) {
    return sum_l * sum_l / static_cast<double>(n_l) + sum_r * sum_r / static_cast<double>(n_r);
  }

  std::int32_t build(const std::vector<std::size_t>& docs, std::size_t depth) {
    if (depth == max_depth || docs.size() < 2 * kMinLeafDocs) return make_leaf(docs);
    double best_gain = -1.0;
    std::uint32_t best_f = 0;
    double best_thr = 0.0;
    std::vector<float> vals(docs.size());
    for (int c = 0; c < kSplitCandidates; ++c) {
      const auto f = static_cast<std::uint32_t>(uniform_index(rng, x.cols()));
      for (std::size_t i = 0; i < docs.size(); ++i) vals[i] = x(docs[i], f);
      std::vector<float> sorted = vals;
      std::sort(sorted.begin(), sorted.end());
      const auto pos = static_cast<std::size_t>(uniform(rng, 0.1, 0.9) * static_cast<double>(sorted.size()));
      const float thr = sorted[std::min(pos, sorted.size() - 1)];
      double sl = 0.0, sr = 0.0;
      std::size_t nl = 0, nr = 0;
      for (std::size_t i = 0; i < docs.size(); ++i) {
        if (vals[i] <= thr) {
          sl += residual[docs[i]];
          ++nl;
        } else {
          sr += residual[docs[i]];
          ++nr;
        }
      }
      if (nl < kMinLeafDocs || nr < kMinLeafDocs) continue;
      const double g = sse_gain(sl, nl, sr, nr);
      if (g > best_gain) {
        best_gain = g;
        best_f = f;
        best_thr = thr;
      }
    }
    if (best_gain < 0.0) return make_leaf(docs);
    std::vector<std::size_t> left, right;
    for (const auto d : docs) (x(d, best_f) <= best_thr ? left : right).push_back(d);
    const auto id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.push_back({best_f, best_thr, 0, 0});
    const std::int32_t l = build(left, depth + 1);
    const std::int32_t r = build(right, depth + 1);
    tree.nodes[static_cast<std::size_t>(id)].left = l;
    tree.nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }
};

}  // namespace

Dataset make_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.features < 4) throw ValidationError("synthetic data needs at least 4 features");
  if (spec.queries == 0 || spec.docs_per_query == 0) throw ValidationError("synthetic data needs queries and documents");
  Rng rng(spec.seed);
  Dataset ds;
  ds.num_features = spec.features;
  for (std::size_t q = 0; q < spec.queries; ++q) {
    QueryGroup g;
    g.query_id = static_cast<std::int64_t>(q + 1);
    g.documents = Matrix(spec.docs_per_query, spec.features);
    // Per-query difficulty shifts the label distribution.
    const double shift = uniform(rng, -0.4, 0.4);
    for (std::size_t d = 0; d < spec.docs_per_query; ++d) {
      auto x = g.documents.row(d);
      // Informative features sit near unit variance so that dividing by the
      // variance leaves them on comparable scales.
      x[0] = static_cast<float>(uniform(rng, 0.0, 3.5));
      x[1] = static_cast<float>(uniform(rng, 0.0, 3.5));
      x[2] = static_cast<float>(std::floor(uniform(rng, 0.0, 4.0)));
      x[3] = static_cast<float>(standard_normal(rng));
      for (std::size_t f = 4; f < spec.features; ++f) {
        const double scale = 0.7 * std::pow(1.4, static_cast<double>(f % 3));
        x[f] = f % 3 == 0 ? static_cast<float>(rng() & 1) : static_cast<float>(scale * standard_normal(rng));
      }
      const double u0 = x[0] / 3.5, u1 = x[1] / 3.5;
      const double latent =
          1.5 * u0 + std::sin(3.0 * u1) + 0.6 * x[2] + 0.5 * x[3] * u0 + shift + 0.3 * standard_normal(rng);
      const int label = latent < 1.0 ? 0 : latent < 1.8 ? 1 : latent < 2.6 ? 2 : latent < 3.4 ? 3 : 4;
      g.labels.push_back(label);
    }
    ds.queries.push_back(std::move(g));
  }
  return ds;
}

TreeEnsemble fit_regression_ensemble(const Dataset& train, std::size_t trees, std::size_t depth, double shrinkage,
                                     std::uint64_t seed) {
  if (depth == 0 || (std::size_t{1} << depth) > kMaxQsLeaves)
    throw ValidationError("tree depth must be in [1, 6] to stay within 64 leaves");
  const Matrix x = train.stacked_documents();
  std::vector<double> target;
  for (const auto& q : train.queries) target.insert(target.end(), q.labels.begin(), q.labels.end());
  TreeEnsemble ens;
  ens.num_features = train.num_features;
  double mean = 0.0;
  for (const double t : target) mean += t;
  mean = target.empty() ? 0.0 : mean / static_cast<double>(target.size());
  ens.base_score = mean;
  std::vector<double> residual(target.size());
  for (std::size_t i = 0; i < target.size(); ++i) residual[i] = target[i] - mean;
  std::vector<std::size_t> all(target.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Rng rng(seed);
  for (std::size_t t = 0; t < trees; ++t) {
    TreeBuilder b{x, residual, depth, shrinkage, rng, {}};
    b.build(all, 0);
    for (std::size_t i = 0; i < residual.size(); ++i)
      residual[i] -= b.tree.leaf_values[b.tree.exit_leaf(x.row(i))];
    ens.trees.push_back(std::move(b.tree));
  }
  ens.validate();
  return ens;
}

SyntheticTask make_synthetic_task(const SyntheticSpec& spec) {
  SyntheticTask task;
  task.data = make_synthetic_dataset(spec);
  task.split = split_by_query(task.data, 0.6, 0.2);
  task.teacher = fit_regression_ensemble(task.split.train, spec.trees, spec.tree_depth, spec.shrinkage, spec.seed + 1);
  return task;
}

}  // namespace ltrnn
