#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <filesystem>

#include "ltrnn/error.hpp"
#include "ltrnn/trees.hpp"
#include "test_util.hpp"

namespace ltrnn {
namespace {

TreeEnsemble stump(double base = 0.0) {
  TreeEnsemble e;
  e.num_features = 1;
  e.base_score = base;
  Tree t;
  t.nodes.push_back({0, 0.5, ~0, ~1});
  t.leaf_values = {1.0, 2.0};
  e.trees.push_back(t);
  return e;
}

// Independent recursive traversal.
double follow(const Tree& t, std::int32_t node, std::span<const float> doc) {
  if (node < 0) return t.leaf_values[static_cast<std::size_t>(~node)];
  const auto& n = t.nodes[static_cast<std::size_t>(node)];
  return follow(t, doc[n.feature] <= n.threshold ? n.left : n.right, doc);
}

double oracle(const TreeEnsemble& e, std::span<const float> doc) {
  double s = 0.0;
  for (const auto& t : e.trees) s += t.nodes.empty() ? t.leaf_values[0] : follow(t, 0, doc);
  return s + e.base_score;
}

TEST(Ensemble, StumpJsonHasOneTreeTwoLeaves) {
  const auto e = parse_ensemble_json(R"({"num_features":1,"trees":[{"split_feature":[0],"threshold":[0.5],
      "left_child":[-1],"right_child":[-2],"leaf_value":[1.0,2.0]}]})");
  ASSERT_EQ(e.trees.size(), 1u);
  EXPECT_EQ(e.trees[0].num_leaves(), 2u);
}

TEST(Ensemble, EmptyEnsembleScoresBase) {
  const auto e = parse_ensemble_json(R"({"num_features":3,"base_score":0.75,"trees":[]})");
  EXPECT_TRUE(e.trees.empty());
  const std::vector<float> doc{1, 2, 3};
  EXPECT_EQ(score_naive(e, doc), 0.75);
  EXPECT_EQ(build_qs_index(e).score(doc), 0.75);
}

TEST(Ensemble, UnknownFeatureIndexRejected) {
  EXPECT_THROW(parse_ensemble_json(R"({"num_features":1,"trees":[{"split_feature":[3],"threshold":[0.5],
      "left_child":[-1],"right_child":[-2],"leaf_value":[1.0,2.0]}]})"),
               ValidationError);
}

TEST(Ensemble, CrossFormatPredictionsAgree) {
  Rng rng(21);
  const auto e = testing::random_ensemble(rng, 10, 16, 6);
  const auto from_json = parse_ensemble_json(ensemble_to_json(e));
  const auto from_lgb = parse_ensemble_lightgbm(ensemble_to_lightgbm(e));
  const auto docs = testing::random_docs(rng, 100, 6);
  for (std::size_t i = 0; i < docs.rows(); ++i) {
    const double s = score_naive(e, docs.row(i));
    EXPECT_EQ(score_naive(from_json, docs.row(i)), s);
    EXPECT_EQ(score_naive(from_lgb, docs.row(i)), s);
  }
}

TEST(Ensemble, FileRoundTripByExtension) {
  Rng rng(4);
  const auto e = testing::random_ensemble(rng, 3, 8, 4);
  const auto dir = std::filesystem::temp_directory_path();
  save_ensemble(dir / "ltrnn_trees.json", e, EnsembleFormat::kJson);
  save_ensemble(dir / "ltrnn_trees.txt", e, EnsembleFormat::kLightGbmText);
  const auto a = load_ensemble(dir / "ltrnn_trees.json");
  const auto b = load_ensemble(dir / "ltrnn_trees.txt");
  EXPECT_EQ(a.trees.size(), 3u);
  EXPECT_EQ(b.trees.size(), 3u);
  EXPECT_EQ(a.base_score, e.base_score);
  EXPECT_EQ(b.base_score, e.base_score);
}

TEST(ScoreNaive, StumpGoesLeftOnLessOrEqual) {
  const auto e = stump(0.25);
  EXPECT_EQ(score_naive(e, std::vector<float>{0.3f}), 1.25);
  EXPECT_EQ(score_naive(e, std::vector<float>{0.5f}), 1.25);
  EXPECT_EQ(score_naive(e, std::vector<float>{0.7f}), 2.25);
}

TEST(ScoreNaive, MatchesRecursiveOracle) {
  Rng rng(8);
  const auto e = testing::random_ensemble(rng, 10, 20, 5);
  const auto docs = testing::random_docs(rng, 100, 5);
  for (std::size_t i = 0; i < docs.rows(); ++i) EXPECT_DOUBLE_EQ(score_naive(e, docs.row(i)), oracle(e, docs.row(i)));
}

TEST(QsIndex, StumpHasOneEntryMaskingRightLeaf) {
  const auto idx = build_qs_index(stump());
  ASSERT_EQ(idx.entries(0).size(), 1u);
  EXPECT_EQ(idx.entries(0)[0].threshold, 0.5);
  // Node false means the left leaf (bit 0) is unreachable.
  EXPECT_EQ(idx.entries(0)[0].mask & 0x3u, 0x2u);
  EXPECT_EQ(idx.default_bitvector(0) & 0x3u, 0x3u);
}

TEST(QsIndex, TwoSplitsOnOneFeatureAreSorted) {
  TreeEnsemble e;
  e.num_features = 2;
  Tree t;
  // root: f0 <= 2 ? (f0 <= 1 ? L0 : L1) : L2
  t.nodes.push_back({0, 2.0, 1, ~2});
  t.nodes.push_back({0, 1.0, ~0, ~1});
  t.leaf_values = {10, 20, 30};
  e.trees.push_back(t);
  const auto idx = build_qs_index(e);
  const auto ent = idx.entries(0);
  ASSERT_EQ(ent.size(), 2u);
  EXPECT_EQ(ent[0].threshold, 1.0);
  EXPECT_EQ(ent[1].threshold, 2.0);
  EXPECT_EQ(ent[0].mask & 0x7u, 0x6u);  // inner node: zero leaf 0
  EXPECT_EQ(ent[1].mask & 0x7u, 0x4u);  // root: zero leaves 0 and 1
  EXPECT_TRUE(idx.entries(1).empty());
  for (const float x : {0.5f, 1.0f, 1.5f, 2.0f, 2.5f})
    EXPECT_EQ(idx.score(std::vector<float>{x, 0.0f}), score_naive(e, std::vector<float>{x, 0.0f}));
}

TEST(QsIndex, RefusesTreesAbove64Leaves) {
  Rng rng(1);
  TreeEnsemble e;
  e.num_features = 3;
  e.trees.push_back(testing::random_tree(rng, 65, 3));
  EXPECT_THROW(build_qs_index(e), UnsupportedModelError);
  e.trees[0] = testing::random_tree(rng, 64, 3);
  EXPECT_NO_THROW(build_qs_index(e));
}

TEST(QsIndex, DocBelowEveryThresholdExitsLeftmost) {
  Rng rng(2);
  const auto e = testing::random_ensemble(rng, 5, 30, 4);
  const std::vector<float> low(4, -100.0f);
  double expect = e.base_score;
  for (const auto& t : e.trees) expect += t.leaf_values[t.leaves_in_order().front()];
  EXPECT_EQ(build_qs_index(e).score(low), expect);
}

TEST(QsIndex, MasksZeroExactlyTheLeftSubtree) {
  Rng rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    const auto e = testing::random_ensemble(rng, 3, 40, 4);
    const auto idx = build_qs_index(e);
    for (std::size_t f = 0; f < idx.num_features(); ++f) {
      const auto ent = idx.entries(f);
      for (std::size_t i = 1; i < ent.size(); ++i) EXPECT_LE(ent[i - 1].threshold, ent[i].threshold);
      for (const auto& en : ent) {
        const auto leaves = e.trees[en.tree].num_leaves();
        const std::uint64_t live = leaves == 64 ? ~0ull : ((1ull << leaves) - 1);
        const auto zeros = std::popcount(~en.mask & live);
        EXPECT_GE(zeros, 1);
        EXPECT_LT(static_cast<std::size_t>(zeros), leaves);
        // Zero bits are contiguous from the node's leftmost leaf.
        const std::uint64_t z = ~en.mask & live;
        EXPECT_EQ(z >> std::countr_zero(z), (1ull << zeros) - 1);
      }
    }
  }
}

// Property: bit-exact equality over random ensembles with ties on thresholds.
TEST(QsIndex, EqualsNaiveOnRandomEnsembles) {
  Rng rng(99);
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t features = testing::random_size(rng, 1, 12);
    const auto e = testing::random_ensemble(rng, testing::random_size(rng, 0, 30), 64, features);
    const auto idx = build_qs_index(e);
    const auto docs = testing::random_docs(rng, 50, features);
    const auto qs = score_quickscorer(idx, docs);
    const auto nv = score_naive(e, docs);
    for (std::size_t i = 0; i < docs.rows(); ++i) ASSERT_EQ(qs[i], nv[i]) << "rep " << rep << " doc " << i;
  }
}

TEST(Midpoints, SplitsPlusRange) {
  TreeEnsemble e;
  e.num_features = 2;
  Tree t;
  t.nodes.push_back({0, 3.0, 1, 2});
  t.nodes.push_back({0, 1.0, ~0, ~1});
  t.nodes.push_back({0, 5.0, ~2, ~3});
  t.leaf_values = {0, 0, 0, 0};
  e.trees.push_back(t);
  Dataset ds;
  ds.num_features = 2;
  QueryGroup g;
  g.documents = Matrix(2, 2, std::vector<float>{0, 2, 10, 6});
  g.labels = {0, 0};
  ds.queries.push_back(g);
  const auto table = extract_midpoint_table(e, ds);
  EXPECT_EQ(table.midpoints[0], (std::vector<float>{0.5f, 2.0f, 4.0f, 7.5f}));
  EXPECT_EQ(table.midpoints[1], (std::vector<float>{4.0f}));
  EXPECT_EQ(table.feature_min[1], 2.0f);
  EXPECT_EQ(table.feature_max[1], 6.0f);
}

TEST(Midpoints, MinEqualToSplitIsDeduplicated) {
  TreeEnsemble e = stump();
  e.trees[0].nodes[0].threshold = 1.0;
  Dataset ds;
  ds.num_features = 1;
  QueryGroup g;
  g.documents = Matrix(2, 1, std::vector<float>{1, 3});
  g.labels = {0, 0};
  ds.queries.push_back(g);
  // {1, 1, 3} -> {1, 3} -> {2}
  EXPECT_EQ(extract_midpoint_table(e, ds).midpoints[0], (std::vector<float>{2.0f}));
}

TEST(Midpoints, StrictlyIncreasingInsideRange) {
  Rng rng(13);
  const std::filesystem::path dir = LTRNN_TEST_DATA_DIR;
  const auto ds = load_ltr_file(dir / "train.txt");
  const auto e = load_ensemble(dir / "teacher.json");
  const auto table = extract_midpoint_table(e, ds);
  ASSERT_EQ(table.num_features(), ds.num_features);
  for (std::size_t f = 0; f < table.num_features(); ++f) {
    const auto& mp = table.midpoints[f];
    for (std::size_t i = 0; i < mp.size(); ++i) {
      EXPECT_GT(mp[i], table.feature_min[f]);
      EXPECT_LT(mp[i], table.feature_max[f]);
      if (i) EXPECT_LT(mp[i - 1], mp[i]);
    }
  }
}

}  // namespace
}  // namespace ltrnn
