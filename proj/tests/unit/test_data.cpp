#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ltrnn/data.hpp"
#include "ltrnn/error.hpp"
#include "test_util.hpp"

namespace ltrnn {
namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ltrnn_data_" + name);
}

TEST(LoadLtr, SingleLineFillsMissingFeatures) {
  LoadOptions opt;
  opt.num_features = 3;
  const auto ds = parse_ltr_text("2 qid:7 1:0.5 3:1.0\n", opt);
  ASSERT_EQ(ds.queries.size(), 1u);
  const auto& q = ds.queries[0];
  EXPECT_EQ(q.query_id, 7);
  ASSERT_EQ(q.labels, std::vector<int>{2});
  EXPECT_EQ(q.documents.row(0)[0], 0.5f);
  EXPECT_EQ(q.documents.row(0)[1], 0.0f);
  EXPECT_EQ(q.documents.row(0)[2], 1.0f);
}

TEST(LoadLtr, EmptyFileHasNoQueries) {
  const auto p = temp_path("empty.txt");
  std::ofstream(p).close();
  const auto ds = load_ltr_file(p);
  EXPECT_TRUE(ds.queries.empty());
  EXPECT_EQ(ds.num_documents(), 0u);
}

TEST(LoadLtr, GroupsByQidInFileOrder) {
  const auto ds = parse_ltr_text("1 qid:5 1:1 2:2\n0 qid:5 2:3\n3 qid:2 1:4 # trailing comment\n");
  ASSERT_EQ(ds.queries.size(), 2u);
  EXPECT_EQ(ds.num_features, 2u);
  EXPECT_EQ(ds.queries[0].query_id, 5);
  EXPECT_EQ(ds.queries[0].size(), 2u);
  EXPECT_EQ(ds.queries[1].query_id, 2);
  EXPECT_EQ(ds.queries[1].size(), 1u);
  EXPECT_EQ(ds.queries[1].labels[0], 3);
  EXPECT_EQ(ds.queries[0].documents(1, 0), 0.0f);
}

TEST(LoadLtr, MalformedLineReportsLineNumber) {
  try {
    parse_ltr_text("1 qid:1 1:1\n1 qid:x 1:2\n");
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse_ltr_text("1 qid:1 1:abc\n"), ParseError);
}

TEST(LoadLtr, LabelOutOfRangeIsValidationError) {
  EXPECT_THROW(parse_ltr_text("5 qid:1 1:1\n"), ValidationError);
  EXPECT_THROW(parse_ltr_text("-1 qid:1 1:1\n"), ValidationError);
}

TEST(LoadLtr, RoundTripKeepsSixSignificantDigits) {
  Rng rng(3);
  Dataset ds;
  ds.num_features = 6;
  for (int q = 0; q < 4; ++q) {
    QueryGroup g;
    g.query_id = 10 + q;
    g.documents = testing::random_matrix(rng, 7, 6, -1e3, 1e3);
    for (int d = 0; d < 7; ++d) g.labels.push_back(static_cast<int>(uniform_index(rng, 5)));
    ds.queries.push_back(std::move(g));
  }
  const auto p = temp_path("roundtrip.txt");
  write_ltr_file(p, ds);
  const auto back = load_ltr_file(p, LoadOptions{6});
  ASSERT_EQ(back.queries.size(), ds.queries.size());
  for (std::size_t q = 0; q < ds.queries.size(); ++q) {
    EXPECT_EQ(back.queries[q].labels, ds.queries[q].labels);
    const auto a = ds.queries[q].documents.values();
    const auto b = back.queries[q].documents.values();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(b[i], a[i], std::fabs(a[i]) * 1e-6 + 1e-30);
  }
}

Dataset column_dataset(const std::vector<float>& col) {
  Dataset ds;
  ds.num_features = 1;
  QueryGroup g;
  g.query_id = 1;
  g.documents = Matrix(col.size(), 1, col);
  g.labels.assign(col.size(), 0);
  ds.queries.push_back(std::move(g));
  return ds;
}

TEST(ZNormalize, ConstantFeatureIsCenteredOnly) {
  const auto [out, stats] = z_normalize(column_dataset({1, 1, 1}));
  EXPECT_EQ(stats.variance[0], 0.0);
  for (const float v : out.queries[0].documents.values()) EXPECT_EQ(v, 0.0f);
}

TEST(ZNormalize, TwoPointColumn) {
  const auto [out, stats] = z_normalize(column_dataset({0, 2}));
  EXPECT_DOUBLE_EQ(stats.mean[0], 1.0);
  EXPECT_DOUBLE_EQ(stats.variance[0], 1.0);
  EXPECT_EQ(out.queries[0].documents(0, 0), -1.0f);
  EXPECT_EQ(out.queries[0].documents(1, 0), 1.0f);
}

// Two-pass reference over a random 5x3 matrix, for both divisors.
TEST(ZNormalize, MatchesTwoPassReference) {
  Rng rng(11);
  Dataset ds;
  ds.num_features = 3;
  QueryGroup g;
  g.query_id = 1;
  g.documents = testing::random_matrix(rng, 5, 3, -4.0, 4.0);
  g.labels.assign(5, 1);
  ds.queries.push_back(g);
  for (const auto div : {NormDivisor::kVariance, NormDivisor::kStdDev}) {
    const auto [out, stats] = z_normalize(ds, std::nullopt, div);
    for (std::size_t f = 0; f < 3; ++f) {
      double mean = 0.0;
      for (std::size_t i = 0; i < 5; ++i) mean += g.documents(i, f);
      mean /= 5.0;
      double var = 0.0;
      for (std::size_t i = 0; i < 5; ++i) var += (g.documents(i, f) - mean) * (g.documents(i, f) - mean);
      var /= 5.0;
      EXPECT_NEAR(stats.mean[f], mean, 1e-9);
      EXPECT_NEAR(stats.variance[f], var, 1e-9);
      const double scale = div == NormDivisor::kVariance ? var : std::sqrt(var);
      for (std::size_t i = 0; i < 5; ++i)
        EXPECT_NEAR(out.queries[0].documents(i, f), (g.documents(i, f) - mean) / scale, 1e-5);
    }
  }
}

TEST(ZNormalize, GivenStatsAreAppliedAndReturned) {
  NormStats s;
  s.mean = {1.0};
  s.variance = {4.0};
  const auto [out, applied] = z_normalize(column_dataset({5}), s);
  EXPECT_EQ(applied.mean, s.mean);
  EXPECT_EQ(out.queries[0].documents(0, 0), 1.0f);
  NormStats bad;
  bad.mean = {0.0, 0.0};
  bad.variance = {1.0, 1.0};
  EXPECT_THROW(z_normalize(column_dataset({5}), bad), ValidationError);
}

// Standardized columns (std-dev divisor) have mean 0 and variance 1, so a
// second pass with its own stats is the identity.
TEST(ZNormalize, SecondPassIsIdentityOnStandardizedData) {
  Rng rng(5);
  Dataset ds;
  ds.num_features = 4;
  QueryGroup g;
  g.query_id = 1;
  g.documents = testing::random_matrix(rng, 50, 4, -10.0, 10.0);
  g.labels.assign(50, 0);
  ds.queries.push_back(g);
  for (const auto div : {NormDivisor::kVariance, NormDivisor::kStdDev}) {
    const auto first = z_normalize(ds, std::nullopt, NormDivisor::kStdDev).first;
    const auto second = z_normalize(first, std::nullopt, div).first;
    const auto a = first.queries[0].documents.values();
    const auto b = second.queries[0].documents.values();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
  }
}

TEST(NormStatsFile, RoundTrip) {
  NormStats s;
  s.mean = {0.25, -3.0};
  s.variance = {2.0, 0.0};
  s.divisor = NormDivisor::kStdDev;
  const auto p = temp_path("norm.json");
  save_norm_stats(p, s);
  const auto back = load_norm_stats(p);
  EXPECT_EQ(back.mean, s.mean);
  EXPECT_EQ(back.variance, s.variance);
  EXPECT_EQ(back.divisor, s.divisor);
}

TEST(AttachScores, EmptyDatasetEmptyFile) {
  const auto p = temp_path("empty_scores.txt");
  std::ofstream(p).close();
  Dataset ds;
  const auto out = attach_scores(ds, p);
  EXPECT_TRUE(out.queries.empty());
}

TEST(AttachScores, AttachesInOrder) {
  auto ds = parse_ltr_text("1 qid:1 1:1\n0 qid:1 1:2\n2 qid:2 1:3\n1 qid:2 1:4\n0 qid:2 1:5\n");
  const std::vector<float> scores{0.5f, 1.5f, 2.5f, 3.5f, 4.5f};
  const auto p = temp_path("scores5.txt");
  write_score_file(p, scores);
  const auto out = attach_scores(ds, p);
  ASSERT_TRUE(out.has_teacher_scores());
  EXPECT_EQ(out.stacked_teacher_scores(), scores);
  EXPECT_EQ(*out.queries[1].teacher_scores, (std::vector<float>{2.5f, 3.5f, 4.5f}));
}

TEST(AttachScores, CountMismatchNamesBothCounts) {
  auto ds = parse_ltr_text("1 qid:1 1:1\n0 qid:1 1:2\n2 qid:2 1:3\n1 qid:2 1:4\n0 qid:2 1:5\n");
  const auto p = temp_path("scores4.txt");
  write_score_file(p, std::vector<float>{1, 2, 3, 4});
  try {
    attach_scores(ds, p);
    FAIL() << "expected a validation error";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find('5'), std::string::npos);
    EXPECT_NE(msg.find('4'), std::string::npos);
  }
}

TEST(SplitByQuery, KeepsOrderAndCoversAll) {
  Dataset ds;
  ds.num_features = 1;
  for (int q = 0; q < 10; ++q) {
    QueryGroup g;
    g.query_id = q;
    g.documents = Matrix(2, 1);
    g.labels = {0, 1};
    ds.queries.push_back(g);
  }
  const auto s = split_by_query(ds, 0.6, 0.2);
  EXPECT_EQ(s.train.queries.size(), 6u);
  EXPECT_EQ(s.validation.queries.size(), 2u);
  EXPECT_EQ(s.test.queries.size(), 2u);
  EXPECT_EQ(s.validation.queries.front().query_id, 6);
  EXPECT_THROW(split_by_query(ds, 0.9, 0.2), ValidationError);
}

TEST(BundledData, LoadsAndValidates) {
  const std::filesystem::path dir = LTRNN_TEST_DATA_DIR;
  for (const char* name : {"train.txt", "valid.txt", "test.txt"}) {
    const auto ds = load_ltr_file(dir / name);
    EXPECT_EQ(ds.num_features, 10u) << name;
    EXPECT_NO_THROW(ds.validate());
    for (const auto& q : ds.queries) EXPECT_EQ(q.size(), 50u);
  }
}

}  // namespace
}  // namespace ltrnn
