#include <gtest/gtest.h>

#include <numeric>

#include "ltrnn/error.hpp"
#include "ltrnn/sparse_kernel.hpp"
#include "test_util.hpp"

namespace ltrnn {
namespace {

SparseCoeffs coeffs(double la, double lb) {
  SparseCoeffs c;
  c.L_a = la;
  c.L_b = lb;
  c.L_c = 2.0 * lb;
  c.machine = "test";
  return c;
}

SdmmTimer exact_timer(const SparseCoeffs& c) {
  return [c](const CsrMatrix& a, std::size_t n) { return predict_sparse_time(a.stats(), c, n); };
}

TEST(Csr, IdentityLayout) {
  Matrix eye(3, 3);
  for (std::size_t i = 0; i < 3; ++i) eye(i, i) = 1.0f;
  const auto a = CsrMatrix::from_dense(eye);
  EXPECT_EQ(a.values, (std::vector<float>{1, 1, 1}));
  EXPECT_EQ(a.column_index, (std::vector<std::uint32_t>{0, 1, 2}));
  EXPECT_EQ(a.rows, (std::vector<std::uint32_t>{0, 1, 2, 3}));
}

TEST(Csr, ZeroMatrix) {
  const auto a = CsrMatrix::from_dense(Matrix(3, 4));
  EXPECT_EQ(a.nnz(), 0u);
  EXPECT_EQ(a.rows, (std::vector<std::uint32_t>{0, 0, 0, 0}));
  EXPECT_EQ(a.sparsity(), 1.0);
  EXPECT_EQ(a.stats(), SparsityStats{});
}

TEST(Csr, RoundTripAndTolerance) {
  Rng rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    const auto w = testing::random_sparse_dense(rng, testing::random_size(rng, 1, 40),
                                                testing::random_size(rng, 1, 40), uniform(rng, 0.0, 0.99));
    const auto a = CsrMatrix::from_dense(w);
    EXPECT_NO_THROW(a.validate());
    EXPECT_EQ(a.to_dense(), w);
  }
  const auto a = CsrMatrix::from_dense(Matrix(1, 4, std::vector<float>{0.1f, -0.5f, 0.2f, 1.0f}), 0.2f);
  EXPECT_EQ(a.values, (std::vector<float>{-0.5f, 1.0f}));
  EXPECT_THROW(CsrMatrix::from_dense(Matrix(1, 1), -1.0f), ValidationError);
}

TEST(Csr, StatsCountActiveRowsAndColumns) {
  Matrix w(4, 5);
  w(0, 1) = 1;
  w(0, 3) = 2;
  w(2, 1) = 3;
  const auto s = CsrMatrix::from_dense(w).stats();
  EXPECT_EQ(s.nnz, 3u);
  EXPECT_EQ(s.active_rows, 2u);
  EXPECT_EQ(s.active_cols, 2u);
}

TEST(Csr, ValidateCatchesBrokenInvariants) {
  CsrMatrix a;
  a.m = 1;
  a.k = 3;
  a.values = {1, 2};
  a.column_index = {2, 1};
  a.rows = {0, 2};
  EXPECT_THROW(a.validate(), ValidationError);
  a.column_index = {1, 3};
  EXPECT_THROW(a.validate(), ValidationError);
  a.column_index = {0, 2};
  EXPECT_NO_THROW(a.validate());
}

TEST(SdmmReference, IdentityAndSingleEntry) {
  Rng rng(2);
  const auto b = testing::random_matrix(rng, 4, 6);
  Matrix eye(4, 4);
  for (std::size_t i = 0; i < 4; ++i) eye(i, i) = 1.0f;
  EXPECT_EQ(sdmm_reference(CsrMatrix::from_dense(eye), b), b);

  Matrix one(3, 4);
  one(1, 2) = 5.0f;
  const auto c = sdmm_reference(CsrMatrix::from_dense(one), b);
  for (std::size_t j = 0; j < 6; ++j) {
    EXPECT_EQ(c(0, j), 0.0f);
    EXPECT_EQ(c(1, j), 5.0f * b(2, j));
    EXPECT_EQ(c(2, j), 0.0f);
  }
  EXPECT_THROW(sdmm_reference(CsrMatrix::from_dense(one), Matrix(3, 2)), ValidationError);
}

TEST(SdmmReference, MatchesDenseOracle) {
  Rng rng(3);
  const auto w = testing::random_sparse_dense(rng, 80, 50, 0.9);
  const auto b = testing::random_matrix(rng, 50, 32);
  EXPECT_LE(max_relative_error(sdmm_reference(CsrMatrix::from_dense(w), b), naive_matmul(w, b)), 1e-4);
}

TEST(SdmmBlocked, EmptyRowsIssueNoLoads) {
  Rng rng(4);
  Matrix w(5, 6);
  w(1, 0) = 1.0f;
  w(1, 4) = -2.0f;
  w(3, 5) = 0.5f;
  const auto b = testing::random_matrix(rng, 6, 16);
  SdmmCounters cnt;
  const auto c = sdmm_blocked(CsrMatrix::from_dense(w), b, 8, &cnt);
  EXPECT_EQ(cnt.rows_skipped, 3u);
  EXPECT_EQ(cnt.rows_visited, 2u);
  // Two lane groups per visited row, one load and one store each.
  EXPECT_EQ(cnt.c_lane_loads, 4u);
  EXPECT_EQ(cnt.c_lane_stores, 4u);
  EXPECT_EQ(cnt.broadcasts, 3u);
  EXPECT_EQ(cnt.b_lane_loads, 6u);
  for (const std::size_t r : {0u, 2u, 4u})
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(c(r, j), 0.0f);
}

TEST(SdmmBlocked, AccumulatesIntoC) {
  Rng rng(5);
  const auto w = testing::random_sparse_dense(rng, 7, 9, 0.5);
  const auto b = testing::random_matrix(rng, 9, 8);
  Matrix c(7, 8, 1.0f);
  const auto a = CsrMatrix::from_dense(w);
  sdmm_blocked(a, b.data(), 8, 8, c.data(), 8);
  const auto ref = sdmm_reference(a, b);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c.data()[i], ref.data()[i] + 1.0f, 1e-5);
}

TEST(SdmmBlocked, IdentityAndBadBatch) {
  Rng rng(6);
  Matrix eye(8, 8);
  for (std::size_t i = 0; i < 8; ++i) eye(i, i) = 1.0f;
  const auto b = testing::random_matrix(rng, 8, 24);
  EXPECT_EQ(sdmm_blocked(CsrMatrix::from_dense(eye), b), b);
  EXPECT_THROW(sdmm_blocked(CsrMatrix::from_dense(eye), testing::random_matrix(rng, 8, 12)), ValidationError);
}

TEST(SdmmBlocked, PanelWidths) {
  EXPECT_EQ(sdmm_panel_widths(64), (std::vector<std::size_t>{64}));
  EXPECT_EQ(sdmm_panel_widths(200), (std::vector<std::size_t>{64, 64, 64, 8}));
  EXPECT_EQ(sdmm_panel_widths(56), (std::vector<std::size_t>{32, 16, 8}));
  for (std::size_t n = 8; n <= 512; n += 8) {
    const auto w = sdmm_panel_widths(n);
    EXPECT_EQ(std::accumulate(w.begin(), w.end(), std::size_t{0}), n);
  }
}

// sdmm_blocked == sdmm_reference == densify-then-GEMM.
TEST(SdmmBlocked, PropertyAgainstReferenceAndDense) {
  Rng rng(7);
  const std::size_t ns[] = {8, 16, 32, 64};
  for (int rep = 0; rep < 240; ++rep) {
    const auto m = testing::random_size(rng, 1, 160), k = testing::random_size(rng, 1, 160);
    const auto n = ns[uniform_index(rng, 4)];
    const auto w = testing::random_sparse_dense(rng, m, k, uniform(rng, 0.5, 0.999));
    const auto b = testing::random_matrix(rng, k, n);
    const auto a = CsrMatrix::from_dense(w);
    const auto dense = naive_matmul(w, b);
    ASSERT_LE(max_relative_error(sdmm_reference(a, b), dense), 1e-4);
    ASSERT_LE(max_relative_error(sdmm_blocked(a, b), dense), 1e-4) << m << "x" << k << " n=" << n;
  }
}

TEST(SplitRows, BalancedBlocks) {
  Rng rng(8);
  const auto a = CsrMatrix::from_dense(testing::random_sparse_dense(rng, 10, 6, 0.5));
  const auto parts = split_rows(a, 3);
  ASSERT_EQ(parts.size(), 3u);
  EXPECT_EQ(parts[0].m, 4u);
  EXPECT_EQ(parts[1].m, 3u);
  EXPECT_EQ(parts[2].m, 3u);
  EXPECT_EQ(split_rows(a, 1).front(), a);
  EXPECT_THROW(split_rows(a, 0), ValidationError);
  EXPECT_THROW(split_rows(a, 11), ValidationError);
}

TEST(SplitRows, StackingIdentityIsBitExact) {
  Rng rng(9);
  for (int rep = 0; rep < 220; ++rep) {
    const auto m = testing::random_size(rng, 1, 60), k = testing::random_size(rng, 1, 60);
    const auto a = CsrMatrix::from_dense(testing::random_sparse_dense(rng, m, k, uniform(rng, 0.0, 0.99)));
    const auto b = testing::random_matrix(rng, k, 8 * testing::random_size(rng, 1, 4));
    const auto s = testing::random_size(rng, 1, m);
    std::vector<Matrix> ref_parts, blk_parts;
    for (const auto& part : split_rows(a, s)) {
      EXPECT_NO_THROW(part.validate());
      ref_parts.push_back(sdmm_reference(part, b));
      blk_parts.push_back(sdmm_blocked(part, b));
    }
    ASSERT_EQ(stack_rows(ref_parts), sdmm_reference(a, b));
    ASSERT_EQ(stack_rows(blk_parts), sdmm_blocked(a, b));
  }
}

TEST(CalibrationMatrix, AnalyticStats) {
  const auto ac = make_calibration_matrix(CalibrationKind::kSingleColumn, 4, 4, 4, 1);
  EXPECT_EQ(ac.stats(), (SparsityStats{4, 4, 1}));
  const auto rd = make_calibration_matrix(CalibrationKind::kDiagonalRandom, 4, 4, 4, 1);
  EXPECT_EQ(rd.stats(), (SparsityStats{4, 4, 4}));
  const auto dense = rd.to_dense();
  for (std::size_t i = 0; i < 4; ++i) {
    int row = 0, col = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      row += dense(i, j) != 0.0f;
      col += dense(j, i) != 0.0f;
    }
    EXPECT_EQ(row, 1);
    EXPECT_EQ(col, 1);
  }
  const auto a2 = make_calibration_matrix(CalibrationKind::kTwoColumn, 4, 4, 4, 1);
  EXPECT_EQ(a2.stats(), (SparsityStats{8, 4, 2}));
  EXPECT_THROW(make_calibration_matrix(CalibrationKind::kSingleColumn, 4, 4, 5), ValidationError);
  EXPECT_THROW(make_calibration_matrix(CalibrationKind::kDiagonalRandom, 4, 5, 4), ValidationError);
  EXPECT_THROW(make_calibration_matrix(CalibrationKind::kTwoColumn, 4, 1, 2), ValidationError);
}

TEST(CalibrateSparse, ClosedLoopRecoversCoefficients) {
  const auto truth = coeffs(3.7e-10, 1.3e-10);
  const auto cal = calibrate_sparse(SparseCalibrationOptions{}, exact_timer(truth));
  EXPECT_EQ(cal.cells.size(), 12u);
  EXPECT_NEAR(cal.coeffs.L_a / truth.L_a, 1.0, 1e-6);
  EXPECT_NEAR(cal.coeffs.L_b / truth.L_b, 1.0, 1e-6);
  EXPECT_NEAR(cal.coeffs.L_c / truth.L_c, 1.0, 1e-6);
  EXPECT_NO_THROW(cal.coeffs.validate());
}

TEST(CalibrateSparse, DegenerateTimerFails) {
  const SdmmTimer flat = [](const CsrMatrix&, std::size_t) { return 1e-6; };
  EXPECT_THROW(calibrate_sparse(SparseCalibrationOptions{}, flat), CalibrationError);
}

TEST(CalibrateSparse, RealTimerGivesPositiveCoefficients) {
  SparseCalibrationOptions opts;
  opts.sizes = {200, 400};
  opts.n_values = {32};
  TimingOptions t{5, 1, 1e-4, 1000};
  const auto cal = calibrate_sparse(opts, make_sdmm_timer(t));
  EXPECT_GT(cal.coeffs.L_a, 0.0);
  EXPECT_GT(cal.coeffs.L_b, 0.0);
}

TEST(PredictSparse, EmptyMatrixCostsNothing) {
  EXPECT_EQ(predict_sparse_time(SparsityStats{}, coeffs(1e-9, 1e-9), 64), 0.0);
}

TEST(PredictSparse, DistinguishesSparsityAtEqualShape) {
  const auto c = coeffs(4e-11, 2e-11);
  const auto lo = predict_sparse_time(SparsityStats{150, 100, 136}, c, 64);
  const auto hi = predict_sparse_time(SparsityStats{449, 100, 136}, c, 64);
  EXPECT_LT(lo, hi);
}

TEST(PredictSparse, MonotoneInEachStat) {
  Rng rng(10);
  const auto c = coeffs(5e-11, 3e-11);
  for (int rep = 0; rep < 200; ++rep) {
    SparsityStats s{testing::random_size(rng, 0, 5000), testing::random_size(rng, 0, 500),
                    testing::random_size(rng, 0, 500)};
    const auto t = predict_sparse_time(s, c, 64);
    auto s1 = s;
    ++s1.nnz;
    auto s2 = s;
    ++s2.active_rows;
    auto s3 = s;
    ++s3.active_cols;
    EXPECT_GE(predict_sparse_time(s1, c, 64), t);
    EXPECT_GE(predict_sparse_time(s2, c, 64), t);
    EXPECT_GE(predict_sparse_time(s3, c, 64), t);
  }
}

TEST(SparseCoeffs, JsonRoundTripAndValidation) {
  const auto c = coeffs(1.25e-10, 3.5e-11);
  const auto back = sparse_coeffs_from_json(sparse_coeffs_to_json(c));
  EXPECT_EQ(back.L_a, c.L_a);
  EXPECT_EQ(back.L_b, c.L_b);
  EXPECT_EQ(back.L_c, c.L_c);
  EXPECT_EQ(back.n_b, c.n_b);
  EXPECT_EQ(back.machine, c.machine);
  auto bad = c;
  bad.L_c = 3.0 * c.L_b;
  EXPECT_THROW(bad.validate(), ValidationError);
  EXPECT_THROW(SparseCoeffs{}.validate(), ValidationError);
}

}  // namespace
}  // namespace ltrnn
