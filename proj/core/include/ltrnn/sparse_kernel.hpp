#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ltrnn/matrix.hpp"
#include "ltrnn/timing.hpp"

namespace ltrnn {

struct SparsityStats {
  std::size_t nnz = 0;
  std::size_t active_rows = 0;
  std::size_t active_cols = 0;

  friend bool operator==(const SparsityStats&, const SparsityStats&) = default;
};

// Compressed sparse row matrix. Column indices are strictly increasing within a row.
struct CsrMatrix {
  std::size_t m = 0;
  std::size_t k = 0;
  std::vector<float> values;
  std::vector<std::uint32_t> column_index;
  std::vector<std::uint32_t> rows{0};  // m + 1 offsets

  std::size_t nnz() const noexcept { return values.size(); }
  // 1 - nnz / (m k); 0 for an empty shape.
  double sparsity() const noexcept;
  SparsityStats stats() const;
  void validate() const;

  // Drops entries with |w| <= tol. With tol 0 exact zeros are dropped.
  static CsrMatrix from_dense(const Matrix& w, float tol = 0.0f);
  Matrix to_dense() const;

  friend bool operator==(const CsrMatrix&, const CsrMatrix&) = default;
};

// Straight CSR triple loop: rows of A, non-zeros of the row, columns of B.
Matrix sdmm_reference(const CsrMatrix& a, const Matrix& b);

// Work done by sdmm_blocked, counted per row and per lane group.
struct SdmmCounters {
  std::size_t rows_visited = 0;
  std::size_t rows_skipped = 0;
  std::size_t c_lane_loads = 0;
  std::size_t c_lane_stores = 0;
  std::size_t b_lane_loads = 0;
  std::size_t broadcasts = 0;
};

inline constexpr std::size_t kDefaultLanes = 8;
inline constexpr std::size_t kMaxSdmmPanel = 64;

// Column panels used by sdmm_blocked: full 64-wide panels, then the remainder
// in halving power-of-two pieces down to n_b.
std::vector<std::size_t> sdmm_panel_widths(std::size_t n, std::size_t n_b = kDefaultLanes);

// C += A * B where B is k x n and C is m x n (row-major, explicit strides).
// Each non-empty row loads C_i into n / n_b lane accumulators, broadcasts every
// non-zero against the matching row of B, and stores C_i once. Columns are
// processed in panels from sdmm_panel_widths. n must be a multiple of n_b.
void sdmm_blocked(const CsrMatrix& a, const float* b, std::size_t ldb, std::size_t n, float* c, std::size_t ldc,
                  std::size_t n_b = kDefaultLanes, SdmmCounters* counters = nullptr);
// Same, visiting only the given rows, normally active_rows(a) computed once
// ahead of time. Listed rows must be non-empty.
void sdmm_blocked(const CsrMatrix& a, std::span<const std::uint32_t> rows, const float* b, std::size_t ldb,
                  std::size_t n, float* c, std::size_t ldc, std::size_t n_b = kDefaultLanes,
                  SdmmCounters* counters = nullptr);
std::vector<std::uint32_t> active_rows(const CsrMatrix& a);
Matrix sdmm_blocked(const CsrMatrix& a, const Matrix& b, std::size_t n_b = kDefaultLanes,
                    SdmmCounters* counters = nullptr);

// s consecutive row blocks; the first m % s blocks hold one extra row.
std::vector<CsrMatrix> split_rows(const CsrMatrix& a, std::size_t s);
Matrix stack_rows(const std::vector<Matrix>& blocks);

enum class CalibrationKind { kSingleColumn, kTwoColumn, kDiagonalRandom };

// A_c: nnz entries in one column. A_2c: nnz entries in each of two columns,
// on the same rows. A_rd: one entry per row and per column (m == k == nnz).
CsrMatrix make_calibration_matrix(CalibrationKind kind, std::size_t m, std::size_t k, std::size_t nnz,
                                  std::uint64_t seed = 0);

// Unit costs of the sparse time model, all per column of B.
struct SparseCoeffs {
  double L_a = 0.0;
  double L_b = 0.0;
  double L_c = 0.0;
  std::size_t n_b = kDefaultLanes;
  std::string machine;

  bool calibrated() const noexcept { return L_a > 0.0 && L_b > 0.0 && L_c > 0.0; }
  void validate() const;
};

std::string sparse_coeffs_to_json(const SparseCoeffs& c);
SparseCoeffs sparse_coeffs_from_json(const std::string& text, const std::string& source = "<memory>");
void save_sparse_coeffs(const std::filesystem::path& path, const SparseCoeffs& c);
SparseCoeffs load_sparse_coeffs(const std::filesystem::path& path);

// Seconds for one sdmm_blocked call of the given matrix against an N-column B.
using SdmmTimer = std::function<double(const CsrMatrix& a, std::size_t n)>;

struct SparseCalibrationOptions {
  std::vector<std::size_t> sizes{200, 300, 400, 500};  // m = k
  std::vector<std::size_t> n_values{16, 32, 64};
  std::size_t n_b = kDefaultLanes;
  std::uint64_t seed = 0;
};

// Per-shape measurements kept for reporting.
struct SparseCalibrationCell {
  std::size_t size = 0;
  std::size_t n = 0;
  double t_single = 0.0, t_diag = 0.0, t_two = 0.0;
  double L_a = 0.0, L_b = 0.0;
};

struct SparseCalibration {
  SparseCoeffs coeffs;
  std::vector<SparseCalibrationCell> cells;
};

// For each (size, N): L_b = (T_rd - T_c) / ((k - 1) N), L_a = ((T_2c - T_c) / N - L_b) / nnz,
// L_c = 2 L_b; coefficients are averaged over all cells.
// Throws CalibrationError when an averaged coefficient is not positive.
SparseCalibration calibrate_sparse(const SparseCalibrationOptions& opts, const SdmmTimer& timer);

// Wall-clock timer over sdmm_blocked. Each rep loops at least 1000 calls.
SdmmTimer make_sdmm_timer(TimingOptions timing = {9, 2, 2e-4, 1000}, std::size_t n_b = kDefaultLanes,
                          std::uint64_t seed = 0);

// T = (|a_r| L_c + nnz L_a + |a_c| L_b) N.
double predict_sparse_time(const SparsityStats& stats, const SparseCoeffs& coeffs, std::size_t n);

}  // namespace ltrnn
