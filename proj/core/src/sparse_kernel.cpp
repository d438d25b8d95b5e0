#include "ltrnn/sparse_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <span>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ltrnn/error.hpp"
#include "ltrnn/rng.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#define LTRNN_HAVE_AVX2 1
#endif

namespace ltrnn {
namespace {

using json = nlohmann::json;

template <std::size_t W>
void sdmm_panel_fixed(const CsrMatrix& a, std::span<const std::uint32_t> active, const float* b, std::size_t ldb,
                      float* c, std::size_t ldc) {
  const float* vals = a.values.data();
  const std::uint32_t* cols = a.column_index.data();
  for (const std::uint32_t i : active) {
    const std::uint32_t beg = a.rows[i], end = a.rows[i + 1];
    float* ci = c + i * ldc;
    float acc[W];
    for (std::size_t t = 0; t < W; ++t) acc[t] = ci[t];
    for (std::uint32_t p = beg; p < end; ++p) {
      const float x = vals[p];
      const float* bj = b + static_cast<std::size_t>(cols[p]) * ldb;
      for (std::size_t t = 0; t < W; ++t) acc[t] += x * bj[t];
    }
    for (std::size_t t = 0; t < W; ++t) ci[t] = acc[t];
  }
}

void sdmm_panel_generic(const CsrMatrix& a, std::span<const std::uint32_t> active, const float* b, std::size_t ldb,
                        std::size_t w, float* c, std::size_t ldc) {
  float acc[kMaxSdmmPanel];
  for (const std::uint32_t i : active) {
    const std::uint32_t beg = a.rows[i], end = a.rows[i + 1];
    float* ci = c + i * ldc;
    for (std::size_t t = 0; t < w; ++t) acc[t] = ci[t];
    for (std::uint32_t p = beg; p < end; ++p) {
      const float x = a.values[p];
      const float* bj = b + static_cast<std::size_t>(a.column_index[p]) * ldb;
      for (std::size_t t = 0; t < w; ++t) acc[t] += x * bj[t];
    }
    for (std::size_t t = 0; t < w; ++t) ci[t] = acc[t];
  }
}

#ifdef LTRNN_HAVE_AVX2
template <std::size_t G>
void sdmm_panel_avx2(const CsrMatrix& a, std::span<const std::uint32_t> active, const float* b, std::size_t ldb,
                     float* c, std::size_t ldc) {
  const float* vals = a.values.data();
  const std::uint32_t* cols = a.column_index.data();
  for (const std::uint32_t i : active) {
    const std::uint32_t beg = a.rows[i], end = a.rows[i + 1];
    float* ci = c + i * ldc;
    __m256 acc[G];
#pragma GCC unroll 8
    for (std::size_t g = 0; g < G; ++g) acc[g] = _mm256_loadu_ps(ci + 8 * g);
    for (std::uint32_t p = beg; p < end; ++p) {
      const __m256 x = _mm256_broadcast_ss(vals + p);
      const float* bj = b + static_cast<std::size_t>(cols[p]) * ldb;
#pragma GCC unroll 8
      for (std::size_t g = 0; g < G; ++g) acc[g] = _mm256_fmadd_ps(x, _mm256_loadu_ps(bj + 8 * g), acc[g]);
    }
#pragma GCC unroll 8
    for (std::size_t g = 0; g < G; ++g) _mm256_storeu_ps(ci + 8 * g, acc[g]);
  }
}
#endif

void sdmm_panel(const CsrMatrix& a, std::span<const std::uint32_t> active, const float* b, std::size_t ldb,
                std::size_t w, float* c, std::size_t ldc, std::size_t n_b) {
#ifdef LTRNN_HAVE_AVX2
  if (n_b == 8) {
    switch (w) {
      case 64: return sdmm_panel_avx2<8>(a, active, b, ldb, c, ldc);
      case 32: return sdmm_panel_avx2<4>(a, active, b, ldb, c, ldc);
      case 16: return sdmm_panel_avx2<2>(a, active, b, ldb, c, ldc);
      case 8: return sdmm_panel_avx2<1>(a, active, b, ldb, c, ldc);
      default: break;
    }
  }
#endif
  switch (w) {
    case 64: return sdmm_panel_fixed<64>(a, active, b, ldb, c, ldc);
    case 32: return sdmm_panel_fixed<32>(a, active, b, ldb, c, ldc);
    case 16: return sdmm_panel_fixed<16>(a, active, b, ldb, c, ldc);
    case 8: return sdmm_panel_fixed<8>(a, active, b, ldb, c, ldc);
    default: return sdmm_panel_generic(a, active, b, ldb, w, c, ldc);
  }
}

void count_panel(const CsrMatrix& a, std::size_t groups, SdmmCounters& ct) {
  for (std::size_t i = 0; i < a.m; ++i) {
    const std::size_t row_nnz = a.rows[i + 1] - a.rows[i];
    if (row_nnz == 0) {
      ++ct.rows_skipped;
      continue;
    }
    ++ct.rows_visited;
    ct.c_lane_loads += groups;
    ct.c_lane_stores += groups;
    ct.b_lane_loads += row_nnz * groups;
    ct.broadcasts += row_nnz;
  }
}

}  // namespace

namespace {

std::size_t next_panel_width(std::size_t n, std::size_t n_b) {
  std::size_t w = kMaxSdmmPanel;
  while (w > n && w / 2 >= n_b && (w / 2) % n_b == 0) w /= 2;
  return std::min(w, n);
}

}  // namespace

std::vector<std::size_t> sdmm_panel_widths(std::size_t n, std::size_t n_b) {
  std::vector<std::size_t> widths;
  for (std::size_t w; n > 0; n -= w) widths.push_back(w = next_panel_width(n, n_b));
  return widths;
}

namespace {

std::vector<std::size_t> sample_rows(std::size_t m, std::size_t count, Rng& rng) {
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i;
  shuffle(idx.begin(), idx.end(), rng);
  idx.resize(count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

float calibration_value(Rng& rng) {
  const double v = uniform(rng, 0.5, 1.5);
  return static_cast<float>(rng() & 1 ? v : -v);
}

}  // namespace

double CsrMatrix::sparsity() const noexcept {
  const double total = static_cast<double>(m) * static_cast<double>(k);
  return total > 0.0 ? 1.0 - static_cast<double>(nnz()) / total : 0.0;
}

SparsityStats CsrMatrix::stats() const {
  SparsityStats s;
  s.nnz = nnz();
  for (std::size_t i = 0; i < m; ++i)
    if (rows[i + 1] > rows[i]) ++s.active_rows;
  std::vector<bool> seen(k, false);
  for (const auto j : column_index) {
    if (!seen[j]) {
      seen[j] = true;
      ++s.active_cols;
    }
  }
  return s;
}

void CsrMatrix::validate() const {
  if (rows.size() != m + 1)
    throw ValidationError("CSR rows array has " + std::to_string(rows.size()) + " offsets, expected " +
                          std::to_string(m + 1));
  if (column_index.size() != values.size()) throw ValidationError("CSR values and column indices differ in length");
  if (rows.front() != 0) throw ValidationError("CSR rows[0] must be 0");
  if (rows.back() != values.size()) throw ValidationError("CSR rows[m] must equal nnz");
  for (std::size_t i = 0; i < m; ++i) {
    if (rows[i + 1] < rows[i]) throw ValidationError("CSR row offsets decrease at row " + std::to_string(i));
    for (std::uint32_t p = rows[i]; p < rows[i + 1]; ++p) {
      if (column_index[p] >= k)
        throw ValidationError("CSR column index " + std::to_string(column_index[p]) + " out of range");
      if (p > rows[i] && column_index[p] <= column_index[p - 1])
        throw ValidationError("CSR column indices not strictly increasing in row " + std::to_string(i));
    }
  }
}

CsrMatrix CsrMatrix::from_dense(const Matrix& w, float tol) {
  if (tol < 0.0f) throw ValidationError("CSR tolerance must be >= 0");
  CsrMatrix a;
  a.m = w.rows();
  a.k = w.cols();
  a.rows.assign(1, 0);
  a.rows.reserve(a.m + 1);
  for (std::size_t i = 0; i < a.m; ++i) {
    for (std::size_t j = 0; j < a.k; ++j) {
      const float v = w(i, j);
      if (std::fabs(v) > tol) {
        a.values.push_back(v);
        a.column_index.push_back(static_cast<std::uint32_t>(j));
      }
    }
    a.rows.push_back(static_cast<std::uint32_t>(a.values.size()));
  }
  return a;
}

Matrix CsrMatrix::to_dense() const {
  Matrix w(m, k);
  for (std::size_t i = 0; i < m; ++i)
    for (std::uint32_t p = rows[i]; p < rows[i + 1]; ++p) w(i, column_index[p]) = values[p];
  return w;
}

Matrix sdmm_reference(const CsrMatrix& a, const Matrix& b) {
  if (a.k != b.rows())
    throw ValidationError("sdmm shape mismatch: A is " + std::to_string(a.m) + "x" + std::to_string(a.k) +
                          ", B has " + std::to_string(b.rows()) + " rows");
  const std::size_t n = b.cols();
  Matrix c(a.m, n);
  for (std::size_t i = 0; i < a.m; ++i)
    for (std::uint32_t p = a.rows[i]; p < a.rows[i + 1]; ++p)
      for (std::size_t j = 0; j < n; ++j) c(i, j) += a.values[p] * b(a.column_index[p], j);
  return c;
}

std::vector<std::uint32_t> active_rows(const CsrMatrix& a) {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < a.m; ++i)
    if (a.rows[i + 1] != a.rows[i]) out.push_back(static_cast<std::uint32_t>(i));
  // Grouping rows by length keeps the inner loop's trip count predictable.
  std::stable_sort(out.begin(), out.end(), [&a](std::uint32_t x, std::uint32_t y) {
    return a.rows[x + 1] - a.rows[x] < a.rows[y + 1] - a.rows[y];
  });
  return out;
}

void sdmm_blocked(const CsrMatrix& a, std::span<const std::uint32_t> rows, const float* b, std::size_t ldb,
                  std::size_t n, float* c, std::size_t ldc, std::size_t n_b, SdmmCounters* counters) {
  if (n_b == 0 || n_b > kMaxSdmmPanel || kMaxSdmmPanel % n_b != 0)
    throw ValidationError("lane count n_b must divide " + std::to_string(kMaxSdmmPanel));
  if (n % n_b != 0)
    throw ValidationError("sdmm batch " + std::to_string(n) + " is not a multiple of n_b = " + std::to_string(n_b));
  for (std::size_t j0 = 0, w; j0 < n; j0 += w) {
    w = next_panel_width(n - j0, n_b);
    sdmm_panel(a, rows, b + j0, ldb, w, c + j0, ldc, n_b);
    if (counters) count_panel(a, w / n_b, *counters);
  }
}

void sdmm_blocked(const CsrMatrix& a, const float* b, std::size_t ldb, std::size_t n, float* c, std::size_t ldc,
                  std::size_t n_b, SdmmCounters* counters) {
  // Non-empty rows, compacted without branching on the sparsity pattern.
  thread_local std::vector<std::uint32_t> active;
  active.resize(a.m);
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.m; ++i) {
    active[count] = static_cast<std::uint32_t>(i);
    count += a.rows[i + 1] != a.rows[i];
  }
  sdmm_blocked(a, std::span<const std::uint32_t>(active.data(), count), b, ldb, n, c, ldc, n_b, counters);
}

Matrix sdmm_blocked(const CsrMatrix& a, const Matrix& b, std::size_t n_b, SdmmCounters* counters) {
  if (a.k != b.rows())
    throw ValidationError("sdmm shape mismatch: A is " + std::to_string(a.m) + "x" + std::to_string(a.k) +
                          ", B has " + std::to_string(b.rows()) + " rows");
  Matrix c(a.m, b.cols());
  sdmm_blocked(a, b.data(), b.cols(), b.cols(), c.data(), c.cols(), n_b, counters);
  return c;
}

std::vector<CsrMatrix> split_rows(const CsrMatrix& a, std::size_t s) {
  if (s == 0 || s > std::max<std::size_t>(a.m, 1))
    throw ValidationError("split_rows needs 1 <= s <= m (s = " + std::to_string(s) + ", m = " + std::to_string(a.m) +
                          ")");
  std::vector<CsrMatrix> blocks;
  blocks.reserve(s);
  const std::size_t base = a.m / s, extra = a.m % s;
  std::size_t r0 = 0;
  for (std::size_t q = 0; q < s; ++q) {
    const std::size_t len = base + (q < extra ? 1 : 0);
    CsrMatrix blk;
    blk.m = len;
    blk.k = a.k;
    const std::uint32_t off = a.rows[r0];
    blk.rows.resize(len + 1);
    for (std::size_t i = 0; i <= len; ++i) blk.rows[i] = a.rows[r0 + i] - off;
    blk.values.assign(a.values.begin() + off, a.values.begin() + a.rows[r0 + len]);
    blk.column_index.assign(a.column_index.begin() + off, a.column_index.begin() + a.rows[r0 + len]);
    blocks.push_back(std::move(blk));
    r0 += len;
  }
  return blocks;
}

Matrix stack_rows(const std::vector<Matrix>& blocks) {
  std::size_t rows = 0;
  const std::size_t cols = blocks.empty() ? 0 : blocks.front().cols();
  for (const auto& b : blocks) {
    if (b.cols() != cols) throw ValidationError("stack_rows: blocks differ in column count");
    rows += b.rows();
  }
  Matrix out(rows, cols);
  std::size_t r = 0;
  for (const auto& b : blocks) {
    std::copy(b.data(), b.data() + b.size(), out.data() + r * cols);
    r += b.rows();
  }
  return out;
}

CsrMatrix make_calibration_matrix(CalibrationKind kind, std::size_t m, std::size_t k, std::size_t nnz,
                                  std::uint64_t seed) {
  if (m == 0 || k == 0) throw ValidationError("calibration matrix needs a positive shape");
  Rng rng(seed);
  Matrix w(m, k);
  switch (kind) {
    case CalibrationKind::kSingleColumn: {
      if (nnz == 0 || nnz > m) throw ValidationError("A_c needs 1 <= nnz <= m");
      const std::size_t col = uniform_index(rng, k);
      for (const auto r : sample_rows(m, nnz, rng)) w(r, col) = calibration_value(rng);
      break;
    }
    case CalibrationKind::kTwoColumn: {
      if (k < 2) throw ValidationError("A_2c needs k >= 2");
      if (nnz == 0 || nnz > m) throw ValidationError("A_2c needs 1 <= nnz <= m per column");
      const std::size_t c0 = uniform_index(rng, k);
      std::size_t c1 = uniform_index(rng, k - 1);
      if (c1 >= c0) ++c1;
      for (const auto r : sample_rows(m, nnz, rng)) {
        w(r, c0) = calibration_value(rng);
        w(r, c1) = calibration_value(rng);
      }
      break;
    }
    case CalibrationKind::kDiagonalRandom: {
      if (m != k || nnz != m) throw ValidationError("A_rd needs nnz == m == k");
      std::vector<std::size_t> perm(m);
      for (std::size_t i = 0; i < m; ++i) perm[i] = i;
      shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t i = 0; i < m; ++i) w(i, perm[i]) = calibration_value(rng);
      break;
    }
  }
  return CsrMatrix::from_dense(w);
}

void SparseCoeffs::validate() const {
  if (!calibrated()) throw ValidationError("sparse coefficients must all be positive (cost model not calibrated?)");
  if (std::fabs(L_c - 2.0 * L_b) > 1e-9 * std::fabs(L_c))
    throw ValidationError("sparse coefficients violate L_c = 2 L_b");
  if (n_b == 0) throw ValidationError("sparse coefficients need n_b >= 1");
}

std::string sparse_coeffs_to_json(const SparseCoeffs& c) {
  json j;
  j["schema_version"] = 1;
  j["L_a"] = c.L_a;
  j["L_b"] = c.L_b;
  j["L_c"] = c.L_c;
  j["n_b"] = c.n_b;
  j["machine"] = c.machine;
  return j.dump(1);
}

SparseCoeffs sparse_coeffs_from_json(const std::string& text, const std::string& source) {
  SparseCoeffs c;
  try {
    const json j = json::parse(text);
    c.L_a = j.at("L_a").get<double>();
    c.L_b = j.at("L_b").get<double>();
    c.L_c = j.at("L_c").get<double>();
    c.n_b = j.value("n_b", kDefaultLanes);
    c.machine = j.value("machine", std::string());
  } catch (const json::exception& e) {
    throw ValidationError(source + ": " + e.what());
  }
  c.validate();
  return c;
}

void save_sparse_coeffs(const std::filesystem::path& path, const SparseCoeffs& c) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << sparse_coeffs_to_json(c) << '\n';
}

SparseCoeffs load_sparse_coeffs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return sparse_coeffs_from_json(ss.str(), path.string());
}

SparseCalibration calibrate_sparse(const SparseCalibrationOptions& opts, const SdmmTimer& timer) {
  if (opts.sizes.empty() || opts.n_values.empty()) throw ValidationError("calibration grid is empty");
  SparseCalibration out;
  double sum_a = 0.0, sum_b = 0.0;
  std::uint64_t seed = opts.seed;
  for (const auto size : opts.sizes) {
    if (size < 2) throw ValidationError("calibration sizes must be >= 2");
    const CsrMatrix a_c = make_calibration_matrix(CalibrationKind::kSingleColumn, size, size, size, seed++);
    const CsrMatrix a_rd = make_calibration_matrix(CalibrationKind::kDiagonalRandom, size, size, size, seed++);
    const CsrMatrix a_2c = make_calibration_matrix(CalibrationKind::kTwoColumn, size, size, size, seed++);
    for (const auto n : opts.n_values) {
      if (n == 0 || n % opts.n_b != 0)
        throw ValidationError("calibration N = " + std::to_string(n) + " is not a positive multiple of n_b");
      SparseCalibrationCell cell;
      cell.size = size;
      cell.n = n;
      cell.t_single = timer(a_c, n);
      cell.t_diag = timer(a_rd, n);
      cell.t_two = timer(a_2c, n);
      const double nn = static_cast<double>(n);
      cell.L_b = (cell.t_diag - cell.t_single) / static_cast<double>(size - 1) / nn;
      cell.L_a = ((cell.t_two - cell.t_single) / nn - cell.L_b) / static_cast<double>(size);
      sum_a += cell.L_a;
      sum_b += cell.L_b;
      out.cells.push_back(cell);
    }
  }
  const double cells = static_cast<double>(out.cells.size());
  out.coeffs.L_a = sum_a / cells;
  out.coeffs.L_b = sum_b / cells;
  out.coeffs.L_c = 2.0 * out.coeffs.L_b;
  out.coeffs.n_b = opts.n_b;
  out.coeffs.machine = machine_descriptor();
  if (!(out.coeffs.L_b > 0.0))
    throw CalibrationError("derived L_b = " + std::to_string(out.coeffs.L_b) +
                           " is not positive; rerun calibration on an idle machine");
  if (!(out.coeffs.L_a > 0.0))
    throw CalibrationError("derived L_a = " + std::to_string(out.coeffs.L_a) +
                           " is not positive; rerun calibration on an idle machine");
  return out;
}

SdmmTimer make_sdmm_timer(TimingOptions timing, std::size_t n_b, std::uint64_t seed) {
  timing.min_calls_per_rep = std::max<std::size_t>(timing.min_calls_per_rep, 1000);
  return [timing, n_b, seed](const CsrMatrix& a, std::size_t n) {
    Rng rng(seed);
    Matrix b(a.k, n), c(a.m, n);
    for (auto& v : b.values()) v = static_cast<float>(uniform(rng, -1.0, 1.0));
    // Row lists are built once per layer at load time, so they stay out of the timing.
    const auto rows = active_rows(a);
    return time_median([&] { sdmm_blocked(a, rows, b.data(), n, n, c.data(), n, n_b); }, timing);
  };
}

double predict_sparse_time(const SparsityStats& stats, const SparseCoeffs& coeffs, std::size_t n) {
  return static_cast<double>(n) *
         (static_cast<double>(stats.active_rows) * coeffs.L_c + static_cast<double>(stats.nnz) * coeffs.L_a +
          static_cast<double>(stats.active_cols) * coeffs.L_b);
}

}  // namespace ltrnn
