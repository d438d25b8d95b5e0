#include "ltrnn/dense_kernel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
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

// B[pc:pc+kb, jc:jc+nb] -> panels of n_r columns, each stored k-major, zero padded.
void pack_b(std::size_t kb, std::size_t nb, const float* b, std::size_t ldb, std::size_t nr, float* dst) {
  for (std::size_t jp = 0; jp < nb; jp += nr) {
    const std::size_t cols = std::min(nr, nb - jp);
    for (std::size_t p = 0; p < kb; ++p) {
      const float* src = b + p * ldb + jp;
      std::size_t j = 0;
      for (; j < cols; ++j) dst[j] = src[j];
      for (; j < nr; ++j) dst[j] = 0.0f;
      dst += nr;
    }
  }
}

// A[ic:ic+mb, pc:pc+kb] -> panels of m_r rows, each stored k-major (column-major within the panel).
void pack_a(std::size_t mb, std::size_t kb, const float* a, std::size_t lda, std::size_t mr, float* dst) {
  for (std::size_t ip = 0; ip < mb; ip += mr) {
    const std::size_t rows = std::min(mr, mb - ip);
    for (std::size_t i = 0; i < rows; ++i) {
      const float* src = a + (ip + i) * lda;
      for (std::size_t p = 0; p < kb; ++p) dst[p * mr + i] = src[p];
    }
    for (std::size_t i = rows; i < mr; ++i)
      for (std::size_t p = 0; p < kb; ++p) dst[p * mr + i] = 0.0f;
    dst += mr * kb;
  }
}

template <std::size_t MR, std::size_t NR>
void store_tile(const float (&acc)[NR][MR], float* c, std::size_t ldc, std::size_t rows, std::size_t cols,
                bool accumulate) {
  for (std::size_t i = 0; i < rows; ++i) {
    float* crow = c + i * ldc;
    for (std::size_t j = 0; j < cols; ++j) crow[j] = (accumulate ? crow[j] : 0.0f) + acc[j][i];
  }
}

// m_r x n_r tile as kb rank-1 updates held in registers, written back once.
template <std::size_t MR, std::size_t NR>
void micro_kernel_fixed(std::size_t kb, const float* __restrict ap, const float* __restrict bp, float* c,
                        std::size_t ldc, std::size_t rows, std::size_t cols, bool accumulate) {
  float acc[NR][MR] = {};
  for (std::size_t p = 0; p < kb; ++p) {
    const float* a = ap + p * MR;
    const float* b = bp + p * NR;
    for (std::size_t j = 0; j < NR; ++j) {
      const float bj = b[j];
      for (std::size_t i = 0; i < MR; ++i) acc[j][i] += a[i] * bj;
    }
  }
  store_tile<MR, NR>(acc, c, ldc, rows, cols, accumulate);
}

#ifdef LTRNN_HAVE_AVX2
void micro_kernel_24x4_avx2(std::size_t kb, const float* __restrict ap, const float* __restrict bp, float* c,
                            std::size_t ldc, std::size_t rows, std::size_t cols, bool accumulate) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps(), c02 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps(), c12 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps(), c22 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps(), c32 = _mm256_setzero_ps();
  for (std::size_t p = 0; p < kb; ++p) {
    const __m256 a0 = _mm256_loadu_ps(ap), a1 = _mm256_loadu_ps(ap + 8), a2 = _mm256_loadu_ps(ap + 16);
    __m256 b = _mm256_broadcast_ss(bp);
    c00 = _mm256_fmadd_ps(a0, b, c00), c01 = _mm256_fmadd_ps(a1, b, c01), c02 = _mm256_fmadd_ps(a2, b, c02);
    b = _mm256_broadcast_ss(bp + 1);
    c10 = _mm256_fmadd_ps(a0, b, c10), c11 = _mm256_fmadd_ps(a1, b, c11), c12 = _mm256_fmadd_ps(a2, b, c12);
    b = _mm256_broadcast_ss(bp + 2);
    c20 = _mm256_fmadd_ps(a0, b, c20), c21 = _mm256_fmadd_ps(a1, b, c21), c22 = _mm256_fmadd_ps(a2, b, c22);
    b = _mm256_broadcast_ss(bp + 3);
    c30 = _mm256_fmadd_ps(a0, b, c30), c31 = _mm256_fmadd_ps(a1, b, c31), c32 = _mm256_fmadd_ps(a2, b, c32);
    ap += 24;
    bp += 4;
  }
  alignas(32) float acc[4][24];
  _mm256_store_ps(acc[0], c00), _mm256_store_ps(acc[0] + 8, c01), _mm256_store_ps(acc[0] + 16, c02);
  _mm256_store_ps(acc[1], c10), _mm256_store_ps(acc[1] + 8, c11), _mm256_store_ps(acc[1] + 16, c12);
  _mm256_store_ps(acc[2], c20), _mm256_store_ps(acc[2] + 8, c21), _mm256_store_ps(acc[2] + 16, c22);
  _mm256_store_ps(acc[3], c30), _mm256_store_ps(acc[3] + 8, c31), _mm256_store_ps(acc[3] + 16, c32);
  store_tile<24, 4>(acc, c, ldc, rows, cols, accumulate);
}
#endif

// Runtime-sized fallback for arbitrary (m_r, n_r).
void micro_kernel_generic(std::size_t mr, std::size_t nr, std::size_t kb, const float* ap, const float* bp, float* c,
                          std::size_t ldc, std::size_t rows, std::size_t cols, bool accumulate,
                          std::vector<float>& acc) {
  acc.assign(mr * nr, 0.0f);
  for (std::size_t p = 0; p < kb; ++p) {
    const float* a = ap + p * mr;
    const float* b = bp + p * nr;
    for (std::size_t j = 0; j < nr; ++j) {
      const float bj = b[j];
      float* accj = acc.data() + j * mr;
      for (std::size_t i = 0; i < mr; ++i) accj[i] += a[i] * bj;
    }
  }
  for (std::size_t i = 0; i < rows; ++i) {
    float* crow = c + i * ldc;
    for (std::size_t j = 0; j < cols; ++j) crow[j] = (accumulate ? crow[j] : 0.0f) + acc[j * mr + i];
  }
}

void macro_kernel(std::size_t mb, std::size_t nb, std::size_t kb, const float* ap, const float* bp, float* c,
                  std::size_t ldc, const KernelParams& kp, bool accumulate, std::vector<float>& scratch) {
  const std::size_t mr = kp.m_r, nr = kp.n_r;
  const bool fixed = kp.vectorized && mr == 24 && nr == 4;
  for (std::size_t jr = 0; jr < nb; jr += nr) {
    const std::size_t cols = std::min(nr, nb - jr);
    const float* bpanel = bp + (jr / nr) * kb * nr;
    for (std::size_t ir = 0; ir < mb; ir += mr) {
      const std::size_t rows = std::min(mr, mb - ir);
      const float* apanel = ap + (ir / mr) * kb * mr;
      float* ctile = c + ir * ldc + jr;
      if (fixed) {
#ifdef LTRNN_HAVE_AVX2
        micro_kernel_24x4_avx2(kb, apanel, bpanel, ctile, ldc, rows, cols, accumulate);
#else
        micro_kernel_fixed<24, 4>(kb, apanel, bpanel, ctile, ldc, rows, cols, accumulate);
#endif
      } else {
        micro_kernel_generic(mr, nr, kb, apanel, bpanel, ctile, ldc, rows, cols, accumulate, scratch);
      }
    }
  }
}

// Direct i-p-j product with no packing, for products too small to amortise it.
void gemm_unpacked(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
                   std::size_t ldb, float* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = c + i * ldc;
    std::fill(crow, crow + n, 0.0f);
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = a[i * lda + p];
      const float* brow = b + p * ldb;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

std::size_t nearest_log(const std::vector<std::size_t>& axis, std::size_t v) {
  const double lv = std::log(static_cast<double>(std::max<std::size_t>(v, 1)));
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t i = 0; i < axis.size(); ++i) {
    const double d = std::fabs(std::log(static_cast<double>(std::max<std::size_t>(axis[i], 1))) - lv);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

void check_axis(const std::vector<std::size_t>& axis, const char* name) {
  if (axis.empty()) throw ValidationError(std::string("heatmap axis ") + name + " is empty");
  for (std::size_t i = 0; i < axis.size(); ++i) {
    if (axis[i] == 0) throw ValidationError(std::string("heatmap axis ") + name + " contains 0");
    if (i > 0 && axis[i] <= axis[i - 1])
      throw ValidationError(std::string("heatmap axis ") + name + " is not strictly increasing");
  }
}

}  // namespace

void KernelParams::validate() const {
  if (n_c == 0 || m_c == 0 || k_c == 0 || m_r == 0 || n_r == 0)
    throw ValidationError("kernel block sizes must be positive");
}

std::size_t rnd_up(std::size_t a, std::size_t b) {
  if (b == 0) throw ValidationError("rnd_up: b must be positive");
  return (a + b - 1) / b * b;
}

KernelParams effective_params(std::size_t m, std::size_t n, std::size_t k, const KernelParams& d) {
  d.validate();
  KernelParams e = d;
  e.m_c = rnd_up(std::min(std::max(m, d.m_r), d.m_c), d.m_r);
  e.n_c = rnd_up(std::min(std::max(n, d.n_r), d.n_c), d.n_r);
  e.k_c = std::min(std::max<std::size_t>(k, 1), d.k_c);
  return e;
}

double flop_memory_ratio(double m_c, double k_c) { return 2.0 * m_c * k_c / (2.0 * m_c + k_c); }

void gemm_blocked(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
                  std::size_t ldb, float* c, std::size_t ldc, const KernelParams& params, GemmWorkspace& ws) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    for (std::size_t i = 0; i < m; ++i) std::fill(c + i * ldc, c + i * ldc + n, 0.0f);
    return;
  }
  if (m * k < params.pack_threshold) {
    gemm_unpacked(m, n, k, a, lda, b, ldb, c, ldc);
    return;
  }
  const KernelParams kp = effective_params(m, n, k, params);
  ws.b_pack.resize(kp.k_c * rnd_up(kp.n_c, kp.n_r));
  ws.a_pack.resize(kp.k_c * rnd_up(kp.m_c, kp.m_r));
  std::vector<float> scratch;

  for (std::size_t jc = 0; jc < n; jc += kp.n_c) {
    const std::size_t nb = std::min(kp.n_c, n - jc);
    for (std::size_t pc = 0; pc < k; pc += kp.k_c) {
      const std::size_t kb = std::min(kp.k_c, k - pc);
      pack_b(kb, nb, b + pc * ldb + jc, ldb, kp.n_r, ws.b_pack.data());
      for (std::size_t ic = 0; ic < m; ic += kp.m_c) {
        const std::size_t mb = std::min(kp.m_c, m - ic);
        pack_a(mb, kb, a + ic * lda + pc, lda, kp.m_r, ws.a_pack.data());
        macro_kernel(mb, nb, kb, ws.a_pack.data(), ws.b_pack.data(), c + ic * ldc + jc, ldc, kp, pc > 0, scratch);
      }
    }
  }
}

void gemm_blocked(const Matrix& a, const Matrix& b, Matrix& c, const KernelParams& params, GemmWorkspace& ws) {
  if (a.cols() != b.rows())
    throw ValidationError("gemm shape mismatch: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                          " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  if (c.rows() != a.rows() || c.cols() != b.cols()) c = Matrix(a.rows(), b.cols());
  gemm_blocked(a.rows(), b.cols(), a.cols(), a.data(), a.cols(), b.data(), b.cols(), c.data(), c.cols(), params, ws);
}

Matrix gemm_blocked(const Matrix& a, const Matrix& b, const KernelParams& params) {
  Matrix c;
  GemmWorkspace ws;
  gemm_blocked(a, b, c, params, ws);
  return c;
}

double GflopsHeatmap::lookup(std::size_t m, std::size_t k, std::size_t n) const {
  if (empty()) throw ValidationError("GFLOPS heatmap is empty");
  return at(nearest_log(n_values, n), nearest_log(m_grid, m), nearest_log(k_grid, k));
}

void GflopsHeatmap::validate() const {
  check_axis(n_values, "n");
  check_axis(m_grid, "m");
  check_axis(k_grid, "k");
  if (gflops.size() != n_values.size() * m_grid.size() * k_grid.size())
    throw ValidationError("heatmap has " + std::to_string(gflops.size()) + " cells, axes imply " +
                          std::to_string(n_values.size() * m_grid.size() * k_grid.size()));
  for (double g : gflops)
    if (!(g > 0.0) || !std::isfinite(g)) throw ValidationError("heatmap GFLOPS must be positive and finite");
}

std::string heatmap_to_json(const GflopsHeatmap& hm) {
  json j;
  j["schema_version"] = 1;
  j["machine"] = hm.machine;
  j["n_values"] = hm.n_values;
  j["m_grid"] = hm.m_grid;
  j["k_grid"] = hm.k_grid;
  j["zone_thresholds_k"] = hm.zone_thresholds_k;
  json cells = json::array();
  for (std::size_t ni = 0; ni < hm.n_values.size(); ++ni) {
    json plane = json::array();
    for (std::size_t mi = 0; mi < hm.m_grid.size(); ++mi) {
      json row = json::array();
      for (std::size_t ki = 0; ki < hm.k_grid.size(); ++ki) row.push_back(hm.at(ni, mi, ki));
      plane.push_back(std::move(row));
    }
    cells.push_back(std::move(plane));
  }
  j["gflops"] = std::move(cells);
  return j.dump(1);
}

GflopsHeatmap heatmap_from_json(const std::string& text, const std::string& source) {
  GflopsHeatmap hm;
  try {
    const json j = json::parse(text);
    hm.machine = j.value("machine", std::string());
    hm.n_values = j.at("n_values").get<std::vector<std::size_t>>();
    hm.m_grid = j.at("m_grid").get<std::vector<std::size_t>>();
    hm.k_grid = j.at("k_grid").get<std::vector<std::size_t>>();
    if (j.contains("zone_thresholds_k")) hm.zone_thresholds_k = j["zone_thresholds_k"].get<std::vector<std::size_t>>();
    for (const auto& plane : j.at("gflops"))
      for (const auto& row : plane)
        for (const auto& v : row) hm.gflops.push_back(v.get<double>());
  } catch (const json::exception& e) {
    throw ValidationError(source + ": " + e.what());
  }
  hm.validate();
  return hm;
}

void save_heatmap(const std::filesystem::path& path, const GflopsHeatmap& hm) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << heatmap_to_json(hm) << '\n';
}

GflopsHeatmap load_heatmap(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return heatmap_from_json(ss.str(), path.string());
}

GflopsHeatmap benchmark_heatmap(const std::vector<std::size_t>& m_grid, const std::vector<std::size_t>& k_grid,
                                const std::vector<std::size_t>& n_values, const HeatmapOptions& opts) {
  GflopsHeatmap hm;
  hm.machine = machine_descriptor();
  hm.m_grid = m_grid;
  hm.k_grid = k_grid;
  hm.n_values = n_values;
  check_axis(hm.n_values, "n");
  check_axis(hm.m_grid, "m");
  check_axis(hm.k_grid, "k");
  hm.gflops.assign(n_values.size() * m_grid.size() * k_grid.size(), 0.0);

  Rng rng(opts.seed);
  GemmWorkspace ws;
  for (std::size_t ni = 0; ni < n_values.size(); ++ni) {
    for (std::size_t mi = 0; mi < m_grid.size(); ++mi) {
      for (std::size_t ki = 0; ki < k_grid.size(); ++ki) {
        const std::size_t m = m_grid[mi], k = k_grid[ki], n = n_values[ni];
        Matrix a(m, k), b(k, n), c(m, n);
        for (auto& v : a.values()) v = static_cast<float>(uniform(rng, -1.0, 1.0));
        for (auto& v : b.values()) v = static_cast<float>(uniform(rng, -1.0, 1.0));
        const double seconds = time_median([&] { gemm_blocked(a, b, c, opts.params, ws); }, opts.timing);
        hm.at(ni, mi, ki) = 2.0 * static_cast<double>(m) * static_cast<double>(n) * static_cast<double>(k) / seconds / 1e9;
      }
    }
  }
  return hm;
}

ZoneSummary zone_summary(const GflopsHeatmap& hm, std::size_t n_index) {
  ZoneSummary z;
  const std::size_t lo = hm.zone_thresholds_k.size() > 0 ? hm.zone_thresholds_k[0] : 128;
  const std::size_t hi = hm.zone_thresholds_k.size() > 1 ? hm.zone_thresholds_k[1] : 512;
  for (std::size_t mi = 0; mi < hm.m_grid.size(); ++mi) {
    for (std::size_t ki = 0; ki < hm.k_grid.size(); ++ki) {
      const double g = hm.at(n_index, mi, ki);
      const std::size_t k = hm.k_grid[ki];
      if (k >= hi) {
        z.high += g;
        ++z.high_cells;
      } else if (k >= lo) {
        z.mid += g;
        ++z.mid_cells;
      } else {
        z.low += g;
        ++z.low_cells;
      }
    }
  }
  if (z.low_cells) z.low /= static_cast<double>(z.low_cells);
  if (z.mid_cells) z.mid /= static_cast<double>(z.mid_cells);
  if (z.high_cells) z.high /= static_cast<double>(z.high_cells);
  return z;
}

LayerTimePrediction predict_layer_time(const LayerShape& shape, std::size_t batch, const GflopsHeatmap& hm) {
  LayerTimePrediction p;
  p.shape = shape;
  p.flops = 2.0 * static_cast<double>(shape.out) * static_cast<double>(shape.in) * static_cast<double>(batch);
  p.gflops = hm.lookup(shape.out, shape.in, batch);
  p.seconds = p.flops / (p.gflops * 1e9);
  return p;
}

DenseTimePrediction predict_dense_time(const FfnArchitecture& arch, std::size_t batch, const GflopsHeatmap& hm) {
  if (hm.empty()) throw ValidationError("GFLOPS heatmap is empty");
  arch.validate();
  DenseTimePrediction out;
  out.batch = batch;
  for (const auto& shape : arch.layer_shapes()) {
    out.layers.push_back(predict_layer_time(shape, batch, hm));
    out.total_seconds += out.layers.back().seconds;
  }
  return out;
}

}  // namespace ltrnn
