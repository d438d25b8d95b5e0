#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "ltrnn/architecture.hpp"
#include "ltrnn/matrix.hpp"
#include "ltrnn/timing.hpp"

namespace ltrnn {

// Block sizes of the five-loop blocked GEMM. Defaults are the AVX2 values of a
// widely used deep-learning GEMM library.
struct KernelParams {
  std::size_t n_c = 384;
  std::size_t m_c = 10000;
  std::size_t k_c = 192;
  std::size_t m_r = 24;
  std::size_t n_r = 4;
  // Below m*k < pack_threshold the packing stage is skipped entirely.
  std::size_t pack_threshold = 64 * 64;
  // Use the fixed-size micro-kernel when (m_r, n_r) == (24, 4); otherwise the
  // runtime-sized portable one.
  bool vectorized = true;

  void validate() const;
  friend bool operator==(const KernelParams&, const KernelParams&) = default;
};

// Smallest multiple of b that is >= a. Throws ValidationError when b == 0.
std::size_t rnd_up(std::size_t a, std::size_t b);

// Block sizes actually used for an (m x k) * (k x n) product:
//   m_c' = rnd_up(min(max(m, m_r), m_c), m_r)
//   n_c' = rnd_up(min(max(n, n_r), n_c), n_r)
//   k_c' = min(max(k, 1), k_c)
KernelParams effective_params(std::size_t m, std::size_t n, std::size_t k, const KernelParams& defaults = {});

// FLOPs per memory operation of one packed block-panel update, 2 m_c k_c / (2 m_c + k_c).
double flop_memory_ratio(double m_c, double k_c);

// Reusable packing buffers.
struct GemmWorkspace {
  std::vector<float> a_pack;
  std::vector<float> b_pack;
};

// C = A * B, row-major, all leading dimensions explicit.
void gemm_blocked(std::size_t m, std::size_t n, std::size_t k, const float* a, std::size_t lda, const float* b,
                  std::size_t ldb, float* c, std::size_t ldc, const KernelParams& params, GemmWorkspace& ws);

Matrix gemm_blocked(const Matrix& a, const Matrix& b, const KernelParams& params = {});
void gemm_blocked(const Matrix& a, const Matrix& b, Matrix& c, const KernelParams& params, GemmWorkspace& ws);

// Measured GFLOPS of gemm_blocked over an (n, m, k) grid.
struct GflopsHeatmap {
  std::string machine;
  std::vector<std::size_t> n_values;
  std::vector<std::size_t> m_grid;
  std::vector<std::size_t> k_grid;
  std::vector<double> gflops;  // [n][m][k], row-major
  std::vector<std::size_t> zone_thresholds_k{128, 512};

  bool empty() const noexcept { return gflops.empty(); }
  double at(std::size_t ni, std::size_t mi, std::size_t ki) const {
    return gflops[(ni * m_grid.size() + mi) * k_grid.size() + ki];
  }
  double& at(std::size_t ni, std::size_t mi, std::size_t ki) {
    return gflops[(ni * m_grid.size() + mi) * k_grid.size() + ki];
  }

  // Nearest cell in log space on each axis.
  double lookup(std::size_t m, std::size_t k, std::size_t n) const;
  void validate() const;
};

void save_heatmap(const std::filesystem::path& path, const GflopsHeatmap& hm);
GflopsHeatmap load_heatmap(const std::filesystem::path& path);
std::string heatmap_to_json(const GflopsHeatmap& hm);
GflopsHeatmap heatmap_from_json(const std::string& text, const std::string& source = "<memory>");

struct HeatmapOptions {
  KernelParams params;
  TimingOptions timing;
  std::uint64_t seed = 0;
};

// Single-threaded; median of opts.timing.reps after the warm-up runs.
GflopsHeatmap benchmark_heatmap(const std::vector<std::size_t>& m_grid, const std::vector<std::size_t>& k_grid,
                                const std::vector<std::size_t>& n_values, const HeatmapOptions& opts = {});

// Mean GFLOPS of the three k bands (k < 128, 128 <= k < 512, k >= 512) at one n.
struct ZoneSummary {
  double low = 0.0, mid = 0.0, high = 0.0;
  std::size_t low_cells = 0, mid_cells = 0, high_cells = 0;
};
ZoneSummary zone_summary(const GflopsHeatmap& hm, std::size_t n_index = 0);

struct LayerTimePrediction {
  LayerShape shape;
  double flops = 0.0;
  double gflops = 0.0;
  double seconds = 0.0;
};

struct DenseTimePrediction {
  std::vector<LayerTimePrediction> layers;
  std::size_t batch = 0;
  double total_seconds = 0.0;

  double per_doc_seconds() const { return batch ? total_seconds / static_cast<double>(batch) : 0.0; }
};

// Matrix multiplications only: layer i costs 2 l_i l_{i-1} n FLOPs at the
// looked-up GFLOPS; bias and activation are neglected.
LayerTimePrediction predict_layer_time(const LayerShape& shape, std::size_t batch, const GflopsHeatmap& hm);
DenseTimePrediction predict_dense_time(const FfnArchitecture& arch, std::size_t batch, const GflopsHeatmap& hm);

}  // namespace ltrnn
