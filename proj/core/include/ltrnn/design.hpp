#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ltrnn/architecture.hpp"
#include "ltrnn/dense_kernel.hpp"
#include "ltrnn/sparse_kernel.hpp"

namespace ltrnn {

struct FfnModel;

struct CostModel {
  GflopsHeatmap heatmap;
  SparseCoeffs sparse;

  bool has_dense() const noexcept { return !heatmap.empty(); }
  bool has_sparse() const noexcept { return sparse.calibrated(); }
  // Both parts must be present and, unless `force`, share one machine descriptor.
  void validate(bool force = false) const;
};

// {schema_version, heatmap: {...}, sparse: {...}}; either part may be absent.
std::string cost_model_to_json(const CostModel& cm);
CostModel cost_model_from_json(const std::string& text, const std::string& source = "<memory>");
void save_cost_model(const std::filesystem::path& path, const CostModel& cm);
CostModel load_cost_model(const std::filesystem::path& path);

// How one layer is costed.
struct LayerPlan {
  enum class Kind { kDense, kSparse, kFree } kind = Kind::kDense;
  double sparsity = 0.0;
  SparsityStats stats;  // kSparse only
};

// nnz = round((1 - sparsity) m k) with every row and column assumed active.
SparsityStats worst_case_stats(const LayerShape& shape, double sparsity);

struct SparsityProfile {
  std::vector<LayerPlan> layers;  // shorter than the network: remaining layers dense

  static SparsityProfile all_dense() { return {}; }
  // First layer sparse at the given sparsity, worst-case active rows/columns.
  static SparsityProfile first_layer(const FfnArchitecture& arch, double sparsity);
  // First layer treated as free (its cost is negligible once heavily pruned).
  static SparsityProfile first_layer_free();
  // Actual CSR statistics of the model's sparse layers.
  static SparsityProfile from_model(const FfnModel& model);

  const LayerPlan* at(std::size_t i) const noexcept { return i < layers.size() ? &layers[i] : nullptr; }
};

struct LayerReport {
  LayerShape shape;
  LayerPlan::Kind kind = LayerPlan::Kind::kDense;
  double sparsity = 0.0;
  double seconds = 0.0;       // whole batch
  double us_per_doc = 0.0;
  double dense_us_per_doc = 0.0;
  double share_percent = 0.0;
};

struct CandidateReport {
  FfnArchitecture arch;
  std::size_t batch = 0;
  std::vector<LayerReport> layers;
  double total_us_per_doc = 0.0;
  double dense_total_us_per_doc = 0.0;
  std::optional<double> budget_us;
  bool fits_budget = true;

  double pruned_delta_us() const noexcept { return dense_total_us_per_doc - total_us_per_doc; }
};

// Dense layers via the GFLOPS heatmap, sparse layers via the sparse time
// model, free layers at zero. Totals are the in-order sum of the layer terms.
CandidateReport predict_network_time(const FfnArchitecture& arch, const SparsityProfile& profile, const CostModel& cm,
                                     std::size_t batch, std::optional<double> budget_us = std::nullopt);

// Predicted per-layer share (percent) of the all-dense network.
std::vector<double> layer_breakdown(const FfnArchitecture& arch, const CostModel& cm, std::size_t batch);

struct SpeedupPoint {
  double sparsity = 0.0;
  double dense_seconds = 0.0;
  double sparse_seconds = 0.0;
  double speedup = 0.0;
};

std::vector<SpeedupPoint> sparsity_speedup_curve(const LayerShape& shape, const CostModel& cm, std::size_t n,
                                                 const std::vector<double>& grid);

struct SearchConfig {
  std::size_t features = 0;
  std::size_t min_depth = 1;  // hidden layers; the scalar output layer is added
  std::size_t max_depth = 5;
  std::vector<std::size_t> widths;
  double budget_us = 0.0;
  std::size_t batch = 1000;
  bool assume_first_sparse = false;
  bool allow_increasing = false;

  void validate() const;
};

// Every hidden-width sequence of the grid (non-increasing unless allowed)
// costed with predict_network_time; survivors under budget, slowest first.
std::vector<CandidateReport> search_architectures(const SearchConfig& cfg, const CostModel& cm);
std::size_t count_candidates(const SearchConfig& cfg);

struct TradeoffPoint {
  std::string label;
  double time_us = 0.0;
  double quality = 0.0;
};

// Indices of points not dominated in (lower time, higher quality), by increasing time.
std::vector<std::size_t> pareto_frontier(const std::vector<TradeoffPoint>& points);

}  // namespace ltrnn
