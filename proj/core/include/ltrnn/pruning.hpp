#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ltrnn/data.hpp"
#include "ltrnn/metrics.hpp"
#include "ltrnn/nn.hpp"
#include "ltrnn/trees.hpp"

namespace ltrnn {

// Keep flags masking exactly floor(fraction * count) entries of smallest |w|;
// equal magnitudes are masked in index order.
std::vector<std::uint8_t> level_prune(std::span<const float> w, double fraction);

struct ThresholdPrune {
  std::vector<std::uint8_t> keep;
  double sigma = 0.0;
  double threshold = 0.0;
  std::optional<std::string> warning;
};

// Masks |w| <= sigma * s. sigma is the sample standard deviation (n - 1
// denominator) unless given; sigma == 0 masks nothing and sets a warning.
ThresholdPrune threshold_prune(std::span<const float> w, double s, std::optional<double> sigma = std::nullopt);
double weight_stddev(std::span<const float> w);

// Zeroes masked weights and refreshes CSR copies of sparse layers.
void apply_mask(FfnModel& model, const PruneMask& mask);
// 1 - nnz / size of layer i's weights.
double layer_sparsity(const FfnModel& model, std::size_t i);
// Number of masked weights that are not exactly zero.
std::size_t mask_violations(const FfnModel& model, const PruneMask& mask);

enum class SensitivityMode { kStatic, kDynamic };

struct SensitivityConfig {
  SensitivityMode mode = SensitivityMode::kStatic;
  std::vector<double> grid{0.5, 0.7, 0.9, 0.95, 0.99};
  std::vector<std::size_t> layers;  // empty: every layer
  std::size_t retrain_epochs = 1;
  TrainConfig train;
  MetricSpec metric = MetricSpec::parse("ndcg@10");
};

struct SensitivityCell {
  std::size_t layer = 0;
  double sparsity = 0.0;
  double achieved_sparsity = 0.0;
  double metric = 0.0;
};

struct SensitivityReport {
  double baseline = 0.0;
  std::string metric;
  std::vector<SensitivityCell> cells;
};

// Each (layer, sparsity) cell level-prunes that layer alone on a copy of the
// model; dynamic cells fine-tune the copy with the mask held before
// evaluating. A sparsity-0 cell is the unpruned model in both modes.
SensitivityReport sensitivity_analysis(const FfnModel& model, const Dataset& train, const Dataset& validation,
                                       const AugmentationTable& table, const TeacherScorer& teacher,
                                       const SensitivityConfig& cfg);

enum class PruneMode { kLevel, kThreshold };

struct PruneConfig {
  std::vector<std::size_t> target_layers{0};
  PruneMode mode = PruneMode::kLevel;
  double level_fraction = 0.95;
  // Level mode: raise the fraction along a cubic ramp that reaches
  // level_fraction at the last prune epoch instead of pruning it all at once.
  bool level_ramp = true;
  double sensitivity = 1.0;
  std::size_t prune_epochs = 5;
  std::size_t finetune_epochs = 5;
  double gamma = 1.0;
  std::vector<std::size_t> gamma_steps;
  // Sparsity the run is expected to reach; a warning is recorded when a
  // target layer ends below it.
  std::optional<double> target_sparsity;

  void validate() const;
};

// Level fraction applied at the start of prune epoch `epoch`.
double level_fraction_at(const PruneConfig& cfg, std::size_t epoch);

struct PruneResult {
  FfnModel model;
  std::vector<double> layer_sparsity;    // per target layer
  std::vector<double> layer_thresholds;  // threshold mode only
  std::vector<std::string> warnings;
  std::vector<std::size_t> epoch_mask_violations;
  TrainResult train;
};

// For prune_epochs epochs: re-prune the target layers at the start of each
// epoch, then fine-tune with masked Adam. Then finetune_epochs epochs with the
// final mask held. The leading target layers end up stored as CSR.
PruneResult prune_schedule(FfnModel model, const Dataset& ds, const AugmentationTable& table,
                           const TeacherScorer& teacher, const PruneConfig& cfg, const TrainConfig& train_cfg,
                           const std::function<void(std::size_t, const FfnModel&)>& epoch_end = {});

}  // namespace ltrnn
