#include "ltrnn/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ltrnn/error.hpp"

namespace ltrnn {
namespace {

double evaluate(const FfnModel& model, const Dataset& ds, const MetricSpec& metric) {
  const auto scores = score_dataset(model, ds);
  const auto per_query = evaluate_per_query(ds, scores, metric);
  return mean_metric(per_query);
}

void check_layer(const FfnModel& model, std::size_t i) {
  if (i >= model.layers.size())
    throw ValidationError("layer " + std::to_string(i) + " out of range (model has " +
                          std::to_string(model.layers.size()) + ")");
}

}  // namespace

double level_fraction_at(const PruneConfig& cfg, std::size_t epoch) {
  if (!cfg.level_ramp || cfg.prune_epochs <= 1 || epoch + 1 >= cfg.prune_epochs) return cfg.level_fraction;
  const double progress = static_cast<double>(epoch + 1) / static_cast<double>(cfg.prune_epochs);
  const double rest = 1.0 - progress;
  return cfg.level_fraction * (1.0 - rest * rest * rest);
}

std::vector<std::uint8_t> level_prune(std::span<const float> w, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ValidationError("level prune fraction must be in [0, 1)");
  const std::size_t n = w.size();
  // The small slack keeps e.g. 0.95 * 320 from flooring to 303.
  const auto count = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  std::vector<std::uint8_t> keep(n, 1);
  if (count == 0) return keep;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&w](std::size_t a, std::size_t b) { return std::fabs(w[a]) < std::fabs(w[b]); });
  for (std::size_t i = 0; i < count; ++i) keep[idx[i]] = 0;
  return keep;
}

double weight_stddev(std::span<const float> w) {
  if (w.size() < 2) return 0.0;
  double mean = 0.0;
  for (const float x : w) mean += x;
  mean /= static_cast<double>(w.size());
  double ss = 0.0;
  for (const float x : w) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(w.size() - 1));
}

ThresholdPrune threshold_prune(std::span<const float> w, double s, std::optional<double> sigma) {
  if (!(s > 0.0)) throw ValidationError("threshold prune sensitivity must be > 0");
  ThresholdPrune r;
  r.sigma = sigma ? *sigma : weight_stddev(w);
  r.threshold = r.sigma * s;
  r.keep.assign(w.size(), 1);
  if (!(r.sigma > 0.0)) {
    r.warning = "weight standard deviation is 0; nothing pruned";
    return r;
  }
  for (std::size_t i = 0; i < w.size(); ++i)
    if (std::fabs(static_cast<double>(w[i])) <= r.threshold) r.keep[i] = 0;
  return r;
}

void apply_mask(FfnModel& model, const PruneMask& mask) {
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (!mask.masks_layer(l)) continue;
    auto w = model.layers[l].weights.values();
    if (mask.keep[l].size() != w.size())
      throw ValidationError("mask for layer " + std::to_string(l) + " does not match the weight shape");
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!mask.keep[l][i]) w[i] = 0.0f;
    if (model.layers[l].storage == LayerStorage::kSparse) model.make_sparse(l);
  }
}

double layer_sparsity(const FfnModel& model, std::size_t i) {
  check_layer(model, i);
  const auto w = model.layers[i].weights.values();
  if (w.empty()) return 0.0;
  const auto zeros = std::count(w.begin(), w.end(), 0.0f);
  return static_cast<double>(zeros) / static_cast<double>(w.size());
}

std::size_t mask_violations(const FfnModel& model, const PruneMask& mask) {
  std::size_t bad = 0;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (!mask.masks_layer(l)) continue;
    const auto w = model.layers[l].weights.values();
    for (std::size_t i = 0; i < w.size(); ++i)
      if (!mask.keep[l][i] && w[i] != 0.0f) ++bad;
  }
  return bad;
}

SensitivityReport sensitivity_analysis(const FfnModel& model, const Dataset& train, const Dataset& validation,
                                       const AugmentationTable& table, const TeacherScorer& teacher,
                                       const SensitivityConfig& cfg) {
  model.validate();
  for (const double s : cfg.grid)
    if (!(s >= 0.0 && s < 1.0)) throw ValidationError("sensitivity grid values must be in [0, 1)");
  std::vector<std::size_t> layers = cfg.layers;
  if (layers.empty())
    for (std::size_t l = 0; l < model.layers.size(); ++l) layers.push_back(l);
  for (const auto l : layers) check_layer(model, l);

  SensitivityReport report;
  report.metric = cfg.metric.name();
  report.baseline = evaluate(model, validation, cfg.metric);
  for (const auto l : layers) {
    for (const double s : cfg.grid) {
      SensitivityCell cell{l, s, 0.0, report.baseline};
      if (s > 0.0) {
        FfnModel copy = model;
        PruneMask mask;
        mask.keep.resize(copy.layers.size());
        mask.keep[l] = level_prune(copy.layers[l].weights.values(), s);
        apply_mask(copy, mask);
        if (cfg.mode == SensitivityMode::kDynamic && cfg.retrain_epochs > 0) {
          TrainConfig tc = cfg.train;
          tc.epochs = cfg.retrain_epochs;
          TrainHooks hooks;
          hooks.mask = &mask;
          train_distill(copy, train, table, teacher, tc, hooks);
        }
        cell.achieved_sparsity = layer_sparsity(copy, l);
        cell.metric = evaluate(copy, validation, cfg.metric);
      }
      report.cells.push_back(cell);
    }
  }
  return report;
}

void PruneConfig::validate() const {
  if (target_layers.empty()) throw ValidationError("prune config needs at least one target layer");
  if (!(level_fraction >= 0.0 && level_fraction < 1.0)) throw ValidationError("level fraction must be in [0, 1)");
  if (!(sensitivity > 0.0)) throw ValidationError("threshold sensitivity must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must be in (0, 1]");
  if (target_sparsity && !(*target_sparsity >= 0.0 && *target_sparsity < 1.0))
    throw ValidationError("target sparsity must be in [0, 1)");
}

PruneResult prune_schedule(FfnModel model, const Dataset& ds, const AugmentationTable& table,
                           const TeacherScorer& teacher, const PruneConfig& cfg, const TrainConfig& train_cfg,
                           const std::function<void(std::size_t, const FfnModel&)>& epoch_end) {
  cfg.validate();
  model.validate();
  std::vector<std::size_t> targets = cfg.target_layers;
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
  for (const auto l : targets) check_layer(model, l);

  PruneResult result;
  const std::size_t total_epochs = cfg.prune_epochs + cfg.finetune_epochs;
  if (total_epochs == 0) {
    for (const auto l : targets) result.layer_sparsity.push_back(layer_sparsity(model, l));
    result.model = std::move(model);
    return result;
  }

  // Thresholds are fixed once, from the weights at schedule start.
  std::vector<double> thresholds(model.layers.size(), 0.0);
  std::vector<std::optional<double>> sigmas(model.layers.size());
  if (cfg.mode == PruneMode::kThreshold) {
    for (const auto l : targets) {
      sigmas[l] = weight_stddev(model.layers[l].weights.values());
      thresholds[l] = *sigmas[l] * cfg.sensitivity;
      result.layer_thresholds.push_back(thresholds[l]);
    }
  }

  PruneMask mask;
  mask.keep.resize(model.layers.size());
  TrainHooks hooks;
  hooks.mask = &mask;
  hooks.epoch_begin = [&](std::size_t epoch, FfnModel& m) {
    if (epoch >= cfg.prune_epochs) return;
    for (const auto l : targets) {
      const auto w = m.layers[l].weights.values();
      if (cfg.mode == PruneMode::kLevel) {
        mask.keep[l] = level_prune(w, level_fraction_at(cfg, epoch));
      } else {
        auto tp = threshold_prune(w, cfg.sensitivity, sigmas[l]);
        if (tp.warning && epoch == 0) result.warnings.push_back("layer " + std::to_string(l) + ": " + *tp.warning);
        mask.keep[l] = std::move(tp.keep);
      }
    }
    apply_mask(m, mask);
  };
  hooks.epoch_end = [&](std::size_t epoch, const FfnModel& m) {
    result.epoch_mask_violations.push_back(mask_violations(m, mask));
    if (epoch_end) epoch_end(epoch, m);
  };

  TrainConfig tc = train_cfg;
  tc.epochs = total_epochs;
  tc.gamma = cfg.gamma;
  tc.gamma_steps = cfg.gamma_steps;
  result.train = train_distill(model, ds, table, teacher, tc, hooks);

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (!std::binary_search(targets.begin(), targets.end(), l)) break;
    model.make_sparse(l);
  }
  const double expected =
      cfg.target_sparsity ? *cfg.target_sparsity : (cfg.mode == PruneMode::kLevel ? cfg.level_fraction : 0.0);
  for (const auto l : targets) {
    const double achieved = layer_sparsity(model, l);
    result.layer_sparsity.push_back(achieved);
    if (achieved + 1e-12 < expected)
      result.warnings.push_back("layer " + std::to_string(l) + " reached sparsity " + std::to_string(achieved) +
                                ", below the target " + std::to_string(expected));
  }
  result.model = std::move(model);
  return result;
}

}  // namespace ltrnn
