#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ltrnn/architecture.hpp"
#include "ltrnn/data.hpp"
#include "ltrnn/dense_kernel.hpp"
#include "ltrnn/matrix.hpp"
#include "ltrnn/rng.hpp"
#include "ltrnn/sparse_kernel.hpp"
#include "ltrnn/trees.hpp"

namespace ltrnn {

enum class LayerStorage { kDense, kSparse };

// Weights are always held densely (out x in) for training; a sparse-tagged
// layer also carries the CSR copy used at inference.
struct Layer {
  Matrix weights;
  std::vector<float> bias;
  LayerStorage storage = LayerStorage::kDense;
  CsrMatrix sparse;
  std::vector<std::uint32_t> sparse_rows;  // active_rows(sparse)

  std::size_t out() const noexcept { return weights.rows(); }
  std::size_t in() const noexcept { return weights.cols(); }
};

struct FfnModel {
  FfnArchitecture arch;
  std::vector<Layer> layers;
  std::optional<NormStats> norm_stats;
  float dropout = 0.0f;  // after the first layer, training only
  std::uint64_t seed = 0;

  std::size_t input_dim() const noexcept { return arch.input_dim; }
  void validate() const;
  // Tags layer i sparse and rebuilds its CSR copy from the dense weights
  // (exact zeros dropped). Only a prefix of the layers may be sparse.
  void make_sparse(std::size_t i);
  void make_dense(std::size_t i);
  std::size_t parameter_count() const noexcept;
};

// Scaled uniform fan-in initialisation: U(-sqrt(1/fan_in), sqrt(1/fan_in)), zero biases.
FfnModel init_model(const FfnArchitecture& arch, std::uint64_t seed);

inline float relu6(float x) noexcept { return x < 0.0f ? 0.0f : (x > 6.0f ? 6.0f : x); }

struct ForwardWorkspace {
  GemmWorkspace gemm;
  std::vector<Matrix> activations;
  Matrix input;
};

struct LayerTiming {
  std::vector<double> layer_seconds;
  double total_seconds = 0.0;
};

// Scores for an n x f batch of already normalised documents. Activations are
// kept feature-major (width x n); dense layers go through gemm_blocked, sparse
// ones through sdmm_blocked with n padded to a multiple of 8.
std::vector<float> forward(const FfnModel& model, const Matrix& batch, ForwardWorkspace* ws = nullptr,
                           LayerTiming* timing = nullptr);

// Applies the model's norm_stats (when present) to raw documents, then scores
// in chunks. One score per document, dataset order.
std::vector<float> score_documents(const FfnModel& model, const Matrix& raw_docs, std::size_t chunk = 4096);
std::vector<float> score_dataset(const FfnModel& model, const Dataset& ds, std::size_t chunk = 4096);

// Per-layer keep flags (1 = live, 0 = pruned). An empty entry leaves that layer unmasked.
struct PruneMask {
  std::vector<std::vector<std::uint8_t>> keep;

  bool masks_layer(std::size_t i) const noexcept { return i < keep.size() && !keep[i].empty(); }
  std::size_t pruned_count(std::size_t i) const noexcept;
};

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<float>> bias;
  double loss = 0.0;
};

// Mean squared error over the batch and its gradients. `batch` is n x f
// (normalised). Dropout is applied after the first layer when rng is given
// and model.dropout > 0.
Gradients compute_gradients(const FfnModel& model, const Matrix& batch, std::span<const float> targets,
                            Rng* dropout_rng = nullptr);
double mse_loss(const FfnModel& model, const Matrix& batch, std::span<const float> targets);

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamParams params;
  std::uint64_t step = 0;
  std::vector<std::vector<float>> m_w, v_w, m_b, v_b;
};

// One Adam update of a flat parameter block with bias-corrected moments.
// Entries with keep[i] == 0 are left untouched (parameter and moments).
void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                 std::uint64_t step, double lr, const AdamParams& p, std::span<const std::uint8_t> keep = {});

void adam_step(FfnModel& model, const Gradients& g, AdamState& state, double lr, const PruneMask* mask = nullptr);

struct TrainConfig {
  std::size_t epochs = 10;
  double lr = 1e-3;
  double gamma = 1.0;                    // lr decay factor
  std::vector<std::size_t> gamma_steps;  // epochs at which lr *= gamma
  std::size_t batch_size = 256;
  double augmentation_fraction = 0.5;
  float dropout = 0.0f;
  std::uint64_t seed = 0;

  void validate() const;
  double lr_at(std::size_t epoch) const;
};

// Scores a raw (un-normalised) document with the teacher.
using TeacherScorer = std::function<double(std::span<const float>)>;
TeacherScorer make_teacher_scorer(const TreeEnsemble& ens);

// n synthetic raw documents: each feature drawn uniformly from its midpoint
// list, or uniformly in [min, max] when the list is empty.
Matrix sample_augmented_batch(const AugmentationTable& table, std::size_t n, Rng& rng);
Matrix sample_augmented_batch(const AugmentationTable& table, std::size_t n, std::uint64_t seed);

struct TrainHooks {
  std::function<void(std::size_t epoch, FfnModel&)> epoch_begin;
  std::function<void(std::size_t epoch, const FfnModel&)> epoch_end;
  const PruneMask* mask = nullptr;
};

struct TrainResult {
  std::vector<double> epoch_loss;
};

// Distils teacher scores into the model. `ds` is raw with teacher scores
// attached; when model.norm_stats is empty it is computed from `ds`. Each
// batch mixes real documents with augmented ones labelled by `teacher`.
TrainResult train_distill(FfnModel& model, const Dataset& ds, const AugmentationTable& table,
                          const TeacherScorer& teacher, const TrainConfig& cfg, const TrainHooks& hooks = {});

void save_model(const std::filesystem::path& path, const FfnModel& model);
FfnModel load_model(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const FfnModel& model);
FfnModel deserialize_model(std::span<const std::uint8_t> bytes, const std::string& source = "<memory>");

}  // namespace ltrnn
