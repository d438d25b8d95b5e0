#include "ltrnn/nn.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "ltrnn/error.hpp"

namespace ltrnn {
namespace {

using json = nlohmann::json;
using clock_type = std::chrono::steady_clock;

constexpr char kModelMagic[8] = {'L', 'T', 'R', 'N', 'N', 'M', 'D', 'L'};
constexpr int kModelSchema = 1;

bool any_sparse(const FfnModel& model) {
  return std::any_of(model.layers.begin(), model.layers.end(),
                     [](const Layer& l) { return l.storage == LayerStorage::kSparse; });
}

void ensure_shape(Matrix& m, std::size_t rows, std::size_t cols) {
  if (m.rows() != rows || m.cols() != cols) m = Matrix(rows, cols);
}

// z = W a + b (feature-major), dense path.
void dense_affine(const Layer& layer, const Matrix& a, Matrix& z, GemmWorkspace& ws) {
  const std::size_t n = a.cols();
  ensure_shape(z, layer.out(), n);
  gemm_blocked(layer.out(), n, layer.in(), layer.weights.data(), layer.in(), a.data(), n, z.data(), n, KernelParams{},
               ws);
  for (std::size_t i = 0; i < layer.out(); ++i) {
    const float b = layer.bias[i];
    float* zi = z.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) zi[j] += b;
  }
}

void relu6_inplace(Matrix& z) {
  for (auto& v : z.values()) v = relu6(v);
}

void check_batch(const FfnModel& model, const Matrix& batch) {
  if (batch.cols() != model.input_dim())
    throw ValidationError("batch has " + std::to_string(batch.cols()) + " features, model expects " +
                          std::to_string(model.input_dim()));
}

// Little-endian blob helpers.
template <class T>
void put_le(std::vector<std::uint8_t>& out, std::span<const T> xs) {
  static_assert(sizeof(T) == 4);
  for (const T x : xs) {
    std::uint32_t u;
    std::memcpy(&u, &x, 4);
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(u >> (8 * b)));
  }
}

template <class T>
std::vector<T> get_le(std::span<const std::uint8_t> blob, std::size_t offset, std::size_t count,
                      const std::string& source) {
  static_assert(sizeof(T) == 4);
  if (offset > blob.size() || count > (blob.size() - offset) / 4)
    throw ValidationError(source + ": model blob out of range");
  std::vector<T> xs(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(blob[offset + 4 * i + b]) << (8 * b);
    std::memcpy(&xs[i], &u, 4);
  }
  return xs;
}

json norm_stats_json(const NormStats& s) {
  return json{{"mean", s.mean},
              {"variance", s.variance},
              {"divisor", s.divisor == NormDivisor::kVariance ? "variance" : "std"}};
}

NormStats norm_stats_from(const json& j) {
  NormStats s;
  s.mean = j.at("mean").get<std::vector<double>>();
  s.variance = j.at("variance").get<std::vector<double>>();
  s.divisor = j.value("divisor", std::string("variance")) == "std" ? NormDivisor::kStdDev : NormDivisor::kVariance;
  if (s.mean.size() != s.variance.size()) throw ValidationError("norm stats: mean and variance differ in length");
  return s;
}

}  // namespace

void FfnModel::validate() const {
  arch.validate();
  if (layers.size() != arch.widths.size())
    throw ValidationError("model has " + std::to_string(layers.size()) + " layers, architecture has " +
                          std::to_string(arch.widths.size()));
  const auto shapes = arch.layer_shapes();
  bool dense_seen = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    if (l.out() != shapes[i].out || l.in() != shapes[i].in)
      throw ValidationError("layer " + std::to_string(i) + " weight shape mismatch");
    if (l.bias.size() != l.out()) throw ValidationError("layer " + std::to_string(i) + " bias length mismatch");
    if (l.storage == LayerStorage::kSparse) {
      if (dense_seen) throw ValidationError("only leading layers may be sparse (layer " + std::to_string(i) + ")");
      if (l.sparse.m != l.out() || l.sparse.k != l.in())
        throw ValidationError("layer " + std::to_string(i) + " CSR shape mismatch");
      l.sparse.validate();
    } else {
      dense_seen = true;
    }
  }
  if (norm_stats && norm_stats->num_features() != arch.input_dim)
    throw ValidationError("norm stats cover " + std::to_string(norm_stats->num_features()) + " features, model has " +
                          std::to_string(arch.input_dim));
  if (dropout < 0.0f || dropout >= 1.0f) throw ValidationError("dropout must be in [0, 1)");
}

void FfnModel::make_sparse(std::size_t i) {
  if (i >= layers.size()) throw ValidationError("layer index " + std::to_string(i) + " out of range");
  for (std::size_t p = 0; p < i; ++p)
    if (layers[p].storage != LayerStorage::kSparse)
      throw ValidationError("only leading layers may be sparse; layer " + std::to_string(p) + " is dense");
  layers[i].storage = LayerStorage::kSparse;
  layers[i].sparse = CsrMatrix::from_dense(layers[i].weights);
  layers[i].sparse_rows = active_rows(layers[i].sparse);
}

void FfnModel::make_dense(std::size_t i) {
  if (i >= layers.size()) throw ValidationError("layer index " + std::to_string(i) + " out of range");
  for (std::size_t p = i + 1; p < layers.size(); ++p)
    if (layers[p].storage == LayerStorage::kSparse)
      throw ValidationError("only leading layers may be sparse; layer " + std::to_string(p) + " is sparse");
  layers[i].storage = LayerStorage::kDense;
  layers[i].sparse = CsrMatrix{};
  layers[i].sparse_rows.clear();
}

std::size_t FfnModel::parameter_count() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

std::size_t PruneMask::pruned_count(std::size_t i) const noexcept {
  if (!masks_layer(i)) return 0;
  return static_cast<std::size_t>(std::count(keep[i].begin(), keep[i].end(), std::uint8_t{0}));
}

FfnModel init_model(const FfnArchitecture& arch, std::uint64_t seed) {
  arch.validate();
  FfnModel model;
  model.arch = arch;
  model.seed = seed;
  Rng rng(seed);
  for (const auto& shape : arch.layer_shapes()) {
    Layer layer;
    layer.weights = Matrix(shape.out, shape.in);
    const double bound = std::sqrt(1.0 / static_cast<double>(shape.in));
    for (auto& w : layer.weights.values()) w = static_cast<float>(uniform(rng, -bound, bound));
    layer.bias.assign(shape.out, 0.0f);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

std::vector<float> forward(const FfnModel& model, const Matrix& batch, ForwardWorkspace* ws, LayerTiming* timing) {
  check_batch(model, batch);
  const std::size_t n = batch.rows();
  if (timing) *timing = LayerTiming{std::vector<double>(model.layers.size(), 0.0), 0.0};
  if (n == 0) return {};
  ForwardWorkspace local;
  ForwardWorkspace& w = ws ? *ws : local;
  const auto t_start = clock_type::now();

  const std::size_t npad = any_sparse(model) ? rnd_up(n, kDefaultLanes) : n;
  const std::size_t f = model.input_dim();
  ensure_shape(w.input, f, npad);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < f; ++j) w.input(j, i) = batch(i, j);
  for (std::size_t j = 0; j < f; ++j)
    for (std::size_t i = n; i < npad; ++i) w.input(j, i) = 0.0f;

  w.activations.resize(model.layers.size());
  const Matrix* a = &w.input;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto t0 = clock_type::now();
    const Layer& layer = model.layers[l];
    Matrix& z = w.activations[l];
    if (layer.storage == LayerStorage::kSparse) {
      ensure_shape(z, layer.out(), npad);
      for (std::size_t i = 0; i < layer.out(); ++i) std::fill_n(z.data() + i * npad, npad, layer.bias[i]);
      sdmm_blocked(layer.sparse, layer.sparse_rows, a->data(), npad, npad, z.data(), npad, kDefaultLanes);
    } else {
      dense_affine(layer, *a, z, w.gemm);
    }
    if (l + 1 < model.layers.size()) relu6_inplace(z);
    a = &z;
    if (timing) timing->layer_seconds[l] = std::chrono::duration<double>(clock_type::now() - t0).count();
  }
  std::vector<float> scores(a->data(), a->data() + n);
  if (timing) timing->total_seconds = std::chrono::duration<double>(clock_type::now() - t_start).count();
  return scores;
}

std::vector<float> score_documents(const FfnModel& model, const Matrix& raw_docs, std::size_t chunk) {
  check_batch(model, raw_docs);
  chunk = std::max<std::size_t>(chunk, 1);
  std::vector<float> scores;
  scores.reserve(raw_docs.rows());
  ForwardWorkspace ws;
  for (std::size_t r0 = 0; r0 < raw_docs.rows(); r0 += chunk) {
    const std::size_t rows = std::min(chunk, raw_docs.rows() - r0);
    Matrix part(rows, raw_docs.cols(),
                std::vector<float>(raw_docs.data() + r0 * raw_docs.cols(),
                                   raw_docs.data() + (r0 + rows) * raw_docs.cols()));
    if (model.norm_stats) part = apply_norm_stats(*model.norm_stats, part);
    const auto s = forward(model, part, &ws);
    scores.insert(scores.end(), s.begin(), s.end());
  }
  return scores;
}

std::vector<float> score_dataset(const FfnModel& model, const Dataset& ds, std::size_t chunk) {
  if (ds.num_features != model.input_dim())
    throw ValidationError("dataset has " + std::to_string(ds.num_features) + " features, model expects " +
                          std::to_string(model.input_dim()));
  return score_documents(model, ds.stacked_documents(), chunk);
}

Gradients compute_gradients(const FfnModel& model, const Matrix& batch, std::span<const float> targets,
                            Rng* dropout_rng) {
  check_batch(model, batch);
  const std::size_t n = batch.rows();
  if (targets.size() != n)
    throw ValidationError("got " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " documents");
  const std::size_t depth = model.layers.size();
  Gradients g;
  g.weights.resize(depth);
  g.bias.resize(depth);
  for (std::size_t l = 0; l < depth; ++l) {
    g.weights[l] = Matrix(model.layers[l].out(), model.layers[l].in());
    g.bias[l].assign(model.layers[l].out(), 0.0f);
  }
  if (n == 0) return g;

  GemmWorkspace ws;
  std::vector<Matrix> acts(depth + 1), pre(depth);
  acts[0] = batch.transposed();
  Matrix drop_scale;
  const bool use_dropout = dropout_rng && model.dropout > 0.0f && depth > 1;
  for (std::size_t l = 0; l < depth; ++l) {
    dense_affine(model.layers[l], acts[l], pre[l], ws);
    acts[l + 1] = pre[l];
    if (l + 1 < depth) relu6_inplace(acts[l + 1]);
    if (l == 0 && use_dropout) {
      drop_scale = Matrix(acts[1].rows(), acts[1].cols());
      const double p = model.dropout;
      const float keep_scale = static_cast<float>(1.0 / (1.0 - p));
      for (std::size_t i = 0; i < drop_scale.size(); ++i) {
        const float s = uniform01(*dropout_rng) < p ? 0.0f : keep_scale;
        drop_scale.data()[i] = s;
        acts[1].data()[i] *= s;
      }
    }
  }

  // dL/dz for the scalar output: 2 (y - t) / n.
  const Matrix& y = acts[depth];
  Matrix delta(1, n);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(y(0, i)) - static_cast<double>(targets[i]);
    loss += d * d;
    delta(0, i) = static_cast<float>(2.0 * d / static_cast<double>(n));
  }
  g.loss = loss / static_cast<double>(n);

  for (std::size_t l = depth; l-- > 0;) {
    const Layer& layer = model.layers[l];
    const Matrix a_t = acts[l].transposed();
    gemm_blocked(delta, a_t, g.weights[l], KernelParams{}, ws);
    for (std::size_t i = 0; i < layer.out(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += delta(i, j);
      g.bias[l][i] = static_cast<float>(s);
    }
    if (l == 0) break;
    Matrix upstream;
    gemm_blocked(layer.weights.transposed(), delta, upstream, KernelParams{}, ws);
    const Matrix& z = pre[l - 1];
    for (std::size_t i = 0; i < upstream.size(); ++i) {
      const float zi = z.data()[i];
      float d = (zi > 0.0f && zi < 6.0f) ? upstream.data()[i] : 0.0f;
      if (l == 1 && use_dropout) d *= drop_scale.data()[i];
      upstream.data()[i] = d;
    }
    delta = std::move(upstream);
  }
  return g;
}

double mse_loss(const FfnModel& model, const Matrix& batch, std::span<const float> targets) {
  if (targets.size() != batch.rows()) throw ValidationError("target count does not match batch size");
  if (batch.rows() == 0) return 0.0;
  const auto y = forward(model, batch);
  double loss = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = static_cast<double>(y[i]) - static_cast<double>(targets[i]);
    loss += d * d;
  }
  return loss / static_cast<double>(y.size());
}

void adam_update(std::span<float> param, std::span<const float> grad, std::span<float> m, std::span<float> v,
                 std::uint64_t step, double lr, const AdamParams& p, std::span<const std::uint8_t> keep) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size() ||
      (!keep.empty() && keep.size() != param.size()))
    throw ValidationError("adam_update: parameter, gradient, moment and mask sizes differ");
  if (step == 0) throw ValidationError("adam_update: step counts from 1");
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (!keep.empty() && keep[i] == 0) continue;
    const double gi = grad[i];
    const double mi = p.beta1 * m[i] + (1.0 - p.beta1) * gi;
    const double vi = p.beta2 * v[i] + (1.0 - p.beta2) * gi * gi;
    m[i] = static_cast<float>(mi);
    v[i] = static_cast<float>(vi);
    param[i] = static_cast<float>(param[i] - lr * (mi / c1) / (std::sqrt(vi / c2) + p.eps));
  }
}

void adam_step(FfnModel& model, const Gradients& g, AdamState& state, double lr, const PruneMask* mask) {
  const std::size_t depth = model.layers.size();
  if (g.weights.size() != depth || g.bias.size() != depth) throw ValidationError("gradient/model depth mismatch");
  if (state.m_w.size() != depth) {
    state.m_w.assign(depth, {});
    state.v_w.assign(depth, {});
    state.m_b.assign(depth, {});
    state.v_b.assign(depth, {});
    for (std::size_t l = 0; l < depth; ++l) {
      state.m_w[l].assign(model.layers[l].weights.size(), 0.0f);
      state.v_w[l].assign(model.layers[l].weights.size(), 0.0f);
      state.m_b[l].assign(model.layers[l].bias.size(), 0.0f);
      state.v_b[l].assign(model.layers[l].bias.size(), 0.0f);
    }
  }
  ++state.step;
  for (std::size_t l = 0; l < depth; ++l) {
    std::span<const std::uint8_t> keep;
    if (mask && mask->masks_layer(l)) keep = mask->keep[l];
    adam_update(model.layers[l].weights.values(), g.weights[l].values(), state.m_w[l], state.v_w[l], state.step, lr,
                state.params, keep);
    adam_update(model.layers[l].bias, g.bias[l], state.m_b[l], state.v_b[l], state.step, lr, state.params);
  }
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be > 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must be in (0, 1]");
  if (!(augmentation_fraction >= 0.0 && augmentation_fraction <= 1.0))
    throw ValidationError("augmentation fraction must be in [0, 1]");
  if (batch_size == 0) throw ValidationError("batch size must be >= 1");
  if (dropout < 0.0f || dropout >= 1.0f) throw ValidationError("dropout must be in [0, 1)");
}

double TrainConfig::lr_at(std::size_t epoch) const {
  double r = lr;
  for (const auto s : gamma_steps)
    if (epoch >= s) r *= gamma;
  return r;
}

TeacherScorer make_teacher_scorer(const TreeEnsemble& ens) {
  return [&ens](std::span<const float> doc) { return score_naive(ens, doc); };
}

Matrix sample_augmented_batch(const AugmentationTable& table, std::size_t n, Rng& rng) {
  const std::size_t f = table.num_features();
  if (table.feature_min.size() != f || table.feature_max.size() != f)
    throw ValidationError("augmentation table is inconsistent");
  Matrix out(n, f);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < f; ++j) {
      const auto& mids = table.midpoints[j];
      out(i, j) = mids.empty() ? static_cast<float>(uniform(rng, table.feature_min[j], table.feature_max[j]))
                               : mids[uniform_index(rng, mids.size())];
    }
  }
  return out;
}

Matrix sample_augmented_batch(const AugmentationTable& table, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  return sample_augmented_batch(table, n, rng);
}

TrainResult train_distill(FfnModel& model, const Dataset& ds, const AugmentationTable& table,
                          const TeacherScorer& teacher, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  model.validate();
  if (!ds.has_teacher_scores()) throw ValidationError("training data has no teacher scores");
  if (ds.num_features != model.input_dim())
    throw ValidationError("dataset has " + std::to_string(ds.num_features) + " features, model expects " +
                          std::to_string(model.input_dim()));
  const std::size_t n_aug_per = static_cast<std::size_t>(
      std::llround(static_cast<double>(cfg.batch_size) * cfg.augmentation_fraction));
  if (n_aug_per > 0) {
    if (!teacher) throw ValidationError("augmented training needs a teacher scorer");
    if (table.num_features() != model.input_dim())
      throw ValidationError("augmentation table covers " + std::to_string(table.num_features()) +
                            " features, model expects " + std::to_string(model.input_dim()));
  }
  if (!model.norm_stats) model.norm_stats = compute_norm_stats(ds);
  model.dropout = cfg.dropout;

  const Matrix real = apply_norm_stats(*model.norm_stats, ds.stacked_documents());
  const std::vector<float> real_targets = ds.stacked_teacher_scores();
  const std::size_t n_real = real.rows();
  const std::size_t f = real.cols();
  const std::size_t n_real_per = cfg.batch_size - n_aug_per;
  const std::size_t steps =
      n_real_per > 0 ? (n_real + n_real_per - 1) / n_real_per : (n_real + cfg.batch_size - 1) / cfg.batch_size;

  Rng rng(cfg.seed);
  AdamState adam;
  std::vector<std::size_t> order(n_real);
  for (std::size_t i = 0; i < n_real; ++i) order[i] = i;

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (hooks.epoch_begin) hooks.epoch_begin(epoch, model);
    const double lr = cfg.lr_at(epoch);
    shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t r0 = std::min(n_real, s * n_real_per);
      const std::size_t r = std::min(n_real_per, n_real - r0);
      const std::size_t a = n_aug_per;
      Matrix xb(r + a, f);
      std::vector<float> tb(r + a);
      for (std::size_t i = 0; i < r; ++i) {
        const std::size_t src = order[r0 + i];
        std::copy_n(real.data() + src * f, f, xb.data() + i * f);
        tb[i] = real_targets[src];
      }
      if (a > 0) {
        Matrix aug = sample_augmented_batch(table, a, rng);
        for (std::size_t i = 0; i < a; ++i) {
          auto row = aug.row(i);
          tb[r + i] = static_cast<float>(teacher(row));
          apply_norm_stats(*model.norm_stats, row);
          std::copy(row.begin(), row.end(), xb.data() + (r + i) * f);
        }
      }
      const Gradients g = compute_gradients(model, xb, tb, &rng);
      adam_step(model, g, adam, lr, hooks.mask);
      loss_sum += g.loss;
    }
    result.epoch_loss.push_back(steps ? loss_sum / static_cast<double>(steps) : 0.0);
    for (std::size_t l = 0; l < model.layers.size(); ++l)
      if (model.layers[l].storage == LayerStorage::kSparse) model.make_sparse(l);
    if (hooks.epoch_end) hooks.epoch_end(epoch, model);
  }
  return result;
}

std::vector<std::uint8_t> serialize_model(const FfnModel& model) {
  model.validate();
  std::vector<std::uint8_t> blob;
  json layers = json::array();
  auto add_blob = [&blob](auto values) {
    const std::size_t offset = blob.size();
    put_le(blob, std::span(values));
    return json{{"offset", offset}, {"count", values.size()}};
  };
  for (const auto& l : model.layers) {
    json jl{{"out", l.out()}, {"in", l.in()}};
    if (l.storage == LayerStorage::kSparse) {
      jl["storage"] = "sparse";
      jl["values"] = add_blob(std::span<const float>(l.sparse.values));
      jl["column_index"] = add_blob(std::span<const std::uint32_t>(l.sparse.column_index));
      jl["rows"] = add_blob(std::span<const std::uint32_t>(l.sparse.rows));
    } else {
      jl["storage"] = "dense";
      jl["weights"] = add_blob(l.weights.values());
    }
    jl["bias"] = add_blob(std::span<const float>(l.bias));
    layers.push_back(std::move(jl));
  }
  json header{{"schema_version", kModelSchema},
              {"architecture", {{"input_dim", model.arch.input_dim}, {"widths", model.arch.widths}}},
              {"dropout", model.dropout},
              {"seed", model.seed},
              {"layers", std::move(layers)},
              {"norm_stats", model.norm_stats ? norm_stats_json(*model.norm_stats) : json(nullptr)}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kModelMagic, kModelMagic + 8);
  const std::uint64_t len = text.size();
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(len >> (8 * b)));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blob.begin(), blob.end());
  return out;
}

FfnModel deserialize_model(std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() < 16 || !std::equal(kModelMagic, kModelMagic + 8, bytes.begin()))
    throw ValidationError(source + ": not a model file");
  std::uint64_t len = 0;
  for (int b = 0; b < 8; ++b) len |= static_cast<std::uint64_t>(bytes[8 + b]) << (8 * b);
  if (len > bytes.size() - 16) throw ValidationError(source + ": truncated model header");
  const auto blob = bytes.subspan(16 + len);
  FfnModel model;
  try {
    const json h = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    if (h.at("schema_version").get<int>() != kModelSchema)
      throw ValidationError(source + ": unsupported model schema_version");
    model.arch.input_dim = h.at("architecture").at("input_dim").get<std::size_t>();
    model.arch.widths = h.at("architecture").at("widths").get<std::vector<std::size_t>>();
    model.dropout = h.value("dropout", 0.0f);
    model.seed = h.value("seed", std::uint64_t{0});
    if (!h.at("norm_stats").is_null()) model.norm_stats = norm_stats_from(h.at("norm_stats"));
    for (const auto& jl : h.at("layers")) {
      Layer l;
      const auto out = jl.at("out").get<std::size_t>();
      const auto in = jl.at("in").get<std::size_t>();
      auto fetch_f = [&](const char* key) {
        return get_le<float>(blob, jl.at(key).at("offset").get<std::size_t>(),
                             jl.at(key).at("count").get<std::size_t>(), source);
      };
      auto fetch_u = [&](const char* key) {
        return get_le<std::uint32_t>(blob, jl.at(key).at("offset").get<std::size_t>(),
                                     jl.at(key).at("count").get<std::size_t>(), source);
      };
      const std::string storage = jl.at("storage").get<std::string>();
      if (storage == "sparse") {
        l.storage = LayerStorage::kSparse;
        l.sparse.m = out;
        l.sparse.k = in;
        l.sparse.values = fetch_f("values");
        l.sparse.column_index = fetch_u("column_index");
        l.sparse.rows = fetch_u("rows");
        l.sparse.validate();
        l.sparse_rows = active_rows(l.sparse);
        l.weights = l.sparse.to_dense();
      } else if (storage == "dense") {
        auto w = fetch_f("weights");
        if (w.size() != out * in) throw ValidationError(source + ": weight blob size mismatch");
        l.weights = Matrix(out, in, std::move(w));
      } else {
        throw ValidationError(source + ": unknown layer storage '" + storage + "'");
      }
      l.bias = fetch_f("bias");
      model.layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw ValidationError(source + ": " + e.what());
  }
  model.validate();
  return model;
}

void save_model(const std::filesystem::path& path, const FfnModel& model) {
  const auto bytes = serialize_model(model);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FfnModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes, path.string());
}

}  // namespace ltrnn
