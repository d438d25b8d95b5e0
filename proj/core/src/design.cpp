#include "ltrnn/design.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ltrnn/error.hpp"
#include "ltrnn/nn.hpp"

namespace ltrnn {
namespace {

using json = nlohmann::json;

double to_us_per_doc(double seconds, std::size_t batch) { return seconds / static_cast<double>(batch) * 1e6; }

}  // namespace

void CostModel::validate(bool force) const {
  if (!has_dense()) throw ValidationError("cost model has no dense GFLOPS heatmap (run calibrate-dense)");
  heatmap.validate();
  if (!has_sparse()) throw ValidationError("cost model has no sparse coefficients (run calibrate-sparse)");
  sparse.validate();
  if (!force && heatmap.machine != sparse.machine)
    throw ValidationError("heatmap was calibrated on '" + heatmap.machine + "' but sparse coefficients on '" +
                          sparse.machine + "' (use --force to combine them)");
}

std::string cost_model_to_json(const CostModel& cm) {
  json j;
  j["schema_version"] = 1;
  if (cm.has_dense()) j["heatmap"] = json::parse(heatmap_to_json(cm.heatmap));
  if (cm.has_sparse()) j["sparse"] = json::parse(sparse_coeffs_to_json(cm.sparse));
  return j.dump(1);
}

CostModel cost_model_from_json(const std::string& text, const std::string& source) {
  CostModel cm;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(source + ": " + e.what());
  }
  if (j.contains("heatmap")) cm.heatmap = heatmap_from_json(j["heatmap"].dump(), source);
  if (j.contains("sparse")) cm.sparse = sparse_coeffs_from_json(j["sparse"].dump(), source);
  if (!j.contains("heatmap") && !j.contains("sparse"))
    throw ValidationError(source + ": cost model has neither 'heatmap' nor 'sparse'");
  return cm;
}

void save_cost_model(const std::filesystem::path& path, const CostModel& cm) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << cost_model_to_json(cm) << '\n';
}

CostModel load_cost_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return cost_model_from_json(ss.str(), path.string());
}

SparsityStats worst_case_stats(const LayerShape& shape, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw ValidationError("sparsity must be in [0, 1]");
  SparsityStats s;
  const double total = static_cast<double>(shape.out) * static_cast<double>(shape.in);
  s.nnz = static_cast<std::size_t>(std::llround((1.0 - sparsity) * total));
  s.active_rows = s.nnz ? shape.out : 0;
  s.active_cols = s.nnz ? shape.in : 0;
  return s;
}

SparsityProfile SparsityProfile::first_layer(const FfnArchitecture& arch, double sparsity) {
  arch.validate();
  SparsityProfile p;
  LayerPlan plan;
  plan.kind = LayerPlan::Kind::kSparse;
  plan.sparsity = sparsity;
  plan.stats = worst_case_stats(arch.layer_shapes().front(), sparsity);
  p.layers.push_back(plan);
  return p;
}

SparsityProfile SparsityProfile::first_layer_free() {
  SparsityProfile p;
  LayerPlan plan;
  plan.kind = LayerPlan::Kind::kFree;
  plan.sparsity = 1.0;
  p.layers.push_back(plan);
  return p;
}

SparsityProfile SparsityProfile::from_model(const FfnModel& model) {
  SparsityProfile p;
  for (const auto& l : model.layers) {
    if (l.storage != LayerStorage::kSparse) break;
    LayerPlan plan;
    plan.kind = LayerPlan::Kind::kSparse;
    plan.sparsity = l.sparse.sparsity();
    plan.stats = l.sparse.stats();
    p.layers.push_back(plan);
  }
  return p;
}

CandidateReport predict_network_time(const FfnArchitecture& arch, const SparsityProfile& profile, const CostModel& cm,
                                     std::size_t batch, std::optional<double> budget_us) {
  arch.validate();
  if (batch == 0) throw ValidationError("batch must be >= 1");
  if (!cm.has_dense()) throw ValidationError("cost model is not calibrated: dense heatmap missing");
  const auto shapes = arch.layer_shapes();
  if (profile.layers.size() > shapes.size())
    throw ValidationError("sparsity profile has more layers than the architecture");
  CandidateReport r;
  r.arch = arch;
  r.batch = batch;
  r.budget_us = budget_us;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    LayerReport lr;
    lr.shape = shapes[i];
    const double dense_s = predict_layer_time(shapes[i], batch, cm.heatmap).seconds;
    lr.dense_us_per_doc = to_us_per_doc(dense_s, batch);
    const LayerPlan* plan = profile.at(i);
    lr.kind = plan ? plan->kind : LayerPlan::Kind::kDense;
    switch (lr.kind) {
      case LayerPlan::Kind::kDense:
        lr.seconds = dense_s;
        break;
      case LayerPlan::Kind::kSparse:
        if (!cm.has_sparse()) throw ValidationError("cost model is not calibrated: sparse coefficients missing");
        lr.sparsity = plan->sparsity;
        lr.seconds = predict_sparse_time(plan->stats, cm.sparse, batch);
        break;
      case LayerPlan::Kind::kFree:
        lr.sparsity = plan->sparsity;
        lr.seconds = 0.0;
        break;
    }
    lr.us_per_doc = to_us_per_doc(lr.seconds, batch);
    r.total_us_per_doc += lr.us_per_doc;
    r.dense_total_us_per_doc += lr.dense_us_per_doc;
    r.layers.push_back(lr);
  }
  for (auto& lr : r.layers)
    lr.share_percent = r.total_us_per_doc > 0.0 ? 100.0 * lr.us_per_doc / r.total_us_per_doc : 0.0;
  r.fits_budget = !budget_us || r.total_us_per_doc <= *budget_us;
  return r;
}

std::vector<double> layer_breakdown(const FfnArchitecture& arch, const CostModel& cm, std::size_t batch) {
  const auto r = predict_network_time(arch, SparsityProfile::all_dense(), cm, batch);
  std::vector<double> shares;
  for (const auto& l : r.layers) shares.push_back(l.share_percent);
  return shares;
}

std::vector<SpeedupPoint> sparsity_speedup_curve(const LayerShape& shape, const CostModel& cm, std::size_t n,
                                                 const std::vector<double>& grid) {
  if (!cm.has_dense() || !cm.has_sparse()) throw ValidationError("speedup curve needs a fully calibrated cost model");
  if (n == 0) throw ValidationError("batch must be >= 1");
  std::vector<SpeedupPoint> curve;
  const double dense = predict_layer_time(shape, n, cm.heatmap).seconds;
  for (const double s : grid) {
    if (!(s >= 0.0 && s < 1.0)) throw ValidationError("speedup grid values must be in [0, 1)");
    SpeedupPoint p;
    p.sparsity = s;
    p.dense_seconds = dense;
    p.sparse_seconds = predict_sparse_time(worst_case_stats(shape, s), cm.sparse, n);
    p.speedup = p.sparse_seconds > 0.0 ? dense / p.sparse_seconds : INFINITY;
    curve.push_back(p);
  }
  return curve;
}

void SearchConfig::validate() const {
  if (features == 0) throw ValidationError("search needs the input feature count");
  if (widths.empty()) throw ValidationError("search width grid is empty");
  if (min_depth == 0 || min_depth > max_depth) throw ValidationError("search depth range is empty");
  if (!(budget_us > 0.0)) throw ValidationError("budget must be > 0 us/doc");
  if (batch == 0) throw ValidationError("batch must be >= 1");
  for (const auto w : widths)
    if (w == 0) throw ValidationError("widths must be >= 1");
}

namespace {

void enumerate(const SearchConfig& cfg, const std::function<void(const std::vector<std::size_t>&)>& visit) {
  std::vector<std::size_t> grid = cfg.widths;
  std::sort(grid.begin(), grid.end(), std::greater<>());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  std::vector<std::size_t> cur;
  std::function<void()> rec = [&] {
    if (cur.size() >= cfg.min_depth) visit(cur);
    if (cur.size() == cfg.max_depth) return;
    for (const auto w : grid) {
      if (!cfg.allow_increasing && !cur.empty() && w > cur.back()) continue;
      cur.push_back(w);
      rec();
      cur.pop_back();
    }
  };
  rec();
}

}  // namespace

std::size_t count_candidates(const SearchConfig& cfg) {
  cfg.validate();
  std::size_t n = 0;
  enumerate(cfg, [&n](const std::vector<std::size_t>&) { ++n; });
  return n;
}

std::vector<CandidateReport> search_architectures(const SearchConfig& cfg, const CostModel& cm) {
  cfg.validate();
  const SparsityProfile profile =
      cfg.assume_first_sparse ? SparsityProfile::first_layer_free() : SparsityProfile::all_dense();
  std::vector<CandidateReport> out;
  enumerate(cfg, [&](const std::vector<std::size_t>& hidden) {
    FfnArchitecture arch;
    arch.input_dim = cfg.features;
    arch.widths = hidden;
    arch.widths.push_back(1);
    auto r = predict_network_time(arch, profile, cm, cfg.batch, cfg.budget_us);
    if (r.fits_budget) out.push_back(std::move(r));
  });
  std::sort(out.begin(), out.end(), [](const CandidateReport& a, const CandidateReport& b) {
    if (a.total_us_per_doc != b.total_us_per_doc) return a.total_us_per_doc > b.total_us_per_doc;
    return a.arch.widths < b.arch.widths;
  });
  return out;
}

std::vector<std::size_t> pareto_frontier(const std::vector<TradeoffPoint>& points) {
  std::vector<std::size_t> idx(points.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].time_us != points[b].time_us) return points[a].time_us < points[b].time_us;
    if (points[a].quality != points[b].quality) return points[a].quality > points[b].quality;
    return a < b;
  });
  std::vector<std::size_t> front;
  double best = -INFINITY;
  for (const auto i : idx) {
    if (points[i].quality > best) {
      front.push_back(i);
      best = points[i].quality;
    }
  }
  return front;
}

}  // namespace ltrnn
