#include <chrono>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "ltrnn/dense_kernel.hpp"
#include "ltrnn/error.hpp"
#include "ltrnn/sparse_kernel.hpp"
#include "ltrnn/timing.hpp"

namespace ltrnn::cli {
namespace {

using json = nlohmann::json;

void merge_into_cost_model(const std::string& path, const GflopsHeatmap* hm, const SparseCoeffs* sc) {
  CostModel cm;
  if (std::filesystem::exists(path)) cm = load_cost_model(path);
  if (hm) cm.heatmap = *hm;
  if (sc) cm.sparse = *sc;
  save_cost_model(path, cm);
}

struct DenseFlags {
  std::string m_grid = "1,10,25,50,100,200,400,800";
  std::string k_grid = "10,25,50,100,136,200,400,800";
  std::string n_values = "1000";
  std::size_t reps = 9;
  std::size_t warmups = 1;
  std::uint64_t seed = 0;
  std::string out;
  std::string cost_model;
};

void run_calibrate_dense(const DenseFlags& f, Context& ctx) {
  HeatmapOptions opts;
  opts.timing.reps = f.reps;
  opts.timing.warmups = f.warmups;
  opts.seed = f.seed;
  if (f.reps == 0) throw ValidationError("--reps must be >= 1");
  const auto m = parse_size_list(f.m_grid, "--m-grid");
  const auto k = parse_size_list(f.k_grid, "--k-grid");
  const auto n = parse_size_list(f.n_values, "--n");
  const auto t0 = std::chrono::steady_clock::now();
  const GflopsHeatmap hm = benchmark_heatmap(m, k, n, opts);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string out = f.out.empty() ? (calibration_dir() / "heatmap.json").string() : f.out;
  save_heatmap(out, hm);
  if (!f.cost_model.empty()) merge_into_cost_model(f.cost_model, &hm, nullptr);

  std::ostringstream s;
  s << "machine: " << hm.machine << '\n';
  s << "cells: " << hm.gflops.size() << " in " << fmt_double(secs, 1) << " s\n";
  for (std::size_t ni = 0; ni < hm.n_values.size(); ++ni) {
    const auto z = zone_summary(hm, ni);
    auto band = [](double g, std::size_t cells) { return cells ? fmt_double(g, 2) : std::string("n/a"); };
    s << "n=" << hm.n_values[ni] << " mean GFLOPS by k band: <" << hm.zone_thresholds_k[0] << ": "
      << band(z.low, z.low_cells) << ", mid: " << band(z.mid, z.mid_cells) << ", >=" << hm.zone_thresholds_k[1]
      << ": " << band(z.high, z.high_cells) << '\n';
  }
  s << "heatmap written to " << out << '\n';
  if (!f.cost_model.empty()) s << "cost model updated: " << f.cost_model << '\n';
  ctx.out << s.str();
}

struct SparseFlags {
  std::string sizes = "200,300,400,500";
  std::string n_values = "16,32,64";
  std::size_t n_b = kDefaultLanes;
  std::size_t reps = 9;
  std::uint64_t seed = 0;
  std::string out;
  std::string cost_model;
};

void run_calibrate_sparse(const SparseFlags& f, Context& ctx) {
  SparseCalibrationOptions opts;
  opts.sizes = parse_size_list(f.sizes, "--sizes");
  opts.n_values = parse_size_list(f.n_values, "--n-values");
  opts.n_b = f.n_b;
  opts.seed = f.seed;
  if (f.reps == 0) throw ValidationError("--reps must be >= 1");
  for (const auto n : opts.n_values)
    if (n % f.n_b != 0) throw ValidationError("--n-values: " + std::to_string(n) + " is not a multiple of --n-b");
  const auto cal = calibrate_sparse(opts, make_sdmm_timer(TimingOptions{f.reps, 2, 2e-4, 1000}, f.n_b, f.seed));
  const std::string out = f.out.empty() ? (calibration_dir() / "sparse.json").string() : f.out;
  save_sparse_coeffs(out, cal.coeffs);
  if (!f.cost_model.empty()) merge_into_cost_model(f.cost_model, nullptr, &cal.coeffs);

  std::ostringstream s;
  s << "machine: " << cal.coeffs.machine << '\n';
  s << "size,N,T_c_us,T_rd_us,T_2c_us,L_a_ns,L_b_ns\n";
  for (const auto& c : cal.cells)
    s << c.size << ',' << c.n << ',' << fmt_double(c.t_single * 1e6, 3) << ',' << fmt_double(c.t_diag * 1e6, 3) << ','
      << fmt_double(c.t_two * 1e6, 3) << ',' << fmt_double(c.L_a * 1e9, 5) << ',' << fmt_double(c.L_b * 1e9, 5)
      << '\n';
  s << "L_a = " << cal.coeffs.L_a * 1e9 << " ns, L_b = " << cal.coeffs.L_b * 1e9
    << " ns, L_c = " << cal.coeffs.L_c * 1e9 << " ns (per column of B)\n";
  s << "coefficients written to " << out << '\n';
  if (!f.cost_model.empty()) s << "cost model updated: " << f.cost_model << '\n';
  ctx.out << s.str();
}

struct BenchFlags {
  std::string model;
  std::string trees;
  std::string data;
  std::string engine = "auto";
  std::size_t batch = 1000;
  std::size_t max_docs = 0;
  std::size_t reps = 9;
  std::string out;
  CostModelFlags cm;
  bool predict = false;
};

Matrix take_docs(const Dataset& ds, std::size_t max_docs) {
  Matrix all = ds.stacked_documents();
  if (max_docs == 0 || max_docs >= all.rows()) return all;
  return Matrix(max_docs, all.cols(), std::vector<float>(all.data(), all.data() + max_docs * all.cols()));
}

void run_benchmark(BenchFlags f, Context& ctx) {
  if (!f.model.empty() && f.trees.empty() && !is_network_model(f.model)) std::swap(f.model, f.trees);
  if (f.model.empty() == f.trees.empty()) throw ValidationError("benchmark needs exactly one of --model or --trees");
  if (f.batch == 0) throw ValidationError("--batch must be >= 1");
  const std::string machine = machine_descriptor();
  TimingOptions timing{f.reps, 1, 0.05, 1};
  json j;
  j["schema_version"] = kSchemaVersion;
  j["machine"] = machine;
  std::ostringstream s;
  s << "machine: " << machine << '\n';

  if (!f.model.empty()) {
    const FfnModel model = load_model(f.model);
    const Dataset ds = load_dataset(f.data, model.input_dim());
    Matrix docs = take_docs(ds, f.max_docs);
    if (model.norm_stats) docs = apply_norm_stats(*model.norm_stats, docs);
    std::vector<Matrix> chunks;
    for (std::size_t r0 = 0; r0 < docs.rows(); r0 += f.batch) {
      const std::size_t rows = std::min(f.batch, docs.rows() - r0);
      chunks.emplace_back(rows, docs.cols(),
                          std::vector<float>(docs.data() + r0 * docs.cols(), docs.data() + (r0 + rows) * docs.cols()));
    }
    ForwardWorkspace ws;
    volatile float sink = 0.0f;
    const double t = time_median(
        [&] {
          for (const auto& c : chunks) sink = sink + forward(model, c, &ws).front();
        },
        timing);
    const double per_doc_us = t / static_cast<double>(docs.rows()) * 1e6;
    // One extra instrumented pass for the per-layer split.
    std::vector<double> layer_s(model.layers.size(), 0.0);
    for (const auto& c : chunks) {
      LayerTiming lt;
      forward(model, c, &ws, &lt);
      for (std::size_t l = 0; l < layer_s.size(); ++l) layer_s[l] += lt.layer_seconds[l];
    }
    double layer_total = 0.0;
    for (const double v : layer_s) layer_total += v;
    std::vector<double> shares;
    for (const double v : layer_s) shares.push_back(layer_total > 0.0 ? 100.0 * v / layer_total : 0.0);
    j["kind"] = "network";
    j["measured_layer_share_percent"] = shares;
    j["arch"] = model.arch.to_string();
    j["documents"] = docs.rows();
    j["batch"] = f.batch;
    j["measured_us_per_doc"] = per_doc_us;
    s << "network " << model.arch.to_string() << ": " << fmt_double(per_doc_us, 4) << " us/doc over " << docs.rows()
      << " documents (batch " << f.batch << ")\n";
    s << "measured layer shares:";
    for (const double v : shares) s << ' ' << fmt_double(v, 1) << '%';
    s << '\n';
    if (f.predict) {
      const CostModel cm = resolve_cost_model(f.cm, false);
      if (!f.cm.force && cm.heatmap.machine != machine)
        throw ValidationError("cost model was calibrated on '" + cm.heatmap.machine + "', this machine is '" + machine +
                              "' (use --force to compare anyway)");
      const auto profile = SparsityProfile::from_model(model);
      if (!profile.layers.empty() && !cm.has_sparse())
        throw ValidationError("model has sparse layers but the cost model has no sparse coefficients");
      const auto r = predict_network_time(model.arch, profile, cm, f.batch);
      j["predicted_us_per_doc"] = r.total_us_per_doc;
      j["relative_error"] = (r.total_us_per_doc - per_doc_us) / per_doc_us;
      s << "predicted " << fmt_double(r.total_us_per_doc, 4) << " us/doc ("
        << fmt_double(100.0 * (r.total_us_per_doc - per_doc_us) / per_doc_us, 1) << "% vs measured)\n";
    }
  } else {
    const TreeEnsemble ens = load_ensemble(f.trees);
    const Dataset ds = load_dataset(f.data, ens.num_features);
    const Matrix docs = take_docs(ds, f.max_docs);
    std::string engine = f.engine;
    if (engine == "auto") engine = ens.max_leaves() <= kMaxQsLeaves ? "quickscorer" : "naive";
    double t = 0.0;
    volatile double sink = 0.0;
    if (engine == "quickscorer") {
      const QsIndex idx = build_qs_index(ens);
      t = time_median([&] { sink = sink + score_quickscorer(idx, docs).front(); }, timing);
    } else if (engine == "naive") {
      t = time_median([&] { sink = sink + score_naive(ens, docs).front(); }, timing);
    } else {
      throw ValidationError("--engine: expected auto, naive or quickscorer, got '" + f.engine + "'");
    }
    const double per_doc_us = t / static_cast<double>(docs.rows()) * 1e6;
    j["kind"] = "trees";
    j["engine"] = engine;
    j["trees"] = ens.trees.size();
    j["documents"] = docs.rows();
    j["measured_us_per_doc"] = per_doc_us;
    s << ens.trees.size() << " trees (" << engine << "): " << fmt_double(per_doc_us, 4) << " us/doc over "
      << docs.rows() << " documents\n";
  }
  emit(ctx, f.out, j.dump(2), s.str());
}

}  // namespace

void add_calibrate_commands(CLI::App& app, Context& ctx) {
  {
    auto f = std::make_shared<DenseFlags>();
    auto* sub = app.add_subcommand("calibrate-dense", "Measure the blocked GEMM GFLOPS heatmap on this machine");
    sub->add_option("--m-grid", f->m_grid, "Comma-separated m (output rows) values")->capture_default_str();
    sub->add_option("--k-grid", f->k_grid, "Comma-separated k (inner dimension) values")->capture_default_str();
    sub->add_option("--n", f->n_values, "Comma-separated batch sizes")->capture_default_str();
    sub->add_option("--reps", f->reps, "Timed repetitions per cell (median is kept)")->capture_default_str();
    sub->add_option("--warmups", f->warmups, "Untimed runs before each cell")->capture_default_str();
    sub->add_option("--seed", f->seed, "Seed of the random operands")->capture_default_str();
    sub->add_option("--out", f->out, "Heatmap JSON path (default: $LTRNN_CALIBRATION_DIR/heatmap.json)");
    sub->add_option("--cost-model", f->cost_model, "Also store the heatmap in this combined cost model");
    add_config_option(sub);
    sub->callback([f, &ctx] { run_calibrate_dense(*f, ctx); });
  }
  {
    auto f = std::make_shared<SparseFlags>();
    auto* sub = app.add_subcommand("calibrate-sparse", "Derive the sparse kernel cost coefficients on this machine");
    sub->add_option("--sizes", f->sizes, "Comma-separated square sizes m = k")->capture_default_str();
    sub->add_option("--n-values", f->n_values, "Comma-separated batch sizes N")->capture_default_str();
    sub->add_option("--n-b", f->n_b, "Lanes per register block")->capture_default_str();
    sub->add_option("--reps", f->reps, "Timed repetitions per matrix")->capture_default_str();
    sub->add_option("--seed", f->seed, "Seed of the calibration matrices")->capture_default_str();
    sub->add_option("--out", f->out, "Coefficient JSON path (default: $LTRNN_CALIBRATION_DIR/sparse.json)");
    sub->add_option("--cost-model", f->cost_model, "Also store the coefficients in this combined cost model");
    add_config_option(sub);
    sub->callback([f, &ctx] { run_calibrate_sparse(*f, ctx); });
  }
  {
    auto f = std::make_shared<BenchFlags>();
    auto* sub = app.add_subcommand("benchmark", "Measure per-document scoring time (single thread)");
    sub->add_option("--model", f->model, "Neural model file, or a tree ensemble (detected from the file)")->check(CLI::ExistingFile);
    sub->add_option("--trees", f->trees, "Tree ensemble (JSON or LightGBM text)")->check(CLI::ExistingFile);
    sub->add_option("--data", f->data, "LETOR file with the documents to score")->required()->check(CLI::ExistingFile);
    sub->add_option("--engine", f->engine, "Tree scorer: auto, naive or quickscorer")->capture_default_str();
    sub->add_option("--batch", f->batch, "Documents per forward pass")->capture_default_str();
    sub->add_option("--max-docs", f->max_docs, "Only score the first documents (0 = all)")->capture_default_str();
    sub->add_option("--reps", f->reps, "Timed repetitions")->capture_default_str();
    sub->add_option("--out", f->out, "JSON report path");
    sub->add_flag("--predict", f->predict, "Compare against the cost-model prediction");
    add_cost_model_options(sub, f->cm);
    add_config_option(sub);
    sub->callback([f, &ctx] { run_benchmark(*f, ctx); });
  }
}

}  // namespace ltrnn::cli
