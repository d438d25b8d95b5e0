// Acceptance checks, one PASS/FAIL line each.
//   ltrnn_acceptance [--perf] [--only N]...
// Criterion 4 times real kernels and only runs with --perf or LTRNN_PERF=1.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <set>
#include <string>

#include "ltrnn/data.hpp"
#include "ltrnn/design.hpp"
#include "ltrnn/metrics.hpp"
#include "ltrnn/nn.hpp"
#include "ltrnn/pruning.hpp"
#include "ltrnn/timing.hpp"
#include "ltrnn/trees.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

namespace {

using namespace ltrnn;
namespace t = ltrnn::testing;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1. Kernel property suite.
Outcome kernels() {
  constexpr double kTol = 1e-4;
  constexpr int kCases = 200;
  Rng rng(101);
  double worst_gemm = 0.0, worst_ref = 0.0, worst_blk = 0.0;
  std::size_t split_bad = 0;
  GemmWorkspace ws;
  for (int i = 0; i < kCases; ++i) {
    const auto m = t::random_size(rng, 1, 200), k = t::random_size(rng, 1, 200), n = t::random_size(rng, 1, 200);
    const auto a = t::random_matrix(rng, m, k), b = t::random_matrix(rng, k, n);
    Matrix c(m, n);
    gemm_blocked(a, b, c, KernelParams{}, ws);
    worst_gemm = std::max(worst_gemm, max_relative_error(c, naive_matmul(a, b)));
  }
  const std::size_t ns[] = {8, 16, 32, 64};
  for (int i = 0; i < kCases; ++i) {
    const auto m = t::random_size(rng, 1, 200), k = t::random_size(rng, 1, 200);
    const auto n = ns[uniform_index(rng, 4)];
    const auto w = t::random_sparse_dense(rng, m, k, uniform(rng, 0.5, 0.999));
    const auto b = t::random_matrix(rng, k, n);
    const auto a = CsrMatrix::from_dense(w);
    const auto dense = naive_matmul(w, b);
    worst_ref = std::max(worst_ref, max_relative_error(sdmm_reference(a, b), dense));
    worst_blk = std::max(worst_blk, max_relative_error(sdmm_blocked(a, b), dense));
  }
  for (int i = 0; i < kCases; ++i) {
    const auto m = t::random_size(rng, 1, 100), k = t::random_size(rng, 1, 100);
    const auto a = CsrMatrix::from_dense(t::random_sparse_dense(rng, m, k, uniform(rng, 0.0, 0.99)));
    const auto b = t::random_matrix(rng, k, 8 * t::random_size(rng, 1, 8));
    std::vector<Matrix> parts;
    for (const auto& p : split_rows(a, t::random_size(rng, 1, m))) parts.push_back(sdmm_reference(p, b));
    if (stack_rows(parts) != sdmm_reference(a, b)) ++split_bad;
  }
  return {worst_gemm <= kTol && worst_ref <= kTol && worst_blk <= kTol && split_bad == 0,
          fmt("%d cases each; max rel err gemm %.2e, sdmm_reference %.2e, sdmm_blocked %.2e; split mismatches %zu",
              kCases, worst_gemm, worst_ref, worst_blk, split_bad)};
}

// 2. Bitvector scorer equals the naive traversal bit for bit.
Outcome quickscorer() {
  Rng rng(202);
  std::size_t mismatches = 0, docs_checked = 0;
  for (int e = 0; e < 100; ++e) {
    const std::size_t f = t::random_size(rng, 1, 20);
    const auto ens = t::random_ensemble(rng, t::random_size(rng, 1, 50), 64, f);
    const auto idx = build_qs_index(ens);
    const auto docs = t::random_docs(rng, 200, f);
    const auto qs = score_quickscorer(idx, docs);
    const auto nv = score_naive(ens, docs);
    for (std::size_t i = 0; i < docs.rows(); ++i) mismatches += qs[i] != nv[i];
    docs_checked += docs.rows();
  }
  return {mismatches == 0, fmt("100 ensembles x 200 docs (%zu scores), %zu mismatches", docs_checked, mismatches)};
}

// 3. Calibration inverts the sparse time model exactly.
Outcome sparse_closed_loop() {
  double worst = 0.0;
  const double sets[][2] = {{3.7e-10, 1.3e-10}, {1e-11, 4e-12}, {2.5e-9, 9e-10}, {5e-12, 5e-11}};
  for (const auto& s : sets) {
    SparseCoeffs truth;
    truth.L_a = s[0];
    truth.L_b = s[1];
    truth.L_c = 2.0 * s[1];
    const SdmmTimer timer = [&](const CsrMatrix& a, std::size_t n) { return predict_sparse_time(a.stats(), truth, n); };
    const auto c = calibrate_sparse(SparseCalibrationOptions{}, timer).coeffs;
    worst = std::max({worst, std::fabs(c.L_a / truth.L_a - 1.0), std::fabs(c.L_b / truth.L_b - 1.0),
                      std::fabs(c.L_c / truth.L_c - 1.0)});
  }
  return {worst <= 1e-6, fmt("4 injected coefficient sets, max relative error %.2e", worst)};
}

// 4. Real-hardware predictor accuracy.
Outcome perf_predictors() {
  const std::size_t f = 136, batch = 1000;
  const std::vector<std::string> archs{"1000x500x500x100", "200x100x100x50", "300x150x150x30", "500x100"};
  std::set<std::size_t> ms, ks{f};
  for (const auto& s : archs)
    for (const auto& shape : FfnArchitecture::parse(s, f).layer_shapes()) {
      ms.insert(shape.out);
      ks.insert(shape.in);
    }
  HeatmapOptions ho;
  ho.timing = {9, 2, 2e-3, 1};
  const auto hm = benchmark_heatmap({ms.begin(), ms.end()}, {ks.begin(), ks.end()}, {batch}, ho);
  std::string detail = "dense:";
  double worst_dense = 0.0;
  Rng rng(404);
  const auto x = t::random_matrix(rng, batch, f);
  for (const auto& s : archs) {
    const auto arch = FfnArchitecture::parse(s, f);
    const auto model = init_model(arch, 1);
    ForwardWorkspace fw;
    const double measured = time_median([&] { forward(model, x, &fw); }, {9, 2, 2e-3, 1}) / batch * 1e6;
    const double predicted = predict_dense_time(arch, batch, hm).per_doc_seconds() * 1e6;
    const double err = std::fabs(predicted - measured) / measured;
    worst_dense = std::max(worst_dense, err);
    detail += fmt(" %s %.2f/%.2f", s.c_str(), predicted, measured);
  }
  const auto coeffs = calibrate_sparse(SparseCalibrationOptions{}, make_sdmm_timer()).coeffs;
  const std::pair<std::size_t, double> cases[] = {{400, 0.995}, {400, 0.986}, {300, 0.985}, {200, 0.982},
                                                  {200, 0.971}, {100, 0.989}, {100, 0.967}, {50, 0.987}};
  const auto timer = make_sdmm_timer();
  double worst_sparse = 0.0;
  detail += "; sparse N=64:";
  for (const auto& [m, sparsity] : cases) {
    const auto w = t::random_matrix(rng, m, f);
    auto masked = w;
    const auto keep = level_prune(w.values(), sparsity);
    for (std::size_t i = 0; i < keep.size(); ++i)
      if (!keep[i]) masked.values()[i] = 0.0f;
    const auto a = CsrMatrix::from_dense(masked);
    for (const std::size_t n : {16u, 32u, 64u}) {
      const double measured = timer(a, n);
      const double predicted = predict_sparse_time(a.stats(), coeffs, n);
      worst_sparse = std::max(worst_sparse, std::fabs(predicted - measured) / measured);
      if (n == 64) detail += fmt(" %zux%zu@%.3f %.2f/%.2fus", m, f, sparsity, predicted * 1e6, measured * 1e6);
    }
  }
  detail = fmt("max rel err dense %.3f (<= 0.15), sparse %.3f (<= 0.35); ", worst_dense, worst_sparse) + detail +
           " (predicted/measured)";
  return {worst_dense <= 0.15 && worst_sparse <= 0.35, detail};
}

// 5. Backprop against central differences.
Outcome gradient_check() {
  Rng rng(505);
  const FfnArchitecture arch{3, {5, 4, 1}};
  double worst = 0.0;
  int points = 0;
  for (std::uint64_t seed = 1; points < 50; ++seed) {
    auto m = init_model(arch, seed);
    for (auto& l : m.layers) {
      for (auto& w : l.weights.values()) w *= 2.0f;
      for (auto& b : l.bias) b = static_cast<float>(uniform(rng, 0.5, 1.5));
    }
    const auto x = t::random_matrix(rng, 1, 3, -1, 1);
    std::vector<double> pre;
    t::forward_double(m, x.row(0), &pre);
    if (std::any_of(pre.begin(), pre.end(), [](double z) { return z < 0.05 || z > 5.95; })) continue;
    ++points;
    worst = std::max(worst, t::max_gradient_error(m, x.row(0), static_cast<float>(uniform(rng, -1, 1)), 1e-3));
  }
  return {worst <= 1e-3, fmt("50 points on a 5x4x1 network, max relative error %.2e", worst)};
}

struct Distilled {
  Dataset train, valid, test;
  TreeEnsemble teacher;
  AugmentationTable table;
  FfnModel student;
  TrainConfig cfg;
};

double ndcg10(const Dataset& ds, const std::vector<float>& scores) {
  return mean_metric(evaluate_per_query(ds, scores, MetricSpec::parse("ndcg@10")));
}

std::vector<float> tree_scores(const TreeEnsemble& e, const Dataset& ds) {
  const auto idx = build_qs_index(e);
  const auto s = score_quickscorer(idx, ds.stacked_documents());
  return {s.begin(), s.end()};
}

// The bundled task, distilled once and shared by criteria 6 and 7.
Distilled& bundled() {
  static Distilled d = [] {
    const std::filesystem::path dir = LTRNN_TEST_DATA_DIR;
    Distilled r;
    r.teacher = load_ensemble(dir / "teacher.json");
    const LoadOptions opt{r.teacher.num_features};
    r.train = load_ltr_file(dir / "train.txt", opt);
    r.valid = load_ltr_file(dir / "valid.txt", opt);
    r.test = load_ltr_file(dir / "test.txt", opt);
    r.train = attach_scores(r.train, tree_scores(r.teacher, r.train));
    r.table = extract_midpoint_table(r.teacher, r.train);
    r.cfg.epochs = 100;
    r.cfg.lr = 1e-3;
    r.cfg.seed = 7;
    r.student = init_model(FfnArchitecture::parse("32x16", r.train.num_features), r.cfg.seed);
    r.student.norm_stats = compute_norm_stats(r.train);
    train_distill(r.student, r.train, r.table, make_teacher_scorer(r.teacher), r.cfg);
    return r;
  }();
  return d;
}

// 6. Desk-scale distillation.
Outcome distillation() {
  auto& d = bundled();
  const double teacher = ndcg10(d.test, tree_scores(d.teacher, d.test));
  const double student = ndcg10(d.test, score_dataset(d.student, d.test));
  const std::size_t queries = d.train.queries.size() + d.valid.queries.size() + d.test.queries.size();
  return {std::fabs(student - teacher) <= 0.02,
          fmt("%zu queries x %zu features, %zu-tree teacher; test NDCG@10 teacher %.4f, 32x16x1 student %.4f "
              "(diff %+.4f, tol 0.02)",
              queries, d.train.num_features, d.teacher.trees.size(), teacher, student, student - teacher)};
}

// 7. First-layer pruning at 0.95.
Outcome pruning() {
  auto& d = bundled();
  PruneConfig pc;
  pc.level_fraction = 0.95;
  pc.prune_epochs = 5;
  pc.finetune_epochs = 10;
  std::size_t nonzero_masked = 0;
  const auto r = prune_schedule(d.student, d.train, d.table, make_teacher_scorer(d.teacher), pc, d.cfg);
  for (const auto v : r.epoch_mask_violations) nonzero_masked += v;
  const double sparsity = layer_sparsity(r.model, 0);
  const double dense = ndcg10(d.test, score_dataset(d.student, d.test));
  const double pruned = ndcg10(d.test, score_dataset(r.model, d.test));
  const bool ok = sparsity >= 0.95 && std::fabs(pruned - dense) <= 0.01 && nonzero_masked == 0 &&
                  r.epoch_mask_violations.size() == pc.prune_epochs + pc.finetune_epochs;
  return {ok, fmt("first-layer sparsity %.4f (>= 0.95); test NDCG@10 dense %.4f, pruned %.4f (diff %+.4f, tol "
                  "0.01); masked non-zeros over %zu epochs: %zu",
                  sparsity, dense, pruned, pruned - dense, r.epoch_mask_violations.size(), nonzero_masked)};
}

// 8. Threshold pruning mass and the randomization test.
Outcome statistics() {
  Rng rng(808);
  std::vector<float> w(100000);
  for (auto& v : w) v = static_cast<float>(standard_normal(rng));
  const auto tp = threshold_prune(w, 1.0);
  double masked = 0.0;
  for (const auto k : tp.keep) masked += k == 0;
  masked /= static_cast<double>(w.size());
  double worst = 0.0;
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int rep = 0; rep < 4; ++rep) {
      std::vector<double> a(n), b(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = uniform01(rng);
        b[i] = std::clamp(a[i] + uniform(rng, -0.3, 0.2), 0.0, 1.0);
      }
      const double p = fisher_randomization(t::as_per_query(a), t::as_per_query(b), kDefaultPermutations,
                                            n * 10 + static_cast<std::size_t>(rep));
      worst = std::max(worst, std::fabs(p - t::exhaustive_fisher_p(a, b)));
    }
  }
  std::vector<double> same(30);
  for (auto& v : same) v = uniform01(rng);
  const double p_same = fisher_randomization(t::as_per_query(same), t::as_per_query(same));
  return {std::fabs(masked - 0.683) <= 0.02 && worst <= 0.02 && p_same == 1.0,
          fmt("masked fraction at s=1: %.4f (0.683 +- 0.02); max |sampled - exhaustive| p over n<=12: %.4f (<= 0.02); "
              "identical runs p = %.1f",
              masked, worst, p_same)};
}

// 9. Design invariants.
Outcome design() {
  CostModel cm;
  cm.heatmap.machine = "acceptance";
  cm.heatmap.n_values = {1, 64, 1000};
  cm.heatmap.m_grid = {1, 25, 50, 100, 200, 400, 800};
  cm.heatmap.k_grid = {1, 25, 50, 100, 136, 200, 400, 800};
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t m = 0; m < 7; ++m)
      for (std::size_t k = 0; k < 8; ++k) cm.heatmap.gflops.push_back(30.0 + 12.0 * k + 3.0 * m + n);
  cm.sparse.L_a = 2e-11;
  cm.sparse.L_b = 5e-12;
  cm.sparse.L_c = 1e-11;
  cm.sparse.machine = "acceptance";

  Rng rng(909);
  std::size_t additivity_bad = 0;
  const std::size_t widths[] = {500, 400, 300, 200, 100, 50, 25};
  for (int i = 0; i < 300; ++i) {
    FfnArchitecture arch;
    arch.input_dim = t::random_size(rng, 5, 700);
    for (std::size_t d = t::random_size(rng, 1, 5); d > 0; --d) arch.widths.push_back(widths[uniform_index(rng, 7)]);
    arch.widths.push_back(1);
    const auto profile = i % 3 == 0   ? SparsityProfile::all_dense()
                         : i % 3 == 1 ? SparsityProfile::first_layer(arch, uniform(rng, 0.9, 0.999))
                                      : SparsityProfile::first_layer_free();
    const auto r = predict_network_time(arch, profile, cm, 64);
    double sum = 0.0;
    for (const auto& l : r.layers) sum += l.us_per_doc;
    additivity_bad += sum != r.total_us_per_doc;
  }
  std::vector<double> grid;
  for (int i = 0; i <= 99; ++i) grid.push_back(0.9 + 0.001 * i);
  std::size_t monotone_bad = 0;
  for (const LayerShape shape : {LayerShape{400, 136}, LayerShape{100, 136}, LayerShape{50, 700}}) {
    const auto curve = sparsity_speedup_curve(shape, cm, 64, grid);
    for (std::size_t i = 1; i < curve.size(); ++i) monotone_bad += curve[i].speedup < curve[i - 1].speedup;
  }
  SearchConfig sc;
  sc.features = 136;
  sc.widths = {500, 400, 300, 200, 100, 50, 25};
  std::size_t over_budget = 0, survivors = 0;
  for (const double budget : {0.5, 1.0, 2.0}) {
    for (const bool first_sparse : {false, true}) {
      sc.budget_us = budget;
      sc.assume_first_sparse = first_sparse;
      for (const auto& c : search_architectures(sc, cm)) {
        ++survivors;
        over_budget += c.total_us_per_doc > budget;
      }
    }
  }
  return {additivity_bad == 0 && monotone_bad == 0 && over_budget == 0 && survivors > 0,
          fmt("additivity violations %zu/300; speedup decreases %zu; survivors over budget %zu/%zu", additivity_bad,
              monotone_bad, over_budget, survivors)};
}

}  // namespace

int main(int argc, char** argv) {
  bool perf = false;
  std::set<int> only;
  if (const char* env = std::getenv("LTRNN_PERF"); env && std::strcmp(env, "1") == 0) perf = true;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--perf") == 0) {
      perf = true;
    } else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only.insert(std::atoi(argv[++i]));
    } else {
      std::fprintf(stderr, "usage: %s [--perf] [--only N]...\n", argv[0]);
      return 2;
    }
  }
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "kernel correctness", 60, kernels},
      {2, "bitvector scorer equivalence", 30, quickscorer},
      {3, "sparse predictor closed loop", 10, sparse_closed_loop},
      {4, "real-hardware predictor accuracy", 600, perf_predictors},
      {5, "gradient check", 5, gradient_check},
      {6, "desk-scale distillation", 120, distillation},
      {7, "first-layer pruning", 180, pruning},
      {8, "statistical machinery", 30, statistics},
      {9, "design invariants", 5, design},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    if (c.id == 4 && !perf) {
      std::printf("SKIP %d %s: timing-dependent; run with --perf or LTRNN_PERF=1 on an idle machine\n", c.id, c.name);
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    // Criterion 6 pays for the shared distillation; 7 reuses it.
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_s;
    const bool pass = o.pass && in_time;
    failures += !pass;
    std::printf("%s %d %s: %s [%.2fs, limit %.0fs%s]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                c.budget_s, in_time ? "" : ", over time");
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
