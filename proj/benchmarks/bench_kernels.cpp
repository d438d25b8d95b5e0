#include <benchmark/benchmark.h>

#include "ltrnn/dense_kernel.hpp"
#include "ltrnn/nn.hpp"
#include "ltrnn/pruning.hpp"
#include "ltrnn/rng.hpp"
#include "ltrnn/sparse_kernel.hpp"
#include "ltrnn/synthetic.hpp"
#include "ltrnn/trees.hpp"

namespace {

using namespace ltrnn;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (auto& v : m.values()) v = static_cast<float>(uniform(rng, -1.0, 1.0));
  return m;
}

// args: m, k, n
void BM_GemmBlocked(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0)), k = static_cast<std::size_t>(st.range(1)),
             n = static_cast<std::size_t>(st.range(2));
  const auto a = random_matrix(m, k, 1), b = random_matrix(k, n, 2);
  Matrix c(m, n);
  GemmWorkspace ws;
  for (auto _ : st) {
    gemm_blocked(a, b, c, KernelParams{}, ws);
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["GFLOPS"] = benchmark::Counter(2.0 * m * k * n, benchmark::Counter::kIsIterationInvariantRate,
                                             benchmark::Counter::kIs1000);
}
BENCHMARK(BM_GemmBlocked)->Args({100, 136, 1000})->Args({500, 136, 1000})->Args({500, 500, 1000})->Args({50, 100, 64});

void BM_GemmNaive(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0)), k = static_cast<std::size_t>(st.range(1)),
             n = static_cast<std::size_t>(st.range(2));
  const auto a = random_matrix(m, k, 1), b = random_matrix(k, n, 2);
  for (auto _ : st) benchmark::DoNotOptimize(naive_matmul(a, b));
}
BENCHMARK(BM_GemmNaive)->Args({100, 136, 1000})->Args({50, 100, 64});

// args: m, sparsity in per mille, n; k fixed at 136
void BM_Sdmm(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0));
  const double sparsity = static_cast<double>(st.range(1)) / 1000.0;
  const auto n = static_cast<std::size_t>(st.range(2));
  auto w = random_matrix(m, 136, 3);
  const auto keep = level_prune(w.values(), sparsity);
  for (std::size_t i = 0; i < keep.size(); ++i)
    if (!keep[i]) w.values()[i] = 0.0f;
  const auto a = CsrMatrix::from_dense(w);
  const auto rows = active_rows(a);
  const auto b = random_matrix(136, n, 4);
  Matrix c(m, n);
  for (auto _ : st) {
    sdmm_blocked(a, rows, b.data(), n, n, c.data(), n);
    benchmark::DoNotOptimize(c.data());
  }
  st.counters["nnz"] = static_cast<double>(a.nnz());
}
BENCHMARK(BM_Sdmm)
    ->Args({400, 995, 64})
    ->Args({400, 986, 64})
    ->Args({200, 971, 64})
    ->Args({100, 989, 16})
    ->Args({100, 989, 64})
    ->Args({50, 987, 32});

// Same layer, dense GEMM, for the break-even comparison.
void BM_SdmmDenseBaseline(benchmark::State& st) {
  const auto m = static_cast<std::size_t>(st.range(0)), n = static_cast<std::size_t>(st.range(1));
  const auto a = random_matrix(m, 136, 3), b = random_matrix(136, n, 4);
  Matrix c(m, n);
  GemmWorkspace ws;
  for (auto _ : st) {
    gemm_blocked(a, b, c, KernelParams{}, ws);
    benchmark::DoNotOptimize(c.data());
  }
}
BENCHMARK(BM_SdmmDenseBaseline)->Args({400, 64})->Args({100, 64});

struct Ensembles {
  TreeEnsemble small, large;
  Matrix docs;
};

const Ensembles& ensembles() {
  static const Ensembles e = [] {
    SyntheticSpec spec;
    spec.queries = 100;
    auto task = make_synthetic_task(spec);
    Ensembles r;
    r.small = task.teacher;
    r.large = fit_regression_ensemble(task.split.train, 300, 6, 0.1, 11);
    r.docs = task.split.test.stacked_documents();
    return r;
  }();
  return e;
}

// arg 0: 20 trees of depth 4, arg 1: 300 trees of depth 6
void BM_QuickScorer(benchmark::State& st) {
  const auto& e = ensembles();
  const auto idx = build_qs_index(st.range(0) ? e.large : e.small);
  for (auto _ : st) benchmark::DoNotOptimize(score_quickscorer(idx, e.docs));
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * e.docs.rows()));
}
BENCHMARK(BM_QuickScorer)->Arg(0)->Arg(1);

void BM_NaiveTraversal(benchmark::State& st) {
  const auto& e = ensembles();
  const auto& ens = st.range(0) ? e.large : e.small;
  for (auto _ : st) benchmark::DoNotOptimize(score_naive(ens, e.docs));
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * e.docs.rows()));
}
BENCHMARK(BM_NaiveTraversal)->Arg(0)->Arg(1);

// arg 0: dense, arg 1: first layer pruned to 0.95 and stored sparse
void BM_Forward(benchmark::State& st) {
  auto model = init_model(FfnArchitecture::parse("200x100x100x50", 136), 1);
  if (st.range(0)) {
    PruneMask mask;
    mask.keep.resize(model.layers.size());
    mask.keep[0] = level_prune(model.layers[0].weights.values(), 0.95);
    apply_mask(model, mask);
    model.make_sparse(0);
  }
  const auto x = random_matrix(1000, 136, 5);
  ForwardWorkspace ws;
  for (auto _ : st) benchmark::DoNotOptimize(forward(model, x, &ws));
  st.SetItemsProcessed(static_cast<std::int64_t>(st.iterations() * x.rows()));
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
