#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "ltrnn/error.hpp"
#include "ltrnn/metrics.hpp"

namespace ltrnn::cli {
namespace {

using json = nlohmann::json;

struct ScoreFlags {
  std::string model;
  std::string trees;
  std::string data;
  std::string engine = "auto";
  std::string out;
};

void run_score(ScoreFlags f, Context& ctx) {
  if (!f.model.empty() && f.trees.empty() && !is_network_model(f.model)) std::swap(f.model, f.trees);
  if (f.model.empty() == f.trees.empty()) throw ValidationError("score needs exactly one of --model or --trees");
  std::vector<float> scores;
  std::string what;
  if (!f.model.empty()) {
    const FfnModel model = load_model(f.model);
    const Dataset ds = load_dataset(f.data, model.input_dim());
    scores = score_dataset(model, ds);
    what = "network " + model.arch.to_string();
  } else {
    TreeEnsemble ens = load_ensemble(f.trees);
    Dataset ds = load_dataset(f.data);
    if (ds.num_features < ens.num_features) ds = load_dataset(f.data, ens.num_features);
    ens.num_features = ds.num_features;
    const Matrix docs = ds.stacked_documents();
    std::string engine = f.engine;
    if (engine == "auto") engine = ens.max_leaves() <= kMaxQsLeaves ? "quickscorer" : "naive";
    std::vector<double> s;
    if (engine == "quickscorer")
      s = score_quickscorer(build_qs_index(ens), docs);
    else if (engine == "naive")
      s = score_naive(ens, docs);
    else
      throw ValidationError("--engine: expected auto, naive or quickscorer, got '" + f.engine + "'");
    scores.assign(s.begin(), s.end());
    what = std::to_string(ens.trees.size()) + " trees (" + engine + ")";
  }
  std::ostringstream payload;
  char buf[32];
  for (const float v : scores) {
    std::snprintf(buf, sizeof buf, "%.9g\n", static_cast<double>(v));
    payload << buf;
  }
  emit(ctx, f.out, payload.str(), "scored " + std::to_string(scores.size()) + " documents with " + what + "\n");
}

struct EvaluateFlags {
  std::string data;
  std::string scores;
  std::string metrics = "ndcg@10,ndcg,map";
  std::string per_query;
  std::string out;
  int map_threshold = 1;
};

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> names;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ','))
    if (!part.empty()) names.push_back(part);
  if (names.empty()) throw ValidationError("--metrics: empty list");
  return names;
}

std::vector<float> load_scores_for(const Dataset& ds, const std::string& path, const std::string& flag) {
  auto s = load_score_file(path);
  if (s.size() != ds.num_documents())
    throw ValidationError(flag + ": " + std::to_string(s.size()) + " scores for " +
                          std::to_string(ds.num_documents()) + " documents");
  return s;
}

void run_evaluate(const EvaluateFlags& f, Context& ctx) {
  const Dataset ds = load_dataset(f.data);
  const auto scores = load_scores_for(ds, f.scores, "--scores");
  std::vector<MetricSpec> specs;
  for (const auto& n : split_names(f.metrics)) {
    specs.push_back(MetricSpec::parse(n));
    specs.back().relevance_threshold = f.map_threshold;
  }
  std::ostringstream c, s, pq;
  c << "# schema_version=" << kSchemaVersion << '\n' << "metric,value\n";
  std::vector<std::vector<PerQueryMetric>> per;
  for (const auto& spec : specs) {
    per.push_back(evaluate_per_query(ds, scores, spec));
    const double v = mean_metric(per.back());
    c << spec.name() << ',' << fmt_double(v, 6) << '\n';
    s << spec.name() << " = " << fmt_double(v, 4) << '\n';
  }
  if (!f.per_query.empty()) {
    pq << "# schema_version=" << kSchemaVersion << '\n' << "qid";
    for (const auto& spec : specs) pq << ',' << spec.name();
    pq << '\n';
    for (std::size_t q = 0; q < ds.queries.size(); ++q) {
      pq << ds.queries[q].query_id;
      for (const auto& p : per) pq << ',' << fmt_double(p[q].value, 6);
      pq << '\n';
    }
    write_text_file(f.per_query, pq.str());
  }
  emit(ctx, f.out, c.str(), s.str());
}

struct SigtestFlags {
  std::string data;
  std::string scores_a;
  std::string scores_b;
  std::string metric = "ndcg@10";
  std::size_t permutations = kDefaultPermutations;
  std::uint64_t seed = 0;
  std::string out;
};

void run_sigtest(const SigtestFlags& f, Context& ctx) {
  const Dataset ds = load_dataset(f.data);
  const MetricSpec spec = MetricSpec::parse(f.metric);
  const auto a = evaluate_per_query(ds, load_scores_for(ds, f.scores_a, "--scores-a"), spec);
  const auto b = evaluate_per_query(ds, load_scores_for(ds, f.scores_b, "--scores-b"), spec);
  const double p = fisher_randomization(a, b, f.permutations, f.seed);
  json j;
  j["schema_version"] = kSchemaVersion;
  j["metric"] = spec.name();
  j["queries"] = a.size();
  j["mean_a"] = mean_metric(a);
  j["mean_b"] = mean_metric(b);
  j["permutations"] = f.permutations;
  j["seed"] = f.seed;
  j["p_value"] = p;
  std::ostringstream s;
  s << spec.name() << ": A " << fmt_double(mean_metric(a), 4) << " vs B " << fmt_double(mean_metric(b), 4)
    << ", p = " << fmt_double(p, 4) << " over " << a.size() << " queries\n";
  emit(ctx, f.out, j.dump(2), s.str());
}

}  // namespace

void add_eval_commands(CLI::App& app, Context& ctx) {
  {
    auto f = std::make_shared<ScoreFlags>();
    auto* sub = app.add_subcommand("score", "Score documents with a network or a tree ensemble");
    sub->add_option("--model", f->model, "Neural model file, or a tree ensemble (detected from the file)")->check(CLI::ExistingFile);
    sub->add_option("--trees", f->trees, "Tree ensemble (JSON or LightGBM text)")->check(CLI::ExistingFile);
    sub->add_option("--data", f->data, "LETOR file")->required()->check(CLI::ExistingFile);
    sub->add_option("--engine", f->engine, "Tree scorer: auto, naive or quickscorer")->capture_default_str();
    sub->add_option("--out", f->out, "Score file, one value per line");
    add_config_option(sub);
    sub->callback([f, &ctx] { run_score(*f, ctx); });
  }
  {
    auto f = std::make_shared<EvaluateFlags>();
    auto* sub = app.add_subcommand("evaluate", "Ranking metrics of a score file");
    sub->add_option("--data,--qrels", f->data, "LETOR file with the labels")->required()->check(CLI::ExistingFile);
    sub->add_option("--scores,--run", f->scores, "Score file, one value per document")->required()->check(
        CLI::ExistingFile);
    sub->add_option("--metrics,--metric", f->metrics, "Comma-separated metrics: ndcg@K, ndcg, map")
        ->capture_default_str();
    sub->add_option("--map-threshold", f->map_threshold, "Lowest grade counted relevant by map")
        ->capture_default_str();
    sub->add_option("--per-query", f->per_query, "Also write per-query values to this CSV");
    sub->add_option("--out", f->out, "CSV path");
    add_config_option(sub);
    sub->callback([f, &ctx] { run_evaluate(*f, ctx); });
  }
  {
    auto f = std::make_shared<SigtestFlags>();
    auto* sub = app.add_subcommand("sigtest", "Paired randomization test between two score files");
    sub->add_option("--data", f->data, "LETOR file with the labels")->required()->check(CLI::ExistingFile);
    sub->add_option("--scores-a", f->scores_a, "First score file")->required()->check(CLI::ExistingFile);
    sub->add_option("--scores-b", f->scores_b, "Second score file")->required()->check(CLI::ExistingFile);
    sub->add_option("--metric", f->metric, "Per-query metric")->capture_default_str();
    sub->add_option("--permutations", f->permutations, "Sampled sign flips")->capture_default_str();
    sub->add_option("--seed", f->seed, "Sampling seed")->capture_default_str();
    sub->add_option("--out", f->out, "JSON report path");
    add_config_option(sub);
    sub->callback([f, &ctx] { run_sigtest(*f, ctx); });
  }
}

}  // namespace ltrnn::cli
