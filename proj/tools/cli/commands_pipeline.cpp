#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "ltrnn/error.hpp"
#include "ltrnn/metrics.hpp"

namespace ltrnn::cli {
namespace {

using json = nlohmann::json;

struct PipelineFlags {
  std::string train;
  std::string valid;
  std::string test;
  std::string teacher;
  std::string arch = "32x16";
  std::string out;
  std::string metrics = "ndcg@10,ndcg,map";
  std::size_t permutations = kDefaultPermutations;
  std::size_t batch = 1000;
  TrainFlags train_flags;
  PruneFlags prune;
  CostModelFlags cm;

  PipelineFlags() {
    train_flags.cfg.epochs = 100;
    prune.finetune_epochs = 10;
  }
};

std::string score_text(const std::vector<float>& scores) {
  std::ostringstream o;
  char buf[32];
  for (const float v : scores) {
    std::snprintf(buf, sizeof buf, "%.9g\n", static_cast<double>(v));
    o << buf;
  }
  return o.str();
}

void run_pipeline(const PipelineFlags& f, Context& ctx) {
  const TrainConfig cfg = train_config(f.train_flags);
  const PruneConfig pc = prune_config(f.prune, f.train_flags);
  const NormDivisor divisor = norm_divisor(f.train_flags.norm);
  std::vector<MetricSpec> specs;
  {
    std::istringstream in(f.metrics);
    std::string part;
    while (std::getline(in, part, ','))
      if (!part.empty()) specs.push_back(MetricSpec::parse(part));
    if (specs.empty()) throw ValidationError("--metrics: empty list");
  }
  const bool with_cost = !f.cm.cost_model.empty() || !f.cm.heatmap.empty() || !f.cm.sparse.empty();
  CostModel cm;
  if (with_cost) cm = resolve_cost_model(f.cm, true);

  const std::filesystem::path dir(f.out);
  std::filesystem::create_directories(dir / "scores");
  std::ostringstream s;

  const TeacherData d = load_teacher_data(f.train, f.teacher);
  const auto teacher = make_teacher_scorer(d.teacher);
  const std::size_t nf = d.train.num_features;
  const Dataset valid = load_dataset(f.valid, nf);
  const Dataset test = load_dataset(f.test, nf);

  // distill
  FfnModel student = init_model(FfnArchitecture::parse(f.arch, nf), cfg.seed);
  student.dropout = cfg.dropout;
  student.seed = cfg.seed;
  student.norm_stats = compute_norm_stats(d.train, divisor);
  const auto dres = train_distill(student, d.train, d.table, teacher, cfg);
  save_model(dir / "student.bin", student);
  s << "distilled " << student.arch.to_string() << " for " << cfg.epochs << " epochs\n";

  // prune
  const auto pres = prune_schedule(student, d.train, d.table, teacher, pc, cfg);
  save_model(dir / "pruned.bin", pres.model);
  s << "pruned layers";
  for (std::size_t i = 0; i < pc.target_layers.size(); ++i)
    s << ' ' << pc.target_layers[i] << " (" << fmt_double(pres.layer_sparsity[i], 4) << ')';
  s << '\n';

  // score and evaluate
  struct Row {
    std::string name;
    std::vector<float> test_scores;
    std::vector<float> valid_scores;
    std::vector<std::vector<PerQueryMetric>> per;
    std::optional<double> us_per_doc;
  };
  std::vector<Row> rows(3);
  rows[0].name = "teacher";
  rows[0].test_scores = score_trees(d.teacher, test);
  rows[0].valid_scores = score_trees(d.teacher, valid);
  rows[1].name = "student";
  rows[1].test_scores = score_dataset(student, test);
  rows[1].valid_scores = score_dataset(student, valid);
  rows[2].name = "pruned";
  rows[2].test_scores = score_dataset(pres.model, test);
  rows[2].valid_scores = score_dataset(pres.model, valid);
  if (with_cost) {
    rows[1].us_per_doc = predict_network_time(student.arch, {}, cm, f.batch).total_us_per_doc;
    rows[2].us_per_doc =
        predict_network_time(pres.model.arch, SparsityProfile::from_model(pres.model), cm, f.batch).total_us_per_doc;
  }
  for (auto& r : rows) {
    write_text_file(dir / "scores" / (r.name + "_test.txt"), score_text(r.test_scores));
    for (const auto& spec : specs) r.per.push_back(evaluate_per_query(test, r.test_scores, spec));
  }

  std::ostringstream csv;
  csv << "# schema_version=" << kSchemaVersion << '\n' << "model";
  for (const auto& spec : specs) csv << ',' << spec.name();
  csv << ",valid_" << specs[0].name() << ",p_vs_teacher";
  if (with_cost) csv << ",predicted_us_per_doc";
  csv << '\n';
  json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = "pipeline";
  j["seed"] = cfg.seed;
  j["arch"] = student.arch.to_string();
  j["features"] = nf;
  j["epochs"] = cfg.epochs;
  j["prune"] = {{"mode", f.prune.mode},
                {"level", pc.level_fraction},
                {"sensitivity", pc.sensitivity},
                {"target_layers", pc.target_layers},
                {"prune_epochs", pc.prune_epochs},
                {"finetune_epochs", pc.finetune_epochs},
                {"layer_sparsity", pres.layer_sparsity},
                {"warnings", pres.warnings},
                {"epoch_mask_violations", pres.epoch_mask_violations}};
  j["distill_loss"] = dres.epoch_loss;
  j["prune_loss"] = pres.train.epoch_loss;
  json models = json::array();
  std::ostringstream tradeoff;
  tradeoff << "label,time_us,quality\n";
  for (const auto& r : rows) {
    json m;
    m["name"] = r.name;
    csv << r.name;
    for (std::size_t i = 0; i < specs.size(); ++i) {
      const double v = mean_metric(r.per[i]);
      m[specs[i].name()] = v;
      csv << ',' << fmt_double(v, 6);
    }
    const double v_valid = evaluate_metric(valid, r.valid_scores, specs[0].name());
    m["valid_" + specs[0].name()] = v_valid;
    csv << ',' << fmt_double(v_valid, 6);
    if (r.name == "teacher") {
      csv << ',';
    } else {
      const double p = fisher_randomization(r.per[0], rows[0].per[0], f.permutations, cfg.seed);
      m["p_vs_teacher"] = p;
      csv << ',' << fmt_double(p, 4);
    }
    if (with_cost) {
      csv << ',';
      if (r.us_per_doc) {
        csv << fmt_double(*r.us_per_doc, 6);
        m["predicted_us_per_doc"] = *r.us_per_doc;
        tradeoff << r.name << ',' << *r.us_per_doc << ',' << mean_metric(r.per[0]) << '\n';
      }
    }
    csv << '\n';
    models.push_back(m);
    s << "  " << r.name << ": test " << specs[0].name() << ' ' << fmt_double(mean_metric(r.per[0]), 4) << '\n';
  }
  j["models"] = models;
  write_text_file(dir / "metrics.csv", csv.str());
  write_text_file(dir / "summary.json", j.dump(2));
  if (with_cost) write_text_file(dir / "tradeoff.csv", tradeoff.str());
  s << "artifacts written to " << dir.string() << '\n';
  ctx.out << s.str();
}

}  // namespace

void add_pipeline_command(CLI::App& app, Context& ctx) {
  auto f = std::make_shared<PipelineFlags>();
  auto* sub = app.add_subcommand("pipeline", "Distill, prune, score and evaluate against the tree teacher");
  sub->add_option("--train", f->train, "Training LETOR file")->required()->check(CLI::ExistingFile);
  sub->add_option("--valid", f->valid, "Validation LETOR file")->required()->check(CLI::ExistingFile);
  sub->add_option("--test", f->test, "Test LETOR file")->required()->check(CLI::ExistingFile);
  sub->add_option("--teacher", f->teacher, "Tree ensemble (JSON or LightGBM text)")->required()->check(
      CLI::ExistingFile);
  sub->add_option("--arch", f->arch, "Student hidden widths")->capture_default_str();
  sub->add_option("--out", f->out, "Output directory")->required();
  sub->add_option("--metrics", f->metrics, "Comma-separated test metrics; the first drives the significance test")
      ->capture_default_str();
  sub->add_option("--permutations", f->permutations, "Randomization test samples")->capture_default_str();
  sub->add_option("--batch", f->batch, "Batch size for time predictions")->capture_default_str();
  add_train_options(sub, f->train_flags);
  add_prune_options(sub, f->prune);
  add_cost_model_options(sub, f->cm);
  add_config_option(sub);
  sub->callback([f, &ctx] { run_pipeline(*f, ctx); });
}

}  // namespace ltrnn::cli
