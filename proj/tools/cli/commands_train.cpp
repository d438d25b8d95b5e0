#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "ltrnn/error.hpp"
#include "ltrnn/metrics.hpp"

namespace ltrnn::cli {
namespace {

using json = nlohmann::json;

struct DistillFlags {
  std::string train;
  std::string valid;
  std::string teacher;
  std::string arch;
  std::string out;
  std::string report;
  std::string metric = "ndcg@10";
  TrainFlags train_flags;
};

void run_distill(const DistillFlags& f, Context& ctx) {
  const TrainConfig cfg = train_config(f.train_flags);
  const NormDivisor divisor = norm_divisor(f.train_flags.norm);
  MetricSpec::parse(f.metric);
  const TeacherData d = load_teacher_data(f.train, f.teacher);
  FfnModel model = init_model(FfnArchitecture::parse(f.arch, d.train.num_features), cfg.seed);
  model.dropout = cfg.dropout;
  model.seed = cfg.seed;
  model.norm_stats = compute_norm_stats(d.train, divisor);
  const auto res = train_distill(model, d.train, d.table, make_teacher_scorer(d.teacher), cfg);
  save_model(f.out, model);

  json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = "distill";
  j["arch"] = model.arch.to_string();
  j["features"] = model.input_dim();
  j["parameters"] = model.parameter_count();
  j["epochs"] = cfg.epochs;
  j["epoch_loss"] = res.epoch_loss;
  j["model"] = f.out;
  std::ostringstream s;
  s << "distilled " << model.arch.to_string() << " (" << model.parameter_count() << " parameters) for " << cfg.epochs
    << " epochs, final loss " << fmt_double(res.epoch_loss.empty() ? 0.0 : res.epoch_loss.back(), 5) << '\n';
  if (!f.valid.empty()) {
    const Dataset valid = load_dataset(f.valid, model.input_dim());
    const double student = evaluate_metric(valid, score_dataset(model, valid), f.metric);
    const double teacher = evaluate_metric(valid, score_trees(d.teacher, valid), f.metric);
    j["validation"] = {{"metric", f.metric}, {"student", student}, {"teacher", teacher}};
    s << "validation " << f.metric << ": student " << fmt_double(student, 4) << ", teacher " << fmt_double(teacher, 4)
      << '\n';
  }
  s << "model written to " << f.out << '\n';
  emit(ctx, f.report, j.dump(2), s.str());
}

struct PruneCmdFlags {
  std::string model;
  std::string train;
  std::string valid;
  std::string teacher;
  std::string out;
  std::string report;
  std::string metric = "ndcg@10";
  PruneFlags prune;
  TrainFlags train_flags;
};

void run_prune(const PruneCmdFlags& f, Context& ctx) {
  const TrainConfig cfg = train_config(f.train_flags);
  const PruneConfig pc = prune_config(f.prune, f.train_flags);
  MetricSpec::parse(f.metric);
  const FfnModel model = load_model(f.model);
  const TeacherData d = load_teacher_data(f.train, f.teacher);
  if (d.train.num_features != model.input_dim())
    throw ValidationError("--train has " + std::to_string(d.train.num_features) + " features, model expects " +
                          std::to_string(model.input_dim()));
  const auto res = prune_schedule(model, d.train, d.table, make_teacher_scorer(d.teacher), pc, cfg);
  save_model(f.out, res.model);

  json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = "prune";
  j["mode"] = f.prune.mode;
  j["target_layers"] = pc.target_layers;
  j["layer_sparsity"] = res.layer_sparsity;
  j["layer_thresholds"] = res.layer_thresholds;
  j["warnings"] = res.warnings;
  j["epoch_mask_violations"] = res.epoch_mask_violations;
  j["epoch_loss"] = res.train.epoch_loss;
  j["model"] = f.out;
  std::ostringstream s;
  for (std::size_t i = 0; i < pc.target_layers.size(); ++i)
    s << "layer " << pc.target_layers[i] << ": sparsity " << fmt_double(res.layer_sparsity[i], 4) << '\n';
  for (const auto& w : res.warnings) s << "warning: " << w << '\n';
  if (!f.valid.empty()) {
    const Dataset valid = load_dataset(f.valid, model.input_dim());
    const double before = evaluate_metric(valid, score_dataset(model, valid), f.metric);
    const double after = evaluate_metric(valid, score_dataset(res.model, valid), f.metric);
    j["validation"] = {{"metric", f.metric}, {"dense", before}, {"pruned", after}};
    s << "validation " << f.metric << ": dense " << fmt_double(before, 4) << ", pruned " << fmt_double(after, 4)
      << '\n';
  }
  s << "model written to " << f.out << '\n';
  emit(ctx, f.report, j.dump(2), s.str());
}

struct SensitivityFlags {
  std::string model;
  std::string train;
  std::string valid;
  std::string teacher;
  std::string mode = "static";
  std::string grid = "0.5,0.7,0.9,0.95,0.99";
  std::string layers;
  std::size_t retrain_epochs = 1;
  std::string metric = "ndcg@10";
  std::string out;
  TrainFlags train_flags;
};

void run_sensitivity(const SensitivityFlags& f, Context& ctx) {
  SensitivityConfig sc;
  if (f.mode == "static")
    sc.mode = SensitivityMode::kStatic;
  else if (f.mode == "dynamic")
    sc.mode = SensitivityMode::kDynamic;
  else
    throw ValidationError("--mode: expected static or dynamic, got '" + f.mode + "'");
  sc.grid = parse_double_list(f.grid, "--grid");
  if (!f.layers.empty()) sc.layers = parse_size_list(f.layers, "--layers");
  sc.retrain_epochs = f.retrain_epochs;
  sc.train = train_config(f.train_flags);
  sc.metric = MetricSpec::parse(f.metric);
  const FfnModel model = load_model(f.model);
  const Dataset valid = load_dataset(f.valid, model.input_dim());
  TeacherData d;
  if (sc.mode == SensitivityMode::kDynamic) {
    if (f.train.empty() || f.teacher.empty()) throw ValidationError("dynamic mode needs --train and --teacher");
    d = load_teacher_data(f.train, f.teacher);
  }
  const auto teacher = make_teacher_scorer(d.teacher);
  const auto rep = sensitivity_analysis(model, d.train.queries.empty() ? valid : d.train, valid, d.table, teacher, sc);

  std::ostringstream c;
  c << "# schema_version=" << kSchemaVersion << '\n';
  c << "# mode=" << f.mode << " baseline=" << rep.baseline << '\n';
  c << "layer,sparsity,achieved_sparsity," << rep.metric << '\n';
  for (const auto& cell : rep.cells)
    c << cell.layer << ',' << cell.sparsity << ',' << cell.achieved_sparsity << ',' << cell.metric << '\n';
  std::ostringstream s;
  s << f.mode << " sensitivity, baseline " << rep.metric << " " << fmt_double(rep.baseline, 4) << '\n';
  for (const auto& cell : rep.cells)
    s << "  layer " << cell.layer << " @ " << cell.sparsity << ": " << fmt_double(cell.metric, 4) << '\n';
  emit(ctx, f.out, c.str(), s.str());
}

}  // namespace

void add_train_commands(CLI::App& app, Context& ctx) {
  {
    auto f = std::make_shared<DistillFlags>();
    auto* sub = app.add_subcommand("distill", "Train a student network on teacher scores");
    sub->add_option("--train", f->train, "Training LETOR file")->required()->check(CLI::ExistingFile);
    sub->add_option("--valid", f->valid, "Validation LETOR file for the summary")->check(CLI::ExistingFile);
    sub->add_option("--teacher", f->teacher, "Tree ensemble (JSON or LightGBM text)")->required()->check(
        CLI::ExistingFile);
    sub->add_option("--arch", f->arch, "Hidden widths, e.g. 32x16")->required();
    sub->add_option("--out", f->out, "Model file to write")->required();
    sub->add_option("--report", f->report, "JSON training report path");
    sub->add_option("--metric", f->metric, "Validation metric")->capture_default_str();
    add_train_options(sub, f->train_flags);
    add_config_option(sub);
    sub->callback([f, &ctx] { run_distill(*f, ctx); });
  }
  {
    auto f = std::make_shared<PruneCmdFlags>();
    auto* sub = app.add_subcommand("prune", "Prune and fine-tune a distilled network");
    sub->add_option("--model", f->model, "Model file to prune")->required()->check(CLI::ExistingFile);
    sub->add_option("--train", f->train, "Training LETOR file")->required()->check(CLI::ExistingFile);
    sub->add_option("--valid", f->valid, "Validation LETOR file for the summary")->check(CLI::ExistingFile);
    sub->add_option("--teacher", f->teacher, "Tree ensemble (JSON or LightGBM text)")->required()->check(
        CLI::ExistingFile);
    sub->add_option("--out", f->out, "Pruned model file to write")->required();
    sub->add_option("--report", f->report, "JSON pruning report path");
    sub->add_option("--metric", f->metric, "Validation metric")->capture_default_str();
    add_prune_options(sub, f->prune);
    add_train_options(sub, f->train_flags, false);
    add_config_option(sub);
    sub->callback([f, &ctx] { run_prune(*f, ctx); });
  }
  {
    auto f = std::make_shared<SensitivityFlags>();
    auto* sub = app.add_subcommand("sensitivity", "Metric after pruning each layer alone at several sparsities");
    sub->add_option("--model", f->model, "Model file")->required()->check(CLI::ExistingFile);
    sub->add_option("--valid", f->valid, "Validation LETOR file")->required()->check(CLI::ExistingFile);
    sub->add_option("--train", f->train, "Training LETOR file (dynamic mode)")->check(CLI::ExistingFile);
    sub->add_option("--teacher", f->teacher, "Tree ensemble (dynamic mode)")->check(CLI::ExistingFile);
    sub->add_option("--mode", f->mode, "static (no retraining) or dynamic")->capture_default_str();
    sub->add_option("--grid", f->grid, "Comma-separated sparsities")->capture_default_str();
    sub->add_option("--layers", f->layers, "Comma-separated layers (default: all)");
    sub->add_option("--retrain-epochs", f->retrain_epochs, "Dynamic mode fine-tuning epochs")->capture_default_str();
    sub->add_option("--metric", f->metric, "Metric to report")->capture_default_str();
    sub->add_option("--out", f->out, "CSV path");
    add_train_options(sub, f->train_flags, false);
    add_config_option(sub);
    sub->callback([f, &ctx] { run_sensitivity(*f, ctx); });
  }
}

}  // namespace ltrnn::cli
