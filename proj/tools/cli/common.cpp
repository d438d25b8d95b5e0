#include "common.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "cli.hpp"
#include "ltrnn/error.hpp"
#include "ltrnn/metrics.hpp"

namespace ltrnn::cli {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string unquote(std::string v) {
  if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') && v.back() == v.front())
    return v.substr(1, v.size() - 2);
  return v;
}

std::vector<std::string> split_commas(const std::string& text) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(text);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) parts.push_back(cur);
  }
  return parts;
}

}  // namespace

std::vector<std::string> config_to_tokens(const std::string& text, const std::string& source) {
  std::vector<std::string> tokens;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(source, lineno, "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = unquote(trim(line.substr(eq + 1)));
    if (key.empty()) throw ParseError(source, lineno, "empty key");
    for (auto& c : key)
      if (c == '_') c = '-';
    if (value.size() >= 2 && value.front() == '[' && value.back() == ']') {
      std::string joined;
      for (const auto& p : split_commas(value.substr(1, value.size() - 2))) {
        if (!joined.empty()) joined += ',';
        joined += unquote(p);
      }
      value = joined;
    }
    if (value == "true") {
      tokens.push_back("--" + key);
    } else if (value != "false") {
      tokens.push_back("--" + key);
      tokens.push_back(value);
    }
  }
  return tokens;
}

void add_config_option(CLI::App* sub) {
  sub->add_option("--config", "Key/value file of flag defaults; explicit flags win");
}

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  for (const auto& p : split_commas(text)) {
    std::size_t pos = 0;
    long long v = 0;
    try {
      v = std::stoll(p, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != p.size() || v < 0) throw ValidationError(flag + ": '" + p + "' is not a non-negative integer");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (out.empty()) throw ValidationError(flag + ": empty list");
  return out;
}

std::vector<double> parse_double_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  for (const auto& p : split_commas(text)) {
    std::size_t pos = 0;
    double v = 0.0;
    try {
      v = std::stod(p, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != p.size()) throw ValidationError(flag + ": '" + p + "' is not a number");
    out.push_back(v);
  }
  if (out.empty()) throw ValidationError(flag + ": empty list");
  return out;
}

std::filesystem::path calibration_dir() {
  const char* env = std::getenv("LTRNN_CALIBRATION_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::current_path();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!text.empty() && text.back() != '\n') f << '\n';
}

void emit(Context& ctx, const std::string& path, const std::string& payload, const std::string& summary) {
  if (path.empty()) {
    ctx.out << payload;
    if (!payload.empty() && payload.back() != '\n') ctx.out << '\n';
    if (!summary.empty()) ctx.err << summary;
  } else {
    write_text_file(path, payload);
    ctx.out << summary;
  }
}

bool is_network_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[8] = {};
  in.read(magic, sizeof magic);
  return in.gcount() == 8 && std::string(magic, 8) == "LTRNNMDL";
}

Dataset load_dataset(const std::string& path, std::optional<std::size_t> features) {
  LoadOptions opts;
  opts.num_features = features;
  return load_ltr_file(path, opts);
}

std::vector<float> score_trees(const TreeEnsemble& ens, const Dataset& ds) {
  const Matrix docs = ds.stacked_documents();
  std::vector<double> s;
  if (ens.max_leaves() <= kMaxQsLeaves)
    s = score_quickscorer(build_qs_index(ens), docs);
  else
    s = score_naive(ens, docs);
  return {s.begin(), s.end()};
}

TeacherData load_teacher_data(const std::string& train_path, const std::string& teacher_path) {
  TeacherData d;
  d.teacher = load_ensemble(teacher_path);
  d.train = load_dataset(train_path);
  if (d.train.num_features < d.teacher.num_features) d.train = load_dataset(train_path, d.teacher.num_features);
  // Features the teacher never splits on still feed the student.
  d.teacher.num_features = d.train.num_features;
  d.train = attach_scores(std::move(d.train), score_trees(d.teacher, d.train));
  d.table = extract_midpoint_table(d.teacher, d.train);
  return d;
}

double evaluate_metric(const Dataset& ds, const std::vector<float>& scores, const std::string& metric) {
  const auto per_query = evaluate_per_query(ds, scores, MetricSpec::parse(metric));
  return mean_metric(per_query);
}

void add_cost_model_options(CLI::App* sub, CostModelFlags& f) {
  sub->add_option("--cost-model", f.cost_model, "Combined cost model JSON (heatmap + sparse coefficients)");
  sub->add_option("--heatmap", f.heatmap, "GFLOPS heatmap JSON from calibrate-dense");
  sub->add_option("--sparse-coeffs", f.sparse, "Sparse coefficients JSON from calibrate-sparse");
  sub->add_flag("--force", f.force, "Accept parts calibrated on different machines");
}

CostModel resolve_cost_model(const CostModelFlags& f, bool need_sparse) {
  CostModel cm;
  const auto dir = calibration_dir();
  if (!f.cost_model.empty()) {
    cm = load_cost_model(f.cost_model);
  } else if (f.heatmap.empty() && f.sparse.empty() && std::filesystem::exists(dir / "cm.json")) {
    cm = load_cost_model(dir / "cm.json");
  }
  if (!f.heatmap.empty())
    cm.heatmap = load_heatmap(f.heatmap);
  else if (cm.heatmap.empty() && std::filesystem::exists(dir / "heatmap.json"))
    cm.heatmap = load_heatmap(dir / "heatmap.json");
  if (!f.sparse.empty())
    cm.sparse = load_sparse_coeffs(f.sparse);
  else if (!cm.has_sparse() && std::filesystem::exists(dir / "sparse.json"))
    cm.sparse = load_sparse_coeffs(dir / "sparse.json");

  if (!cm.has_dense())
    throw ValidationError("--cost-model/--heatmap: no GFLOPS heatmap found (run calibrate-dense first)");
  cm.heatmap.validate();
  if (need_sparse && !cm.has_sparse())
    throw ValidationError("--cost-model/--sparse-coeffs: no sparse coefficients found (run calibrate-sparse first)");
  if (cm.has_sparse()) cm.validate(f.force);
  return cm;
}

void add_train_options(CLI::App* sub, TrainFlags& f, bool with_epochs) {
  if (with_epochs) sub->add_option("--epochs", f.cfg.epochs, "Training epochs")->capture_default_str();
  sub->add_option("--lr", f.cfg.lr, "Adam learning rate")->capture_default_str();
  sub->add_option("--gamma", f.cfg.gamma, "Learning-rate decay factor")->capture_default_str();
  sub->add_option("--gamma-steps", f.gamma_steps, "Comma-separated epochs at which lr *= gamma");
  sub->add_option("--batch-size", f.cfg.batch_size, "Documents per step")->capture_default_str();
  sub->add_option("--augmentation", f.cfg.augmentation_fraction, "Share of each batch drawn from the midpoint table")
      ->capture_default_str();
  sub->add_option("--dropout", f.cfg.dropout, "Dropout after the first layer")->capture_default_str();
  sub->add_option("--seed", f.cfg.seed, "Random seed")->capture_default_str();
  sub->add_option("--norm", f.norm, "Input normalization divisor: variance or std")->capture_default_str();
}

TrainConfig train_config(const TrainFlags& f) {
  TrainConfig cfg = f.cfg;
  cfg.gamma_steps.clear();
  if (!f.gamma_steps.empty()) cfg.gamma_steps = parse_size_list(f.gamma_steps, "--gamma-steps");
  cfg.validate();
  return cfg;
}

NormDivisor norm_divisor(const std::string& name) {
  if (name == "variance") return NormDivisor::kVariance;
  if (name == "std") return NormDivisor::kStdDev;
  throw ValidationError("--norm: expected 'variance' or 'std', got '" + name + "'");
}

void add_prune_options(CLI::App* sub, PruneFlags& f) {
  sub->add_option("--mode", f.mode, "Pruning rule: level or threshold")->capture_default_str();
  sub->add_option("--level", f.level, "Level mode: fraction of weights removed")->capture_default_str();
  sub->add_option("--sensitivity", f.sensitivity, "Threshold mode: threshold = sensitivity * stddev")
      ->capture_default_str();
  sub->add_option("--layers", f.layers, "Comma-separated layers to prune")->capture_default_str();
  sub->add_option("--prune-epochs", f.prune_epochs, "Epochs that re-prune at their start")->capture_default_str();
  sub->add_option("--finetune-epochs", f.finetune_epochs, "Epochs with the final mask held")->capture_default_str();
  sub->add_flag("--no-ramp", f.no_ramp, "Level mode: prune to the full level from the first epoch");
}

PruneConfig prune_config(const PruneFlags& f, const TrainFlags& t) {
  PruneConfig pc;
  if (f.mode == "level")
    pc.mode = PruneMode::kLevel;
  else if (f.mode == "threshold")
    pc.mode = PruneMode::kThreshold;
  else
    throw ValidationError("--mode: expected 'level' or 'threshold', got '" + f.mode + "'");
  pc.level_fraction = f.level;
  pc.sensitivity = f.sensitivity;
  pc.target_layers = parse_size_list(f.layers, "--layers");
  pc.prune_epochs = f.prune_epochs;
  pc.finetune_epochs = f.finetune_epochs;
  pc.level_ramp = !f.no_ramp;
  pc.gamma = t.cfg.gamma;
  if (!t.gamma_steps.empty()) pc.gamma_steps = parse_size_list(t.gamma_steps, "--gamma-steps");
  pc.validate();
  return pc;
}

std::string fmt_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

}  // namespace ltrnn::cli
