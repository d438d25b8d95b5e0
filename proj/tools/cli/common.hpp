#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ltrnn/data.hpp"
#include "ltrnn/design.hpp"
#include "ltrnn/nn.hpp"
#include "ltrnn/pruning.hpp"
#include "ltrnn/trees.hpp"

namespace ltrnn::cli {

inline constexpr int kSchemaVersion = 1;

struct Context {
  std::ostream& out;
  std::ostream& err;
};

void add_calibrate_commands(CLI::App& app, Context& ctx);
void add_design_commands(CLI::App& app, Context& ctx);
void add_train_commands(CLI::App& app, Context& ctx);
void add_eval_commands(CLI::App& app, Context& ctx);
void add_pipeline_command(CLI::App& app, Context& ctx);

// Every subcommand accepts --config; its tokens are spliced in before parsing.
void add_config_option(CLI::App* sub);

std::vector<std::size_t> parse_size_list(const std::string& text, const std::string& flag);
std::vector<double> parse_double_list(const std::string& text, const std::string& flag);

// $LTRNN_CALIBRATION_DIR, or the working directory.
std::filesystem::path calibration_dir();

// Machine-readable payload goes to `path` when given (summary to out),
// otherwise to out (summary to err).
void emit(Context& ctx, const std::string& path, const std::string& payload, const std::string& summary);
void write_text_file(const std::filesystem::path& path, const std::string& text);

// True for files written by save_model; anything else is treated as a tree ensemble.
bool is_network_model(const std::string& path);

Dataset load_dataset(const std::string& path, std::optional<std::size_t> features = std::nullopt);
// Bitvector scoring when every tree fits, naive traversal otherwise.
std::vector<float> score_trees(const TreeEnsemble& ens, const Dataset& ds);

// Training split with teacher scores attached, the teacher and its midpoint table.
struct TeacherData {
  Dataset train;
  TreeEnsemble teacher;
  AugmentationTable table;
};
TeacherData load_teacher_data(const std::string& train_path, const std::string& teacher_path);
double evaluate_metric(const Dataset& ds, const std::vector<float>& scores, const std::string& metric);

struct CostModelFlags {
  std::string cost_model;
  std::string heatmap;
  std::string sparse;
  bool force = false;
};
void add_cost_model_options(CLI::App* sub, CostModelFlags& f);
// Explicit files first, then cm.json / heatmap.json / sparse.json in the
// calibration directory.
CostModel resolve_cost_model(const CostModelFlags& f, bool need_sparse);

struct TrainFlags {
  TrainConfig cfg;
  std::string gamma_steps;
  std::string norm = "variance";
};
void add_train_options(CLI::App* sub, TrainFlags& f, bool with_epochs = true);
TrainConfig train_config(const TrainFlags& f);
NormDivisor norm_divisor(const std::string& name);

struct PruneFlags {
  std::string mode = "level";
  double level = 0.95;
  double sensitivity = 1.0;
  std::string layers = "0";
  std::size_t prune_epochs = 5;
  std::size_t finetune_epochs = 5;
  bool no_ramp = false;
};
void add_prune_options(CLI::App* sub, PruneFlags& f);
PruneConfig prune_config(const PruneFlags& f, const TrainFlags& t);

std::string fmt_double(double v, int precision = 6);

}  // namespace ltrnn::cli
