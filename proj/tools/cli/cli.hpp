#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ltrnn::cli {

// Runs one `ltrnn` subcommand. Returns 0 on success, 2 on bad input (flags,
// files, shapes) and 1 on runtime failures.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Top-level subcommand names, and the long flags of one subcommand path such
// as "predict" or "plot-data heatmap".
std::vector<std::string> subcommand_names();
std::vector<std::string> subcommand_flags(const std::string& path);

// key = value lines (TOML-like; '#' comments and [section] headers ignored)
// turned into flag tokens. `true` becomes a bare flag, `false` is dropped,
// [a, b] becomes "a,b".
std::vector<std::string> config_to_tokens(const std::string& text, const std::string& source = "<config>");

}  // namespace ltrnn::cli
