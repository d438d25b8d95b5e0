#include "cli.hpp"

#include <fstream>
#include <memory>
#include <sstream>

#include "common.hpp"
#include "ltrnn/error.hpp"

namespace ltrnn::cli {
namespace {

std::unique_ptr<CLI::App> make_app(Context& ctx) {
  auto app = std::make_unique<CLI::App>("Fast neural rankers: cost models, distillation, pruning and evaluation",
                                        "ltrnn");
  app->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app->require_subcommand(1);
  add_calibrate_commands(*app, ctx);
  add_design_commands(*app, ctx);
  add_train_commands(*app, ctx);
  add_eval_commands(*app, ctx);
  add_pipeline_command(*app, ctx);
  return app;
}

std::vector<std::string> splice_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      path = args[i].substr(9);
  }
  if (path.empty() || args.empty()) return args;
  std::ifstream in(path);
  if (!in) throw ValidationError("--config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const auto tokens = config_to_tokens(ss.str(), path);
  std::size_t at = 1;
  if (args[0] == "plot-data" && args.size() > 1 && args[1].rfind("-", 0) != 0) at = 2;
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(at), tokens.begin(), tokens.end());
  return args;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Context ctx{out, err};
  auto app = make_app(ctx);
  try {
    auto full = splice_config(args);
    // CLI11 consumes the vector back to front.
    std::vector<std::string> rev(full.rbegin(), full.rend());
    app->parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app->exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app->exit(e, out, err);
  } catch (const CLI::Error& e) {
    app->exit(e, out, err);
    return 2;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

std::vector<std::string> subcommand_names() {
  std::ostringstream sink;
  Context ctx{sink, sink};
  auto app = make_app(ctx);
  std::vector<std::string> names;
  for (const auto* sub : app->get_subcommands({})) names.push_back(sub->get_name());
  return names;
}

std::vector<std::string> subcommand_flags(const std::string& path) {
  std::ostringstream sink;
  Context ctx{sink, sink};
  auto app = make_app(ctx);
  CLI::App* cur = app.get();
  std::istringstream in(path);
  std::string part;
  while (in >> part) cur = cur->get_subcommand(part);
  std::vector<std::string> flags;
  for (const auto* opt : cur->get_options())
    for (const auto& n : opt->get_lnames()) flags.push_back("--" + n);
  return flags;
}

}  // namespace ltrnn::cli
