// Writes the bundled desk-scale dataset and its tree teacher.
#include <cstdio>
#include <filesystem>
#include <string>

#include <CLI11.hpp>

#include "ltrnn/data.hpp"
#include "ltrnn/synthetic.hpp"
#include "ltrnn/trees.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic ranking dataset and teacher"};
  std::string out_dir = "data/synthetic";
  ltrnn::SyntheticSpec spec;
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--seed", spec.seed, "Generator seed");
  app.add_option("--queries", spec.queries, "Number of queries");
  app.add_option("--docs-per-query", spec.docs_per_query, "Documents per query");
  app.add_option("--features", spec.features, "Features per document (>= 4)");
  app.add_option("--trees", spec.trees, "Teacher trees");
  app.add_option("--depth", spec.tree_depth, "Teacher tree depth");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto task = ltrnn::make_synthetic_task(spec);
    const std::filesystem::path dir(out_dir);
    std::filesystem::create_directories(dir);
    ltrnn::write_ltr_file(dir / "train.txt", task.split.train);
    ltrnn::write_ltr_file(dir / "valid.txt", task.split.validation);
    ltrnn::write_ltr_file(dir / "test.txt", task.split.test);
    ltrnn::save_ensemble(dir / "teacher.json", task.teacher, ltrnn::EnsembleFormat::kJson);
    ltrnn::save_ensemble(dir / "teacher.txt", task.teacher, ltrnn::EnsembleFormat::kLightGbmText);
    std::printf("wrote %zu/%zu/%zu queries and a %zu-tree teacher to %s\n", task.split.train.queries.size(),
                task.split.validation.queries.size(), task.split.test.queries.size(), task.teacher.trees.size(),
                dir.c_str());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
