#include <fstream>
#include <memory>
#include <sstream>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "ltrnn/error.hpp"

namespace ltrnn::cli {
namespace {

using json = nlohmann::json;

const char* kind_name(LayerPlan::Kind k) {
  switch (k) {
    case LayerPlan::Kind::kDense:
      return "dense";
    case LayerPlan::Kind::kSparse:
      return "sparse";
    case LayerPlan::Kind::kFree:
      return "free";
  }
  return "dense";
}

json report_json(const CandidateReport& r) {
  json j;
  j["arch"] = r.arch.to_string();
  j["features"] = r.arch.input_dim;
  j["batch"] = r.batch;
  j["total_us_per_doc"] = r.total_us_per_doc;
  j["dense_total_us_per_doc"] = r.dense_total_us_per_doc;
  j["pruned_delta_us"] = r.pruned_delta_us();
  j["budget_us"] = r.budget_us ? json(*r.budget_us) : json(nullptr);
  j["fits_budget"] = r.fits_budget;
  json layers = json::array();
  for (const auto& l : r.layers)
    layers.push_back({{"out", l.shape.out},
                      {"in", l.shape.in},
                      {"kind", kind_name(l.kind)},
                      {"sparsity", l.sparsity},
                      {"us_per_doc", l.us_per_doc},
                      {"dense_us_per_doc", l.dense_us_per_doc},
                      {"share_percent", l.share_percent}});
  j["layers"] = layers;
  return j;
}

void check_format(const std::string& format) {
  if (format != "json" && format != "csv") throw ValidationError("--format: expected json or csv, got '" + format + "'");
}

struct PredictFlags {
  std::string arch;
  std::size_t features = 0;
  std::size_t batch = 1000;
  std::optional<double> first_sparsity;
  bool first_free = false;
  std::string model;
  std::optional<double> budget;
  std::string format = "json";
  std::string out;
  CostModelFlags cm;
};

void run_predict(const PredictFlags& f, Context& ctx) {
  check_format(f.format);
  if (f.first_sparsity && f.first_free)
    throw ValidationError("--first-layer-sparsity and --first-layer-free are mutually exclusive");
  FfnArchitecture arch;
  SparsityProfile profile;
  if (!f.model.empty()) {
    if (f.first_sparsity || f.first_free)
      throw ValidationError("--model takes its sparsity from the model; drop --first-layer-*");
    const FfnModel m = load_model(f.model);
    arch = m.arch;
    profile = SparsityProfile::from_model(m);
  } else {
    if (f.arch.empty()) throw ValidationError("--arch is required (or give --model)");
    if (f.features == 0) throw ValidationError("--features is required with --arch");
    arch = FfnArchitecture::parse(f.arch, f.features);
    if (f.first_sparsity) {
      if (!(*f.first_sparsity >= 0.0 && *f.first_sparsity <= 1.0))
        throw ValidationError("--first-layer-sparsity must be in [0, 1]");
      profile = SparsityProfile::first_layer(arch, *f.first_sparsity);
    } else if (f.first_free) {
      profile = SparsityProfile::first_layer_free();
    }
  }
  bool need_sparse = false;
  for (const auto& p : profile.layers) need_sparse = need_sparse || p.kind == LayerPlan::Kind::kSparse;
  const CostModel cm = resolve_cost_model(f.cm, need_sparse);
  const auto r = predict_network_time(arch, profile, cm, f.batch, f.budget);

  std::string payload;
  if (f.format == "json") {
    json j = report_json(r);
    j["schema_version"] = kSchemaVersion;
    j["machine"] = cm.heatmap.machine;
    payload = j.dump(2);
  } else {
    std::ostringstream c;
    c << "# schema_version=" << kSchemaVersion << '\n';
    c << "layer,out,in,kind,sparsity,us_per_doc,dense_us_per_doc,share_percent\n";
    for (std::size_t i = 0; i < r.layers.size(); ++i) {
      const auto& l = r.layers[i];
      c << i << ',' << l.shape.out << ',' << l.shape.in << ',' << kind_name(l.kind) << ',' << l.sparsity << ','
        << l.us_per_doc << ',' << l.dense_us_per_doc << ',' << l.share_percent << '\n';
    }
    c << "total,,,,," << r.total_us_per_doc << ',' << r.dense_total_us_per_doc << ",100\n";
    payload = c.str();
  }
  std::ostringstream s;
  s << arch.to_string() << " on " << arch.input_dim << " features, batch " << f.batch << ": "
    << fmt_double(r.total_us_per_doc, 4) << " us/doc";
  if (r.total_us_per_doc != r.dense_total_us_per_doc) s << " (dense " << fmt_double(r.dense_total_us_per_doc, 4) << ")";
  if (r.budget_us) s << (r.fits_budget ? ", within" : ", over") << " the " << *r.budget_us << " us budget";
  s << '\n';
  emit(ctx, f.out, payload, s.str());
}

struct SearchFlags {
  SearchConfig cfg;
  std::string widths = "500,400,300,200,100,50,25";
  std::string format = "json";
  std::size_t show = 10;
  std::string out;
  CostModelFlags cm;
};

void run_search(const SearchFlags& f, Context& ctx) {
  check_format(f.format);
  SearchConfig cfg = f.cfg;
  cfg.widths = parse_size_list(f.widths, "--widths");
  cfg.validate();
  const CostModel cm = resolve_cost_model(f.cm, false);
  const auto found = search_architectures(cfg, cm);
  const std::size_t total = count_candidates(cfg);

  std::string payload;
  if (f.format == "json") {
    json j;
    j["schema_version"] = kSchemaVersion;
    j["machine"] = cm.heatmap.machine;
    j["budget_us"] = cfg.budget_us;
    j["first_layer_sparse"] = cfg.assume_first_sparse;
    j["enumerated"] = total;
    json cands = json::array();
    for (const auto& r : found) cands.push_back(report_json(r));
    j["candidates"] = cands;
    payload = j.dump(2);
  } else {
    std::ostringstream c;
    c << "# schema_version=" << kSchemaVersion << '\n';
    c << "rank,arch,total_us_per_doc,dense_total_us_per_doc\n";
    for (std::size_t i = 0; i < found.size(); ++i)
      c << i + 1 << ',' << found[i].arch.to_string() << ',' << found[i].total_us_per_doc << ','
        << found[i].dense_total_us_per_doc << '\n';
    payload = c.str();
  }
  std::ostringstream s;
  s << found.size() << " of " << total << " architectures fit " << cfg.budget_us << " us/doc"
    << (cfg.assume_first_sparse ? " (first layer assumed pruned)" : "") << '\n';
  for (std::size_t i = 0; i < std::min(f.show, found.size()); ++i)
    s << "  " << found[i].arch.to_string() << "  " << fmt_double(found[i].total_us_per_doc, 4) << " us/doc\n";
  emit(ctx, f.out, payload, s.str());
}

struct HeatmapPlotFlags {
  std::string out;
  CostModelFlags cm;
};

void run_plot_heatmap(const HeatmapPlotFlags& f, Context& ctx) {
  const CostModel cm = resolve_cost_model(f.cm, false);
  const auto& hm = cm.heatmap;
  std::ostringstream c;
  c << "# schema_version=" << kSchemaVersion << '\n';
  c << "n,m,k,gflops\n";
  for (std::size_t ni = 0; ni < hm.n_values.size(); ++ni)
    for (std::size_t mi = 0; mi < hm.m_grid.size(); ++mi)
      for (std::size_t ki = 0; ki < hm.k_grid.size(); ++ki)
        c << hm.n_values[ni] << ',' << hm.m_grid[mi] << ',' << hm.k_grid[ki] << ',' << hm.at(ni, mi, ki) << '\n';
  emit(ctx, f.out, c.str(), std::to_string(hm.gflops.size()) + " heatmap cells\n");
}

struct SpeedupPlotFlags {
  std::string shape = "400x136";
  std::size_t batch = 64;
  std::string grid = "0.9,0.95,0.97,0.98,0.99,0.995,0.999";
  std::string out;
  CostModelFlags cm;
};

LayerShape parse_shape(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw ValidationError("--shape: expected OUTxIN, got '" + text + "'");
  const auto out = parse_size_list(text.substr(0, x), "--shape");
  const auto in = parse_size_list(text.substr(x + 1), "--shape");
  if (out.size() != 1 || in.size() != 1 || out[0] == 0 || in[0] == 0)
    throw ValidationError("--shape: expected OUTxIN, got '" + text + "'");
  return {out[0], in[0]};
}

void run_plot_speedup(const SpeedupPlotFlags& f, Context& ctx) {
  const CostModel cm = resolve_cost_model(f.cm, true);
  const LayerShape shape = parse_shape(f.shape);
  const auto curve = sparsity_speedup_curve(shape, cm, f.batch, parse_double_list(f.grid, "--grid"));
  std::ostringstream c;
  c << "# schema_version=" << kSchemaVersion << '\n';
  c << "sparsity,dense_us,sparse_us,speedup\n";
  for (const auto& p : curve)
    c << p.sparsity << ',' << p.dense_seconds * 1e6 << ',' << p.sparse_seconds * 1e6 << ',' << p.speedup << '\n';
  std::ostringstream s;
  s << shape.out << "x" << shape.in << " at N=" << f.batch << ": speedup " << fmt_double(curve.front().speedup, 2)
    << "x at " << curve.front().sparsity << " to " << fmt_double(curve.back().speedup, 2) << "x at "
    << curve.back().sparsity << '\n';
  emit(ctx, f.out, c.str(), s.str());
}

struct ParetoPlotFlags {
  std::string points;
  std::string out;
};

std::vector<TradeoffPoint> read_points(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("--points: cannot open " + path);
  std::vector<TradeoffPoint> pts;
  std::string line;
  std::size_t lineno = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      header = false;
      if (line.rfind("label", 0) == 0) continue;
    }
    std::istringstream ls(line);
    std::string label, t, q;
    if (!std::getline(ls, label, ',') || !std::getline(ls, t, ',') || !std::getline(ls, q, ','))
      throw ParseError(path, lineno, "expected label,time_us,quality");
    TradeoffPoint p;
    p.label = label;
    try {
      p.time_us = std::stod(t);
      p.quality = std::stod(q);
    } catch (const std::exception&) {
      throw ParseError(path, lineno, "time and quality must be numbers");
    }
    pts.push_back(p);
  }
  if (pts.empty()) throw ValidationError("--points: no points in " + path);
  return pts;
}

void run_plot_pareto(const ParetoPlotFlags& f, Context& ctx) {
  const auto pts = read_points(f.points);
  const auto front = pareto_frontier(pts);
  std::vector<char> on(pts.size(), 0);
  for (const auto i : front) on[i] = 1;
  std::ostringstream c;
  c << "# schema_version=" << kSchemaVersion << '\n';
  c << "label,time_us,quality,pareto\n";
  for (std::size_t i = 0; i < pts.size(); ++i)
    c << pts[i].label << ',' << pts[i].time_us << ',' << pts[i].quality << ',' << int(on[i]) << '\n';
  emit(ctx, f.out, c.str(), std::to_string(front.size()) + " of " + std::to_string(pts.size()) + " points on the frontier\n");
}

}  // namespace

void add_design_commands(CLI::App& app, Context& ctx) {
  {
    auto f = std::make_shared<PredictFlags>();
    auto* sub = app.add_subcommand("predict", "Predict per-document scoring time of a network");
    sub->add_option("--arch", f->arch, "Hidden widths, e.g. 400x200x200x100 (a scalar output layer is added)");
    sub->add_option("--features", f->features, "Input feature count");
    sub->add_option("--batch", f->batch, "Documents per forward pass")->capture_default_str();
    sub->add_option("--first-layer-sparsity", f->first_sparsity, "Cost the first layer as sparse at this sparsity");
    sub->add_flag("--first-layer-free", f->first_free, "Treat the first layer as costless");
    sub->add_option("--model", f->model, "Take architecture and sparse-layer statistics from a model file")
        ->check(CLI::ExistingFile);
    sub->add_option("--budget-us", f->budget, "Per-document budget to check against");
    sub->add_option("--format", f->format, "json or csv")->capture_default_str();
    sub->add_option("--out", f->out, "Report path");
    add_cost_model_options(sub, f->cm);
    add_config_option(sub);
    sub->callback([f, &ctx] { run_predict(*f, ctx); });
  }
  {
    auto f = std::make_shared<SearchFlags>();
    auto* sub = app.add_subcommand("search-arch", "List architectures whose predicted time fits a budget");
    sub->add_option("--features", f->cfg.features, "Input feature count")->required();
    sub->add_option("--budget-us", f->cfg.budget_us, "Per-document time budget in microseconds")->required();
    sub->add_option("--widths", f->widths, "Comma-separated width grid")->capture_default_str();
    sub->add_option("--min-depth", f->cfg.min_depth, "Fewest hidden layers")->capture_default_str();
    sub->add_option("--max-depth", f->cfg.max_depth, "Most hidden layers")->capture_default_str();
    sub->add_option("--batch", f->cfg.batch, "Documents per forward pass")->capture_default_str();
    sub->add_flag("--first-layer-sparse", f->cfg.assume_first_sparse, "Assume the first layer will be pruned away");
    sub->add_flag("--allow-increasing", f->cfg.allow_increasing, "Also enumerate widths that grow toward the output");
    sub->add_option("--show", f->show, "Candidates listed in the summary")->capture_default_str();
    sub->add_option("--format", f->format, "json or csv")->capture_default_str();
    sub->add_option("--out", f->out, "Report path");
    add_cost_model_options(sub, f->cm);
    add_config_option(sub);
    sub->callback([f, &ctx] { run_search(*f, ctx); });
  }
  auto* plot = app.add_subcommand("plot-data", "Emit CSV series for plotting");
  plot->require_subcommand(1);
  add_config_option(plot);
  {
    auto f = std::make_shared<HeatmapPlotFlags>();
    auto* sub = plot->add_subcommand("heatmap", "GFLOPS per (n, m, k) cell");
    sub->add_option("--out", f->out, "CSV path");
    add_cost_model_options(sub, f->cm);
    add_config_option(sub);
    sub->callback([f, &ctx] { run_plot_heatmap(*f, ctx); });
  }
  {
    auto f = std::make_shared<SpeedupPlotFlags>();
    auto* sub = plot->add_subcommand("speedup", "Predicted sparse-over-dense speedup against sparsity");
    sub->add_option("--shape", f->shape, "Layer shape OUTxIN")->capture_default_str();
    sub->add_option("--batch", f->batch, "Batch size N")->capture_default_str();
    sub->add_option("--grid", f->grid, "Comma-separated sparsities")->capture_default_str();
    sub->add_option("--out", f->out, "CSV path");
    add_cost_model_options(sub, f->cm);
    add_config_option(sub);
    sub->callback([f, &ctx] { run_plot_speedup(*f, ctx); });
  }
  {
    auto f = std::make_shared<ParetoPlotFlags>();
    auto* sub = plot->add_subcommand("pareto", "Mark the time/quality frontier of labelled points");
    sub->add_option("--points", f->points, "CSV with label,time_us,quality rows")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", f->out, "CSV path");
    add_config_option(sub);
    sub->callback([f, &ctx] { run_plot_pareto(*f, ctx); });
  }
}

}  // namespace ltrnn::cli
