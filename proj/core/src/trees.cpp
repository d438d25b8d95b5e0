#include "ltrnn/trees.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ltrnn/error.hpp"

namespace ltrnn {
namespace {

using json = nlohmann::json;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline bool goes_left(float x, double threshold) { return !(static_cast<double>(x) > threshold); }

template <class T>
std::vector<T> parse_list(std::string_view s, const std::string& source, std::size_t line) {
  std::vector<T> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) {
      T v{};
      const auto [ptr, ec] = std::from_chars(s.data() + i, s.data() + j, v);
      if (ec != std::errc() || ptr != s.data() + j)
        throw ParseError(source, line, "bad number '" + std::string(s.substr(i, j - i)) + "'");
      out.push_back(v);
    }
    i = j;
  }
  return out;
}

Tree make_tree(std::vector<std::int64_t> feature, std::vector<double> threshold, std::vector<std::int64_t> left,
               std::vector<std::int64_t> right, std::vector<double> leaves, const std::string& where) {
  const std::size_t n = feature.size();
  if (threshold.size() != n || left.size() != n || right.size() != n)
    throw ValidationError(where + ": split arrays have different lengths");
  Tree t;
  t.nodes.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (feature[i] < 0) throw ValidationError(where + ": negative feature index");
    const auto in_range = [](std::int64_t v) {
      return v >= std::numeric_limits<std::int32_t>::min() && v <= std::numeric_limits<std::int32_t>::max();
    };
    if (!in_range(left[i]) || !in_range(right[i])) throw ValidationError(where + ": child index out of range");
    t.nodes.push_back({static_cast<std::uint32_t>(feature[i]), threshold[i], static_cast<std::int32_t>(left[i]),
                       static_cast<std::int32_t>(right[i])});
  }
  t.leaf_values = std::move(leaves);
  return t;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void Tree::validate(std::size_t num_features) const {
  if (leaf_values.size() != nodes.size() + 1)
    throw ValidationError("tree has " + std::to_string(nodes.size()) + " internal nodes but " +
                          std::to_string(leaf_values.size()) + " leaves");
  if (nodes.empty()) return;
  std::vector<char> node_seen(nodes.size(), 0), leaf_seen(leaf_values.size(), 0);
  std::vector<std::int32_t> stack{0};
  node_seen[0] = 1;
  while (!stack.empty()) {
    const auto& node = nodes[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    if (node.feature >= num_features)
      throw ValidationError("tree splits on feature " + std::to_string(node.feature) + " but the model has " +
                            std::to_string(num_features) + " features");
    for (const auto child : {node.left, node.right}) {
      if (child >= 0) {
        if (static_cast<std::size_t>(child) >= nodes.size() || node_seen[child])
          throw ValidationError("tree node " + std::to_string(child) + " is out of range or shared");
        node_seen[child] = 1;
        stack.push_back(child);
      } else {
        const auto leaf = static_cast<std::size_t>(~child);
        if (leaf >= leaf_values.size() || leaf_seen[leaf])
          throw ValidationError("tree leaf " + std::to_string(leaf) + " is out of range or shared");
        leaf_seen[leaf] = 1;
      }
    }
  }
  if (std::find(node_seen.begin(), node_seen.end(), 0) != node_seen.end() ||
      std::find(leaf_seen.begin(), leaf_seen.end(), 0) != leaf_seen.end())
    throw ValidationError("tree has unreachable nodes or leaves");
}

std::size_t Tree::exit_leaf(std::span<const float> doc) const {
  if (nodes.empty()) return 0;
  std::int32_t cur = 0;
  while (cur >= 0) {
    const Node& n = nodes[static_cast<std::size_t>(cur)];
    cur = goes_left(doc[n.feature], n.threshold) ? n.left : n.right;
  }
  return static_cast<std::size_t>(~cur);
}

std::vector<std::size_t> Tree::leaves_in_order() const {
  std::vector<std::size_t> order;
  order.reserve(leaf_values.size());
  if (nodes.empty()) {
    if (!leaf_values.empty()) order.push_back(0);
    return order;
  }
  // Iterative in-order walk: push right then left so left is processed first.
  std::vector<std::int32_t> stack{0};
  while (!stack.empty()) {
    const auto cur = stack.back();
    stack.pop_back();
    if (cur < 0) {
      order.push_back(static_cast<std::size_t>(~cur));
      continue;
    }
    const Node& n = nodes[static_cast<std::size_t>(cur)];
    stack.push_back(n.right);
    stack.push_back(n.left);
  }
  return order;
}

void TreeEnsemble::validate() const {
  for (std::size_t t = 0; t < trees.size(); ++t) {
    try {
      trees[t].validate(num_features);
    } catch (const ValidationError& e) {
      throw ValidationError("tree " + std::to_string(t) + ": " + e.what());
    }
  }
}

std::size_t TreeEnsemble::max_leaves() const noexcept {
  std::size_t m = 0;
  for (const auto& t : trees) m = std::max(m, t.num_leaves());
  return m;
}

TreeEnsemble parse_ensemble_json(const std::string& text, const std::string& source) {
  TreeEnsemble ens;
  try {
    const json j = json::parse(text);
    ens.base_score = j.value("base_score", 0.0);
    std::int64_t max_feature = -1;
    std::size_t t = 0;
    for (const auto& jt : j.at("trees")) {
      const std::string where = source + ": tree " + std::to_string(t++);
      auto feature = jt.value("split_feature", std::vector<std::int64_t>{});
      for (auto f : feature) max_feature = std::max(max_feature, f);
      ens.trees.push_back(make_tree(std::move(feature), jt.value("threshold", std::vector<double>{}),
                                    jt.value("left_child", std::vector<std::int64_t>{}),
                                    jt.value("right_child", std::vector<std::int64_t>{}),
                                    jt.at("leaf_value").get<std::vector<double>>(), where));
    }
    ens.num_features = j.contains("num_features") ? j.at("num_features").get<std::size_t>()
                                                  : static_cast<std::size_t>(max_feature + 1);
  } catch (const json::exception& e) {
    throw ValidationError(source + ": " + e.what());
  }
  ens.validate();
  return ens;
}

TreeEnsemble parse_ensemble_lightgbm(const std::string& text, const std::string& source) {
  TreeEnsemble ens;
  std::int64_t max_feature_idx = -1;
  bool in_tree = false;
  std::map<std::string, std::pair<std::string, std::size_t>> fields;  // key -> (value, line)

  const auto flush_tree = [&]() {
    if (!in_tree) return;
    const std::string where = source + ": tree " + std::to_string(ens.trees.size());
    const auto get = [&](const std::string& key) -> std::pair<std::string, std::size_t> {
      const auto it = fields.find(key);
      return it == fields.end() ? std::pair<std::string, std::size_t>{"", 0} : it->second;
    };
    const auto [dt, dt_line] = get("decision_type");
    for (auto d : parse_list<std::int64_t>(dt, source, dt_line))
      if (d & 1) throw ValidationError(where + ": categorical splits are not supported");
    const auto [sf, sf_line] = get("split_feature");
    const auto [th, th_line] = get("threshold");
    const auto [lc, lc_line] = get("left_child");
    const auto [rc, rc_line] = get("right_child");
    const auto [lv, lv_line] = get("leaf_value");
    ens.trees.push_back(make_tree(parse_list<std::int64_t>(sf, source, sf_line),
                                  parse_list<double>(th, source, th_line), parse_list<std::int64_t>(lc, source, lc_line),
                                  parse_list<std::int64_t>(rc, source, rc_line), parse_list<double>(lv, source, lv_line),
                                  where));
    fields.clear();
    in_tree = false;
  };

  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("Tree=", 0) == 0) {
      flush_tree();
      in_tree = true;
      continue;
    }
    if (line == "end of trees") {
      flush_tree();
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (in_tree) {
      fields[key] = {value, line_no};
    } else if (key == "max_feature_idx") {
      const auto v = parse_list<std::int64_t>(value, source, line_no);
      if (v.size() != 1) throw ParseError(source, line_no, "bad max_feature_idx");
      max_feature_idx = v[0];
    } else if (key == "base_score") {
      const auto v = parse_list<double>(value, source, line_no);
      if (v.size() != 1) throw ParseError(source, line_no, "bad base_score");
      ens.base_score = v[0];
    }
  }
  flush_tree();

  if (max_feature_idx < 0) {
    for (const auto& t : ens.trees)
      for (const auto& n : t.nodes) max_feature_idx = std::max<std::int64_t>(max_feature_idx, n.feature);
  }
  ens.num_features = static_cast<std::size_t>(max_feature_idx + 1);
  ens.validate();
  return ens;
}

TreeEnsemble load_ensemble(const std::filesystem::path& path, EnsembleFormat format) {
  const std::string text = read_file(path);
  return format == EnsembleFormat::kJson ? parse_ensemble_json(text, path.string())
                                         : parse_ensemble_lightgbm(text, path.string());
}

TreeEnsemble load_ensemble(const std::filesystem::path& path) {
  return load_ensemble(path, path.extension() == ".json" ? EnsembleFormat::kJson : EnsembleFormat::kLightGbmText);
}

std::string ensemble_to_json(const TreeEnsemble& ens) {
  json j;
  j["schema_version"] = 1;
  j["num_features"] = ens.num_features;
  j["base_score"] = ens.base_score;
  j["trees"] = json::array();
  for (const auto& t : ens.trees) {
    json jt;
    std::vector<std::int64_t> feature, left, right;
    std::vector<double> threshold;
    for (const auto& n : t.nodes) {
      feature.push_back(n.feature);
      threshold.push_back(n.threshold);
      left.push_back(n.left);
      right.push_back(n.right);
    }
    jt["split_feature"] = feature;
    jt["threshold"] = threshold;
    jt["left_child"] = left;
    jt["right_child"] = right;
    jt["leaf_value"] = t.leaf_values;
    j["trees"].push_back(std::move(jt));
  }
  return j.dump(1);
}

std::string ensemble_to_lightgbm(const TreeEnsemble& ens) {
  std::ostringstream out;
  out << "tree\nversion=v3\nnum_class=1\nnum_tree_per_iteration=1\nlabel_index=0\n";
  out << "max_feature_idx=" << static_cast<std::int64_t>(ens.num_features) - 1 << '\n';
  if (ens.base_score != 0.0) out << "base_score=" << fmt_double(ens.base_score) << '\n';
  out << '\n';
  for (std::size_t i = 0; i < ens.trees.size(); ++i) {
    const auto& t = ens.trees[i];
    const auto join = [&](auto proj) {
      std::string s;
      for (std::size_t k = 0; k < t.nodes.size(); ++k) {
        if (k) s += ' ';
        s += proj(t.nodes[k]);
      }
      return s;
    };
    out << "Tree=" << i << '\n';
    out << "num_leaves=" << t.num_leaves() << "\nnum_cat=0\n";
    out << "split_feature=" << join([](const Tree::Node& n) { return std::to_string(n.feature); }) << '\n';
    out << "threshold=" << join([](const Tree::Node& n) { return fmt_double(n.threshold); }) << '\n';
    out << "decision_type=" << join([](const Tree::Node&) { return std::string("2"); }) << '\n';
    out << "left_child=" << join([](const Tree::Node& n) { return std::to_string(n.left); }) << '\n';
    out << "right_child=" << join([](const Tree::Node& n) { return std::to_string(n.right); }) << '\n';
    out << "leaf_value=";
    for (std::size_t k = 0; k < t.leaf_values.size(); ++k) out << (k ? " " : "") << fmt_double(t.leaf_values[k]);
    out << "\nshrinkage=1\n\n\n";
  }
  out << "end of trees\n";
  return out.str();
}

void save_ensemble(const std::filesystem::path& path, const TreeEnsemble& ens, EnsembleFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << (format == EnsembleFormat::kJson ? ensemble_to_json(ens) : ensemble_to_lightgbm(ens));
}

double score_naive(const TreeEnsemble& ens, std::span<const float> doc) {
  double score = 0.0;
  for (const auto& t : ens.trees) score += t.leaf_values[t.exit_leaf(doc)];
  return score + ens.base_score;
}

std::vector<double> score_naive(const TreeEnsemble& ens, const Matrix& docs) {
  if (docs.rows() > 0 && docs.cols() != ens.num_features)
    throw ValidationError("documents have " + std::to_string(docs.cols()) + " features, model expects " +
                          std::to_string(ens.num_features));
  std::vector<double> out(docs.rows());
  for (std::size_t r = 0; r < docs.rows(); ++r) out[r] = score_naive(ens, docs.row(r));
  return out;
}

QsIndex::QsIndex(const TreeEnsemble& ens) : base_score_(ens.base_score) {
  struct Pending {
    std::uint32_t feature;
    Entry entry;
  };
  std::vector<Pending> pending;
  leaf_offsets_.push_back(0);

  for (std::size_t t = 0; t < ens.trees.size(); ++t) {
    const Tree& tree = ens.trees[t];
    if (tree.num_leaves() > kMaxQsLeaves)
      throw UnsupportedModelError("tree " + std::to_string(t) + " has " + std::to_string(tree.num_leaves()) +
                                  " leaves; the bitvector scorer supports at most 64");
    const auto order = tree.leaves_in_order();
    std::vector<std::size_t> bit_of_leaf(tree.num_leaves());
    for (std::size_t b = 0; b < order.size(); ++b) {
      bit_of_leaf[order[b]] = b;
      leaf_values_.push_back(tree.leaf_values[order[b]]);
    }
    leaf_offsets_.push_back(leaf_values_.size());
    defaults_.push_back(~std::uint64_t{0});

    // Bits of all leaves below each node, computed children-first.
    std::vector<std::uint64_t> below(tree.nodes.size(), 0);
    const auto subtree_bits = [&](std::int32_t child) {
      return child < 0 ? std::uint64_t{1} << bit_of_leaf[static_cast<std::size_t>(~child)]
                       : below[static_cast<std::size_t>(child)];
    };
    // Node indices are not topologically ordered in general; post-order via explicit stack.
    if (!tree.nodes.empty()) {
      std::vector<std::pair<std::int32_t, bool>> stack{{0, false}};
      while (!stack.empty()) {
        auto [n, expanded] = stack.back();
        stack.pop_back();
        const auto& node = tree.nodes[static_cast<std::size_t>(n)];
        if (!expanded) {
          stack.push_back({n, true});
          if (node.left >= 0) stack.push_back({node.left, false});
          if (node.right >= 0) stack.push_back({node.right, false});
        } else {
          below[static_cast<std::size_t>(n)] = subtree_bits(node.left) | subtree_bits(node.right);
        }
      }
    }
    for (const auto& node : tree.nodes) {
      pending.push_back({node.feature, {node.threshold, static_cast<std::uint32_t>(t), ~subtree_bits(node.left)}});
    }
  }

  std::stable_sort(pending.begin(), pending.end(), [](const Pending& a, const Pending& b) {
    if (a.feature != b.feature) return a.feature < b.feature;
    return a.entry.threshold < b.entry.threshold;
  });
  feature_offsets_.assign(ens.num_features + 1, 0);
  entries_.reserve(pending.size());
  for (const auto& p : pending) {
    ++feature_offsets_[p.feature + 1];
    entries_.push_back(p.entry);
  }
  for (std::size_t f = 0; f < ens.num_features; ++f) feature_offsets_[f + 1] += feature_offsets_[f];
}

double QsIndex::score(std::span<const float> doc, std::span<std::uint64_t> leafidx) const {
  const std::size_t nt = num_trees();
  std::copy(defaults_.begin(), defaults_.end(), leafidx.begin());
  const std::size_t nf = num_features();
  for (std::size_t f = 0; f < nf; ++f) {
    const double x = doc[f];
    const Entry* e = entries_.data() + feature_offsets_[f];
    const Entry* end = entries_.data() + feature_offsets_[f + 1];
    // Thresholds ascend: once x <= threshold every later node is true as well.
    for (; e != end && x > e->threshold; ++e) leafidx[e->tree] &= e->mask;
  }
  double score = 0.0;
  for (std::size_t t = 0; t < nt; ++t)
    score += leaf_values_[leaf_offsets_[t] + static_cast<std::size_t>(std::countr_zero(leafidx[t]))];
  return score + base_score_;
}

double QsIndex::score(std::span<const float> doc) const {
  std::vector<std::uint64_t> scratch(num_trees());
  return score(doc, scratch);
}

QsIndex build_qs_index(const TreeEnsemble& ens) { return QsIndex(ens); }

std::vector<double> score_quickscorer(const QsIndex& idx, const Matrix& docs) {
  if (docs.rows() > 0 && docs.cols() != idx.num_features())
    throw ValidationError("documents have " + std::to_string(docs.cols()) + " features, model expects " +
                          std::to_string(idx.num_features()));
  std::vector<std::uint64_t> scratch(idx.num_trees());
  std::vector<double> out(docs.rows());
  for (std::size_t r = 0; r < docs.rows(); ++r) out[r] = idx.score(docs.row(r), scratch);
  return out;
}

AugmentationTable extract_midpoint_table(const TreeEnsemble& ens, const Dataset& ds) {
  if (ens.num_features != ds.num_features)
    throw ValidationError("ensemble has " + std::to_string(ens.num_features) + " features, dataset has " +
                          std::to_string(ds.num_features));
  if (ds.num_documents() == 0) throw ValidationError("midpoint table needs a non-empty training set");
  const std::size_t nf = ds.num_features;
  AugmentationTable table;
  table.feature_min.assign(nf, std::numeric_limits<float>::infinity());
  table.feature_max.assign(nf, -std::numeric_limits<float>::infinity());
  for (const auto& q : ds.queries)
    for (std::size_t d = 0; d < q.size(); ++d)
      for (std::size_t f = 0; f < nf; ++f) {
        table.feature_min[f] = std::min(table.feature_min[f], q.documents(d, f));
        table.feature_max[f] = std::max(table.feature_max[f], q.documents(d, f));
      }

  std::vector<std::vector<double>> points(nf);
  for (const auto& t : ens.trees)
    for (const auto& n : t.nodes) {
      const double lo = table.feature_min[n.feature], hi = table.feature_max[n.feature];
      if (n.threshold >= lo && n.threshold <= hi) points[n.feature].push_back(n.threshold);
    }

  table.midpoints.resize(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    auto& p = points[f];
    p.push_back(table.feature_min[f]);
    p.push_back(table.feature_max[f]);
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    auto& mids = table.midpoints[f];
    for (std::size_t i = 0; i + 1 < p.size(); ++i) {
      const auto m = static_cast<float>((p[i] + p[i + 1]) / 2.0);
      // Rounding to float can collapse neighbours or touch the range ends.
      if (m > table.feature_min[f] && m < table.feature_max[f] && (mids.empty() || m > mids.back()))
        mids.push_back(m);
    }
  }
  return table;
}

}  // namespace ltrnn
