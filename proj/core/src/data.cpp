#include "ltrnn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

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

template <class T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

struct PendingDoc {
  int label;
  std::vector<std::pair<std::size_t, float>> features;  // 0-based index
};

double divisor_for(const NormStats& stats, std::size_t f) {
  const double var = stats.variance[f];
  if (var <= 0.0) return 1.0;
  return stats.divisor == NormDivisor::kVariance ? var : std::sqrt(var);
}

}  // namespace

std::size_t Dataset::num_documents() const noexcept {
  std::size_t n = 0;
  for (const auto& q : queries) n += q.size();
  return n;
}

bool Dataset::has_teacher_scores() const noexcept {
  return std::all_of(queries.begin(), queries.end(), [](const QueryGroup& q) { return q.teacher_scores.has_value(); });
}

Matrix Dataset::stacked_documents() const {
  Matrix out(num_documents(), num_features);
  std::size_t r = 0;
  for (const auto& q : queries) {
    std::copy(q.documents.values().begin(), q.documents.values().end(), out.data() + r * num_features);
    r += q.size();
  }
  return out;
}

std::vector<float> Dataset::stacked_teacher_scores() const {
  if (!has_teacher_scores()) throw ValidationError("dataset has no teacher scores");
  std::vector<float> out;
  out.reserve(num_documents());
  for (const auto& q : queries) out.insert(out.end(), q.teacher_scores->begin(), q.teacher_scores->end());
  return out;
}

void Dataset::validate() const {
  std::unordered_set<std::int64_t> seen;
  for (const auto& q : queries) {
    if (!seen.insert(q.query_id).second) throw ValidationError("duplicate query id " + std::to_string(q.query_id));
    if (q.documents.rows() != q.labels.size())
      throw ValidationError("query " + std::to_string(q.query_id) + ": document/label count mismatch");
    if (q.size() > 0 && q.documents.cols() != num_features)
      throw ValidationError("query " + std::to_string(q.query_id) + ": expected " + std::to_string(num_features) +
                            " features, got " + std::to_string(q.documents.cols()));
    if (q.teacher_scores && q.teacher_scores->size() != q.size())
      throw ValidationError("query " + std::to_string(q.query_id) + ": teacher score count mismatch");
    for (int l : q.labels)
      if (l < kMinLabel || l > kMaxLabel)
        throw ValidationError("query " + std::to_string(q.query_id) + ": label " + std::to_string(l) +
                              " outside [0,4]");
  }
  if (norm_stats && (norm_stats->mean.size() != num_features || norm_stats->variance.size() != num_features))
    throw ValidationError("norm stats length does not match num_features");
}

Dataset parse_ltr_text(const std::string& text, const LoadOptions& options, const std::string& source) {
  std::vector<std::int64_t> order;
  std::unordered_map<std::int64_t, std::vector<PendingDoc>> groups;
  std::size_t max_index = 0;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;

    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (tokens.size() < 2) throw ParseError(source, line_no, "expected `<label> qid:<id> ...`");

    int label = 0;
    if (!parse_number(tokens[0], label)) throw ParseError(source, line_no, "bad label '" + std::string(tokens[0]) + "'");
    if (label < kMinLabel || label > kMaxLabel)
      throw ValidationError(source + ":" + std::to_string(line_no) + ": label " + std::to_string(label) +
                            " outside [0,4]");

    std::int64_t qid = 0;
    if (tokens[1].substr(0, 4) != "qid:" || !parse_number(tokens[1].substr(4), qid))
      throw ParseError(source, line_no, "bad qid token '" + std::string(tokens[1]) + "'");

    PendingDoc doc{label, {}};
    for (std::size_t t = 2; t < tokens.size(); ++t) {
      const auto colon = tokens[t].find(':');
      std::size_t idx = 0;
      float val = 0.0f;
      if (colon == std::string_view::npos || !parse_number(tokens[t].substr(0, colon), idx) ||
          !parse_number(tokens[t].substr(colon + 1), val) || idx == 0)
        throw ParseError(source, line_no, "bad feature token '" + std::string(tokens[t]) + "'");
      max_index = std::max(max_index, idx);
      doc.features.emplace_back(idx - 1, val);
    }

    auto [it, inserted] = groups.try_emplace(qid);
    if (inserted) order.push_back(qid);
    it->second.push_back(std::move(doc));
  }

  Dataset ds;
  ds.num_features = max_index;
  if (options.num_features) {
    if (*options.num_features < max_index)
      throw ValidationError(source + ": feature index " + std::to_string(max_index) + " exceeds num_features=" +
                            std::to_string(*options.num_features));
    ds.num_features = *options.num_features;
  }

  ds.queries.reserve(order.size());
  for (const auto qid : order) {
    const auto& docs = groups[qid];
    QueryGroup q;
    q.query_id = qid;
    q.documents = Matrix(docs.size(), ds.num_features);
    q.labels.reserve(docs.size());
    for (std::size_t d = 0; d < docs.size(); ++d) {
      q.labels.push_back(docs[d].label);
      for (const auto& [idx, val] : docs[d].features) q.documents(d, idx) = val;
    }
    ds.queries.push_back(std::move(q));
  }
  return ds;
}

Dataset load_ltr_file(const std::filesystem::path& path, const LoadOptions& options) {
  return parse_ltr_text(read_file(path), options, path.string());
}

void write_ltr_file(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  char buf[64];
  for (const auto& q : ds.queries) {
    for (std::size_t d = 0; d < q.size(); ++d) {
      out << q.labels[d] << " qid:" << q.query_id;
      for (std::size_t f = 0; f < ds.num_features; ++f) {
        std::snprintf(buf, sizeof buf, " %zu:%.9g", f + 1, static_cast<double>(q.documents(d, f)));
        out << buf;
      }
      out << '\n';
    }
  }
}

NormStats compute_norm_stats(const Dataset& ds, NormDivisor divisor) {
  const std::size_t nf = ds.num_features;
  NormStats stats{std::vector<double>(nf, 0.0), std::vector<double>(nf, 0.0), divisor};
  const std::size_t n = ds.num_documents();
  if (n == 0) return stats;
  for (const auto& q : ds.queries)
    for (std::size_t d = 0; d < q.size(); ++d)
      for (std::size_t f = 0; f < nf; ++f) stats.mean[f] += q.documents(d, f);
  for (auto& m : stats.mean) m /= static_cast<double>(n);
  for (const auto& q : ds.queries)
    for (std::size_t d = 0; d < q.size(); ++d)
      for (std::size_t f = 0; f < nf; ++f) {
        const double c = q.documents(d, f) - stats.mean[f];
        stats.variance[f] += c * c;
      }
  for (auto& v : stats.variance) v /= static_cast<double>(n);
  return stats;
}

void apply_norm_stats(const NormStats& stats, std::span<float> doc) {
  if (doc.size() != stats.num_features())
    throw ValidationError("document has " + std::to_string(doc.size()) + " features, norm stats have " +
                          std::to_string(stats.num_features()));
  for (std::size_t f = 0; f < doc.size(); ++f)
    doc[f] = static_cast<float>((doc[f] - stats.mean[f]) / divisor_for(stats, f));
}

Matrix apply_norm_stats(const NormStats& stats, const Matrix& docs) {
  Matrix out = docs;
  for (std::size_t r = 0; r < out.rows(); ++r) apply_norm_stats(stats, out.row(r));
  return out;
}

std::pair<Dataset, NormStats> z_normalize(const Dataset& ds, const std::optional<NormStats>& stats,
                                          NormDivisor divisor) {
  NormStats applied = stats ? *stats : compute_norm_stats(ds, divisor);
  if (applied.mean.size() != ds.num_features || applied.variance.size() != ds.num_features)
    throw ValidationError("norm stats cover " + std::to_string(applied.mean.size()) + " features, dataset has " +
                          std::to_string(ds.num_features));
  Dataset out = ds;
  for (auto& q : out.queries)
    for (std::size_t d = 0; d < q.size(); ++d) apply_norm_stats(applied, q.documents.row(d));
  out.norm_stats = applied;
  return {std::move(out), std::move(applied)};
}

void save_norm_stats(const std::filesystem::path& path, const NormStats& stats) {
  json j;
  j["schema_version"] = 1;
  j["mean"] = stats.mean;
  j["variance"] = stats.variance;
  j["divisor"] = stats.divisor == NormDivisor::kVariance ? "variance" : "std";
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

NormStats load_norm_stats(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
    NormStats s;
    s.mean = j.at("mean").get<std::vector<double>>();
    s.variance = j.at("variance").get<std::vector<double>>();
    s.divisor = j.value("divisor", std::string("variance")) == "std" ? NormDivisor::kStdDev : NormDivisor::kVariance;
    if (s.mean.size() != s.variance.size()) throw ValidationError(path.string() + ": mean/variance length mismatch");
    for (double v : s.variance)
      if (v < 0.0) throw ValidationError(path.string() + ": negative variance");
    return s;
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::vector<float> load_score_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<float> scores;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    float v = 0.0f;
    if (tokens.size() != 1 || !parse_number(tokens[0], v)) throw ParseError(path.string(), line_no, "bad score");
    scores.push_back(v);
  }
  return scores;
}

void write_score_file(const std::filesystem::path& path, std::span<const float> scores) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path.string());
  char buf[32];
  for (float s : scores) {
    std::snprintf(buf, sizeof buf, "%.9g\n", static_cast<double>(s));
    out << buf;
  }
}

Dataset attach_scores(Dataset ds, std::span<const float> scores) {
  const std::size_t expected = ds.num_documents();
  if (scores.size() != expected)
    throw ValidationError("score count mismatch: expected " + std::to_string(expected) + ", got " +
                          std::to_string(scores.size()));
  std::size_t off = 0;
  for (auto& q : ds.queries) {
    q.teacher_scores = std::vector<float>(scores.begin() + off, scores.begin() + off + q.size());
    off += q.size();
  }
  return ds;
}

Dataset attach_scores(const Dataset& ds, const std::filesystem::path& path) {
  return attach_scores(ds, load_score_file(path));
}

DatasetSplit split_by_query(const Dataset& ds, double train_fraction, double validation_fraction) {
  if (train_fraction < 0 || validation_fraction < 0 || train_fraction + validation_fraction > 1.0)
    throw ValidationError("split fractions must be non-negative and sum to at most 1");
  const std::size_t nq = ds.queries.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(nq)));
  const auto n_valid =
      std::min(nq - n_train, static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(nq))));
  DatasetSplit split;
  for (auto* part : {&split.train, &split.validation, &split.test}) {
    part->num_features = ds.num_features;
    part->norm_stats = ds.norm_stats;
  }
  for (std::size_t i = 0; i < nq; ++i) {
    auto& dst = i < n_train ? split.train : (i < n_train + n_valid ? split.validation : split.test);
    dst.queries.push_back(ds.queries[i]);
  }
  return split;
}

}  // namespace ltrnn
