#include "fetfids/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include "fetfids/category_table.hpp"  // generated
#include "fetfids/errors.hpp"
#include "fetfids/io.hpp"
#include "fetfids/rng.hpp"

namespace fetfids {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

std::size_t categorical_slot(std::size_t column) {
  for (std::size_t s = 0; s < kCategoricalColumns.size(); ++s) {
    if (kCategoricalColumns[s] == column) return s;
  }
  return kCategoricalColumns.size();
}

int class_from_name(std::string_view name) {
  const auto& names = class_names();
  for (std::size_t c = 0; c < names.size(); ++c) {
    if (names[c] == name) return static_cast<int>(c);
  }
  throw ConfigError("unknown traffic category '" + std::string(name) + "' in category table");
}

}  // namespace

const std::array<std::string_view, kNumClasses>& class_names() {
  static const std::array<std::string_view, kNumClasses> names = {"benign", "dos", "u2r", "r2l", "probe"};
  return names;
}

const std::array<std::string_view, kNslKddFeatures>& feature_names() {
  static const std::array<std::string_view, kNslKddFeatures> names = {
      "duration",
      "protocol_type",
      "service",
      "flag",
      "src_bytes",
      "dst_bytes",
      "land",
      "wrong_fragment",
      "urgent",
      "hot",
      "num_failed_logins",
      "logged_in",
      "num_compromised",
      "root_shell",
      "su_attempted",
      "num_root",
      "num_file_creations",
      "num_shells",
      "num_access_files",
      "num_outbound_cmds",
      "is_host_login",
      "is_guest_login",
      "count",
      "srv_count",
      "serror_rate",
      "srv_serror_rate",
      "rerror_rate",
      "srv_rerror_rate",
      "same_srv_rate",
      "diff_srv_rate",
      "srv_diff_host_rate",
      "dst_host_count",
      "dst_host_srv_count",
      "dst_host_same_srv_rate",
      "dst_host_diff_srv_rate",
      "dst_host_same_src_port_rate",
      "dst_host_srv_diff_host_rate",
      "dst_host_serror_rate",
      "dst_host_srv_serror_rate",
      "dst_host_rerror_rate",
      "dst_host_srv_rerror_rate",
  };
  return names;
}

bool is_categorical_column(std::size_t column) { return categorical_slot(column) < kCategoricalColumns.size(); }

// ---------------------------------------------------------------------------

std::vector<RawRecord> parse_nslkdd_text(std::string_view text, std::string_view source) {
  std::vector<RawRecord> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;

    const auto fields = split_fields(line);
    const std::string where = std::string(source) + ":" + std::to_string(line_no);
    if (fields.size() != kNslKddFields) {
      throw ParseError(where + ": expected " + std::to_string(kNslKddFields) + " fields, found " +
                       std::to_string(fields.size()));
    }
    RawRecord r;
    for (std::size_t col = 0; col < kNslKddFeatures; ++col) {
      const auto slot = categorical_slot(col);
      if (slot < kCategoricalColumns.size()) {
        if (fields[col].empty()) throw ParseError(where + ": field " + std::to_string(col) + " is empty");
        r.categorical[slot] = std::string(fields[col]);
      } else if (!parse_double(fields[col], r.numeric[col])) {
        throw ParseError(where + ": field " + std::to_string(col) + " ('" + std::string(fields[col]) +
                         "') is not a finite number");
      }
    }
    r.label = std::string(fields[kNslKddFeatures]);
    double difficulty = 0.0;
    if (!parse_double(fields[kNslKddFeatures + 1], difficulty) || difficulty != std::floor(difficulty)) {
      throw ParseError(where + ": field " + std::to_string(kNslKddFeatures + 1) + " (difficulty) is not an integer");
    }
    r.difficulty = static_cast<int>(difficulty);
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<RawRecord> parse_nslkdd(const std::filesystem::path& path) {
  return parse_nslkdd_text(read_file(path), path.string());
}

std::string format_record(const RawRecord& record) {
  std::string out;
  for (std::size_t col = 0; col < kNslKddFeatures; ++col) {
    const auto slot = categorical_slot(col);
    out += slot < kCategoricalColumns.size() ? record.categorical[slot] : format_double(record.numeric[col]);
    out += ',';
  }
  out += record.label;
  out += ',';
  out += std::to_string(record.difficulty);
  return out;
}

// ---------------------------------------------------------------------------

const CategoryTable& CategoryTable::builtin() {
  static const CategoryTable table = parse(detail::kCategoryTableCsv);
  return table;
}

CategoryTable CategoryTable::parse(std::string_view csv) {
  CategoryTable t;
  std::size_t start = 0;
  while (start < csv.size()) {
    auto end = csv.find('\n', start);
    if (end == std::string_view::npos) end = csv.size();
    const auto line = trim(csv.substr(start, end - start));
    start = end + 1;
    if (line.empty() || line.front() == '#' || line == "label,category") continue;
    const auto comma = line.find(',');
    if (comma == std::string_view::npos) throw ConfigError("category table line without comma: " + std::string(line));
    const auto name = trim(line.substr(0, comma));
    const auto category = trim(line.substr(comma + 1));
    t.table_.emplace(std::string(name), class_from_name(category));
  }
  return t;
}

int CategoryTable::map(std::string_view name) const {
  auto key = trim(name);
  if (!key.empty() && key.back() == '.') key.remove_suffix(1);
  const auto it = table_.find(key);
  if (it == table_.end()) throw UnknownLabelError(std::string(name));
  return it->second;
}

int map_label(std::string_view name) { return CategoryTable::builtin().map(name); }

// ---------------------------------------------------------------------------

int Encoder::vocab_index(std::size_t slot, std::string_view value) const {
  const auto& v = vocab[slot];
  const auto it = std::find(v.begin(), v.end(), value);
  return it == v.end() ? -1 : static_cast<int>(it - v.begin());
}

std::array<double, kNslKddFeatures> Encoder::encode_features(const RawRecord& record) const {
  std::array<double, kNslKddFeatures> out{};
  for (std::size_t col = 0; col < kNslKddFeatures; ++col) {
    const auto slot = categorical_slot(col);
    if (slot < kCategoricalColumns.size()) {
      const int idx = vocab_index(slot, record.categorical[slot]);
      if (idx < 0) {
        out[col] = 1.0;
      } else {
        const double denom = static_cast<double>(std::max<std::size_t>(1, vocab[slot].size() - 1));
        out[col] = static_cast<double>(idx) / denom;
      }
      continue;
    }
    const double range = max[col] - min[col];
    if (!(range > 0.0)) {
      out[col] = 0.0;
      continue;
    }
    const double scaled = (record.numeric[col] - min[col]) / range;
    out[col] = std::isnan(scaled) ? 0.0 : std::clamp(scaled, 0.0, 1.0);
  }
  return out;
}

Encoder fit_encoder(std::span<const RawRecord> train) {
  if (train.empty()) throw EmptyCorpusError("cannot fit an encoder on an empty corpus");
  Encoder e;
  e.min = train.front().numeric;
  e.max = train.front().numeric;
  for (const auto& r : train) {
    for (std::size_t col = 0; col < kNslKddFeatures; ++col) {
      e.min[col] = std::min(e.min[col], r.numeric[col]);
      e.max[col] = std::max(e.max[col], r.numeric[col]);
    }
    for (std::size_t s = 0; s < kCategoricalColumns.size(); ++s) {
      if (e.vocab_index(s, r.categorical[s]) < 0) e.vocab[s].push_back(r.categorical[s]);
    }
  }
  for (auto col : kCategoricalColumns) {
    e.min[col] = 0.0;
    e.max[col] = 0.0;
  }
  return e;
}

// ---------------------------------------------------------------------------

void Dataset::push_back(std::span<const double> features, int label) {
  if (features.size() != features_) {
    throw DimensionError("dataset expects " + std::to_string(features_) + " features, got " +
                         std::to_string(features.size()));
  }
  values_.insert(values_.end(), features.begin(), features.end());
  labels_.push_back(label);
}

EncodedExample Dataset::example(std::size_t i) const {
  const auto r = row(i);
  return {std::vector<double>(r.begin(), r.end()), labels_[i]};
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out(features_);
  out.values_.reserve(rows.size() * features_);
  out.labels_.reserve(rows.size());
  for (auto i : rows) out.push_back(row(i), labels_[i]);
  return out;
}

std::vector<std::size_t> Dataset::histogram(std::size_t classes) const {
  std::vector<std::size_t> h(classes, 0);
  for (int l : labels_) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) throw LabelError("label " + std::to_string(l) + " out of range");
    ++h[static_cast<std::size_t>(l)];
  }
  return h;
}

Dataset encode(std::span<const RawRecord> records, const Encoder& encoder) {
  Dataset out(kNslKddFeatures);
  const auto& table = CategoryTable::builtin();
  for (const auto& r : records) {
    const auto features = encoder.encode_features(r);
    out.push_back(features, table.map(r.label));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<std::size_t>> members_by_class(std::span<const int> labels) {
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw LabelError("negative label " + std::to_string(l));
    max_label = std::max(max_label, l);
  }
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(max_label + 1));
  for (std::size_t i = 0; i < labels.size(); ++i) members[static_cast<std::size_t>(labels[i])].push_back(i);
  return members;
}

std::size_t round_count(double ratio, std::size_t n) {
  return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
}

}  // namespace

SplitIndices split_indices(std::span<const int> labels, const SplitRatios& ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be non-negative and sum to 1");
  }
  Rng rng(derive_seed({seed, 0x5B117}));
  SplitIndices out;
  for (auto& members : members_by_class(labels)) {
    rng.shuffle(std::span<std::size_t>(members));
    const std::size_t n = members.size();
    const std::size_t n_train = std::min(n, round_count(ratios.train, n));
    const std::size_t n_val = std::min(n - n_train, round_count(ratios.val, n));
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    out.val.insert(out.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train),
                   members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    out.test.insert(out.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

DataSplits split(const Dataset& examples, const SplitRatios& ratios, std::uint64_t seed) {
  const auto idx = split_indices(examples.labels(), ratios, seed);
  return {examples.subset(idx.train), examples.subset(idx.val), examples.subset(idx.test)};
}

std::vector<std::vector<std::size_t>> partition_indices(std::span<const int> labels, std::size_t n_nodes,
                                                        std::uint64_t seed) {
  if (n_nodes == 0) throw ConfigError("n_nodes must be at least 1");
  if (n_nodes > labels.size()) {
    throw ConfigError("cannot partition " + std::to_string(labels.size()) + " examples over " +
                      std::to_string(n_nodes) + " nodes");
  }
  Rng rng(derive_seed({seed, 0x9A27}));
  std::vector<std::vector<std::size_t>> nodes(n_nodes);
  std::size_t cursor = 0;
  for (auto& members : members_by_class(labels)) {
    rng.shuffle(std::span<std::size_t>(members));
    for (auto i : members) nodes[cursor++ % n_nodes].push_back(i);
  }
  for (auto& n : nodes) std::sort(n.begin(), n.end());
  return nodes;
}

std::vector<NodePartition> partition(const Dataset& train, std::size_t n_nodes, std::uint64_t seed) {
  auto idx = partition_indices(train.labels(), n_nodes, seed);
  std::vector<NodePartition> out;
  out.reserve(n_nodes);
  for (std::size_t k = 0; k < n_nodes; ++k) {
    NodePartition p;
    p.node_id = static_cast<int>(k);
    p.examples = train.subset(idx[k]);
    p.rows = std::move(idx[k]);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<std::size_t> subsample_indices(std::span<const int> labels, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0) || fraction > 1.0) throw ConfigError("subsample fraction must be in (0, 1]");
  Rng rng(derive_seed({seed, 0x5AB5}));
  std::vector<std::size_t> out;
  for (auto& members : members_by_class(labels)) {
    if (members.empty()) continue;
    rng.shuffle(std::span<std::size_t>(members));
    const std::size_t keep = std::clamp<std::size_t>(round_count(fraction, members.size()), 1, members.size());
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------

std::string format_encoded_csv(const Dataset& data) {
  std::string out;
  for (std::size_t j = 0; j < data.n_features(); ++j) {
    out += data.n_features() == kNslKddFeatures ? std::string(feature_names()[j]) : "f" + std::to_string(j);
    out += ',';
  }
  out += "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.row(i)) {
      out += format_double(v);
      out += ',';
    }
    out += std::to_string(data.label(i));
    out += '\n';
  }
  return out;
}

void write_encoded_csv(const Dataset& data, const std::filesystem::path& path) {
  write_file_atomic(path, format_encoded_csv(data));
}

Dataset read_encoded_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::size_t start = 0;
  std::size_t line_no = 0;
  std::size_t n_features = 0;
  Dataset out;
  bool header = true;
  std::vector<double> row;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    const auto line = trim(std::string_view(text).substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (header) {
      if (fields.size() < 2 || fields.back() != "label") throw ParseError(where + ": missing encoded-data header");
      n_features = fields.size() - 1;
      out = Dataset(n_features);
      header = false;
      continue;
    }
    if (fields.size() != n_features + 1) {
      throw ParseError(where + ": expected " + std::to_string(n_features + 1) + " fields, found " +
                       std::to_string(fields.size()));
    }
    row.resize(n_features);
    for (std::size_t j = 0; j < n_features; ++j) {
      if (!parse_double(fields[j], row[j])) throw ParseError(where + ": field " + std::to_string(j) + " is not numeric");
    }
    double label = 0.0;
    if (!parse_double(fields.back(), label) || label < 0 || label != std::floor(label)) {
      throw ParseError(where + ": label is not a class id");
    }
    out.push_back(row, static_cast<int>(label));
  }
  if (header) throw ParseError(path.string() + ": empty encoded-data file");
  return out;
}

}  // namespace fetfids
