#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fetfids {

inline constexpr std::size_t kNslKddFeatures = 41;
inline constexpr std::size_t kNslKddFields = 43;  // features, label, difficulty
inline constexpr std::size_t kNumClasses = 5;
/// protocol_type, service, flag
inline constexpr std::array<std::size_t, 3> kCategoricalColumns = {1, 2, 3};

/// Class ids used throughout the project.
enum class TrafficClass : int { benign = 0, dos = 1, u2r = 2, r2l = 3, probe = 4 };

const std::array<std::string_view, kNumClasses>& class_names();
const std::array<std::string_view, kNslKddFeatures>& feature_names();
bool is_categorical_column(std::size_t column);

struct RawRecord {
  std::array<double, kNslKddFeatures> numeric{};            // categorical slots stay 0
  std::array<std::string, kCategoricalColumns.size()> categorical;
  std::string label;
  int difficulty = 0;

  bool operator==(const RawRecord&) const = default;
};

/// Parses NSL-KDD text. Blank lines are skipped; any other line must have
/// exactly 43 comma-separated fields. Errors carry `source` and the 1-based
/// line number (and the field index for bad numerics).
std::vector<RawRecord> parse_nslkdd_text(std::string_view text, std::string_view source = "<text>");
std::vector<RawRecord> parse_nslkdd(const std::filesystem::path& path);

/// One NSL-KDD line (no trailing newline) that parses back to `record`.
std::string format_record(const RawRecord& record);

/// Attack-name → class table. The bundled copy is built from
/// data/nslkdd_attack_categories.csv.
class CategoryTable {
 public:
  static const CategoryTable& builtin();
  /// `label,category` lines; '#' comments and the header row are skipped.
  static CategoryTable parse(std::string_view csv);

  /// Throws UnknownLabelError for names not in the table.
  int map(std::string_view name) const;
  std::size_t size() const { return table_.size(); }

 private:
  std::map<std::string, int, std::less<>> table_;
};

/// Class id of an NSL-KDD label using the bundled table.
int map_label(std::string_view name);

/// Min-max and vocabulary statistics fitted on training records only.
struct Encoder {
  std::array<std::vector<std::string>, kCategoricalColumns.size()> vocab;  // first-seen order
  std::array<double, kNslKddFeatures> min{};
  std::array<double, kNslKddFeatures> max{};

  /// Index of `value` in vocabulary `slot`, or -1 when out of vocabulary.
  int vocab_index(std::size_t slot, std::string_view value) const;
  /// Feature vector in [0,1]^41.
  std::array<double, kNslKddFeatures> encode_features(const RawRecord& record) const;
};

/// Throws EmptyCorpusError on an empty corpus.
Encoder fit_encoder(std::span<const RawRecord> train);

struct EncodedExample {
  std::vector<double> features;
  int label = 0;
};

/// Row-major example store used for batching.
class Dataset {
 public:
  explicit Dataset(std::size_t n_features = kNslKddFeatures) : features_(n_features) {}

  std::size_t n_features() const noexcept { return features_; }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }

  void push_back(std::span<const double> features, int label);
  void push_back(const EncodedExample& e) { push_back(e.features, e.label); }

  std::span<const double> row(std::size_t i) const { return {values_.data() + i * features_, features_}; }
  int label(std::size_t i) const { return labels_[i]; }
  std::span<const int> labels() const noexcept { return labels_; }
  std::span<const double> values() const noexcept { return values_; }
  EncodedExample example(std::size_t i) const;

  Dataset subset(std::span<const std::size_t> rows) const;
  /// Per-class example counts.
  std::vector<std::size_t> histogram(std::size_t classes = kNumClasses) const;

  bool operator==(const Dataset&) const = default;

 private:
  std::size_t features_;
  std::vector<double> values_;
  std::vector<int> labels_;
};

/// Encodes records: numerics min-max scaled and clamped to [0,1] (constant
/// features map to 0); a categorical value v maps to index(v)/max(1, |vocab|−1),
/// out-of-vocabulary values to 1.0. Labels go through map_label.
Dataset encode(std::span<const RawRecord> records, const Encoder& encoder);

struct SplitRatios {
  double train = 0.85;
  double val = 0.075;
  double test = 0.075;
};

struct SplitIndices {
  std::vector<std::size_t> train, val, test;  // ascending
};

/// Class-stratified seeded split. Per class, round(ratio·n_c) members go to
/// train and val and the remainder to test. Throws ConfigError unless the
/// ratios are non-negative and sum to 1 within 1e-9.
SplitIndices split_indices(std::span<const int> labels, const SplitRatios& ratios, std::uint64_t seed);

struct DataSplits {
  Dataset train, val, test;
};
DataSplits split(const Dataset& examples, const SplitRatios& ratios, std::uint64_t seed);

struct NodePartition {
  int node_id = 0;
  std::vector<std::size_t> rows;  // indices into the training split, ascending
  Dataset examples;
};

/// Row assignment for `n_nodes` nodes: each class's members are shuffled and
/// dealt round-robin, the dealing position carrying over from one class to the
/// next. Throws ConfigError if n_nodes is 0 or exceeds the number of rows.
std::vector<std::vector<std::size_t>> partition_indices(std::span<const int> labels, std::size_t n_nodes,
                                                        std::uint64_t seed);
std::vector<NodePartition> partition(const Dataset& train, std::size_t n_nodes, std::uint64_t seed);

/// Seeded stratified subsample keeping round(fraction·n_c) (at least one) rows per present class.
std::vector<std::size_t> subsample_indices(std::span<const int> labels, double fraction, std::uint64_t seed);

/// Comma-separated text: header of feature names plus `label`, one example per
/// line with shortest round-trip doubles.
std::string format_encoded_csv(const Dataset& data);
void write_encoded_csv(const Dataset& data, const std::filesystem::path& path);
Dataset read_encoded_csv(const std::filesystem::path& path);

}  // namespace fetfids
