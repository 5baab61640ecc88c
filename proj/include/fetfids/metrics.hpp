#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fetfids {

/// J×J counts; rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);

  std::size_t classes() const noexcept { return classes_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * classes_ + pred]; }
  std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return counts_[truth * classes_ + pred]; }

  void add(int truth, int pred);
  std::uint64_t total() const;
  std::uint64_t trace() const;

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

/// Counts (truth, pred) pairs. Throws DimensionError on unequal lengths and
/// LabelError naming the index of any label outside [0, classes).
ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  std::uint64_t predicted = 0;
  // 0/0 rates were replaced by 0.
  bool precision_undefined = false;
  bool recall_undefined = false;
};

/// Rates in [0, 1]. Macro averages weight every class equally; weighted
/// averages weight by support.
struct MetricsReport {
  double accuracy = 0.0;
  std::vector<ClassMetrics> per_class;
  double precision_macro = 0.0;
  double recall_macro = 0.0;
  double f1_macro = 0.0;
  double precision_weighted = 0.0;
  double recall_weighted = 0.0;
  double f1_weighted = 0.0;
  std::uint64_t total = 0;

  /// Flat `key=value` lines, one metric per line, percentages for rates.
  std::string to_key_value() const;
};

/// Per-class precision TP/(TP+FP), recall TP/(TP+FN), F1 = 2TP/(2TP+FP+FN)
/// (the harmonic mean of the two); undefined rates count as 0. Throws
/// EmptyEvaluationError on an all-zero matrix.
MetricsReport report(const ConfusionMatrix& cm);

}  // namespace fetfids
