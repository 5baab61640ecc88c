#pragma once

// Confusion-matrix metrics in exact rational arithmetic.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "fetfids/metrics.hpp"
#include "fetfids/rng.hpp"

namespace oracle {

struct Fraction {
  std::int64_t num = 0, den = 1;

  Fraction() = default;
  Fraction(std::int64_t n, std::int64_t d = 1) : num(n), den(d) {
    if (den == 0) {  // 0/0 rates count as 0
      num = 0;
      den = 1;
    }
    const auto g = std::gcd(num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }
  friend Fraction operator+(Fraction a, Fraction b) { return {a.num * b.den + b.num * a.den, a.den * b.den}; }
  friend Fraction operator*(Fraction a, Fraction b) { return {a.num * b.num, a.den * b.den}; }
  friend bool operator==(Fraction a, Fraction b) { return a.num == b.num && a.den == b.den; }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

struct ExactMetrics {
  Fraction accuracy;
  std::vector<Fraction> precision, recall, f1;
  Fraction precision_macro, recall_macro, f1_macro;
  Fraction precision_weighted, recall_weighted, f1_weighted;
};

/// Straight from the definitions: TP on the diagonal, FP down the column,
/// FN along the row; F1 as the harmonic mean of precision and recall.
inline ExactMetrics exact_metrics(const std::vector<std::vector<std::int64_t>>& cm) {
  const std::size_t j = cm.size();
  std::int64_t total = 0, trace = 0;
  for (std::size_t t = 0; t < j; ++t)
    for (std::size_t p = 0; p < j; ++p) {
      total += cm[t][p];
      if (t == p) trace += cm[t][p];
    }
  ExactMetrics m;
  m.accuracy = Fraction(trace, total);
  for (std::size_t c = 0; c < j; ++c) {
    std::int64_t col = 0, row = 0;
    for (std::size_t o = 0; o < j; ++o) {
      col += cm[o][c];
      row += cm[c][o];
    }
    const Fraction p(cm[c][c], col), r(cm[c][c], row);
    const Fraction sum = p + r;
    const Fraction f1 = sum.num == 0 ? Fraction(0) : Fraction(2) * p * r * Fraction(sum.den, sum.num);
    m.precision.push_back(p);
    m.recall.push_back(r);
    m.f1.push_back(f1);
    m.precision_macro = m.precision_macro + p * Fraction(1, static_cast<std::int64_t>(j));
    m.recall_macro = m.recall_macro + r * Fraction(1, static_cast<std::int64_t>(j));
    m.f1_macro = m.f1_macro + f1 * Fraction(1, static_cast<std::int64_t>(j));
    m.precision_weighted = m.precision_weighted + p * Fraction(row, total);
    m.recall_weighted = m.recall_weighted + r * Fraction(row, total);
    m.f1_weighted = m.f1_weighted + f1 * Fraction(row, total);
  }
  return m;
}

/// Random J×J count matrix with a heavier diagonal and a few empty rows/columns.
inline std::vector<std::vector<std::int64_t>> random_confusion(fetfids::Rng& rng, std::size_t j) {
  std::vector<std::vector<std::int64_t>> cm(j, std::vector<std::int64_t>(j, 0));
  const std::size_t empty_row = rng.index(3) == 0 ? rng.index(j) : j;
  const std::size_t empty_col = rng.index(3) == 0 ? rng.index(j) : j;
  for (std::size_t t = 0; t < j; ++t)
    for (std::size_t p = 0; p < j; ++p) {
      if (t == empty_row || p == empty_col) continue;
      cm[t][p] = static_cast<std::int64_t>(rng.index(t == p ? 40 : 8));
    }
  if (cm[0][0] == 0 && empty_row != 0 && empty_col != 0) cm[0][0] = 1;  // never all-zero
  return cm;
}

inline fetfids::ConfusionMatrix to_matrix(const std::vector<std::vector<std::int64_t>>& cm) {
  fetfids::ConfusionMatrix m(cm.size());
  for (std::size_t t = 0; t < cm.size(); ++t)
    for (std::size_t p = 0; p < cm.size(); ++p) m(t, p) = static_cast<std::uint64_t>(cm[t][p]);
  return m;
}

/// Mismatches between a report and the exact values. Single divisions must be
/// the correctly rounded quotient; sums of J terms may differ by a few ulps.
inline std::vector<std::string> compare(const fetfids::MetricsReport& r, const ExactMetrics& e) {
  std::vector<std::string> bad;
  auto exact = [&](const std::string& what, double got, Fraction want) {
    if (got != want.value()) bad.push_back(what);
  };
  auto close = [&](const std::string& what, double got, Fraction want) {
    const double w = want.value();
    if (std::abs(got - w) > 8 * std::numeric_limits<double>::epsilon() * std::max(1e-300, std::abs(w)))
      bad.push_back(what);
  };
  exact("accuracy", r.accuracy, e.accuracy);
  for (std::size_t c = 0; c < e.precision.size(); ++c) {
    exact("precision" + std::to_string(c), r.per_class[c].precision, e.precision[c]);
    exact("recall" + std::to_string(c), r.per_class[c].recall, e.recall[c]);
    exact("f1_" + std::to_string(c), r.per_class[c].f1, e.f1[c]);
  }
  close("precision_macro", r.precision_macro, e.precision_macro);
  close("recall_macro", r.recall_macro, e.recall_macro);
  close("f1_macro", r.f1_macro, e.f1_macro);
  close("precision_weighted", r.precision_weighted, e.precision_weighted);
  close("recall_weighted", r.recall_weighted, e.recall_weighted);
  close("f1_weighted", r.f1_weighted, e.f1_weighted);
  return bad;
}

}  // namespace oracle
