#include "fetfids/metrics.hpp"

#include <sstream>

#include "fetfids/errors.hpp"
#include "fetfids/io.hpp"

namespace fetfids {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(int truth, int pred) {
  const auto j = static_cast<int>(classes_);
  if (truth < 0 || truth >= j || pred < 0 || pred >= j) {
    throw LabelError("label pair (" + std::to_string(truth) + ", " + std::to_string(pred) + ") outside [0," +
                     std::to_string(classes_) + ")");
  }
  ++counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(pred)];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (auto c : counts_) n += c;
  return n;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t n = 0;
  for (std::size_t c = 0; c < classes_; ++c) n += (*this)(c, c);
  return n;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, std::size_t classes) {
  if (truth.size() != pred.size()) {
    throw DimensionError("confusion: " + std::to_string(truth.size()) + " true labels vs " +
                         std::to_string(pred.size()) + " predictions");
  }
  ConfusionMatrix cm(classes);
  const auto j = static_cast<int>(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0 || truth[i] >= j || pred[i] < 0 || pred[i] >= j) {
      throw LabelError("confusion: label out of range at index " + std::to_string(i));
    }
    cm.add(truth[i], pred[i]);
  }
  return cm;
}

MetricsReport report(const ConfusionMatrix& cm) {
  const std::size_t j = cm.classes();
  MetricsReport r;
  r.total = cm.total();
  if (r.total == 0) throw EmptyEvaluationError("cannot report metrics for an empty evaluation");
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(r.total);
  r.per_class.resize(j);
  for (std::size_t c = 0; c < j; ++c) {
    std::uint64_t tp = cm(c, c), fp = 0, fn = 0;
    for (std::size_t o = 0; o < j; ++o) {
      if (o == c) continue;
      fp += cm(o, c);
      fn += cm(c, o);
    }
    auto& m = r.per_class[c];
    m.support = tp + fn;
    m.predicted = tp + fp;
    m.precision_undefined = m.predicted == 0;
    m.recall_undefined = m.support == 0;
    m.precision = m.predicted ? static_cast<double>(tp) / static_cast<double>(m.predicted) : 0.0;
    m.recall = m.support ? static_cast<double>(tp) / static_cast<double>(m.support) : 0.0;
    const std::uint64_t f1_den = 2 * tp + fp + fn;
    m.f1 = tp ? static_cast<double>(2 * tp) / static_cast<double>(f1_den) : 0.0;

    r.precision_macro += m.precision;
    r.recall_macro += m.recall;
    r.f1_macro += m.f1;
    // support/total as one division, so scaling every count leaves it unchanged
    const double w = static_cast<double>(m.support) / static_cast<double>(r.total);
    r.precision_weighted += w * m.precision;
    r.recall_weighted += static_cast<double>(tp);  // support · (tp / support), kept exact
    r.f1_weighted += w * m.f1;
  }
  const double jd = static_cast<double>(j);
  const double n = static_cast<double>(r.total);
  r.precision_macro /= jd;
  r.recall_macro /= jd;
  r.f1_macro /= jd;
  r.recall_weighted /= n;
  return r;
}

std::string MetricsReport::to_key_value() const {
  std::ostringstream os;
  auto pct = [](double v) { return format_double(100.0 * v); };
  os << "examples=" << total << "\n";
  os << "accuracy=" << pct(accuracy) << "\n";
  os << "precision_macro=" << pct(precision_macro) << "\n";
  os << "recall_macro=" << pct(recall_macro) << "\n";
  os << "f1_macro=" << pct(f1_macro) << "\n";
  os << "precision_weighted=" << pct(precision_weighted) << "\n";
  os << "recall_weighted=" << pct(recall_weighted) << "\n";
  os << "f1_weighted=" << pct(f1_weighted) << "\n";
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const auto& m = per_class[c];
    const std::string p = "class" + std::to_string(c) + ".";
    os << p << "support=" << m.support << "\n";
    os << p << "precision=" << pct(m.precision) << "\n";
    os << p << "recall=" << pct(m.recall) << "\n";
    os << p << "f1=" << pct(m.f1) << "\n";
    if (m.precision_undefined) os << p << "precision_undefined=1\n";
    if (m.recall_undefined) os << p << "recall_undefined=1\n";
  }
  return os.str();
}

}  // namespace fetfids
