#pragma once

#include <cstddef>
#include <optional>

namespace lcnn {

/// 2x2 counts with "tumorous" as the positive class.
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  void add(int truth, bool predicted_positive) {
    if (truth == 1)
      ++(predicted_positive ? tp : fn);
    else
      ++(predicted_positive ? fp : tn);
  }

  std::size_t total() const { return tp + tn + fp + fn; }
  std::size_t positives() const { return tp + fn; }
  std::size_t negatives() const { return tn + fp; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

/// Each value is empty when its denominator is zero.
struct Metrics {
  std::optional<double> accuracy;
  std::optional<double> specificity;
  std::optional<double> recall;
  std::optional<double> precision;
  std::optional<double> f1;
};

namespace detail {
inline std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace detail

inline Metrics compute_metrics(const ConfusionMatrix& cm) {
  Metrics m;
  m.accuracy = detail::ratio(cm.tp + cm.tn, cm.total());
  m.recall = detail::ratio(cm.tp, cm.tp + cm.fn);
  m.specificity = detail::ratio(cm.tn, cm.tn + cm.fp);
  m.precision = detail::ratio(cm.tp, cm.tp + cm.fp);
  if (m.precision && m.recall && (*m.precision + *m.recall) > 0)
    m.f1 = 2.0 * *m.precision * *m.recall / (*m.precision + *m.recall);
  return m;
}

}  // namespace lcnn
