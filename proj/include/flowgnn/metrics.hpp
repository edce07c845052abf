#pragma once

// Classification and regression metrics: balanced accuracy (macro recall),
// macro-averaged F1, RMSE, and Pearson's R.

#include <cmath>
#include <optional>
#include <vector>

#include "flowgnn/core.hpp"

namespace flowgnn {

// counts[t][p] = number of samples with true class t predicted as p.
struct ConfusionMatrix {
  std::vector<std::vector<std::size_t>> counts;

  explicit ConfusionMatrix(std::size_t num_classes = 0)
      : counts(num_classes, std::vector<std::size_t>(num_classes, 0)) {}

  std::size_t num_classes() const { return counts.size(); }

  void add(std::size_t truth, std::size_t pred) {
    if (truth >= num_classes() || pred >= num_classes())
      throw std::out_of_range("ConfusionMatrix: class index out of range");
    counts[truth][pred]++;
  }

  std::size_t support(std::size_t c) const {
    std::size_t s = 0;
    for (std::size_t p = 0; p < num_classes(); ++p) s += counts[c][p];
    return s;
  }

  std::size_t predicted(std::size_t c) const {
    std::size_t s = 0;
    for (std::size_t t = 0; t < num_classes(); ++t) s += counts[t][c];
    return s;
  }

  std::size_t total() const {
    std::size_t s = 0;
    for (std::size_t c = 0; c < num_classes(); ++c) s += support(c);
    return s;
  }
};

// Mean per-class recall over classes with nonzero support. For the binary
// case this is (TP/(TP+FN) + TN/(TN+FP)) / 2.
inline double balanced_accuracy(const ConfusionMatrix& cm) {
  double sum = 0;
  std::size_t used = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const std::size_t sup = cm.support(c);
    if (sup == 0) continue;
    sum += static_cast<double>(cm.counts[c][c]) / static_cast<double>(sup);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("balanced_accuracy: no class has samples");
  return sum / static_cast<double>(used);
}

// Macro-averaged F1 over all classes; a class whose precision+recall is
// zero contributes 0.
inline double macro_f1(const ConfusionMatrix& cm) {
  if (cm.num_classes() == 0 || cm.total() == 0)
    throw std::invalid_argument("macro_f1: empty confusion matrix");
  double sum = 0;
  for (std::size_t c = 0; c < cm.num_classes(); ++c) {
    const std::size_t tp = cm.counts[c][c];
    const std::size_t sup = cm.support(c);
    const std::size_t pred = cm.predicted(c);
    const double recall = sup == 0 ? 0 : static_cast<double>(tp) / static_cast<double>(sup);
    const double precision = pred == 0 ? 0 : static_cast<double>(tp) / static_cast<double>(pred);
    sum += (precision + recall) > 0 ? 2 * precision * recall / (precision + recall) : 0;
  }
  return sum / static_cast<double>(cm.num_classes());
}

inline double rmse(const std::vector<double>& preds, const std::vector<double>& targets) {
  if (preds.size() != targets.size() || preds.empty())
    throw std::invalid_argument("rmse: need equal-length nonempty inputs");
  double s = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - targets[i];
    s += d * d;
  }
  return std::sqrt(s / static_cast<double>(preds.size()));
}

inline double pearson_r(const std::vector<double>& preds, const std::vector<double>& targets) {
  if (preds.size() != targets.size() || preds.empty())
    throw std::invalid_argument("pearson_r: need equal-length nonempty inputs");
  const double n = static_cast<double>(preds.size());
  double mp = 0, mt = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    mp += preds[i];
    mt += targets[i];
  }
  mp /= n;
  mt /= n;
  double cov = 0, vp = 0, vt = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    cov += (preds[i] - mp) * (targets[i] - mt);
    vp += (preds[i] - mp) * (preds[i] - mp);
    vt += (targets[i] - mt) * (targets[i] - mt);
  }
  if (vp == 0 || vt == 0)
    throw std::invalid_argument("pearson_r: undefined for zero-variance input");
  return cov / std::sqrt(vp * vt);
}

struct MetricsReport {
  std::optional<double> balanced_accuracy;
  std::optional<double> macro_f1;
  std::optional<double> accuracy;
  std::optional<double> rmse;
  std::optional<double> pearson_r;
  std::optional<double> loss;
  ConfusionMatrix confusion;
};

}  // namespace flowgnn
