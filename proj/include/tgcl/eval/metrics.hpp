#pragma once

// Ranking and regression metrics.
//
// auc_roc: Mann-Whitney, (wins + ties / 2) / (P N) over positive/negative pairs.
// auc_pr:  average precision, precision@k averaged over the ranks k of the
//          positives in a descending-score sweep; equal scores keep index order.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "tgcl/errors.hpp"

namespace tgcl::eval {

using Labels = std::vector<std::uint8_t>;

namespace detail {

inline void check_inputs(const std::vector<double>& scores, const Labels& labels, const char* what) {
  if (scores.size() != labels.size())
    throw DimensionError(std::string(what) + ": " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  for (double s : scores)
    if (std::isnan(s)) throw DomainError(std::string(what) + ": NaN score");
  for (auto y : labels)
    if (y > 1) throw DomainError(std::string(what) + ": labels must be 0 or 1");
}

// Indices by descending score, ties by ascending index.
inline std::vector<std::size_t> descending(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace detail

inline double auc_roc(const std::vector<double>& scores, const Labels& labels) {
  detail::check_inputs(scores, labels, "auc_roc");
  const auto order = detail::descending(scores);
  std::uint64_t pos = 0, neg = 0;
  for (auto y : labels) (y ? pos : neg)++;
  if (pos == 0 || neg == 0) throw MetricError("auc_roc undefined: labels contain a single class");

  // Walk groups of equal scores from the bottom; a positive beats every
  // negative strictly below its group and ties with those inside it.
  std::uint64_t twice_credit = 0, neg_below = 0;
  std::size_t end = order.size();
  while (end > 0) {
    std::size_t begin = end - 1;
    while (begin > 0 && scores[order[begin - 1]] == scores[order[end - 1]]) --begin;
    std::uint64_t gp = 0, gn = 0;
    for (std::size_t k = begin; k < end; ++k) (labels[order[k]] ? gp : gn)++;
    twice_credit += 2 * gp * neg_below + gp * gn;
    neg_below += gn;
    end = begin;
  }
  return double(twice_credit) / (2.0 * double(pos) * double(neg));
}

inline double auc_pr(const std::vector<double>& scores, const Labels& labels) {
  detail::check_inputs(scores, labels, "auc_pr");
  const auto order = detail::descending(scores);
  std::size_t pos = 0;
  for (auto y : labels) pos += y;
  if (pos == 0) throw MetricError("auc_pr undefined: no positive labels");
  double sum = 0.0;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (!labels[order[k]]) continue;
    ++tp;
    sum += double(tp) / double(k + 1);
  }
  return sum / double(pos);
}

// Per-label columns of a multi-label problem.
struct MultiLabel {
  std::vector<std::vector<double>> scores;  // one column per label
  std::vector<Labels> labels;
};

struct Aggregate {
  double macro = 0.0;
  double micro = 0.0;
  std::size_t defined = 0;  // labels that entered the macro mean
  std::size_t skipped = 0;  // labels whose metric is undefined
};

template <typename Metric>
Aggregate aggregate(const MultiLabel& m, Metric metric) {
  if (m.scores.size() != m.labels.size()) throw DimensionError("multilabel: score and label column counts differ");
  if (m.scores.empty()) throw DimensionError("multilabel: no label columns");
  Aggregate a;
  std::vector<double> flat_s;
  Labels flat_y;
  for (std::size_t c = 0; c < m.scores.size(); ++c) {
    try {
      a.macro += metric(m.scores[c], m.labels[c]);
      ++a.defined;
    } catch (const MetricError&) {
      ++a.skipped;
    }
    flat_s.insert(flat_s.end(), m.scores[c].begin(), m.scores[c].end());
    flat_y.insert(flat_y.end(), m.labels[c].begin(), m.labels[c].end());
  }
  if (a.defined == 0) throw MetricError("multilabel: metric undefined for every label");
  a.macro /= double(a.defined);
  a.micro = metric(flat_s, flat_y);
  return a;
}

inline Aggregate multilabel_auc_roc(const MultiLabel& m) {
  return aggregate(m, [](const auto& s, const auto& y) { return auc_roc(s, y); });
}
inline Aggregate multilabel_auc_pr(const MultiLabel& m) {
  return aggregate(m, [](const auto& s, const auto& y) { return auc_pr(s, y); });
}

inline double mse(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw DimensionError("mse: size mismatch");
  if (pred.empty()) throw MetricError("mse undefined on an empty set");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (pred[i] - truth[i]) * (pred[i] - truth[i]);
  return s / double(pred.size());
}

// Mean absolute deviation between predictions and truth.
inline double mad(const std::vector<double>& pred, const std::vector<double>& truth) {
  if (pred.size() != truth.size()) throw DimensionError("mad: size mismatch");
  if (pred.empty()) throw MetricError("mad undefined on an empty set");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
  return s / double(pred.size());
}

}  // namespace tgcl::eval
