#include "riskseq/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "riskseq/common.hpp"

namespace riskseq::metrics {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw ValidationError("metrics: scores and labels differ in size");
  if (scores.empty()) throw ValidationError("metrics: empty input");
  for (double s : scores)
    if (!std::isfinite(s)) throw ValidationError("metrics: non-finite score");
  for (int y : labels)
    if (y != 0 && y != 1) throw ValidationError("metrics: labels must be 0/1");
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Walk tie groups in ascending score order. Each positive beats every
  // negative strictly below its group and draws (weight 1/2) with negatives
  // inside it. All terms are exact in double at these sizes.
  double num = 0.0;
  std::size_t neg_below = 0, pos_total = 0, neg_total = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    std::size_t gp = 0, gn = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == 1)
        ++gp;
      else
        ++gn;
      ++j;
    }
    num += static_cast<double>(gp) *
           (static_cast<double>(neg_below) + 0.5 * static_cast<double>(gn));
    neg_below += gn;
    pos_total += gp;
    neg_total += gn;
    i = j;
  }
  if (pos_total == 0 || neg_total == 0)
    throw ValidationError("metrics: need both classes for AUROC");
  return num / (static_cast<double>(pos_total) * static_cast<double>(neg_total));
}

double gini(std::span<const double> scores, std::span<const int> labels) {
  return 2.0 * auroc(scores, labels) - 1.0;
}

double recall_at_fraction(std::span<const double> scores, std::span<const int> labels,
                          double fraction) {
  check_inputs(scores, labels);
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw ValidationError("metrics: fraction must lie in (0,1]");
  const std::size_t n = scores.size();
  // Nudge before ceil so fraction*n that lands on an integer stays there
  // despite e.g. 0.05*200 rounding up in binary.
  std::size_t k = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(n) - 1e-9));
  k = std::min(n, std::max<std::size_t>(1, k));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::size_t pos_total = 0, pos_top = 0;
  for (std::size_t idx = 0; idx < n; ++idx) {
    if (labels[idx] == 1) ++pos_total;
  }
  if (pos_total == 0) throw ValidationError("metrics: no positives for recall");
  for (std::size_t idx = 0; idx < k; ++idx) {
    if (labels[order[idx]] == 1) ++pos_top;
  }
  return static_cast<double>(pos_top) / static_cast<double>(pos_total);
}

MetricReport report(std::span<const double> scores, std::span<const int> labels,
                    double fraction, std::string segment) {
  MetricReport r;
  r.segment = std::move(segment);
  r.fraction = fraction;
  r.n = scores.size();
  std::size_t pos = 0;
  for (int y : labels) pos += static_cast<std::size_t>(y == 1);
  r.n_positive = pos;
  if (pos == 0 || pos == r.n || r.n == 0) {
    r.absent = true;
    return r;
  }
  r.gini = gini(scores, labels);
  r.recall_at_fraction = recall_at_fraction(scores, labels, fraction);
  return r;
}

MetricReport report(const std::vector<ScoredRecord>& records, double fraction,
                    std::string segment) {
  std::vector<double> s;
  std::vector<int> y;
  s.reserve(records.size());
  y.reserve(records.size());
  for (const auto& r : records) {
    s.push_back(r.score);
    y.push_back(r.label);
  }
  return report(s, y, fraction, std::move(segment));
}

DefaultDateBins bin_by_default_date(const std::vector<ScoredRecord>& records, double fraction) {
  // Negatives are members who never default at all; rows with label 0 but a
  // default just beyond the horizon would dilute every bin the same way, so
  // they are excluded rather than shared.
  std::vector<double> neg_scores;
  for (const auto& r : records) {
    if (r.label == 0 && !r.months_to_default.has_value()) neg_scores.push_back(r.score);
  }

  auto bin_report = [&](double lo, double hi, const char* name) {
    std::vector<double> s = neg_scores;
    std::vector<int> y(neg_scores.size(), 0);
    for (const auto& r : records) {
      if (r.label != 1) continue;
      if (!r.months_to_default.has_value())
        throw ValidationError("metrics: positive record lacks months-to-default");
      double m = *r.months_to_default;
      if (m > lo && m <= hi) {
        s.push_back(r.score);
        y.push_back(1);
      }
    }
    return report(s, y, fraction, name);
  };

  DefaultDateBins out;
  out.near_term = bin_report(0.0, 6.0, "default_in_0_6");
  out.mid_term = bin_report(6.0, 12.0, "default_in_6_12");
  out.long_term = bin_report(12.0, 18.0, "default_in_12_18");
  return out;
}

MetricReport segment_high_exposure(const std::vector<ScoredRecord>& records, double threshold,
                                   double fraction) {
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& r : records) {
    if (r.exposure > threshold) {
      s.push_back(r.score);
      y.push_back(r.label);
    }
  }
  MetricReport rep = report(s, y, fraction, "high_exposure");
  if (s.empty()) rep.absent = true;
  return rep;
}

}  // namespace riskseq::metrics
