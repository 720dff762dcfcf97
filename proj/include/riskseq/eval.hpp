#pragma once

// Rank metrics (Gini, recall at a fixed top fraction) and the segment /
// default-date-bin reports built on them.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace riskseq {

// One scored sequence window; the unit every metric consumes.
struct ScoredRecord {
  std::uint64_t member_id = 0;
  int window_id = 0;
  double score = 0.0;
  int label = 0;                             // default within 18 months of the scoring timestamp
  std::optional<double> months_to_default;   // from the scoring timestamp; absent for never-defaulters
  double exposure = 0.0;                     // raw last-month balance feature
};

namespace metrics {

struct MetricReport {
  double gini = 0.0;
  double recall_at_fraction = 0.0;
  double fraction = 0.0;
  std::size_t n = 0;
  std::size_t n_positive = 0;
  std::string segment;
  bool absent = false;  // set when the segment lacks positives or negatives
};

// 2*AUROC - 1, rank-based, ties counted as half. Throws ValidationError when
// only one class is present.
double gini(std::span<const double> scores, std::span<const int> labels);
double auroc(std::span<const double> scores, std::span<const int> labels);

// Recall among the top ceil(fraction*n) scores; ties at the cutoff broken by
// stable input order.
double recall_at_fraction(std::span<const double> scores, std::span<const int> labels,
                          double fraction);

MetricReport report(std::span<const double> scores, std::span<const int> labels,
                    double fraction, std::string segment = {});
MetricReport report(const std::vector<ScoredRecord>& records, double fraction,
                    std::string segment = {});

// Default-date bins: positives restricted to the bin, negatives shared across
// bins (never-defaulters only). Upper bounds are closed: near (0,6],
// mid (6,12], long (12,18].
struct DefaultDateBins {
  MetricReport near_term;
  MetricReport mid_term;
  MetricReport long_term;
};
DefaultDateBins bin_by_default_date(const std::vector<ScoredRecord>& records, double fraction);

// Metrics over members whose raw exposure feature exceeds the threshold.
MetricReport segment_high_exposure(const std::vector<ScoredRecord>& records, double threshold,
                                   double fraction);

}  // namespace metrics
}  // namespace riskseq
