#pragma once

// Monthly sampling scheme: one random transaction per member per month with
// billing-snapshot fallback, front zero-padding with a binary loss mask,
// per-step 18-month labels, and the time-shifted window augmentation.
// Window ends are exclusive calendar month counts: a window ending at E
// covers months [E-12, E).

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "riskseq/portfolio.hpp"
#include "riskseq/table.hpp"
#include "riskseq/tabprep.hpp"

namespace riskseq::seq {

constexpr int kSeqLen = 12;
constexpr double kLabelHorizon = 18.0;

struct SequenceSample {
  std::uint64_t member_id = 0;
  int window_id = 0;
  int n_features = 0;
  std::vector<float> features;  // kSeqLen x F, step-major; exact zeros where masked
  std::array<std::uint8_t, kSeqLen> mask{};         // non-decreasing: padding is a prefix
  std::array<std::uint8_t, kSeqLen> step_labels{};  // default within 18 months of the step
  std::array<double, kSeqLen> step_ts{};
  std::uint8_t last_label = 0;  // label of the final step
  std::optional<double> months_to_default;  // from the final step's timestamp
  double raw_exposure = 0.0;    // unpreprocessed exposure at the final step

  int first_real_step() const;  // kSeqLen when fully masked
};

struct SequenceDataset {
  int n_features = 0;
  int base_end_month = 0;
  int n_windows = 1;
  std::uint64_t sample_seed = 0;
  std::vector<SequenceSample> samples;
};

// Uniformly random transaction for (member, month), falling back to the
// billing snapshot when the month is inactive. Pure in (seed, member, month).
const Transaction& sample_month(const MemberHistory& m, int month, std::uint64_t seed);

// 12 sampled months ending just before window_end; artifacts transform each
// sampled vector; months before the member's start are zero-padded.
SequenceSample build_sequence(const MemberHistory& m, const PortfolioConfig& cfg,
                              int window_end, const prep::PreprocessArtifacts& artifacts,
                              std::uint64_t seed);

// Windows ending at base_end, base_end+1, base_end+2 (clipped to the
// available months, with a warning when fewer than three fit).
std::vector<SequenceSample> shift_windows(const MemberHistory& m, const PortfolioConfig& cfg,
                                          int base_end, const prep::PreprocessArtifacts& artifacts,
                                          std::uint64_t seed);

// All members x windows; members with no observed month in a window are
// skipped for that window. Row order: member-major, then window.
SequenceDataset build_dataset(const Portfolio& p, const prep::PreprocessArtifacts& artifacts,
                              int base_end, int n_windows, std::uint64_t seed);

// Raw (unpreprocessed) final-step rows for the last-month benchmark path,
// aligned 1:1 with build_dataset's row order.
struct LastMonthRows {
  DataTable table;  // labeled with the final-step label
  std::vector<std::uint64_t> member_ids;
  std::vector<int> window_ids;
  std::vector<double> ts;
  std::vector<double> raw_exposure;
  std::vector<std::optional<double>> months_to_default;
};
LastMonthRows build_last_month_rows(const Portfolio& p, int base_end, int n_windows,
                                    std::uint64_t seed);

// Rolling serving buffer: the most recent <= 11 preprocessed month vectors.
struct SequenceStoreEntry {
  std::uint64_t member_id = 0;
  std::vector<std::vector<float>> steps;  // oldest -> newest
  std::vector<double> step_ts;

  void validate() const;
};

// Buffer + incoming transaction as the final step; the entry is not mutated.
SequenceSample append_incoming(const SequenceStoreEntry& entry,
                               const std::vector<float>& preprocessed_txn, double ts);

// Monthly maintenance: push one sampled month vector, evict the oldest
// beyond 11.
void roll_month(SequenceStoreEntry& entry, std::vector<float> month_vec, double ts);

// Keep only the most recent `length` steps: earlier steps get mask 0 and
// zeroed features/labels (sequence-length sweep).
SequenceSample truncate_to_length(const SequenceSample& s, int length);

// Little-endian binary container, versioned.
void save_dataset(const SequenceDataset& ds, const std::string& path);
SequenceDataset load_dataset(const std::string& path);

}  // namespace riskseq::seq
