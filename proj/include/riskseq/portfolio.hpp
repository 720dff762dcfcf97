#pragma once

// Portfolio data model: card members with monthly billing snapshots, raw
// transaction lists, latent risk state, and the default outcome. Time is
// measured in months; a timestamp like 7.42 sits inside calendar month 7.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace riskseq {

struct PortfolioConfig {
  std::size_t n_members = 1000;
  int n_numeric = 20;
  int n_categorical = 4;
  int months = 14;  // leaves room for the two one-month window shifts
  double default_rate = 0.02;
  double missing_rate = 0.05;
  double drift_strength = 0.0;  // applied at generation when nonzero
  int drift_start_month = -1;   // must be set when drift_strength != 0
  std::uint64_t seed = 42;

  void validate() const;  // throws ValidationError
};

struct Transaction {
  double ts = 0.0;              // absolute time in months
  std::vector<double> numeric;  // NaN = missing marker
  std::vector<int> categorical;
};

struct MonthRecord {
  int month = 0;                  // calendar month index
  Transaction snapshot;           // billing snapshot; values never missing
  std::vector<Transaction> txns;  // empty = inactive month
};

// Unobservable borrower state the generator works from. Risk is monotone in
// (baseline + trailing utilization + trend slope); the slope is visible only
// through month-over-month movement of the trend feature.
struct LatentRiskState {
  double baseline = 0.0;
  double slope = 0.0;
  double trend_level = 0.0;        // static intercept of the trend feature
  double activity = 0.0;           // log-scale of monthly transaction volume
  std::vector<double> utilization; // AR(1) path, one value per tenure month
};

struct MemberHistory {
  std::uint64_t member_id = 0;
  int tenure_months = 0;
  int start_month = 0;        // config.months - tenure_months
  double statement_frac = 0.9;  // statement day as a fraction of the month
  std::optional<double> default_month;  // months after observation end, in (0, 18]
  LatentRiskState latent;
  std::vector<MonthRecord> months;  // size tenure_months, calendar order
};

struct DriftEvent {
  double strength = 0.0;
  int start_month = 0;
};

struct Portfolio {
  PortfolioConfig config;
  std::vector<DriftEvent> drift_events;
  std::vector<std::string> numeric_names;
  std::vector<std::string> categorical_names;
  std::vector<MemberHistory> members;
};

// JSON-lines: header line with format/version/config, then one member per
// line. Missing numerics serialize as nulls.
void save_portfolio_jsonl(const Portfolio& p, const std::string& path);
Portfolio load_portfolio_jsonl(const std::string& path);

// Flat CSV view, one row per transaction: member_id, month, ts, features,
// label fields. Missing numerics are empty fields.
void save_portfolio_csv(const Portfolio& p, const std::string& path);

}  // namespace riskseq
