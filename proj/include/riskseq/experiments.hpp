#pragma once

// Experiment harnesses behind the CLI and the acceptance gate: the model
// ordering table, default-date bins, sequence-length sweep, online-learning
// comparison, and the latency benchmark, all deterministic per seed.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include "riskseq/eval.hpp"
#include "riskseq/gbdt.hpp"
#include "riskseq/models.hpp"
#include "riskseq/portfolio.hpp"
#include "riskseq/seqgen.hpp"
#include "riskseq/serve.hpp"
#include "riskseq/tabprep.hpp"

namespace riskseq::exp {

struct ExperimentConfig {
  // portfolio shape
  int members = 10000;
  int months = 14;
  int n_numeric = 20;
  int n_categorical = 4;
  double default_rate = 0.02;
  double missing_rate = 0.05;

  // split & evaluation
  double valid_fraction = 0.25;
  double recall_fraction = 0.05;
  int n_windows = 1;
  double ensemble_weight = 0.5;

  // model training
  models::TrainConfig train;  // seed is overridden per run
  gbdt::GbdtParams gbdt;
  double laplace_k = 30.0;

  // online-learning protocol (months extended so drift has room)
  int online_months = 16;
  double drift_strength = 1.0;
  int drift_start_month = 13;
  int online_base_end = 12;
  std::vector<int> online_update_ends{13, 14, 15};
  int online_eval_end = 16;
  int epochs_per_update = 1;

  // latency bench
  int latency_store_members = 1000;
  int latency_calls = 10000;

  ExperimentConfig() {
    // Desk-scale data: an epoch is ~15 batches here, so the stock 1e-4 base
    // rate decays to nothing before the models escape init.
    train.base_lr = 3e-3;
    train.max_epochs = 15;
    train.patience = 3;
  }

  PortfolioConfig portfolio_config(std::uint64_t seed) const;
  PortfolioConfig online_portfolio_config(std::uint64_t seed) const;
  nlohmann::json to_json() const;
  std::string config_hash() const;  // fnv1a over the canonical dump
};

// Deterministic member-level split.
bool is_validation_member(std::uint64_t member_id, std::uint64_t seed, double fraction);

// Derived RNG streams; every stage that samples months or splits members must
// agree on these for its artifacts to stay aligned.
std::uint64_t sample_seed(std::uint64_t seed);
std::uint64_t split_seed(std::uint64_t seed);

double median(std::vector<double> v);

// Row/member subsets shared by the harnesses and the CLI pipeline stages.
DataTable subset_table(const DataTable& t, const std::vector<std::size_t>& idx);
seq::SequenceDataset subset_dataset(const seq::SequenceDataset& ds,
                                    const std::vector<std::size_t>& idx);
seq::SequenceDataset member_subset(const seq::SequenceDataset& ds, std::uint64_t split_seed,
                                   double fraction, bool validation_side);

// ---------------------------------------------------------------------------

// Everything downstream models consume for one (config, seed) cell. Sequence
// rows and tabular rows are index-aligned before the split and stay aligned
// within each side afterwards.
struct Prepared {
  std::uint64_t seed = 0;
  Portfolio portfolio;
  prep::PreprocessArtifacts artifacts;

  seq::SequenceDataset train_seq, valid_seq;

  std::vector<std::vector<double>> train_X, valid_X;  // column-major, preprocessed
  std::vector<int> train_y, valid_y;
  std::vector<ScoredRecord> valid_tab_meta;  // score filled by the gbdt path
};

Prepared prepare(const ExperimentConfig& cfg, std::uint64_t seed);

struct ModelEval {
  std::string name;
  double valid_gini = 0.0;
  double recall = 0.0;
  int best_epoch = -1;
  std::size_t n_params = 0;
  std::vector<ScoredRecord> records;  // validation records, scored
  models::Checkpoint checkpoint;      // empty for gbdt
  std::vector<models::TrainLogRow> log;
};

ModelEval train_eval_gbdt(const ExperimentConfig& cfg, const Prepared& data,
                          gbdt::GbdtModel* out_model = nullptr);
ModelEval train_eval_nn(const ExperimentConfig& cfg, const seq::SequenceDataset& train_ds,
                        const seq::SequenceDataset& valid_ds, const std::string& kind,
                        std::uint64_t seed);

// ---------------------------------------------------------------------------

struct OrderingResult {
  std::uint64_t seed = 0;
  ModelEval gbdt, mlp, lstm, tcn;
  double ensemble_gini = 0.0;  // rank ensemble of gbdt + tcn scores
  metrics::DefaultDateBins seq_bins, nonseq_bins;  // tcn vs gbdt
  double gap_near = 0.0, gap_long = 0.0;           // tcn minus gbdt per bin
};

OrderingResult run_ordering(const ExperimentConfig& cfg, std::uint64_t seed,
                            Prepared* reuse = nullptr);

struct SeqlenPoint {
  int length = 0;
  double gini = 0.0;
};

// Retrains the TCN on truncated sequences per length; `full` (when given)
// supplies the length-12 point without retraining.
std::vector<SeqlenPoint> run_seqlen(const ExperimentConfig& cfg, const Prepared& data,
                                    const std::vector<int>& lengths, std::uint64_t seed,
                                    const ModelEval* full = nullptr);

struct OnlineResult {
  std::uint64_t seed = 0;
  double base_valid_gini = 0.0;       // pre-drift validation at the base end
  double base_on_drift_gini = 0.0;    // stale checkpoint on the drifted month
  double finetuned_gini = 0.0;        // after the monthly updates
  double reinit_gini = 0.0;           // random init, same update budget
  double finetuned_predrift_gini = 0.0;  // logged degradation check
};

OnlineResult run_online(const ExperimentConfig& cfg, std::uint64_t seed);

struct LatencyResult {
  std::string kind;
  serve::LatencyReport report;         // full score path
  serve::LatencyReport cached_report;  // lstm only
  bool batch_equivalent = false;       // serve score == batch score, bitwise
  bool cached_equivalent = false;      // cached lstm == full path, bitwise
  std::size_t compared = 0;
};

LatencyResult run_latency(const ExperimentConfig& cfg, const Prepared& data,
                          const models::Checkpoint& ckpt, const std::string& csv_path);

// Fill per-member rolling buffers from the portfolio months preceding the
// final one, mirroring what the batch path sees for the same sample seed.
void preload_store(serve::SequenceStore& store, const Portfolio& p,
                   const prep::PreprocessArtifacts& artifacts,
                   std::size_t n_members, std::uint64_t month_seed);

// ---------------------------------------------------------------------------
// Report writers. Every document embeds config hash, seed(s), and version.

nlohmann::json ordering_report(const ExperimentConfig& cfg,
                               const std::vector<OrderingResult>& runs);
nlohmann::json bins_report(const ExperimentConfig& cfg, const std::vector<OrderingResult>& runs);
nlohmann::json seqlen_report(const ExperimentConfig& cfg, const std::vector<std::uint64_t>& seeds,
                             const std::vector<std::vector<SeqlenPoint>>& runs);
nlohmann::json online_report(const ExperimentConfig& cfg, const std::vector<OnlineResult>& runs);

void write_json(const nlohmann::json& j, const std::string& path);
void write_seqlen_csv(const std::vector<std::uint64_t>& seeds,
                      const std::vector<std::vector<SeqlenPoint>>& runs, const std::string& path);

// Full pipeline under one seed; writes per-stage artifacts plus summary.json
// into out_dir and returns the summary. Wall-clock numbers stay out of the
// summary (the latency CSV holds them) so reruns are byte-identical.
nlohmann::json reproduce_all(const ExperimentConfig& cfg, std::uint64_t seed,
                             const std::string& out_dir);

}  // namespace riskseq::exp
