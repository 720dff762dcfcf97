#pragma once

// Production-shaped scoring path: per-member rolling buffers, an
// append-and-score operation that never mutates the store, a cached-state
// fast path for the LSTM, and the latency harness.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "riskseq/models.hpp"
#include "riskseq/seqgen.hpp"
#include "riskseq/tabprep.hpp"

namespace riskseq::serve {

struct RawTransaction {
  std::uint64_t member_id = 0;
  std::vector<double> numeric;  // NaN = missing
  std::vector<int> categorical;
  double ts = 0.0;
};

struct StageTiming {
  double preprocess_us = 0.0;
  double assemble_us = 0.0;
  double infer_us = 0.0;
  double total_us = 0.0;
};

struct ScoreResult {
  double score = 0.0;
  StageTiming timing;
};

struct LatencyReport {
  std::size_t n_calls = 0;
  StageTiming p50, p95, p99, mean;  // per-stage percentiles, elementwise
};

// Map of member buffers plus the frozen artifacts/model pair. Scoring is
// pure with respect to the store; roll_month is the only entry mutation and
// is serialized per member. Model reload is a guarded swap that invalidates
// all cached recurrent states.
class SequenceStore {
 public:
  SequenceStore(prep::PreprocessArtifacts artifacts, models::Checkpoint checkpoint);

  ScoreResult score_transaction(const RawTransaction& txn);
  double cached_lstm_score(const RawTransaction& txn);

  void roll_month(std::uint64_t member_id, std::vector<float> month_vec, double ts);
  void reload(models::Checkpoint checkpoint);

  std::size_t n_members() const;
  std::size_t n_feature_outputs() const { return artifacts_.n_outputs(); }
  const models::ArchitectureSpec& model_spec() const { return checkpoint_spec_; }
  seq::SequenceStoreEntry entry_snapshot(std::uint64_t member_id) const;

  // JSON-lines snapshot of the member buffers (header + one entry per line).
  void save_entries(const std::string& path) const;
  void load_entries(const std::string& path);

 private:
  struct Entry {
    seq::SequenceStoreEntry data;
    // cached recurrent state after the 11-step prefix (lstm only)
    std::optional<models::Model::LstmState> cache;
    std::uint64_t cache_version = 0;
  };

  std::vector<float> preprocess(const RawTransaction& txn) const;

  prep::PreprocessArtifacts artifacts_;
  models::ArchitectureSpec checkpoint_spec_;
  std::unique_ptr<models::Model> model_;
  std::uint64_t model_version_ = 1;

  mutable std::shared_mutex map_mu_;   // protects the map structure
  mutable std::mutex model_mu_;        // forward() reuses internal buffers
  std::map<std::uint64_t, std::unique_ptr<Entry>> entries_;
  mutable std::mutex entry_write_mu_;  // serializes per-entry mutation
};

// Measures the full score path call by call; writes a per-stage summary CSV
// (stage, p50_us, p95_us, p99_us, mean_us). cached_lstm switches the infer
// stage to the incremental path.
LatencyReport latency_bench(SequenceStore& store, const std::vector<RawTransaction>& calls,
                            const std::string& csv_path, bool cached_lstm = false);

// Line-delimited JSON loop: request {"member_id": N, "features": {"numeric":
// [...], "categorical": [...], "ts": T}} -> response {"score": S,
// "latency_us": L}; malformed requests get {"error": "..."} and the loop
// continues. Returns the number of scored requests.
std::size_t run_service(SequenceStore& store, std::istream& in, std::ostream& out);

}  // namespace riskseq::serve
