#pragma once

// The three scoring networks (5-layer MLP, 2xLSTM + dense head, 2-block TCN
// + 4-layer head) plus the training loop: balanced batches, Adam with
// per-epoch learning-rate decay, early stopping on validation Gini.

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "riskseq/common.hpp"
#include "riskseq/eval.hpp"
#include "riskseq/nn.hpp"
#include "riskseq/seqgen.hpp"

namespace riskseq::models {

struct ArchitectureSpec {
  std::string kind = "tcn";  // mlp | lstm | tcn
  int n_features = 0;

  std::vector<int> mlp_hidden{128, 64, 64, 32};  // + 1 output = 5 dense layers
  double mlp_dropout = 0.1;

  int lstm_hidden = 64;
  int lstm_layers = 2;
  double zoneout = 0.2;

  int tcn_channels = 32;
  int tcn_kernel = 2;
  double tcn_dropout = 0.1;
  std::vector<int> head_hidden{64, 32, 16};  // + 1 output = 4 dense layers

  void validate() const;
  bool sequential() const { return kind != "mlp"; }
};

struct TrainConfig {
  int batch_size = 512;
  double base_lr = 1e-4;
  double lr_decay = 0.8;
  int max_epochs = 20;
  int patience = 3;
  std::uint64_t seed = 42;
  std::string loss_mode = "per_step_masked";  // or last_step
  bool async_batches = true;

  void validate() const;
};

struct TrainLogRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double valid_gini = 0.0;
};

struct Checkpoint {
  ArchitectureSpec spec;
  std::string loss_mode = "per_step_masked";
  std::uint64_t seed = 0;
  int best_epoch = -1;
  double valid_gini = 0.0;
  std::vector<float> params;
  std::vector<float> adam_m, adam_v;
  std::int64_t adam_t = 0;
};

// -----------------------------------------------------------------------

class Model {
 public:
  Model(ArchitectureSpec spec, std::uint64_t init_seed);

  const ArchitectureSpec& spec() const { return spec_; }
  std::size_t n_params() const { return store_.values.size(); }
  nn::Store<float>& store() { return store_; }
  const nn::Store<float>& store() const { return store_; }

  // x layout: mlp -> [m x F] (final-step features); lstm/tcn -> time-major
  // [12][m x F]. Output: mlp -> [m]; lstm/tcn -> time-major [12][m].
  const std::vector<float>& forward(const std::vector<float>& x, std::size_t m, bool training,
                                    Rng& rng);
  void backward(const std::vector<float>& dp, std::size_t m);

  // Serving hooks for the incremental LSTM path. State vectors sized
  // lstm_layers x hidden; arithmetic matches forward() in inference mode
  // bit for bit.
  struct LstmState {
    std::vector<std::vector<float>> h, c;  // per layer
  };
  LstmState lstm_initial_state() const;
  void lstm_step(LstmState& st, const float* x_step) const;
  float head_on_hidden(const float* h_last) const;

 private:
  ArchitectureSpec spec_;
  nn::Store<float> store_;
  std::vector<nn::Dense<float>> dense_;  // mlp stack, lstm head, or tcn head
  std::vector<nn::Dropout<float>> drops_;
  std::vector<nn::LstmLayer<float>> lstm_;
  std::vector<nn::TcnBlock<float>> tcn_;
  std::vector<float> out_;
};

// -----------------------------------------------------------------------

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
};

TrainResult train(const ArchitectureSpec& spec, const seq::SequenceDataset& train_ds,
                  const seq::SequenceDataset& valid_ds, const TrainConfig& cfg);

// Scores = model output at the last unmasked step, inference mode.
std::vector<ScoredRecord> score(const Checkpoint& ckpt, const seq::SequenceDataset& ds);
std::vector<ScoredRecord> score(Model& model, const seq::SequenceDataset& ds,
                                std::size_t batch_size = 512);

// Continues Adam from the saved optimizer state over the new cohort; no
// re-initialization. Empty cohort returns the checkpoint unchanged.
Checkpoint online_update(const Checkpoint& ckpt, const seq::SequenceDataset& ds,
                         const TrainConfig& cfg, int epochs_per_update = 1);

std::unique_ptr<Model> restore(const Checkpoint& ckpt);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

void write_training_log(const std::vector<TrainLogRow>& log, const std::string& path);

}  // namespace riskseq::models
