#include "riskseq/models.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <thread>

#include <nlohmann/json.hpp>

namespace riskseq::models {

using json = nlohmann::json;

namespace {

enum Stream : std::uint64_t { kInitStream = 71, kBatchStream = 72, kDropStream = 73 };

void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

}  // namespace

void ArchitectureSpec::validate() const {
  require(kind == "mlp" || kind == "lstm" || kind == "tcn",
          "architecture: kind must be mlp, lstm or tcn");
  require(n_features > 0, "architecture: n_features must be positive");
  require(mlp_hidden.size() == 4, "architecture: mlp takes 4 hidden widths (5 dense layers)");
  for (int w : mlp_hidden) require(w > 0, "architecture: mlp widths must be positive");
  require(mlp_dropout >= 0.0 && mlp_dropout < 1.0, "architecture: mlp_dropout out of range");
  require(lstm_hidden > 0, "architecture: lstm_hidden must be positive");
  require(lstm_layers == 2, "architecture: lstm uses 2 recurrent layers");
  require(zoneout >= 0.0 && zoneout < 1.0, "architecture: zoneout out of range");
  require(tcn_channels > 0, "architecture: tcn_channels must be positive");
  require(tcn_kernel == 2, "architecture: tcn kernel is fixed at 2");
  require(tcn_dropout >= 0.0 && tcn_dropout < 1.0, "architecture: tcn_dropout out of range");
  require(head_hidden.size() == 3, "architecture: tcn head takes 3 hidden widths (4 dense layers)");
  for (int w : head_hidden) require(w > 0, "architecture: head widths must be positive");
}

void TrainConfig::validate() const {
  require(batch_size > 0, "train config: batch_size must be positive");
  require(base_lr > 0.0, "train config: base_lr must be positive");
  require(lr_decay > 0.0 && lr_decay <= 1.0, "train config: lr_decay must lie in (0,1]");
  require(max_epochs > 0, "train config: max_epochs must be positive");
  require(patience >= 1, "train config: patience must be >= 1");
  require(loss_mode == "per_step_masked" || loss_mode == "last_step",
          "train config: loss_mode must be per_step_masked or last_step");
}

// -----------------------------------------------------------------------

Model::Model(ArchitectureSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(init_seed);
  const std::size_t F = std::size_t(spec_.n_features);
  if (spec_.kind == "mlp") {
    std::vector<int> widths = spec_.mlp_hidden;
    std::size_t in = F;
    for (int w : widths) {
      dense_.emplace_back(store_, in, std::size_t(w), nn::Act::relu, rng);
      drops_.emplace_back(spec_.mlp_dropout);
      in = std::size_t(w);
    }
    dense_.emplace_back(store_, in, 1, nn::Act::sigmoid, rng);
  } else if (spec_.kind == "lstm") {
    lstm_.emplace_back(store_, F, std::size_t(spec_.lstm_hidden), spec_.zoneout, rng);
    lstm_.emplace_back(store_, std::size_t(spec_.lstm_hidden), std::size_t(spec_.lstm_hidden),
                       spec_.zoneout, rng);
    dense_.emplace_back(store_, std::size_t(spec_.lstm_hidden), 1, nn::Act::sigmoid, rng);
  } else {
    const std::size_t ch = std::size_t(spec_.tcn_channels);
    const std::size_t k = std::size_t(spec_.tcn_kernel);
    tcn_.emplace_back(store_, F, ch, k, 1, 2, spec_.tcn_dropout, rng);
    tcn_.emplace_back(store_, ch, ch, k, 4, 8, spec_.tcn_dropout, rng);
    std::size_t in = ch;
    for (int w : spec_.head_hidden) {
      dense_.emplace_back(store_, in, std::size_t(w), nn::Act::relu, rng);
      in = std::size_t(w);
    }
    dense_.emplace_back(store_, in, 1, nn::Act::sigmoid, rng);
  }
}

const std::vector<float>& Model::forward(const std::vector<float>& x, std::size_t m,
                                         bool training, Rng& rng) {
  if (spec_.kind == "mlp") {
    const std::vector<float>* cur = &x;
    for (std::size_t i = 0; i < dense_.size(); ++i) {
      cur = &dense_[i].forward(store_, *cur, m);
      if (i + 1 < dense_.size()) cur = &drops_[i].forward(*cur, training, rng);
    }
    out_ = *cur;
    return out_;
  }
  const std::size_t rows = std::size_t(nn::kSeqLen) * m;
  const std::vector<float>* cur = &x;
  if (spec_.kind == "lstm") {
    for (auto& layer : lstm_) cur = &layer.forward(store_, *cur, m, training, rng);
  } else {
    for (auto& block : tcn_) cur = &block.forward(store_, *cur, m, training, rng);
  }
  for (auto& d : dense_) cur = &d.forward(store_, *cur, rows);
  out_ = *cur;
  return out_;
}

void Model::backward(const std::vector<float>& dp, std::size_t m) {
  if (spec_.kind == "mlp") {
    const std::vector<float>* cur = &dp;
    for (std::size_t i = dense_.size(); i-- > 0;) {
      cur = &dense_[i].backward(store_, *cur, m);
      if (i > 0) cur = &drops_[i - 1].backward(*cur);
    }
    return;
  }
  const std::size_t rows = std::size_t(nn::kSeqLen) * m;
  const std::vector<float>* cur = &dp;
  for (std::size_t i = dense_.size(); i-- > 0;) cur = &dense_[i].backward(store_, *cur, rows);
  if (spec_.kind == "lstm") {
    for (std::size_t i = lstm_.size(); i-- > 0;) cur = &lstm_[i].backward(store_, *cur, m);
  } else {
    for (std::size_t i = tcn_.size(); i-- > 0;) cur = &tcn_[i].backward(store_, *cur, m);
  }
}

Model::LstmState Model::lstm_initial_state() const {
  require(spec_.kind == "lstm", "cached state only applies to the lstm architecture");
  LstmState st;
  for (const auto& layer : lstm_) {
    st.h.emplace_back(layer.hidden(), 0.0f);
    st.c.emplace_back(layer.hidden(), 0.0f);
  }
  return st;
}

void Model::lstm_step(LstmState& st, const float* x_step) const {
  const float* in = x_step;
  for (std::size_t l = 0; l < lstm_.size(); ++l) {
    lstm_[l].step_inference(store_, in, st.h[l].data(), st.c[l].data());
    in = st.h[l].data();
  }
}

float Model::head_on_hidden(const float* h_last) const {
  float y = 0.0f;
  dense_.front().apply_row(store_, h_last, &y);
  return y;
}

// -----------------------------------------------------------------------

namespace {

struct Batch {
  std::size_t m = 0;
  std::vector<float> x, y, mask;
};

Batch assemble(const seq::SequenceDataset& ds, const std::vector<std::uint32_t>& idx,
               const ArchitectureSpec& spec, const std::string& loss_mode) {
  const std::size_t m = idx.size();
  const std::size_t F = std::size_t(ds.n_features);
  Batch b;
  b.m = m;
  if (!spec.sequential()) {
    b.x.resize(m * F);
    b.y.resize(m);
    b.mask.assign(m, 1.0f);
    for (std::size_t i = 0; i < m; ++i) {
      const auto& s = ds.samples[idx[i]];
      std::copy_n(s.features.data() + std::size_t(nn::kSeqLen - 1) * F, F, b.x.data() + i * F);
      b.y[i] = float(s.last_label);
    }
    return b;
  }
  b.x.resize(std::size_t(nn::kSeqLen) * m * F);
  b.y.assign(std::size_t(nn::kSeqLen) * m, 0.0f);
  b.mask.assign(std::size_t(nn::kSeqLen) * m, 0.0f);
  const bool last_only = loss_mode == "last_step";
  for (std::size_t i = 0; i < m; ++i) {
    const auto& s = ds.samples[idx[i]];
    for (int t = 0; t < nn::kSeqLen; ++t) {
      // Padded steps stay all-zero regardless of what the sample stores, so
      // scores and gradients cannot depend on their contents.
      if (s.mask[std::size_t(t)] != 0) {
        std::copy_n(s.features.data() + std::size_t(t) * F, F,
                    b.x.data() + (std::size_t(t) * m + i) * F);
        b.y[std::size_t(t) * m + i] = float(s.step_labels[std::size_t(t)]);
      }
      if (last_only)
        b.mask[std::size_t(t) * m + i] = (t == nn::kSeqLen - 1) ? 1.0f : 0.0f;
      else
        b.mask[std::size_t(t) * m + i] = float(s.mask[std::size_t(t)]);
    }
  }
  return b;
}

std::vector<double> extract_scores(const ArchitectureSpec& spec, const std::vector<float>& p,
                                   std::size_t m) {
  std::vector<double> out(m);
  if (!spec.sequential()) {
    for (std::size_t i = 0; i < m; ++i) out[i] = double(p[i]);
  } else {
    const std::size_t off = std::size_t(nn::kSeqLen - 1) * m;
    for (std::size_t i = 0; i < m; ++i) out[i] = double(p[off + i]);
  }
  return out;
}

void check_dataset(const ArchitectureSpec& spec, const seq::SequenceDataset& ds,
                   const char* which) {
  if (ds.samples.empty()) throw ValidationError(std::string(which) + " dataset is empty");
  if (ds.n_features != spec.n_features)
    throw SchemaError(std::string(which) + " dataset feature width " +
                      std::to_string(ds.n_features) + " does not match architecture " +
                      std::to_string(spec.n_features));
}

Checkpoint snapshot_checkpoint(const ArchitectureSpec& spec, const TrainConfig& cfg,
                               const Model& model, const nn::Adam<float>& adam) {
  Checkpoint c;
  c.spec = spec;
  c.loss_mode = cfg.loss_mode;
  c.seed = cfg.seed;
  c.params = model.store().values;
  c.adam_m = adam.m();
  c.adam_v = adam.v();
  c.adam_t = adam.steps();
  return c;
}

// One optimization pass over `ds`; returns supervised-step-weighted loss.
double run_epoch(Model& model, nn::Adam<float>& adam, const seq::SequenceDataset& ds,
                 const std::vector<int>& labels, const TrainConfig& cfg, double lr,
                 std::uint64_t epoch_tag) {
  Rng batch_rng(mix64(cfg.seed, kBatchStream, epoch_tag));
  Rng drop_rng(mix64(cfg.seed, kDropStream, epoch_tag));
  bool used_replacement = false;
  auto batches = nn::balanced_batches(labels, std::size_t(cfg.batch_size), batch_rng, true,
                                      &used_replacement);
  if (used_replacement)
    std::cerr << "warning: minority class exhausted; sampled with replacement\n";

  double loss_sum = 0.0, weight_sum = 0.0;
  std::vector<float> dp;
  auto step = [&](const Batch& b) {
    model.store().zero_grads();
    const auto& p = model.forward(b.x, b.m, true, drop_rng);
    const double loss = nn::masked_bce(p, b.y, b.mask, dp);
    model.backward(dp, b.m);
    adam.step(model.store(), lr);
    double count = 0.0;
    for (float mv : b.mask) count += double(mv);
    loss_sum += loss * count;
    weight_sum += count;
  };

  if (cfg.async_batches) {
    nn::BoundedQueue<Batch> queue(2);
    std::thread producer([&] {
      for (const auto& idx : batches)
        if (!queue.push(assemble(ds, idx, model.spec(), cfg.loss_mode))) return;
      queue.close();
    });
    while (auto b = queue.pop()) step(*b);
    producer.join();
  } else {
    for (const auto& idx : batches) step(assemble(ds, idx, model.spec(), cfg.loss_mode));
  }
  return weight_sum > 0.0 ? loss_sum / weight_sum : 0.0;
}

}  // namespace

std::vector<ScoredRecord> score(Model& model, const seq::SequenceDataset& ds,
                                std::size_t batch_size) {
  check_dataset(model.spec(), ds, "scoring");
  Rng dummy(0);
  std::vector<ScoredRecord> out;
  out.reserve(ds.samples.size());
  std::vector<std::uint32_t> idx;
  for (std::size_t begin = 0; begin < ds.samples.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, ds.samples.size());
    idx.resize(end - begin);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = std::uint32_t(begin + i);
    Batch b = assemble(ds, idx, model.spec(), "per_step_masked");
    const auto& p = model.forward(b.x, b.m, false, dummy);
    auto scores = extract_scores(model.spec(), p, b.m);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto& s = ds.samples[idx[i]];
      ScoredRecord r;
      r.member_id = s.member_id;
      r.window_id = s.window_id;
      r.score = scores[i];
      r.label = int(s.last_label);
      r.months_to_default = s.months_to_default;
      r.exposure = s.raw_exposure;
      out.push_back(r);
    }
  }
  return out;
}

std::vector<ScoredRecord> score(const Checkpoint& ckpt, const seq::SequenceDataset& ds) {
  auto model = restore(ckpt);
  return score(*model, ds);
}

TrainResult train(const ArchitectureSpec& spec, const seq::SequenceDataset& train_ds,
                  const seq::SequenceDataset& valid_ds, const TrainConfig& cfg) {
  spec.validate();
  cfg.validate();
  check_dataset(spec, train_ds, "training");
  check_dataset(spec, valid_ds, "validation");

  std::vector<int> train_labels, valid_labels;
  for (const auto& s : train_ds.samples) train_labels.push_back(int(s.last_label));
  for (const auto& s : valid_ds.samples) valid_labels.push_back(int(s.last_label));
  {
    bool has0 = false, has1 = false;
    for (int l : valid_labels) (l ? has1 : has0) = true;
    if (!has0 || !has1)
      throw ValidationError("validation set must contain both classes");
  }

  Model model(spec, mix64(cfg.seed, kInitStream));
  nn::Adam<float> adam(model.n_params());
  nn::EarlyStopper stopper(cfg.patience);

  TrainResult result;
  Checkpoint best;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = cfg.base_lr * std::pow(cfg.lr_decay, double(epoch - 1));
    const double train_loss =
        run_epoch(model, adam, train_ds, train_labels, cfg, lr, std::uint64_t(epoch));

    auto records = score(model, valid_ds, std::size_t(cfg.batch_size));
    std::vector<double> scores(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) scores[i] = records[i].score;
    const double valid_gini = metrics::gini(scores, valid_labels);

    result.log.push_back({epoch, lr, train_loss, valid_gini});
    const int prev_best = stopper.best_epoch();
    const bool stop = stopper.update(valid_gini, epoch);
    if (stopper.best_epoch() == epoch && prev_best != epoch) {
      best = snapshot_checkpoint(spec, cfg, model, adam);
      best.best_epoch = epoch;
      best.valid_gini = valid_gini;
    }
    if (stop) break;
  }
  result.checkpoint = std::move(best);
  return result;
}

Checkpoint online_update(const Checkpoint& ckpt, const seq::SequenceDataset& ds,
                         const TrainConfig& cfg, int epochs_per_update) {
  cfg.validate();
  require(epochs_per_update >= 1, "online update: epochs_per_update must be >= 1");
  if (ds.samples.empty()) return ckpt;
  check_dataset(ckpt.spec, ds, "online update");

  auto model = restore(ckpt);
  nn::Adam<float> adam(model->n_params());
  adam.restore(ckpt.adam_m, ckpt.adam_v, ckpt.adam_t);

  std::vector<int> labels;
  for (const auto& s : ds.samples) labels.push_back(int(s.last_label));

  for (int e = 0; e < epochs_per_update; ++e) {
    const double lr = cfg.base_lr * std::pow(cfg.lr_decay, double(e));
    run_epoch(*model, adam, ds, labels, cfg, lr,
              mix64(std::uint64_t(ckpt.adam_t), std::uint64_t(e)));
  }

  Checkpoint out = snapshot_checkpoint(ckpt.spec, cfg, *model, adam);
  out.loss_mode = ckpt.loss_mode;
  out.seed = ckpt.seed;
  out.best_epoch = ckpt.best_epoch;
  out.valid_gini = ckpt.valid_gini;
  return out;
}

std::unique_ptr<Model> restore(const Checkpoint& ckpt) {
  auto model = std::make_unique<Model>(ckpt.spec, std::uint64_t(0));
  if (ckpt.params.size() != model->n_params())
    throw SchemaError("checkpoint parameter count " + std::to_string(ckpt.params.size()) +
                      " does not match architecture (" + std::to_string(model->n_params()) +
                      ")");
  model->store().values = ckpt.params;
  return model;
}

// -----------------------------------------------------------------------

namespace {

json arch_to_json(const ArchitectureSpec& s) {
  return json{{"kind", s.kind},
              {"n_features", s.n_features},
              {"mlp_hidden", s.mlp_hidden},
              {"mlp_dropout", s.mlp_dropout},
              {"lstm_hidden", s.lstm_hidden},
              {"lstm_layers", s.lstm_layers},
              {"zoneout", s.zoneout},
              {"tcn_channels", s.tcn_channels},
              {"tcn_kernel", s.tcn_kernel},
              {"tcn_dropout", s.tcn_dropout},
              {"head_hidden", s.head_hidden}};
}

ArchitectureSpec arch_from_json(const json& j) {
  ArchitectureSpec s;
  s.kind = j.at("kind").get<std::string>();
  s.n_features = j.at("n_features").get<int>();
  s.mlp_hidden = j.at("mlp_hidden").get<std::vector<int>>();
  s.mlp_dropout = j.at("mlp_dropout").get<double>();
  s.lstm_hidden = j.at("lstm_hidden").get<int>();
  s.lstm_layers = j.at("lstm_layers").get<int>();
  s.zoneout = j.at("zoneout").get<double>();
  s.tcn_channels = j.at("tcn_channels").get<int>();
  s.tcn_kernel = j.at("tcn_kernel").get<int>();
  s.tcn_dropout = j.at("tcn_dropout").get<double>();
  s.head_hidden = j.at("head_hidden").get<std::vector<int>>();
  return s;
}

// Floats travel as doubles: the widening is exact and nlohmann prints
// doubles round-trip-exactly, so parameters survive save/load bit for bit.
json floats_to_json(const std::vector<float>& v) {
  json arr = json::array();
  for (float f : v) arr.push_back(double(f));
  return arr;
}

std::vector<float> floats_from_json(const json& arr) {
  std::vector<float> v;
  v.reserve(arr.size());
  for (const auto& x : arr) v.push_back(float(x.get<double>()));
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  json j{{"format", "riskseq-checkpoint"},
         {"version", 1},
         {"arch", arch_to_json(ckpt.spec)},
         {"loss_mode", ckpt.loss_mode},
         {"seed", ckpt.seed},
         {"best_epoch", ckpt.best_epoch},
         {"valid_gini", ckpt.valid_gini},
         {"params", floats_to_json(ckpt.params)},
         {"adam",
          {{"m", floats_to_json(ckpt.adam_m)},
           {"v", floats_to_json(ckpt.adam_v)},
           {"t", ckpt.adam_t}}}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot open checkpoint file for writing: " + path);
  out << j.dump() << "\n";
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SchemaError("checkpoint is not valid JSON: " + std::string(e.what()));
  }
  if (j.value("format", "") != "riskseq-checkpoint")
    throw SchemaError("not a checkpoint file: " + path);
  if (j.value("version", 0) != 1)
    throw SchemaError("unsupported checkpoint version in " + path);
  Checkpoint c;
  try {
    c.spec = arch_from_json(j.at("arch"));
    c.loss_mode = j.at("loss_mode").get<std::string>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.best_epoch = j.at("best_epoch").get<int>();
    c.valid_gini = j.at("valid_gini").get<double>();
    c.params = floats_from_json(j.at("params"));
    c.adam_m = floats_from_json(j.at("adam").at("m"));
    c.adam_v = floats_from_json(j.at("adam").at("v"));
    c.adam_t = j.at("adam").at("t").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw SchemaError("malformed checkpoint: " + std::string(e.what()));
  }
  c.spec.validate();
  return c;
}

void write_training_log(const std::vector<TrainLogRow>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open training log for writing: " + path);
  out << "epoch,lr,train_loss,valid_gini\n";
  out << std::setprecision(10);
  for (const auto& r : log)
    out << r.epoch << "," << r.lr << "," << r.train_loss << "," << r.valid_gini << "\n";
  if (!out) throw IoError("failed writing training log: " + path);
}

}  // namespace riskseq::models
