#include "riskseq/serve.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

namespace riskseq::serve {

using json = nlohmann::json;
using clock_type = std::chrono::steady_clock;

namespace {

double elapsed_us(clock_type::time_point a, clock_type::time_point b) {
  return std::chrono::duration<double, std::micro>(b - a).count();
}

}  // namespace

SequenceStore::SequenceStore(prep::PreprocessArtifacts artifacts, models::Checkpoint checkpoint)
    : artifacts_(std::move(artifacts)), checkpoint_spec_(checkpoint.spec) {
  if (std::size_t(checkpoint.spec.n_features) != artifacts_.n_outputs())
    throw SchemaError("model expects " + std::to_string(checkpoint.spec.n_features) +
                      " features but artifacts emit " + std::to_string(artifacts_.n_outputs()));
  model_ = models::restore(checkpoint);
}

std::vector<float> SequenceStore::preprocess(const RawTransaction& txn) const {
  auto transformed = prep::apply_row(txn.numeric, txn.categorical, artifacts_);
  return std::vector<float>(transformed.begin(), transformed.end());
}

ScoreResult SequenceStore::score_transaction(const RawTransaction& txn) {
  const auto t0 = clock_type::now();
  auto feats = preprocess(txn);
  const auto t1 = clock_type::now();

  seq::SequenceStoreEntry snapshot = entry_snapshot(txn.member_id);
  seq::SequenceSample sample = seq::append_incoming(snapshot, feats, txn.ts);
  const auto t2 = clock_type::now();

  double score = 0.0;
  {
    std::lock_guard lk(model_mu_);
    Rng dummy(0);
    const auto& p = model_->forward(sample.features, 1, false, dummy);
    score = double(checkpoint_spec_.sequential() ? p[std::size_t(nn::kSeqLen) - 1] : p[0]);
  }
  const auto t3 = clock_type::now();

  ScoreResult r;
  r.score = score;
  r.timing.preprocess_us = elapsed_us(t0, t1);
  r.timing.assemble_us = elapsed_us(t1, t2);
  r.timing.infer_us = elapsed_us(t2, t3);
  r.timing.total_us = elapsed_us(t0, t3);
  return r;
}

double SequenceStore::cached_lstm_score(const RawTransaction& txn) {
  if (checkpoint_spec_.kind != "lstm")
    throw ValidationError("cached scoring applies to the lstm architecture only");
  auto feats = preprocess(txn);

  Entry* entry = nullptr;
  {
    std::unique_lock lk(map_mu_);
    auto& slot = entries_[txn.member_id];
    if (!slot) {
      slot = std::make_unique<Entry>();
      slot->data.member_id = txn.member_id;
    }
    entry = slot.get();
  }

  std::scoped_lock lk(entry_write_mu_, model_mu_);
  if (!entry->cache || entry->cache_version != model_version_) {
    // Replay the 11-step front-padded prefix exactly as the batch path
    // sees it: zeros, then the buffered months oldest to newest.
    auto st = model_->lstm_initial_state();
    const std::size_t F = artifacts_.n_outputs();
    const std::size_t n = entry->data.steps.size();
    std::vector<float> zero(F, 0.0f);
    for (std::size_t t = 0; t + 1 < std::size_t(nn::kSeqLen); ++t) {
      const std::size_t pad = std::size_t(nn::kSeqLen) - 1 - n;
      model_->lstm_step(st, t < pad ? zero.data() : entry->data.steps[t - pad].data());
    }
    entry->cache = std::move(st);
    entry->cache_version = model_version_;
  }
  models::Model::LstmState state = *entry->cache;
  model_->lstm_step(state, feats.data());
  return double(model_->head_on_hidden(state.h.back().data()));
}

void SequenceStore::roll_month(std::uint64_t member_id, std::vector<float> month_vec,
                               double ts) {
  if (month_vec.size() != artifacts_.n_outputs())
    throw SchemaError("month vector width " + std::to_string(month_vec.size()) +
                      " does not match artifacts output " +
                      std::to_string(artifacts_.n_outputs()));
  std::unique_lock map_lk(map_mu_);
  auto& slot = entries_[member_id];
  if (!slot) {
    slot = std::make_unique<Entry>();
    slot->data.member_id = member_id;
  }
  Entry* entry = slot.get();
  map_lk.unlock();

  std::lock_guard lk(entry_write_mu_);
  seq::roll_month(entry->data, std::move(month_vec), ts);
  entry->cache.reset();
}

void SequenceStore::reload(models::Checkpoint checkpoint) {
  if (std::size_t(checkpoint.spec.n_features) != artifacts_.n_outputs())
    throw SchemaError("reloaded model feature width does not match artifacts");
  auto fresh = models::restore(checkpoint);
  std::scoped_lock lk(model_mu_, entry_write_mu_);
  model_ = std::move(fresh);
  checkpoint_spec_ = checkpoint.spec;
  ++model_version_;  // existing caches become stale and recompute lazily
}

std::size_t SequenceStore::n_members() const {
  std::shared_lock lk(map_mu_);
  return entries_.size();
}

seq::SequenceStoreEntry SequenceStore::entry_snapshot(std::uint64_t member_id) const {
  std::shared_lock lk(map_mu_);
  auto it = entries_.find(member_id);
  if (it == entries_.end()) {
    seq::SequenceStoreEntry empty;
    empty.member_id = member_id;
    return empty;
  }
  std::lock_guard elk(entry_write_mu_);
  return it->second->data;
}

void SequenceStore::save_entries(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open store snapshot for writing: " + path);
  out << json{{"format", "riskseq-store"},
              {"version", 1},
              {"n_features", artifacts_.n_outputs()}}
             .dump()
      << "\n";
  std::shared_lock lk(map_mu_);
  for (const auto& [id, entry] : entries_) {
    json steps = json::array();
    for (const auto& s : entry->data.steps) {
      json row = json::array();
      for (float v : s) row.push_back(double(v));
      steps.push_back(std::move(row));
    }
    out << json{{"member_id", id}, {"steps", std::move(steps)}, {"step_ts", entry->data.step_ts}}
               .dump()
        << "\n";
  }
  if (!out) throw IoError("failed writing store snapshot: " + path);
}

void SequenceStore::load_entries(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open store snapshot: " + path);
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("store snapshot is empty: " + path);
  json header;
  try {
    header = json::parse(line);
  } catch (const json::exception& e) {
    throw SchemaError("store snapshot header is not JSON: " + std::string(e.what()));
  }
  if (header.value("format", "") != "riskseq-store" || header.value("version", 0) != 1)
    throw SchemaError("unrecognized store snapshot header: " + path);
  if (header.at("n_features").get<std::size_t>() != artifacts_.n_outputs())
    throw SchemaError("store snapshot feature width does not match artifacts");

  std::map<std::uint64_t, std::unique_ptr<Entry>> fresh;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw SchemaError("store snapshot line " + std::to_string(line_no) +
                        " is not JSON: " + std::string(e.what()));
    }
    auto entry = std::make_unique<Entry>();
    entry->data.member_id = j.at("member_id").get<std::uint64_t>();
    for (const auto& row : j.at("steps")) {
      std::vector<float> s;
      s.reserve(row.size());
      for (const auto& v : row) s.push_back(float(v.get<double>()));
      entry->data.steps.push_back(std::move(s));
    }
    entry->data.step_ts = j.at("step_ts").get<std::vector<double>>();
    entry->data.validate();
    fresh[entry->data.member_id] = std::move(entry);
  }
  std::scoped_lock lk(map_mu_, entry_write_mu_);
  entries_ = std::move(fresh);
}

// ---------------------------------------------------------------------------

namespace {

double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t rank = std::size_t(std::ceil(q * double(v.size())));
  return v[std::min(rank == 0 ? 0 : rank - 1, v.size() - 1)];
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

}  // namespace

LatencyReport latency_bench(SequenceStore& store, const std::vector<RawTransaction>& calls,
                            const std::string& csv_path, bool cached_lstm) {
  std::vector<double> pre, asm_, inf, tot;
  pre.reserve(calls.size());
  asm_.reserve(calls.size());
  inf.reserve(calls.size());
  tot.reserve(calls.size());

  for (const auto& txn : calls) {
    if (cached_lstm) {
      const auto t0 = clock_type::now();
      store.cached_lstm_score(txn);
      const auto t1 = clock_type::now();
      pre.push_back(0.0);
      asm_.push_back(0.0);
      inf.push_back(elapsed_us(t0, t1));
      tot.push_back(elapsed_us(t0, t1));
    } else {
      auto r = store.score_transaction(txn);
      pre.push_back(r.timing.preprocess_us);
      asm_.push_back(r.timing.assemble_us);
      inf.push_back(r.timing.infer_us);
      tot.push_back(r.timing.total_us);
    }
  }

  LatencyReport rep;
  rep.n_calls = calls.size();
  auto fill = [](StageTiming& t, const std::vector<double>& p, const std::vector<double>& a,
                 const std::vector<double>& i, const std::vector<double>& o, double q) {
    t.preprocess_us = percentile(p, q);
    t.assemble_us = percentile(a, q);
    t.infer_us = percentile(i, q);
    t.total_us = percentile(o, q);
  };
  fill(rep.p50, pre, asm_, inf, tot, 0.50);
  fill(rep.p95, pre, asm_, inf, tot, 0.95);
  fill(rep.p99, pre, asm_, inf, tot, 0.99);
  rep.mean.preprocess_us = mean_of(pre);
  rep.mean.assemble_us = mean_of(asm_);
  rep.mean.infer_us = mean_of(inf);
  rep.mean.total_us = mean_of(tot);

  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw IoError("cannot open latency report for writing: " + csv_path);
    out << std::setprecision(10);
    out << "stage,p50_us,p95_us,p99_us,mean_us\n";
    auto row = [&](const char* name, auto sel) {
      out << name << "," << sel(rep.p50) << "," << sel(rep.p95) << "," << sel(rep.p99) << ","
          << sel(rep.mean) << "\n";
    };
    row("preprocess", [](const StageTiming& t) { return t.preprocess_us; });
    row("assemble", [](const StageTiming& t) { return t.assemble_us; });
    row("infer", [](const StageTiming& t) { return t.infer_us; });
    row("total", [](const StageTiming& t) { return t.total_us; });
    if (!out) throw IoError("failed writing latency report: " + csv_path);
  }
  return rep;
}

std::size_t run_service(SequenceStore& store, std::istream& in, std::ostream& out) {
  std::string line;
  std::size_t scored = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json reply;
    try {
      json req = json::parse(line);
      RawTransaction txn;
      txn.member_id = req.at("member_id").get<std::uint64_t>();
      const json& f = req.at("features");
      for (const auto& v : f.at("numeric"))
        txn.numeric.push_back(v.is_null() ? std::nan("") : v.get<double>());
      txn.categorical = f.at("categorical").get<std::vector<int>>();
      txn.ts = f.value("ts", 0.0);
      auto r = store.score_transaction(txn);
      reply = json{{"score", r.score}, {"latency_us", r.timing.total_us}};
      ++scored;
    } catch (const std::exception& e) {
      reply = json{{"error", e.what()}};
    }
    out << reply.dump() << "\n";
  }
  return scored;
}

}  // namespace riskseq::serve
