#include "riskseq/seqgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>

#include "riskseq/common.hpp"

namespace riskseq::seq {

namespace {

constexpr char kMagic[4] = {'R', 'S', 'Q', 'B'};
constexpr std::uint32_t kVersion = 1;

struct SampledMonth {
  std::vector<float> features;
  double ts = 0.0;
  std::uint8_t label = 0;
  double raw_exposure = 0.0;
};

double absolute_default_time(const PortfolioConfig& cfg, const MemberHistory& m) {
  return static_cast<double>(cfg.months) + *m.default_month;
}

SampledMonth sample_and_transform(const MemberHistory& m, const PortfolioConfig& cfg,
                                  int month, const prep::PreprocessArtifacts& artifacts,
                                  std::uint64_t seed) {
  const Transaction& txn = sample_month(m, month, seed);
  SampledMonth out;
  out.ts = txn.ts;
  auto transformed = prep::apply_row(txn.numeric, txn.categorical, artifacts);
  out.features.assign(transformed.begin(), transformed.end());
  if (m.default_month.has_value())
    out.label = (absolute_default_time(cfg, m) - txn.ts) <= kLabelHorizon ? 1 : 0;
  double exposure = txn.numeric.empty() ? 0.0 : txn.numeric[0];
  if (std::isnan(exposure)) {
    const MonthRecord& mr = m.months[static_cast<std::size_t>(month - m.start_month)];
    exposure = mr.snapshot.numeric.empty() ? 0.0 : mr.snapshot.numeric[0];
  }
  out.raw_exposure = exposure;
  return out;
}

SequenceSample assemble(const MemberHistory& m, const PortfolioConfig& cfg, int window_end,
                        int window_id, const std::map<int, SampledMonth>& cache,
                        int n_features) {
  SequenceSample s;
  s.member_id = m.member_id;
  s.window_id = window_id;
  s.n_features = n_features;
  s.features.assign(static_cast<std::size_t>(kSeqLen) * n_features, 0.0f);

  for (int t = 0; t < kSeqLen; ++t) {
    const int month = window_end - kSeqLen + t;
    if (month < m.start_month) continue;
    const SampledMonth& sm = cache.at(month);
    s.mask[static_cast<std::size_t>(t)] = 1;
    s.step_labels[static_cast<std::size_t>(t)] = sm.label;
    s.step_ts[static_cast<std::size_t>(t)] = sm.ts;
    std::copy(sm.features.begin(), sm.features.end(),
              s.features.begin() + static_cast<std::size_t>(t) * n_features);
  }
  if (s.first_real_step() == kSeqLen)
    throw ValidationError("sequence: member has no observed month in window");

  const SampledMonth& last = cache.at(window_end - 1);
  s.last_label = last.label;
  s.raw_exposure = last.raw_exposure;
  if (m.default_month.has_value())
    s.months_to_default = absolute_default_time(cfg, m) - last.ts;
  return s;
}

}  // namespace

int SequenceSample::first_real_step() const {
  for (int t = 0; t < kSeqLen; ++t)
    if (mask[static_cast<std::size_t>(t)]) return t;
  return kSeqLen;
}

const Transaction& sample_month(const MemberHistory& m, int month, std::uint64_t seed) {
  if (month < m.start_month || month >= m.start_month + m.tenure_months)
    throw ValidationError("sample_month: month outside member history");
  const MonthRecord& mr = m.months[static_cast<std::size_t>(month - m.start_month)];
  if (mr.txns.empty()) return mr.snapshot;
  Rng rng(mix64(seed, m.member_id, static_cast<std::uint64_t>(month)));
  return mr.txns[static_cast<std::size_t>(rng.below(mr.txns.size()))];
}

SequenceSample build_sequence(const MemberHistory& m, const PortfolioConfig& cfg,
                              int window_end, const prep::PreprocessArtifacts& artifacts,
                              std::uint64_t seed) {
  if (window_end < 1 || window_end > cfg.months)
    throw ValidationError("build_sequence: window end out of range");
  std::map<int, SampledMonth> cache;
  for (int t = 0; t < kSeqLen; ++t) {
    const int month = window_end - kSeqLen + t;
    if (month >= m.start_month)
      cache.emplace(month, sample_and_transform(m, cfg, month, artifacts, seed));
  }
  return assemble(m, cfg, window_end, 0, cache, static_cast<int>(artifacts.n_outputs()));
}

std::vector<SequenceSample> shift_windows(const MemberHistory& m, const PortfolioConfig& cfg,
                                          int base_end, const prep::PreprocessArtifacts& artifacts,
                                          std::uint64_t seed) {
  std::vector<SequenceSample> out;
  for (int w = 0; w < 3; ++w) {
    const int end = base_end + w;
    if (end > cfg.months) {
      std::cerr << "shift_windows: only " << out.size() << " of 3 windows fit before month "
                << cfg.months << "\n";
      break;
    }
    SequenceSample s = build_sequence(m, cfg, end, artifacts, seed);
    s.window_id = w;
    out.push_back(std::move(s));
  }
  return out;
}

SequenceDataset build_dataset(const Portfolio& p, const prep::PreprocessArtifacts& artifacts,
                              int base_end, int n_windows, std::uint64_t seed) {
  if (n_windows < 1 || n_windows > 3) throw ValidationError("build_dataset: n_windows in 1..3");
  if (base_end < 1 || base_end > p.config.months)
    throw ValidationError("build_dataset: base end out of range");

  SequenceDataset ds;
  ds.n_features = static_cast<int>(artifacts.n_outputs());
  ds.base_end_month = base_end;
  ds.n_windows = n_windows;
  ds.sample_seed = seed;

  const int last_end = std::min(base_end + n_windows - 1, p.config.months);
  if (last_end < base_end + n_windows - 1)
    std::cerr << "build_dataset: clipped to " << (last_end - base_end + 1) << " windows\n";

  for (const auto& m : p.members) {
    // Sampled months are shared across the shifted windows (the sampling key
    // is the calendar month), so transform each needed month once.
    std::map<int, SampledMonth> cache;
    const int first_month = std::max(m.start_month, base_end - kSeqLen);
    const int last_month = std::min(last_end, m.start_month + m.tenure_months) - 1;
    for (int month = first_month; month <= last_month; ++month)
      cache.emplace(month, sample_and_transform(m, p.config, month, artifacts, seed));

    for (int w = 0; base_end + w <= last_end; ++w) {
      const int end = base_end + w;
      if (m.start_month >= end) continue;  // no observed month in this window
      SequenceSample s = assemble(m, p.config, end, w, cache, ds.n_features);
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

LastMonthRows build_last_month_rows(const Portfolio& p, int base_end, int n_windows,
                                    std::uint64_t seed) {
  if (n_windows < 1 || n_windows > 3) throw ValidationError("last_month: n_windows in 1..3");
  if (base_end < 1 || base_end > p.config.months)
    throw ValidationError("last_month: base end out of range");

  LastMonthRows out;
  out.table.numeric_names = p.numeric_names;
  out.table.categorical_names = p.categorical_names;
  out.table.numeric.resize(p.numeric_names.size());
  out.table.categorical.resize(p.categorical_names.size());

  const int last_end = std::min(base_end + n_windows - 1, p.config.months);
  for (const auto& m : p.members) {
    for (int w = 0; base_end + w <= last_end; ++w) {
      const int end = base_end + w;
      if (m.start_month >= end) continue;
      const int month = end - 1;
      const Transaction& txn = sample_month(m, month, seed);

      for (std::size_t f = 0; f < out.table.numeric.size(); ++f)
        out.table.numeric[f].push_back(txn.numeric[f]);
      for (std::size_t f = 0; f < out.table.categorical.size(); ++f)
        out.table.categorical[f].push_back(txn.categorical[f]);

      std::uint8_t label = 0;
      std::optional<double> mtd;
      if (m.default_month.has_value()) {
        double d = absolute_default_time(p.config, m) - txn.ts;
        label = d <= kLabelHorizon ? 1 : 0;
        mtd = d;
      }
      out.table.labels.push_back(label);
      out.member_ids.push_back(m.member_id);
      out.window_ids.push_back(w);
      out.ts.push_back(txn.ts);
      double exposure = txn.numeric.empty() ? 0.0 : txn.numeric[0];
      if (std::isnan(exposure)) {
        const MonthRecord& mr = m.months[static_cast<std::size_t>(month - m.start_month)];
        exposure = mr.snapshot.numeric.empty() ? 0.0 : mr.snapshot.numeric[0];
      }
      out.raw_exposure.push_back(exposure);
      out.months_to_default.push_back(mtd);
    }
  }
  return out;
}

void SequenceStoreEntry::validate() const {
  if (steps.size() > static_cast<std::size_t>(kSeqLen - 1))
    throw ValidationError("store entry: buffer exceeds 11 months");
  if (steps.size() != step_ts.size()) throw SchemaError("store entry: ts/step mismatch");
  for (std::size_t i = 1; i < steps.size(); ++i)
    if (steps[i].size() != steps[0].size()) throw SchemaError("store entry: ragged steps");
}

SequenceSample append_incoming(const SequenceStoreEntry& entry,
                               const std::vector<float>& preprocessed_txn, double ts) {
  entry.validate();
  if (!entry.steps.empty() && entry.steps[0].size() != preprocessed_txn.size())
    throw SchemaError("append_incoming: feature width mismatch");

  const int n_features = static_cast<int>(preprocessed_txn.size());
  const int n_real = static_cast<int>(entry.steps.size()) + 1;
  SequenceSample s;
  s.member_id = entry.member_id;
  s.n_features = n_features;
  s.features.assign(static_cast<std::size_t>(kSeqLen) * n_features, 0.0f);

  const int pad = kSeqLen - n_real;
  for (std::size_t i = 0; i < entry.steps.size(); ++i) {
    const int t = pad + static_cast<int>(i);
    s.mask[static_cast<std::size_t>(t)] = 1;
    s.step_ts[static_cast<std::size_t>(t)] = entry.step_ts[i];
    std::copy(entry.steps[i].begin(), entry.steps[i].end(),
              s.features.begin() + static_cast<std::size_t>(t) * n_features);
  }
  s.mask[kSeqLen - 1] = 1;
  s.step_ts[kSeqLen - 1] = ts;
  std::copy(preprocessed_txn.begin(), preprocessed_txn.end(),
            s.features.begin() + static_cast<std::size_t>(kSeqLen - 1) * n_features);
  return s;
}

void roll_month(SequenceStoreEntry& entry, std::vector<float> month_vec, double ts) {
  entry.validate();
  if (!entry.steps.empty() && entry.steps[0].size() != month_vec.size())
    throw SchemaError("roll_month: feature width mismatch");
  entry.steps.push_back(std::move(month_vec));
  entry.step_ts.push_back(ts);
  if (entry.steps.size() > static_cast<std::size_t>(kSeqLen - 1)) {
    entry.steps.erase(entry.steps.begin());
    entry.step_ts.erase(entry.step_ts.begin());
  }
}

SequenceSample truncate_to_length(const SequenceSample& s, int length) {
  if (length < 1 || length > kSeqLen)
    throw ValidationError("truncate: length must lie in 1..12");
  SequenceSample out = s;
  const int cutoff = kSeqLen - length;
  for (int t = 0; t < cutoff; ++t) {
    out.mask[static_cast<std::size_t>(t)] = 0;
    out.step_labels[static_cast<std::size_t>(t)] = 0;
    out.step_ts[static_cast<std::size_t>(t)] = 0.0;
    std::fill_n(out.features.begin() + static_cast<std::size_t>(t) * s.n_features,
                s.n_features, 0.0f);
  }
  return out;
}

namespace {

template <typename T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void read_pod(std::ifstream& in, T& v) {
  in.read(reinterpret_cast<char*>(&v), sizeof v);
}

}  // namespace

void save_dataset(const SequenceDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out.write(kMagic, 4);
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint32_t>(ds.n_features));
  write_pod(out, static_cast<std::uint32_t>(kSeqLen));
  write_pod(out, static_cast<std::uint64_t>(ds.samples.size()));
  write_pod(out, static_cast<std::int32_t>(ds.base_end_month));
  write_pod(out, static_cast<std::int32_t>(ds.n_windows));
  write_pod(out, ds.sample_seed);

  for (const auto& s : ds.samples) {
    write_pod(out, s.member_id);
    write_pod(out, static_cast<std::int32_t>(s.window_id));
    out.write(reinterpret_cast<const char*>(s.mask.data()), kSeqLen);
    out.write(reinterpret_cast<const char*>(s.step_labels.data()), kSeqLen);
    write_pod(out, s.last_label);
    const std::uint8_t has_mtd = s.months_to_default.has_value() ? 1 : 0;
    write_pod(out, has_mtd);
    write_pod(out, has_mtd ? *s.months_to_default : 0.0);
    write_pod(out, s.raw_exposure);
    out.write(reinterpret_cast<const char*>(s.step_ts.data()), sizeof(double) * kSeqLen);
    out.write(reinterpret_cast<const char*>(s.features.data()),
              static_cast<std::streamsize>(sizeof(float) * s.features.size()));
  }
  if (!out) throw IoError("write failed: " + path);
}

SequenceDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw SchemaError("not a sequence dataset: " + path);
  std::uint32_t version = 0, n_features = 0, seq_len = 0;
  std::uint64_t n_samples = 0;
  read_pod(in, version);
  if (version != kVersion) throw SchemaError("unsupported dataset version in " + path);
  read_pod(in, n_features);
  read_pod(in, seq_len);
  if (seq_len != static_cast<std::uint32_t>(kSeqLen))
    throw SchemaError("unexpected sequence length in " + path);
  read_pod(in, n_samples);

  SequenceDataset ds;
  ds.n_features = static_cast<int>(n_features);
  std::int32_t base_end = 0, n_windows = 0;
  read_pod(in, base_end);
  read_pod(in, n_windows);
  read_pod(in, ds.sample_seed);
  ds.base_end_month = base_end;
  ds.n_windows = n_windows;

  ds.samples.resize(n_samples);
  for (auto& s : ds.samples) {
    s.n_features = ds.n_features;
    read_pod(in, s.member_id);
    std::int32_t window_id = 0;
    read_pod(in, window_id);
    s.window_id = window_id;
    in.read(reinterpret_cast<char*>(s.mask.data()), kSeqLen);
    in.read(reinterpret_cast<char*>(s.step_labels.data()), kSeqLen);
    read_pod(in, s.last_label);
    std::uint8_t has_mtd = 0;
    read_pod(in, has_mtd);
    double mtd = 0.0;
    read_pod(in, mtd);
    if (has_mtd) s.months_to_default = mtd;
    read_pod(in, s.raw_exposure);
    in.read(reinterpret_cast<char*>(s.step_ts.data()), sizeof(double) * kSeqLen);
    s.features.resize(static_cast<std::size_t>(kSeqLen) * ds.n_features);
    in.read(reinterpret_cast<char*>(s.features.data()),
            static_cast<std::streamsize>(sizeof(float) * s.features.size()));
    if (!in) throw SchemaError("truncated dataset file: " + path);
  }
  return ds;
}

}  // namespace riskseq::seq
