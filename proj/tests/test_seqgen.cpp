#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <vector>

#include "riskseq/common.hpp"
#include "riskseq/portfolio.hpp"
#include "riskseq/seqgen.hpp"
#include "riskseq/synthgen.hpp"
#include "riskseq/table.hpp"
#include "riskseq/tabprep.hpp"

using namespace riskseq;
namespace fs = std::filesystem;

namespace {

PortfolioConfig small_cfg() {
  PortfolioConfig cfg;
  cfg.n_members = 400;
  cfg.months = 16;
  cfg.seed = 11;
  return cfg;
}

prep::PreprocessArtifacts fit_artifacts(const Portfolio& p, std::uint64_t seed) {
  const auto rows = seq::build_last_month_rows(p, p.config.months, 1, seed);
  auto no_splits = [](const std::vector<std::vector<double>>& cols, const std::vector<int>&) {
    return std::vector<std::vector<double>>(cols.size());
  };
  return prep::fit(rows.table, no_splits, 30.0);
}

bool samples_equal(const seq::SequenceSample& a, const seq::SequenceSample& b,
                   bool compare_labels = true) {
  if (a.member_id != b.member_id || a.n_features != b.n_features) return false;
  if (a.mask != b.mask || a.step_ts != b.step_ts) return false;
  if (a.features != b.features) return false;
  if (compare_labels) {
    if (a.step_labels != b.step_labels || a.last_label != b.last_label) return false;
    if (a.months_to_default != b.months_to_default) return false;
    if (a.raw_exposure != b.raw_exposure) return false;
  }
  return true;
}

// Hand-built member: one transaction per month at a controlled timestamp, so
// sampling is forced and label timing can be checked against the horizon.
struct ToyWorld {
  PortfolioConfig cfg;
  MemberHistory member;
  prep::PreprocessArtifacts artifacts;
};

ToyWorld make_toy_world(int tenure, std::optional<double> default_month) {
  ToyWorld w;
  w.cfg.n_members = 1;
  w.cfg.n_numeric = 2;
  w.cfg.n_categorical = 1;
  w.cfg.months = 14;

  w.member.member_id = 501;
  w.member.tenure_months = tenure;
  w.member.start_month = w.cfg.months - tenure;
  w.member.default_month = default_month;
  for (int i = 0; i < tenure; ++i) {
    MonthRecord rec;
    rec.month = w.member.start_month + i;
    rec.snapshot.ts = rec.month + 0.9;
    rec.snapshot.numeric = {100.0 + rec.month, 1.0};
    rec.snapshot.categorical = {0};
    Transaction t;
    t.ts = rec.month == 6 ? 6.0 : rec.month + 0.5;  // month 6 probes the exact boundary
    t.numeric = {200.0 + rec.month, 2.0};
    t.categorical = {1};
    rec.txns.push_back(t);
    w.member.months.push_back(rec);
  }

  DataTable table;
  table.numeric_names = {"a", "b"};
  table.categorical_names = {"c"};
  table.numeric.assign(2, {});
  table.categorical.assign(1, {});
  Rng rng(3);
  for (int i = 0; i < 80; ++i) {
    table.numeric[0].push_back(rng.uniform(100.0, 300.0));
    table.numeric[1].push_back(rng.uniform(0.0, 4.0));
    table.categorical[0].push_back(int(rng.below(3)));
    table.labels.push_back(rng.bernoulli(0.3) ? 1 : 0);
  }
  auto no_splits = [](const std::vector<std::vector<double>>& cols, const std::vector<int>&) {
    return std::vector<std::vector<double>>(cols.size());
  };
  w.artifacts = prep::fit(table, no_splits, 30.0);
  return w;
}

}  // namespace

TEST_CASE("monthly sampling is deterministic in (seed, member, month)") {
  const Portfolio p = synth::generate_portfolio(small_cfg());
  const auto& m = p.members[7];
  const int month = m.start_month + m.tenure_months / 2;
  const Transaction& a = seq::sample_month(m, month, 42);
  const Transaction& b = seq::sample_month(m, month, 42);
  CHECK(&a == &b);  // same transaction object, not merely equal values

  CHECK_THROWS_AS(seq::sample_month(m, m.start_month - 1, 42), ValidationError);
  CHECK_THROWS_AS(seq::sample_month(m, m.start_month + m.tenure_months, 42), ValidationError);
}

TEST_CASE("monthly sampling is uniform over the month's transactions") {
  const Portfolio p = synth::generate_portfolio(small_cfg());

  // Find two member-months with at least 4 transactions to use as replicates.
  std::vector<std::pair<std::size_t, int>> targets;
  for (std::size_t i = 0; i < p.members.size() && targets.size() < 2; ++i)
    for (const auto& rec : p.members[i].months)
      if (rec.txns.size() >= 4 && targets.size() < 2) {
        targets.emplace_back(i, rec.month);
        break;
      }
  REQUIRE(targets.size() == 2);

  for (auto [mi, month] : targets) {
    const auto& m = p.members[mi];
    const auto& rec = m.months[std::size_t(month - m.start_month)];
    const std::size_t k = rec.txns.size();
    // Timestamps are continuous draws; they identify the chosen transaction.
    std::set<double> distinct;
    for (const auto& t : rec.txns) distinct.insert(t.ts);
    REQUIRE(distinct.size() == k);

    std::map<double, std::size_t> counts;
    const std::size_t trials = 6000;
    for (std::size_t s = 0; s < trials; ++s) ++counts[seq::sample_month(m, int(month), s).ts];

    const double expect = double(trials) / double(k);
    double chi2 = 0.0;
    for (const auto& t : rec.txns) {
      const double obs = double(counts[t.ts]);
      chi2 += (obs - expect) * (obs - expect) / expect;
    }
    // chi^2 with k-1 dof: mean k-1, variance 2(k-1); stay within 3 sigma.
    const double dof = double(k - 1);
    CAPTURE(mi);
    CAPTURE(k);
    CHECK(chi2 < dof + 3.0 * std::sqrt(2.0 * dof));
  }
}

TEST_CASE("sampling is unbiased across members at a fixed seed") {
  PortfolioConfig cfg = small_cfg();
  cfg.n_members = 3000;
  const Portfolio p = synth::generate_portfolio(cfg);

  // For every member-month with 2..6 transactions, record whether the first
  // transaction was the one sampled; the indicator has mean 1/k.
  double observed = 0.0, expected = 0.0, variance = 0.0;
  std::size_t used = 0;
  for (const auto& m : p.members)
    for (const auto& rec : m.months) {
      const std::size_t k = rec.txns.size();
      if (k < 2 || k > 6) continue;
      const Transaction& chosen = seq::sample_month(m, rec.month, 42);
      observed += (&chosen == &rec.txns[0]) ? 1.0 : 0.0;
      expected += 1.0 / double(k);
      variance += (1.0 / double(k)) * (1.0 - 1.0 / double(k));
      ++used;
    }
  REQUIRE(used > 2000);
  const double sigma = std::sqrt(variance);
  CHECK(std::fabs(observed - expected) < 3.0 * sigma);
}

TEST_CASE("inactive months fall back to the billing snapshot") {
  PortfolioConfig cfg = small_cfg();
  cfg.n_members = 1500;
  const Portfolio p = synth::generate_portfolio(cfg);
  bool found = false;
  for (const auto& m : p.members) {
    for (const auto& rec : m.months)
      if (rec.txns.empty()) {
        const Transaction& got = seq::sample_month(m, rec.month, 99);
        CHECK(&got == &rec.snapshot);
        found = true;
        break;
      }
    if (found) break;
  }
  REQUIRE(found);  // inactive months must exist at these activity levels
}

TEST_CASE("sequence layout: window mapping, front padding, per-step horizon labels") {
  // Tenure 8 of 14 months: window over months 2..13 has 4 padded steps.
  const ToyWorld w = make_toy_world(8, 10.0);  // defaults 10 months after month 14
  const auto s = seq::build_sequence(w.member, w.cfg, 14, w.artifacts, 77);

  CHECK(s.member_id == 501);
  CHECK(s.n_features == int(w.artifacts.n_outputs()));
  CHECK(s.first_real_step() == 4);
  for (int t = 0; t < 12; ++t) {
    const int month = 14 - 12 + t;  // window [2, 14) -> step t is month 2+t
    if (t < 4) {
      CHECK(s.mask[std::size_t(t)] == 0);
      CHECK(s.step_labels[std::size_t(t)] == 0);
      CHECK(s.step_ts[std::size_t(t)] == 0.0);
      for (int f = 0; f < s.n_features; ++f)
        CHECK(s.features[std::size_t(t) * s.n_features + f] == 0.0f);
    } else {
      CHECK(s.mask[std::size_t(t)] == 1);
      CHECK(s.step_ts[std::size_t(t)] >= double(month));
      CHECK(s.step_ts[std::size_t(t)] < double(month + 1));
      // Absolute default time is month 24; the 18-month horizon first covers
      // it at ts >= 6.0, and the month-6 transaction sits exactly on the edge.
      const double d = 24.0 - s.step_ts[std::size_t(t)];
      CHECK(s.step_labels[std::size_t(t)] == (d <= 18.0 ? 1 : 0));
      if (month <= 5) CHECK(s.step_labels[std::size_t(t)] == 0);
      if (month >= 6) CHECK(s.step_labels[std::size_t(t)] == 1);
    }
  }
  CHECK(s.mask[11] == 1);
  CHECK(s.last_label == 1);
  REQUIRE(s.months_to_default.has_value());
  CHECK(*s.months_to_default == doctest::Approx(24.0 - 13.5));
  CHECK(s.raw_exposure == doctest::Approx(200.0 + 13));

  // Features at real steps are the preprocessed transaction vectors.
  const auto row = prep::apply_row({200.0 + 13, 2.0}, {1}, w.artifacts);
  for (int f = 0; f < s.n_features; ++f)
    CHECK(s.features[std::size_t(11) * s.n_features + f] == float(row[std::size_t(f)]));

  // Mask is non-decreasing (all padding is at the front).
  for (int t = 1; t < 12; ++t) CHECK(s.mask[std::size_t(t)] >= s.mask[std::size_t(t - 1)]);

  // Never-defaulter: no labels, no months_to_default.
  const ToyWorld w2 = make_toy_world(12, std::nullopt);
  const auto s2 = seq::build_sequence(w2.member, w2.cfg, 14, w2.artifacts, 77);
  CHECK(!s2.months_to_default.has_value());
  CHECK(s2.last_label == 0);
  for (int t = 0; t < 12; ++t) CHECK(s2.step_labels[std::size_t(t)] == 0);

  CHECK_THROWS_AS(seq::build_sequence(w.member, w.cfg, 0, w.artifacts, 77), ValidationError);
  CHECK_THROWS_AS(seq::build_sequence(w.member, w.cfg, 15, w.artifacts, 77), ValidationError);
}

TEST_CASE("shifted windows move the end month and clip at the horizon") {
  const Portfolio p = synth::generate_portfolio(small_cfg());
  const auto art = fit_artifacts(p, 5);
  const MemberHistory* full = nullptr;
  for (const auto& m : p.members)
    if (m.tenure_months == p.config.months) {
      full = &m;
      break;
    }
  REQUIRE(full != nullptr);

  const auto windows = seq::shift_windows(*full, p.config, 14, art, 5);
  REQUIRE(windows.size() == 3);
  for (int w = 0; w < 3; ++w) {
    CHECK(windows[std::size_t(w)].window_id == w);
    const auto direct = seq::build_sequence(*full, p.config, 14 + w, art, 5);
    CHECK(samples_equal(windows[std::size_t(w)], direct));
  }
  // Ends past the last month are dropped.
  const auto clipped = seq::shift_windows(*full, p.config, p.config.months - 1, art, 5);
  CHECK(clipped.size() == 2);
}

TEST_CASE("dataset assembly matches per-member sequences and skips unborn members") {
  const Portfolio p = synth::generate_portfolio(small_cfg());
  const auto art = fit_artifacts(p, 5);
  const int end = 14;
  const auto ds = seq::build_dataset(p, art, end, 2, 5);
  CHECK(ds.n_features == int(art.n_outputs()));
  CHECK(ds.base_end_month == end);
  CHECK(ds.n_windows == 2);
  CHECK(ds.sample_seed == 5);

  // Member-major, window ascending; every sample equals its direct build.
  std::map<std::uint64_t, std::size_t> member_pos;
  for (std::size_t i = 0; i < p.members.size(); ++i) member_pos[p.members[i].member_id] = i;
  std::size_t prev_member = 0;
  int prev_window = -1;
  std::size_t expected_count = 0;
  for (const auto& m : p.members)
    for (int w = 0; w < 2; ++w)
      if (m.start_month < end + w) ++expected_count;
  CHECK(ds.samples.size() == expected_count);

  for (const auto& s : ds.samples) {
    const std::size_t mi = member_pos.at(s.member_id);
    if (s.member_id != prev_member) {
      CHECK(member_pos.at(s.member_id) >= (prev_member ? member_pos.at(prev_member) : 0));
      prev_window = -1;
    }
    CHECK(s.window_id > prev_window);
    prev_member = s.member_id;
    prev_window = s.window_id;

    const auto direct =
        seq::build_sequence(p.members[mi], p.config, end + s.window_id, art, 5);
    REQUIRE(samples_equal(s, direct, /*compare_labels=*/true));
  }

  CHECK_THROWS_AS(seq::build_dataset(p, art, end, 0, 5), ValidationError);
  CHECK_THROWS_AS(seq::build_dataset(p, art, end, 4, 5), ValidationError);
  CHECK_THROWS_AS(seq::build_dataset(p, art, 0, 1, 5), ValidationError);
}

TEST_CASE("last-month rows mirror the sampled final transactions") {
  const Portfolio p = synth::generate_portfolio(small_cfg());
  const int end = 14;
  const auto rows = seq::build_last_month_rows(p, end, 1, 5);
  REQUIRE(rows.table.n_rows() == rows.member_ids.size());
  REQUIRE(rows.ts.size() == rows.member_ids.size());
  std::map<std::uint64_t, const MemberHistory*> by_id;
  for (const auto& m : p.members) by_id[m.member_id] = &m;
  for (std::size_t i = 0; i < rows.member_ids.size(); ++i) {
    const auto& m = *by_id.at(rows.member_ids[i]);
    const Transaction& txn = seq::sample_month(m, end - 1, 5);
    CHECK(rows.ts[i] == txn.ts);
    for (std::size_t f = 0; f < rows.table.numeric.size(); ++f) {
      const double got = rows.table.numeric[f][i];
      if (std::isnan(txn.numeric[f]))
        CHECK(std::isnan(got));
      else
        CHECK(got == txn.numeric[f]);
    }
    if (m.default_month) {
      const double d = double(p.config.months) + *m.default_month - txn.ts;
      CHECK(rows.table.labels[i] == (d <= 18.0 ? 1 : 0));
      REQUIRE(rows.months_to_default[i].has_value());
      CHECK(*rows.months_to_default[i] == doctest::Approx(d));
    } else {
      CHECK(rows.table.labels[i] == 0);
      CHECK(!rows.months_to_default[i].has_value());
    }
    CHECK(std::isfinite(rows.raw_exposure[i]));
  }
}

TEST_CASE("appending a live transaction reproduces the batch-built window") {
  const Portfolio p = synth::generate_portfolio(small_cfg());
  const auto art = fit_artifacts(p, 5);
  const int end = 14;
  const std::uint64_t seed = 5;

  std::size_t full_checked = 0, partial_checked = 0;
  for (const auto& m : p.members) {
    if (m.start_month >= end) continue;
    if (full_checked >= 3 && partial_checked >= 3) break;
    const bool full = m.start_month <= end - seq::kSeqLen;
    if (full && full_checked >= 3) continue;
    if (!full && partial_checked >= 3) continue;

    // Store entry: the preprocessed vectors for months [end-12, end-1).
    seq::SequenceStoreEntry entry;
    entry.member_id = m.member_id;
    for (int month = end - seq::kSeqLen; month < end - 1; ++month) {
      if (month < m.start_month) continue;
      const Transaction& txn = seq::sample_month(m, month, seed);
      const auto row = prep::apply_row(txn.numeric, txn.categorical, art);
      entry.steps.emplace_back(row.begin(), row.end());
      entry.step_ts.push_back(txn.ts);
    }
    const Transaction& last = seq::sample_month(m, end - 1, seed);
    const auto last_row = prep::apply_row(last.numeric, last.categorical, art);
    const std::vector<float> last_vec(last_row.begin(), last_row.end());

    const auto live = seq::append_incoming(entry, last_vec, last.ts);
    const auto batch = seq::build_sequence(m, p.config, end, art, seed);
    REQUIRE(samples_equal(live, batch, /*compare_labels=*/false));
    (full ? full_checked : partial_checked) += 1;
  }
  CHECK(full_checked == 3);
  CHECK(partial_checked == 3);
}

TEST_CASE("store entries roll forward with a bounded buffer") {
  seq::SequenceStoreEntry e;
  e.member_id = 9;
  for (int i = 0; i < 11; ++i) seq::roll_month(e, {float(i), 0.5f}, double(i));
  CHECK(e.steps.size() == 11);
  seq::roll_month(e, {11.0f, 0.5f}, 11.0);
  CHECK(e.steps.size() == 11);  // oldest evicted
  CHECK(e.steps.front()[0] == 1.0f);
  CHECK(e.step_ts.front() == 1.0);
  CHECK(e.steps.back()[0] == 11.0f);

  CHECK_THROWS_AS(seq::roll_month(e, {1.0f}, 12.0), SchemaError);  // width mismatch

  seq::SequenceStoreEntry bad;
  bad.steps.assign(12, {1.0f});
  bad.step_ts.assign(12, 0.0);
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("truncation masks early steps and wipes their content") {
  const ToyWorld w = make_toy_world(14, 5.0);
  const auto s = seq::build_sequence(w.member, w.cfg, 14, w.artifacts, 3);
  const auto t3 = seq::truncate_to_length(s, 3);
  for (int t = 0; t < 12; ++t) {
    if (t < 9) {
      CHECK(t3.mask[std::size_t(t)] == 0);
      CHECK(t3.step_labels[std::size_t(t)] == 0);
      CHECK(t3.step_ts[std::size_t(t)] == 0.0);
      for (int f = 0; f < t3.n_features; ++f)
        CHECK(t3.features[std::size_t(t) * t3.n_features + f] == 0.0f);
    } else {
      CHECK(t3.mask[std::size_t(t)] == s.mask[std::size_t(t)]);
      CHECK(t3.step_ts[std::size_t(t)] == s.step_ts[std::size_t(t)]);
    }
  }
  CHECK(t3.last_label == s.last_label);
  const auto t12 = seq::truncate_to_length(s, 12);
  CHECK(samples_equal(t12, s));
  CHECK_THROWS_AS(seq::truncate_to_length(s, 0), ValidationError);
  CHECK_THROWS_AS(seq::truncate_to_length(s, 13), ValidationError);
}

TEST_CASE("dataset files round trip bit for bit and reject corruption") {
  const fs::path dir = fs::temp_directory_path() / "riskseq_test_seqgen";
  fs::create_directories(dir);
  PortfolioConfig cfg = small_cfg();
  cfg.n_members = 60;
  const Portfolio p = synth::generate_portfolio(cfg);
  const auto art = fit_artifacts(p, 5);
  const auto ds = seq::build_dataset(p, art, 14, 2, 5);

  const auto path = (dir / "ds.bin").string();
  seq::save_dataset(ds, path);
  const auto back = seq::load_dataset(path);
  CHECK(back.n_features == ds.n_features);
  CHECK(back.base_end_month == ds.base_end_month);
  CHECK(back.n_windows == ds.n_windows);
  CHECK(back.sample_seed == ds.sample_seed);
  REQUIRE(back.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i)
    REQUIRE(samples_equal(ds.samples[i], back.samples[i]));

  // Truncated file -> schema error; wrong magic -> schema error; missing -> IO.
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
    std::ofstream cut((dir / "cut.bin").string(), std::ios::binary);
    cut.write(bytes.data(), std::streamsize(bytes.size() / 2));
  }
  CHECK_THROWS_AS(seq::load_dataset((dir / "cut.bin").string()), SchemaError);
  {
    std::ofstream bad((dir / "bad.bin").string(), std::ios::binary);
    bad << "not a dataset";
  }
  CHECK_THROWS_AS(seq::load_dataset((dir / "bad.bin").string()), SchemaError);
  CHECK_THROWS_AS(seq::load_dataset((dir / "nope.bin").string()), IoError);
}
