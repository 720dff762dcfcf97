#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "riskseq/common.hpp"
#include "riskseq/portfolio.hpp"
#include "riskseq/synthgen.hpp"

using namespace riskseq;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  const fs::path d = fs::temp_directory_path() / "riskseq_test_synthgen";
  fs::create_directories(d);
  return d;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PortfolioConfig small_config() {
  PortfolioConfig cfg;
  cfg.n_members = 400;
  cfg.months = 16;
  cfg.seed = 7;
  return cfg;
}

bool numeric_equal(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool na = std::isnan(a[i]), nb = std::isnan(b[i]);
    if (na != nb) return false;
    if (!na && a[i] != b[i]) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("portfolio generation is deterministic in the seed") {
  const auto cfg = small_config();
  const Portfolio a = synth::generate_portfolio(cfg);
  const Portfolio b = synth::generate_portfolio(cfg);
  REQUIRE(a.members.size() == b.members.size());
  for (std::size_t i = 0; i < a.members.size(); ++i) {
    const auto& ma = a.members[i];
    const auto& mb = b.members[i];
    REQUIRE(ma.member_id == mb.member_id);
    REQUIRE(ma.tenure_months == mb.tenure_months);
    REQUIRE(ma.default_month == mb.default_month);
    REQUIRE(ma.months.size() == mb.months.size());
    for (std::size_t mo = 0; mo < ma.months.size(); ++mo) {
      REQUIRE(numeric_equal(ma.months[mo].snapshot.numeric, mb.months[mo].snapshot.numeric));
      REQUIRE(ma.months[mo].txns.size() == mb.months[mo].txns.size());
      for (std::size_t t = 0; t < ma.months[mo].txns.size(); ++t) {
        REQUIRE(ma.months[mo].txns[t].ts == mb.months[mo].txns[t].ts);
        REQUIRE(numeric_equal(ma.months[mo].txns[t].numeric, mb.months[mo].txns[t].numeric));
        REQUIRE(ma.months[mo].txns[t].categorical == mb.months[mo].txns[t].categorical);
      }
    }
  }

  PortfolioConfig other = cfg;
  other.seed = 8;
  const Portfolio c = synth::generate_portfolio(other);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.members.size() && !any_diff; ++i)
    if (a.members[i].tenure_months != c.members[i].tenure_months ||
        a.members[i].default_month != c.members[i].default_month)
      any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("member structure: ids, tenure, calendar order, snapshot integrity") {
  const auto cfg = small_config();
  const Portfolio p = synth::generate_portfolio(cfg);
  REQUIRE(p.members.size() == cfg.n_members);
  CHECK(p.numeric_names.size() == std::size_t(cfg.n_numeric));
  CHECK(p.categorical_names.size() == std::size_t(cfg.n_categorical));

  std::set<std::uint64_t> ids;
  for (const auto& m : p.members) {
    CHECK(ids.insert(m.member_id).second);
    REQUIRE(m.tenure_months >= 1);
    REQUIRE(m.tenure_months <= cfg.months);
    CHECK(m.start_month == cfg.months - m.tenure_months);
    REQUIRE(m.months.size() == std::size_t(m.tenure_months));
    CHECK(m.statement_frac > 0.0);
    CHECK(m.statement_frac < 1.0);
    for (std::size_t i = 0; i < m.months.size(); ++i) {
      const auto& rec = m.months[i];
      CHECK(rec.month == m.start_month + int(i));
      // Snapshot lands inside its month and is never missing.
      CHECK(rec.snapshot.ts >= double(rec.month));
      CHECK(rec.snapshot.ts < double(rec.month + 1));
      REQUIRE(rec.snapshot.numeric.size() == std::size_t(cfg.n_numeric));
      for (double v : rec.snapshot.numeric) CHECK(!std::isnan(v));
      REQUIRE(rec.snapshot.categorical.size() == std::size_t(cfg.n_categorical));
      for (const auto& t : rec.txns) {
        CHECK(t.ts >= double(rec.month));
        CHECK(t.ts < double(rec.month + 1));
        REQUIRE(t.numeric.size() == std::size_t(cfg.n_numeric));
      }
    }
    if (m.default_month) {
      CHECK(*m.default_month > 0.0);
      CHECK(*m.default_month <= 18.0);
    }
  }
}

TEST_CASE("default and missingness rates land near their targets") {
  PortfolioConfig cfg;
  cfg.n_members = 10000;
  cfg.months = 14;
  cfg.seed = 42;
  const Portfolio p = synth::generate_portfolio(cfg);

  std::size_t defaulters = 0;
  std::size_t missing = 0, total = 0;
  std::size_t high_exposure_members = 0;
  for (const auto& m : p.members) {
    if (m.default_month) ++defaulters;
    bool high = false;
    for (const auto& rec : m.months) {
      if (rec.snapshot.numeric[synth::kExposureFeature] > synth::kHighExposureThreshold)
        high = true;
      CHECK(rec.snapshot.numeric[synth::kExposureFeature] > 0.0);
      for (const auto& t : rec.txns)
        for (double v : t.numeric) {
          ++total;
          if (std::isnan(v)) ++missing;
        }
    }
    if (high) ++high_exposure_members;
  }
  // Binomial(10000, 0.02): sigma = 14, so a 3-sigma window is [158, 242].
  CHECK(defaulters >= 158);
  CHECK(defaulters <= 242);
  const double miss_rate = double(missing) / double(total);
  CHECK(miss_rate > 0.02);
  CHECK(miss_rate < 0.09);
  // The high-debt segment must be a real minority slice, not empty or all.
  CHECK(high_exposure_members > p.members.size() / 100);
  CHECK(high_exposure_members < p.members.size() / 2);
}

TEST_CASE("config validation rejects nonsense") {
  PortfolioConfig cfg;
  cfg.n_members = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = PortfolioConfig{};
  cfg.default_rate = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = PortfolioConfig{};
  cfg.default_rate = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = PortfolioConfig{};
  cfg.months = 0;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = PortfolioConfig{};
  cfg.missing_rate = 1.2;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = PortfolioConfig{};
  cfg.drift_strength = 1.0;
  cfg.drift_start_month = -1;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
  cfg = PortfolioConfig{};
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("drift rewrites only the affected months and unwinds exactly") {
  const auto cfg = small_config();
  const Portfolio base = synth::generate_portfolio(cfg);
  Portfolio drifted = base;
  const int start = 13;
  synth::inject_drift(drifted, 1.0, start);
  REQUIRE(drifted.drift_events.size() == base.drift_events.size() + 1);

  bool any_late_changed = false;
  for (std::size_t i = 0; i < base.members.size(); ++i) {
    const auto& mb = base.members[i];
    const auto& md = drifted.members[i];
    for (std::size_t mo = 0; mo < mb.months.size(); ++mo) {
      const bool pre = mb.months[mo].month < start;
      const bool same = numeric_equal(mb.months[mo].snapshot.numeric,
                                      md.months[mo].snapshot.numeric);
      if (pre)
        CHECK(same);
      else if (!same)
        any_late_changed = true;
    }
  }
  CHECK(any_late_changed);

  // Net-zero cumulative strength regenerates the original values exactly.
  Portfolio undone = drifted;
  synth::inject_drift(undone, -1.0, start);
  for (std::size_t i = 0; i < base.members.size(); ++i)
    for (std::size_t mo = 0; mo < base.members[i].months.size(); ++mo)
      REQUIRE(numeric_equal(base.members[i].months[mo].snapshot.numeric,
                            undone.members[i].months[mo].snapshot.numeric));

  // A drift that would push cumulative strength negative is rejected.
  Portfolio fresh = synth::generate_portfolio(cfg);
  CHECK_THROWS_AS(synth::inject_drift(fresh, -0.5, start), ValidationError);
  CHECK_THROWS_AS(synth::inject_drift(fresh, 1.0, cfg.months + 3), ValidationError);
  CHECK(synth::drift_location_shift(2.0) == doctest::Approx(2.0 * 0.6));
}

TEST_CASE("jsonl round trip preserves the portfolio byte for byte") {
  const auto dir = tmp_dir();
  PortfolioConfig cfg = small_config();
  cfg.n_members = 120;
  const Portfolio p = synth::generate_portfolio(cfg);
  const auto path1 = dir / "p1.jsonl";
  const auto path2 = dir / "p2.jsonl";
  save_portfolio_jsonl(p, path1.string());
  const Portfolio q = load_portfolio_jsonl(path1.string());
  save_portfolio_jsonl(q, path2.string());
  CHECK(file_bytes(path1) == file_bytes(path2));
  REQUIRE(q.members.size() == p.members.size());
  CHECK(q.config.seed == p.config.seed);
  CHECK(q.members.back().default_month == p.members.back().default_month);

  const auto csv = dir / "p.csv";
  save_portfolio_csv(p, csv.string());
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  CHECK(header.find("member_id") != std::string::npos);

  CHECK_THROWS_AS(load_portfolio_jsonl((dir / "missing.jsonl").string()), IoError);
}
