#include "riskseq/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "riskseq/common.hpp"

namespace riskseq::synth {

namespace {

// Label model weights: risk logit Z = b1*baseline + b2*mean(util, last 6) +
// b3*slope. All three latents are standard normal, so Z is Gaussian and the
// intercept can be calibrated by quadrature.
constexpr double kBetaBaseline = 0.9;
constexpr double kBetaUtil = 0.8;
constexpr double kBetaSlope = 1.3;
constexpr double kUtilPersistence = 0.8;  // AR(1) coefficient
constexpr int kUtilWindow = 6;

// Independent rng stream tags; every draw is keyed by
// (seed, purpose, member_id[, month]) so re-emission and any parallel
// schedule reproduce identical values.
enum Purpose : std::uint64_t {
  kLatentDraw = 1,
  kTenureDraw,
  kLabelDraw,
  kCountDraw,
  kSnapshotDraw,
  kTxnDraw,
  kMissingDraw,
};

Rng member_rng(std::uint64_t seed, Purpose p, std::uint64_t member_id) {
  return Rng(mix64(seed, static_cast<std::uint64_t>(p), member_id));
}

Rng month_rng(std::uint64_t seed, Purpose p, std::uint64_t member_id, int month) {
  return Rng(mix64(mix64(seed, static_cast<std::uint64_t>(p), member_id),
                   static_cast<std::uint64_t>(month)));
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double var_util_mean(int window) {
  // Variance of the mean of `window` consecutive values of a stationary
  // unit-variance AR(1).
  double acc = window;
  for (int d = 1; d < window; ++d)
    acc += 2.0 * (window - d) * std::pow(kUtilPersistence, d);
  return acc / (static_cast<double>(window) * window);
}

double calibrate_intercept(double target_rate) {
  const double sigma2 = kBetaBaseline * kBetaBaseline +
                        kBetaUtil * kBetaUtil * var_util_mean(kUtilWindow) +
                        kBetaSlope * kBetaSlope;
  const double sigma = std::sqrt(sigma2);
  auto mean_rate = [&](double b0) {
    double acc = 0.0, wsum = 0.0;
    const int n = 2001;
    for (int i = 0; i < n; ++i) {
      double z = -8.0 + 16.0 * i / (n - 1);
      double w = std::exp(-0.5 * z * z);
      acc += w * sigmoid(b0 + sigma * z);
      wsum += w;
    }
    return acc / wsum;
  };
  double lo = -30.0, hi = 5.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (mean_rate(mid) < target_rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

int categorical_levels(int j) {
  static constexpr int kBase[4] = {5, 12, 25, 50};
  return j < 4 ? kBase[j] : 5 + (j * 7) % 46;
}

// Long-tailed level draw: weight of level i proportional to 1/(i+1), with a
// 30% baseline-quantile component so encodings carry target signal.
int draw_level(Rng& rng, int n_levels, double baseline) {
  if (rng.uniform() < 0.7) {
    double total = 0.0;
    for (int i = 0; i < n_levels; ++i) total += 1.0 / (i + 1);
    double u = rng.uniform() * total;
    for (int i = 0; i < n_levels; ++i) {
      u -= 1.0 / (i + 1);
      if (u <= 0.0) return i;
    }
    return n_levels - 1;
  }
  int lvl = static_cast<int>(normal_cdf(baseline) * n_levels);
  return std::clamp(lvl, 0, n_levels - 1);
}

struct Emitter {
  const PortfolioConfig& cfg;
  const std::vector<DriftEvent>& events;
  double beta0;

  double cumulative_strength(int month) const {
    double s = 0.0;
    for (const auto& e : events)
      if (month >= e.start_month) s += e.strength;
    return s;
  }

  double effective_util(const MemberHistory& m, int month) const {
    double u = m.latent.utilization[static_cast<std::size_t>(month - m.start_month)];
    double s = cumulative_strength(month);
    if (s == 0.0) return u;
    return std::exp(kDriftScaleGamma * s) * u + kDriftLocationDelta * s;
  }

  double trailing_util_mean(const MemberHistory& m, int last) const {
    int first = std::max(m.start_month, last - (kUtilWindow - 1));
    double acc = 0.0;
    for (int mo = first; mo <= last; ++mo) acc += effective_util(m, mo);
    return acc / (last - first + 1);
  }

  // Snapshot numeric vector for one calendar month. The trend feature's slope
  // coefficient is (month - (months-1)) * 0.35: exactly zero at the final
  // month, so the slope is recoverable only from differences across months.
  std::vector<double> snapshot_numeric(const MemberHistory& m, int month, Rng& rng) const {
    const auto& L = m.latent;
    double u = effective_util(m, month);
    std::vector<double> v(static_cast<std::size_t>(cfg.n_numeric));
    for (int f = 0; f < cfg.n_numeric; ++f) {
      double x;
      switch (f) {
        case 0: x = 3000.0 * std::exp(0.9 * L.baseline + 0.6 * u + 0.35 * rng.normal()); break;
        case 1:
          x = L.trend_level + L.slope * (month - (cfg.months - 1)) * 0.35 +
              0.25 * rng.normal();
          break;
        case 2: x = L.baseline + 0.35 * rng.normal(); break;
        case 3: x = u + 0.2 * rng.normal(); break;
        case 4: x = std::max(0.0, 8.0 * (u + 0.4 * L.baseline) - 12.0 + 1.2 * rng.normal()); break;
        case 5: x = std::exp(rng.normal()) * (1.0 + 0.3 * std::fabs(u)); break;
        case 6: x = trailing_util_mean(m, month) + 0.15 * rng.normal(); break;
        case 7: x = std::exp(0.5 + 0.7 * rng.normal()); break;
        default: {
          double cu = (f % 3 == 0) ? 0.25 : 0.0;
          double scale = 1.0 + (f % 5) * 0.6;
          x = scale * rng.normal() + cu * u + (f % 7) * 0.8;
        }
      }
      v[static_cast<std::size_t>(f)] = x;
    }
    return v;
  }

  std::vector<int> draw_categoricals(const MemberHistory& m, Rng& rng) const {
    std::vector<int> c(static_cast<std::size_t>(cfg.n_categorical));
    for (int j = 0; j < cfg.n_categorical; ++j)
      c[static_cast<std::size_t>(j)] = draw_level(rng, categorical_levels(j), m.latent.baseline);
    return c;
  }

  // Transaction-level view of the snapshot: multiplicative jitter on the
  // positive features, additive elsewhere.
  std::vector<double> txn_numeric(const std::vector<double>& snap, Rng& rng) const {
    std::vector<double> v(snap.size());
    for (std::size_t f = 0; f < snap.size(); ++f) {
      double x = snap[f];
      if (f == 0 || f == 5 || f == 7)
        x *= std::exp(0.08 * rng.normal());
      else if (f == 4)
        x = std::max(0.0, x + 0.5 * rng.normal());
      else
        x += 0.15 * rng.normal();
      v[f] = x;
    }
    return v;
  }

  void emit_features(MemberHistory& m) const {
    m.months.clear();
    m.months.resize(static_cast<std::size_t>(m.tenure_months));
    for (int t = 0; t < m.tenure_months; ++t) {
      int month = m.start_month + t;
      MonthRecord& mr = m.months[static_cast<std::size_t>(t)];
      mr.month = month;

      Rng snap_rng = month_rng(cfg.seed, kSnapshotDraw, m.member_id, month);
      mr.snapshot.ts = month + m.statement_frac;
      mr.snapshot.numeric = snapshot_numeric(m, month, snap_rng);
      mr.snapshot.categorical = draw_categoricals(m, snap_rng);

      Rng count_rng = month_rng(cfg.seed, kCountDraw, m.member_id, month);
      int count = 0;
      if (!count_rng.bernoulli(0.12)) {
        double raw = std::exp(count_rng.normal(m.latent.activity, 0.8));
        count = std::max(1, static_cast<int>(std::llround(raw)));
        if (count_rng.bernoulli(0.02)) count *= 10;
        count = std::min(count, 500);
      }

      Rng txn_rng = month_rng(cfg.seed, kTxnDraw, m.member_id, month);
      Rng miss_rng = month_rng(cfg.seed, kMissingDraw, m.member_id, month);
      mr.txns.resize(static_cast<std::size_t>(count));
      for (auto& txn : mr.txns) {
        txn.ts = month + txn_rng.uniform();
        txn.numeric = txn_numeric(mr.snapshot.numeric, txn_rng);
        txn.categorical = draw_categoricals(m, txn_rng);
        for (auto& x : txn.numeric)
          if (miss_rng.bernoulli(cfg.missing_rate)) x = std::nan("");
      }
      std::sort(mr.txns.begin(), mr.txns.end(),
                [](const Transaction& a, const Transaction& b) { return a.ts < b.ts; });
    }
  }

  void emit_label(MemberHistory& m) const {
    const auto& L = m.latent;
    double util_ref = trailing_util_mean(m, cfg.months - 1);
    double z = kBetaBaseline * L.baseline + kBetaUtil * util_ref + kBetaSlope * L.slope;
    double p = sigmoid(beta0 + z);

    Rng rng = member_rng(cfg.seed, kLabelDraw, m.member_id);
    double u_draw = rng.uniform();
    double timing_noise = rng.normal();

    if (u_draw >= p) {
      m.default_month.reset();
      return;
    }
    // Trend-driven defaulters surface late, acutely risky ones early; this is
    // what gives history-aware models their edge in the far bins.
    double trend_drive = kBetaSlope * L.slope;
    double acute_drive = kBetaBaseline * L.baseline + kBetaUtil * util_ref;
    double w = sigmoid(1.8 * (trend_drive - 0.75 * acute_drive));
    double mu = 1.0 + 15.0 * w;
    m.default_month = std::clamp(mu + 1.8 * timing_noise, 0.25, 18.0);
  }
};

std::vector<std::string> default_numeric_names(int n) {
  static const char* kNamed[8] = {"exposure",      "trend_balance",   "acute_score",
                                  "utilization",   "days_past_due",   "spend_volatility",
                                  "avg_utilization", "purchase_size"};
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(n));
  char buf[16];
  for (int f = 0; f < n; ++f) {
    if (f < 8) {
      names.emplace_back(kNamed[f]);
    } else {
      std::snprintf(buf, sizeof buf, "x%d", f);
      names.emplace_back(buf);
    }
  }
  return names;
}

std::vector<std::string> default_categorical_names(int n) {
  static const char* kNamed[4] = {"merchant_mix", "region", "channel", "program"};
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(n));
  char buf[16];
  for (int j = 0; j < n; ++j) {
    if (j < 4) {
      names.emplace_back(kNamed[j]);
    } else {
      std::snprintf(buf, sizeof buf, "c%d", j);
      names.emplace_back(buf);
    }
  }
  return names;
}

void emit_all(Portfolio& p) {
  Emitter em{p.config, p.drift_events, calibrate_intercept(p.config.default_rate)};
  for (auto& m : p.members) {
    em.emit_features(m);
    em.emit_label(m);
  }
}

}  // namespace

Portfolio generate_portfolio(const PortfolioConfig& cfg) {
  cfg.validate();
  Portfolio p;
  p.config = cfg;
  p.numeric_names = default_numeric_names(cfg.n_numeric);
  p.categorical_names = default_categorical_names(cfg.n_categorical);
  if (cfg.drift_strength != 0.0)
    p.drift_events.push_back({cfg.drift_strength, cfg.drift_start_month});

  p.members.resize(cfg.n_members);
  for (std::size_t i = 0; i < cfg.n_members; ++i) {
    MemberHistory& m = p.members[i];
    m.member_id = i + 1;

    Rng lat = member_rng(cfg.seed, kLatentDraw, m.member_id);
    m.latent.baseline = lat.normal();
    m.latent.slope = lat.normal();
    m.latent.trend_level = 3.0 * lat.normal();
    m.latent.activity = std::log(3.0) + 0.9 * lat.normal();

    Rng ten = member_rng(cfg.seed, kTenureDraw, m.member_id);
    m.tenure_months = ten.bernoulli(0.8)
                          ? cfg.months
                          : 1 + static_cast<int>(ten.below(static_cast<std::uint64_t>(cfg.months)));
    m.start_month = cfg.months - m.tenure_months;
    m.statement_frac = ten.uniform(0.55, 0.95);

    m.latent.utilization.resize(static_cast<std::size_t>(m.tenure_months));
    double u = lat.normal();
    const double innov = std::sqrt(1.0 - kUtilPersistence * kUtilPersistence);
    for (int t = 0; t < m.tenure_months; ++t) {
      m.latent.utilization[static_cast<std::size_t>(t)] = u;
      u = kUtilPersistence * u + innov * lat.normal();
    }
  }

  emit_all(p);
  return p;
}

void inject_drift(Portfolio& p, double strength, int start_month) {
  if (!std::isfinite(strength)) throw ValidationError("drift: strength must be finite");
  if (start_month < 0 || start_month >= p.config.months)
    throw ValidationError("drift: start_month out of range");

  std::vector<DriftEvent> next = p.drift_events;
  next.push_back({strength, start_month});
  for (int mo = 0; mo < p.config.months; ++mo) {
    double s = 0.0;
    for (const auto& e : next)
      if (mo >= e.start_month) s += e.strength;
    if (s < 0.0)
      throw ValidationError("drift: cumulative strength would become negative");
  }
  p.drift_events = std::move(next);
  if (strength == 0.0) return;  // identity; nothing to re-emit
  emit_all(p);
}

double drift_location_shift(double strength) { return kDriftLocationDelta * strength; }

}  // namespace riskseq::synth
