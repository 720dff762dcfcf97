#pragma once

// Synthetic portfolio generator. Risk is driven by three member latents:
// a static baseline, a trailing utilization process (AR(1)), and a trend
// slope. The slope enters features only through month-over-month movement of
// the trend feature — its coefficient at the final observed month is zero —
// so last-month-only models cannot see it while sequence models can.

#include "riskseq/portfolio.hpp"

namespace riskseq::synth {

// Feature roles referenced by experiments and tests.
constexpr int kExposureFeature = 0;     // lognormal balance; >15k = high-debt segment
constexpr int kTrendFeature = 1;        // planted sequential signal
constexpr int kAcuteFeature = 2;        // noisy view of the baseline latent
constexpr int kUtilizationFeature = 3;  // noisy view of the utilization latent
constexpr double kHighExposureThreshold = 15000.0;

// Drift transform on the utilization latent for months >= start:
// u' = exp(gamma*S)*u + delta*S, S = summed strengths of applicable events.
constexpr double kDriftLocationDelta = 0.6;
constexpr double kDriftScaleGamma = 0.15;

Portfolio generate_portfolio(const PortfolioConfig& cfg);

// Appends a drift event and re-emits features and labels from the unchanged
// latents. Strength may be negative only to unwind earlier events: the
// cumulative strength at every month must stay >= 0.
void inject_drift(Portfolio& p, double strength, int start_month);

// Expected mean shift of the utilization-view feature per unit drift
// strength (used by distribution-shift checks).
double drift_location_shift(double strength);

}  // namespace riskseq::synth
