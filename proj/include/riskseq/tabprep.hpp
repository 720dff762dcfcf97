#pragma once

// Fitted tabular preprocessing: decile target-rate imputation, split-derived
// capping, Box-Cox, Laplace-smoothed target encoding, standard scaling.
// Fit order per numeric feature: impute -> cap -> Box-Cox -> scale;
// categoricals: encode -> scale. All label-dependent statistics come from
// training rows only; apply never sees labels.

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "riskseq/table.hpp"

namespace riskseq::prep {

struct FeatureTransform {
  enum class Kind { numeric, categorical };
  Kind kind = Kind::numeric;
  std::string name;

  // numeric
  bool missing_seen_at_fit = false;  // imputation value from the decile rule;
                                     // otherwise it falls back to the median
  double imputation_value = 0.0;
  bool capping_enabled = false;  // off when the model produced < 2 splits
  double cap_low = 0.0;
  double cap_high = 0.0;
  double boxcox_lambda = 1.0;
  double boxcox_shift = 0.0;

  // categorical
  std::map<int, double> category_map;
  double fallback_encoding = 0.0;  // global target mean, for unseen levels

  // scaling
  double scale_mean = 0.0;
  double scale_std = 1.0;
  bool constant = false;  // degenerate at fit time: output is 0 for all rows
};

struct PreprocessArtifacts {
  int version = 1;
  std::size_t n_rows_fit = 0;
  double target_mean = 0.0;
  double laplace_k = 30.0;
  std::vector<std::string> numeric_names;
  std::vector<std::string> categorical_names;
  std::vector<FeatureTransform> numeric;
  std::vector<FeatureTransform> categorical;

  std::size_t n_outputs() const { return numeric.size() + categorical.size(); }
  std::vector<std::string> output_names() const;
};

// --- formula-level operations ---

// Midpoint of the equal-count decile bin whose default rate is closest to the
// default rate of the rows where the feature is missing; ties toward the
// lower bin. NaN marks missing. Requires >= 1 missing and >= 1 present row.
double impute_value(const std::vector<double>& values, const std::vector<int>& labels);

// (2*s1 - s2, 2*sk - s(k-1)) from strictly increasing splits, k >= 2.
std::pair<double, double> cap_bounds(const std::vector<double>& splits);
double apply_cap(double x, double low, double high);

// Grid-MLE lambda over [-2,2] step 0.1; all values must be positive.
double boxcox_fit(const std::vector<double>& values);
double boxcox_apply(double x, double lambda);  // (x^l - 1)/l, ln x at l = 0

// level -> (k*ybar + sum y) / (k + count)
std::map<int, double> laplace_encode(const std::vector<int>& levels,
                                     const std::vector<int>& labels, double k = 30.0);

// --- pipeline ---

using SplitsProvider = std::function<std::vector<std::vector<double>>(
    const std::vector<std::vector<double>>& imputed_numeric, const std::vector<int>& labels)>;

PreprocessArtifacts fit(const DataTable& table, const SplitsProvider& splits_provider,
                        double laplace_k = 30.0);

// Column-major transformed matrix; output columns = numeric then categorical.
std::vector<std::vector<double>> apply(const DataTable& table, const PreprocessArtifacts& a);

// Single-row path used when scoring live transactions. NaN = missing.
std::vector<double> apply_row(const std::vector<double>& numeric_row,
                              const std::vector<int>& categorical_row,
                              const PreprocessArtifacts& a);

void save_artifacts(const PreprocessArtifacts& a, const std::string& path);
PreprocessArtifacts load_artifacts(const std::string& path);

}  // namespace riskseq::prep
