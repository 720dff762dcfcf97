#pragma once

// Gradient-boosted trees with logistic loss: the last-month benchmark model,
// the split source for cap bounds, and the rank-ensemble partner.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace riskseq::gbdt {

struct GbdtParams {
  int n_trees = 100;
  int max_depth = 4;
  double learning_rate = 0.1;
  int min_child_weight = 20;  // minimum rows in each child of a split
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf log-odds increment (before shrinkage)
};

struct Tree {
  std::vector<TreeNode> nodes;  // node 0 is the root
};

struct GbdtModel {
  GbdtParams params;
  double base_score = 0.0;  // log-odds of training prevalence
  std::size_t n_features = 0;
  std::vector<Tree> trees;
  bool single_class = false;

  // sigmoid(base_score + lr * sum of tree outputs)
  double predict_row(std::span<const double> row) const;
};

// X is column-major; every value must be finite (preprocessed upstream).
// When train_loss is given it receives the mean training BCE after each tree.
GbdtModel fit(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
              const GbdtParams& params, std::vector<double>* train_loss = nullptr);

std::vector<double> predict(const GbdtModel& model, const std::vector<std::vector<double>>& X);

// Per-feature strictly increasing unique thresholds; unused features yield
// empty sequences. Feeds cap_bounds directly.
std::vector<std::vector<double>> extract_splits(const GbdtModel& model);

// Fractional average ranks mapped into (0,1).
std::vector<double> rank_norm(std::span<const double> scores);

// weight*rank_norm(a) + (1-weight)*rank_norm(b)
std::vector<double> ensemble_scores(std::span<const double> a, std::span<const double> b,
                                    double weight = 0.5);

void save_model(const GbdtModel& model, const std::string& path);
GbdtModel load_model(const std::string& path);

using SplitsProvider = std::function<std::vector<std::vector<double>>(
    const std::vector<std::vector<double>>& X, const std::vector<int>& y)>;

// Provider that fits a fresh model with `params` and extracts its splits.
SplitsProvider make_splits_provider(const GbdtParams& params);

}  // namespace riskseq::gbdt
