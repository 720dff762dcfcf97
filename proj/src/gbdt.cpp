#include "riskseq/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <fstream>

#include <nlohmann/json.hpp>

#include "riskseq/common.hpp"

namespace riskseq::gbdt {

using nlohmann::json;

namespace {

constexpr double kLeafClamp = 10.0;
constexpr double kMinGain = 1e-12;
constexpr double kHessEps = 1e-12;

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
  bool found = false;
};

struct NodeStats {
  double g = 0.0, h = 0.0;
  std::size_t count = 0;
};

void check_matrix(const std::vector<std::vector<double>>& X, const std::vector<int>& y) {
  if (X.empty()) throw ValidationError("gbdt: no features");
  const std::size_t rows = X.front().size();
  if (rows == 0) throw ValidationError("gbdt: empty matrix");
  for (const auto& col : X) {
    if (col.size() != rows) throw SchemaError("gbdt: ragged matrix");
    for (double v : col)
      if (!std::isfinite(v)) throw ValidationError("gbdt: non-finite feature value");
  }
  if (y.size() != rows) throw SchemaError("gbdt: label count mismatch");
  for (int v : y)
    if (v != 0 && v != 1) throw ValidationError("gbdt: labels must be 0/1");
}

double split_gain(const NodeStats& parent, double gl, double hl) {
  double gr = parent.g - gl;
  double hr = parent.h - hl;
  return gl * gl / (hl + kHessEps) + gr * gr / (hr + kHessEps) -
         parent.g * parent.g / (parent.h + kHessEps);
}

}  // namespace

double GbdtModel::predict_row(std::span<const double> row) const {
  if (row.size() != n_features) throw SchemaError("gbdt: feature count mismatch");
  double acc = base_score;
  for (const auto& tree : trees) {
    int node = 0;
    while (tree.nodes[static_cast<std::size_t>(node)].feature >= 0) {
      const TreeNode& n = tree.nodes[static_cast<std::size_t>(node)];
      node = row[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
    }
    acc += params.learning_rate * tree.nodes[static_cast<std::size_t>(node)].value;
  }
  return sigmoid(acc);
}

GbdtModel fit(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
              const GbdtParams& params, std::vector<double>* train_loss) {
  check_matrix(X, y);
  if (params.n_trees < 0 || params.max_depth < 1 || params.learning_rate <= 0.0 ||
      params.min_child_weight < 1)
    throw ValidationError("gbdt: invalid params");

  const std::size_t rows = X.front().size();
  const std::size_t n_features = X.size();

  GbdtModel model;
  model.params = params;
  model.n_features = n_features;

  double prevalence = 0.0;
  for (int v : y) prevalence += v;
  prevalence /= static_cast<double>(rows);
  model.base_score = logit(std::clamp(prevalence, 1e-6, 1.0 - 1e-6));

  if (prevalence == 0.0 || prevalence == 1.0) {
    model.single_class = true;
    std::cerr << "gbdt: single-class labels, returning base-score model\n";
    return model;
  }

  // Presort each feature once; ties resolved by row index so the fit is
  // independent of any parallel candidate-evaluation schedule.
  std::vector<std::vector<std::uint32_t>> order(n_features);
  for (std::size_t f = 0; f < n_features; ++f) {
    auto& ord = order[f];
    ord.resize(rows);
    std::iota(ord.begin(), ord.end(), 0u);
    const auto& col = X[f];
    std::sort(ord.begin(), ord.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (col[a] != col[b]) return col[a] < col[b];
      return a < b;
    });
  }

  std::vector<double> score(rows, model.base_score);
  std::vector<double> grad(rows), hess(rows);
  std::vector<int> node_of(rows);

  for (int t = 0; t < params.n_trees; ++t) {
    for (std::size_t i = 0; i < rows; ++i) {
      double p = sigmoid(score[i]);
      grad[i] = p - y[i];
      hess[i] = std::max(p * (1.0 - p), kHessEps);
    }

    Tree tree;
    tree.nodes.push_back({});
    std::fill(node_of.begin(), node_of.end(), 0);
    std::vector<int> level_nodes{0};

    for (int depth = 0; depth < params.max_depth && !level_nodes.empty(); ++depth) {
      const int n_nodes = static_cast<int>(tree.nodes.size());
      std::vector<NodeStats> stats(static_cast<std::size_t>(n_nodes));
      std::vector<char> active(static_cast<std::size_t>(n_nodes), 0);
      for (int nid : level_nodes) active[static_cast<std::size_t>(nid)] = 1;
      for (std::size_t i = 0; i < rows; ++i) {
        NodeStats& s = stats[static_cast<std::size_t>(node_of[i])];
        s.g += grad[i];
        s.h += hess[i];
        s.count += 1;
      }

      std::vector<SplitCandidate> best(static_cast<std::size_t>(n_nodes));
      std::vector<double> gl(static_cast<std::size_t>(n_nodes));
      std::vector<double> hl(static_cast<std::size_t>(n_nodes));
      std::vector<std::size_t> cl(static_cast<std::size_t>(n_nodes));
      std::vector<double> prev(static_cast<std::size_t>(n_nodes));

      for (std::size_t f = 0; f < n_features; ++f) {
        for (int nid : level_nodes) {
          gl[static_cast<std::size_t>(nid)] = 0.0;
          hl[static_cast<std::size_t>(nid)] = 0.0;
          cl[static_cast<std::size_t>(nid)] = 0;
        }
        const auto& col = X[f];
        for (std::uint32_t idx : order[f]) {
          const std::size_t nid = static_cast<std::size_t>(node_of[idx]);
          if (!active[nid]) continue;
          const double v = col[idx];
          if (cl[nid] > 0 && v > prev[nid]) {
            const std::size_t cr = stats[nid].count - cl[nid];
            if (cl[nid] >= static_cast<std::size_t>(params.min_child_weight) &&
                cr >= static_cast<std::size_t>(params.min_child_weight)) {
              double gain = split_gain(stats[nid], gl[nid], hl[nid]);
              // Features scan in ascending index and thresholds in ascending
              // value, so requiring strict improvement implements the
              // (lowest feature, lowest threshold) tie-break.
              if (gain > best[nid].gain && gain > kMinGain) {
                best[nid] = {gain, static_cast<int>(f), 0.5 * (prev[nid] + v), true};
              }
            }
          }
          gl[nid] += grad[idx];
          hl[nid] += hess[idx];
          cl[nid] += 1;
          prev[nid] = v;
        }
      }

      std::vector<int> next_level;
      for (int nid : level_nodes) {
        const SplitCandidate& c = best[static_cast<std::size_t>(nid)];
        if (!c.found) continue;
        TreeNode& n = tree.nodes[static_cast<std::size_t>(nid)];
        n.feature = c.feature;
        n.threshold = c.threshold;
        n.left = static_cast<int>(tree.nodes.size());
        n.right = n.left + 1;
        tree.nodes.push_back({});
        tree.nodes.push_back({});
        next_level.push_back(n.left);
        next_level.push_back(n.right);
      }
      if (next_level.empty()) break;
      for (std::size_t i = 0; i < rows; ++i) {
        const TreeNode& n = tree.nodes[static_cast<std::size_t>(node_of[i])];
        if (n.feature >= 0)
          node_of[i] = X[static_cast<std::size_t>(n.feature)][i] < n.threshold ? n.left : n.right;
      }
      level_nodes = std::move(next_level);
    }

    // Newton leaf values from the final assignment.
    std::vector<double> leaf_g(tree.nodes.size(), 0.0);
    std::vector<double> leaf_h(tree.nodes.size(), 0.0);
    for (std::size_t i = 0; i < rows; ++i) {
      leaf_g[static_cast<std::size_t>(node_of[i])] += grad[i];
      leaf_h[static_cast<std::size_t>(node_of[i])] += hess[i];
    }
    for (std::size_t nid = 0; nid < tree.nodes.size(); ++nid) {
      TreeNode& n = tree.nodes[nid];
      if (n.feature >= 0) continue;
      n.value = std::clamp(-leaf_g[nid] / (leaf_h[nid] + kHessEps), -kLeafClamp, kLeafClamp);
    }

    for (std::size_t i = 0; i < rows; ++i)
      score[i] +=
          params.learning_rate * tree.nodes[static_cast<std::size_t>(node_of[i])].value;
    model.trees.push_back(std::move(tree));

    if (train_loss) {
      double loss = 0.0;
      for (std::size_t i = 0; i < rows; ++i) {
        double p = std::clamp(sigmoid(score[i]), 1e-12, 1.0 - 1e-12);
        loss -= y[i] ? std::log(p) : std::log(1.0 - p);
      }
      train_loss->push_back(loss / static_cast<double>(rows));
    }
  }
  return model;
}

std::vector<double> predict(const GbdtModel& model, const std::vector<std::vector<double>>& X) {
  if (X.size() != model.n_features) throw SchemaError("gbdt: feature count mismatch");
  const std::size_t rows = X.empty() ? 0 : X.front().size();
  for (const auto& col : X) {
    if (col.size() != rows) throw SchemaError("gbdt: ragged matrix");
    for (double v : col)
      if (!std::isfinite(v)) throw ValidationError("gbdt: non-finite feature value");
  }
  std::vector<double> out(rows);
  std::vector<double> row(model.n_features);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t f = 0; f < model.n_features; ++f) row[f] = X[f][i];
    out[i] = model.predict_row(row);
  }
  return out;
}

std::vector<std::vector<double>> extract_splits(const GbdtModel& model) {
  std::vector<std::vector<double>> splits(model.n_features);
  for (const auto& tree : model.trees)
    for (const auto& n : tree.nodes)
      if (n.feature >= 0) splits[static_cast<std::size_t>(n.feature)].push_back(n.threshold);
  for (auto& s : splits) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }
  return splits;
}

std::vector<double> rank_norm(std::span<const double> scores) {
  const std::size_t n = scores.size();
  if (n == 0) return {};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> out(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    // average 1-based rank of the tie group, mapped into (0,1)
    double r = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t t = i; t < j; ++t) out[order[t]] = r / (static_cast<double>(n) + 1.0);
    i = j;
  }
  return out;
}

std::vector<double> ensemble_scores(std::span<const double> a, std::span<const double> b,
                                    double weight) {
  if (a.size() != b.size()) throw ValidationError("ensemble: length mismatch");
  if (!(weight >= 0.0 && weight <= 1.0)) throw ValidationError("ensemble: weight outside [0,1]");
  auto ra = rank_norm(a);
  auto rb = rank_norm(b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = weight * ra[i] + (1.0 - weight) * rb[i];
  return out;
}

void save_model(const GbdtModel& model, const std::string& path) {
  json j{{"format", "riskseq-gbdt"},
         {"version", 1},
         {"params",
          {{"n_trees", model.params.n_trees},
           {"max_depth", model.params.max_depth},
           {"learning_rate", model.params.learning_rate},
           {"min_child_weight", model.params.min_child_weight}}},
         {"base_score", model.base_score},
         {"n_features", model.n_features},
         {"single_class", model.single_class}};
  json jtrees = json::array();
  for (const auto& tree : model.trees) {
    json jt = json::array();
    for (const auto& n : tree.nodes)
      jt.push_back(json{{"f", n.feature},
                        {"t", n.threshold},
                        {"l", n.left},
                        {"r", n.right},
                        {"v", n.value}});
    jtrees.push_back(std::move(jt));
  }
  j["trees"] = std::move(jtrees);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << j.dump();
  if (!out) throw IoError("write failed: " + path);
}

GbdtModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  json j = json::parse(in, nullptr, true);
  if (j.value("format", "") != "riskseq-gbdt") throw SchemaError("not a gbdt checkpoint: " + path);
  if (j.at("version").get<int>() != 1) throw SchemaError("unsupported gbdt version in " + path);
  GbdtModel model;
  const json& jp = j.at("params");
  model.params.n_trees = jp.at("n_trees").get<int>();
  model.params.max_depth = jp.at("max_depth").get<int>();
  model.params.learning_rate = jp.at("learning_rate").get<double>();
  model.params.min_child_weight = jp.at("min_child_weight").get<int>();
  model.base_score = j.at("base_score").get<double>();
  model.n_features = j.at("n_features").get<std::size_t>();
  model.single_class = j.at("single_class").get<bool>();
  for (const auto& jt : j.at("trees")) {
    Tree tree;
    for (const auto& jn : jt)
      tree.nodes.push_back({jn.at("f").get<int>(), jn.at("t").get<double>(),
                            jn.at("l").get<int>(), jn.at("r").get<int>(),
                            jn.at("v").get<double>()});
    model.trees.push_back(std::move(tree));
  }
  return model;
}

SplitsProvider make_splits_provider(const GbdtParams& params) {
  return [params](const std::vector<std::vector<double>>& X, const std::vector<int>& y) {
    return extract_splits(fit(X, y, params));
  };
}

}  // namespace riskseq::gbdt
