#include "riskseq/nn.hpp"

#include <numeric>

namespace riskseq::nn {

std::vector<std::vector<std::uint32_t>> balanced_batches(const std::vector<int>& labels,
                                                         std::size_t batch_size, Rng& rng,
                                                         bool allow_replacement,
                                                         bool* used_replacement) {
  if (batch_size == 0) throw ValidationError("balanced_batches: batch_size must be positive");
  if (labels.empty()) throw ValidationError("balanced_batches: empty label vector");
  if (used_replacement) *used_replacement = false;

  std::vector<std::uint32_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1)
      pos.push_back(std::uint32_t(i));
    else if (labels[i] == 0)
      neg.push_back(std::uint32_t(i));
    else
      throw ValidationError("balanced_batches: labels must be 0 or 1");
  }
  if (pos.empty() || neg.empty())
    throw ValidationError("balanced_batches: need both classes present");

  auto shuffle = [&rng](std::vector<std::uint32_t>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  };
  shuffle(pos);
  shuffle(neg);

  const double rate = double(pos.size()) / double(labels.size());
  const std::size_t n_batches = (labels.size() + batch_size - 1) / batch_size;

  std::vector<std::vector<std::uint32_t>> batches;
  batches.reserve(n_batches);
  std::size_t pi = 0, ni = 0;      // cursors into the shuffled pools
  std::size_t pos_taken = 0;       // fractional-quota carry
  std::size_t rows_emitted = 0;

  for (std::size_t b = 0; b < n_batches; ++b) {
    const std::size_t rows =
        std::min(batch_size, labels.size() - rows_emitted);
    const std::size_t cum = rows_emitted + rows;
    std::size_t quota = std::size_t(std::llround(rate * double(cum)));
    if (quota < pos_taken) quota = pos_taken;
    std::size_t k = quota - pos_taken;
    if (k > rows) k = rows;

    std::vector<std::uint32_t> batch;
    batch.reserve(rows);
    for (std::size_t j = 0; j < k; ++j) {
      if (pi < pos.size()) {
        batch.push_back(pos[pi++]);
      } else if (allow_replacement) {
        batch.push_back(pos[rng.below(pos.size())]);
        if (used_replacement) *used_replacement = true;
      } else {
        throw ValidationError("balanced_batches: positive pool exhausted");
      }
    }
    for (std::size_t j = k; j < rows; ++j) {
      if (ni < neg.size()) {
        batch.push_back(neg[ni++]);
      } else if (allow_replacement) {
        batch.push_back(neg[rng.below(neg.size())]);
        if (used_replacement) *used_replacement = true;
      } else {
        throw ValidationError("balanced_batches: negative pool exhausted");
      }
    }
    shuffle(batch);
    batches.push_back(std::move(batch));
    pos_taken += k;
    rows_emitted = cum;
  }
  return batches;
}

bool EarlyStopper::update(double metric, int epoch) {
  if (metric > best_metric_) {
    best_metric_ = metric;
    best_epoch_ = epoch;
    stale_ = 0;
    return false;
  }
  ++stale_;
  return stale_ >= patience_;
}

}  // namespace riskseq::nn
