#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <set>
#include <thread>
#include <vector>

#include "gradcheck_common.hpp"
#include "riskseq/common.hpp"
#include "riskseq/nn.hpp"

using namespace riskseq;

TEST_CASE("finite-difference gradients match analytic backward for every layer") {
  for (const auto& [name, res] : gradcheck::run_all()) {
    CAPTURE(name);
    CHECK(res.n_checked > 0);
    CHECK(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("masked bce matches hand-computed loss and gradient") {
  std::vector<double> p = {0.9, 0.2, 0.5, 0.8};
  std::vector<float> y = {1.0f, 0.0f, 1.0f, 0.0f};
  std::vector<std::uint8_t> mask = {1, 1, 0, 1};
  std::vector<double> dp;
  const double loss = nn::masked_bce<double>(p, y, mask, dp);
  const double expect = -(std::log(0.9) + std::log(0.8) + std::log(0.2)) / 3.0;
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  REQUIRE(dp.size() == 4);
  CHECK(dp[0] == doctest::Approx((-0.1 / 0.09) / 3.0).epsilon(1e-12));
  CHECK(dp[1] == doctest::Approx((0.2 / 0.16) / 3.0).epsilon(1e-12));
  CHECK(dp[2] == 0.0);
  CHECK(dp[3] == doctest::Approx((0.8 / 0.16) / 3.0).epsilon(1e-12));
}

TEST_CASE("masked bce clips probabilities and zeroes clipped gradients") {
  std::vector<double> p = {1e-12, 1.0, 0.5};
  std::vector<float> y = {1.0f, 0.0f, 1.0f};
  std::vector<std::uint8_t> mask = {1, 1, 1};
  std::vector<double> dp;
  const double loss = nn::masked_bce<double>(p, y, mask, dp);
  const double eps = 1e-7;
  const double expect = -(std::log(eps) + std::log(eps) + std::log(0.5)) / 3.0;
  CHECK(loss == doctest::Approx(expect).epsilon(1e-9));
  CHECK(dp[0] == 0.0);
  CHECK(dp[1] == 0.0);
  CHECK(dp[2] != 0.0);
}

TEST_CASE("masked bce rejects bad inputs") {
  std::vector<double> p = {0.5, 0.5};
  std::vector<float> y = {1.0f, 0.0f};
  std::vector<double> dp;
  std::vector<std::uint8_t> short_mask = {1};
  CHECK_THROWS_AS(nn::masked_bce<double>(p, y, short_mask, dp), SchemaError);
  std::vector<std::uint8_t> zero_mask = {0, 0};
  CHECK_THROWS_AS(nn::masked_bce<double>(p, y, zero_mask, dp), ValidationError);
}

TEST_CASE("adam first step matches the closed-form update") {
  nn::Store<float> s;
  const std::size_t off = s.alloc(1);
  s.values[off] = 1.0f;
  s.grads[off] = 0.5f;
  nn::Adam<float> opt(s.values.size());
  opt.step(s, 0.1f);
  // m=0.05, v=0.00025, mhat=0.5, vhat=0.25 -> p = 1 - 0.1*0.5/(0.5+1e-8)
  CHECK(s.values[off] == doctest::Approx(0.9f).epsilon(1e-6));
  CHECK(opt.steps() == 1);
}

TEST_CASE("adam state restore reproduces the same trajectory") {
  auto run = [](int pre_steps, int post_steps, nn::Adam<float>* snap_from,
                std::vector<float>* out) {
    nn::Store<float> s;
    s.alloc(4);
    for (std::size_t i = 0; i < 4; ++i) s.values[i] = float(i) * 0.25f;
    nn::Adam<float> opt(4);
    Rng g(42);
    for (int t = 0; t < pre_steps + post_steps; ++t) {
      for (std::size_t i = 0; i < 4; ++i) s.grads[i] = float(g.uniform(-1.0, 1.0));
      if (t == pre_steps && snap_from)
        opt.restore(snap_from->m(), snap_from->v(), snap_from->steps());
      opt.step(s, 1e-2f);
    }
    *out = s.values;
  };
  // Baseline: 6 straight steps.
  std::vector<float> base;
  run(3, 3, nullptr, &base);
  // Snapshot after 3 steps, then restore into a fresh optimizer mid-run.
  nn::Store<float> s;
  s.alloc(4);
  for (std::size_t i = 0; i < 4; ++i) s.values[i] = float(i) * 0.25f;
  nn::Adam<float> opt(4);
  Rng g(42);
  for (int t = 0; t < 3; ++t) {
    for (std::size_t i = 0; i < 4; ++i) s.grads[i] = float(g.uniform(-1.0, 1.0));
    opt.step(s, 1e-2f);
  }
  std::vector<float> resumed;
  run(3, 3, &opt, &resumed);
  CHECK(base == resumed);
}

TEST_CASE("balanced batches carry the fractional positive quota") {
  const std::size_t n = 10000;
  std::vector<int> labels(n, 0);
  for (std::size_t i = 0; i < n; i += 50) labels[i] = 1;  // exactly 200 positives
  Rng rng(7);
  bool used = true;
  auto batches = nn::balanced_batches(labels, 512, rng, false, &used);
  CHECK(!used);
  REQUIRE(batches.size() == 20);

  std::vector<std::uint32_t> seen;
  std::size_t total_pos = 0;
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& batch = batches[b];
    if (b + 1 < batches.size())
      CHECK(batch.size() == 512);
    else
      CHECK(batch.size() == n - 512 * 19);
    std::size_t pos = 0;
    for (auto idx : batch) {
      seen.push_back(idx);
      pos += std::size_t(labels[idx]);
    }
    total_pos += pos;
    if (b + 1 < batches.size()) {
      CAPTURE(b);
      CHECK((pos == 10 || pos == 11));
    }
  }
  CHECK(total_pos == 200);
  // Every row appears exactly once.
  std::sort(seen.begin(), seen.end());
  for (std::size_t i = 0; i < n; ++i) REQUIRE(seen[i] == i);
}

TEST_CASE("balanced batches validate their inputs") {
  Rng rng(1);
  std::vector<int> ok = {0, 1};
  CHECK_THROWS_AS(nn::balanced_batches(ok, 0, rng), ValidationError);
  std::vector<int> empty;
  CHECK_THROWS_AS(nn::balanced_batches(empty, 4, rng), ValidationError);
  std::vector<int> one_class = {0, 0, 0};
  CHECK_THROWS_AS(nn::balanced_batches(one_class, 2, rng), ValidationError);
  std::vector<int> bad = {0, 2};
  CHECK_THROWS_AS(nn::balanced_batches(bad, 2, rng), ValidationError);
}

TEST_CASE("balanced batches are deterministic for a fixed rng seed") {
  std::vector<int> labels(997, 0);
  for (std::size_t i = 3; i < labels.size(); i += 41) labels[i] = 1;
  Rng a(99), b(99);
  CHECK(nn::balanced_batches(labels, 64, a) == nn::balanced_batches(labels, 64, b));
}

TEST_CASE("early stopper: flat validation metric stops after patience epochs") {
  nn::EarlyStopper stop(3);
  CHECK(!stop.update(0.5, 1));  // first observation is an improvement over -inf
  CHECK(!stop.update(0.5, 2));
  CHECK(!stop.update(0.5, 3));
  CHECK(stop.update(0.5, 4));  // third non-improving epoch in a row
  CHECK(stop.best_epoch() == 1);
  CHECK(stop.best_metric() == doctest::Approx(0.5));
}

TEST_CASE("early stopper: ties do not reset patience, improvements do") {
  nn::EarlyStopper stop(2);
  CHECK(!stop.update(0.60, 1));
  CHECK(!stop.update(0.60, 2));  // tie -> stale 1
  CHECK(!stop.update(0.61, 3));  // improvement resets
  CHECK(!stop.update(0.61, 4));
  CHECK(stop.update(0.60, 5));
  CHECK(stop.best_epoch() == 3);
  CHECK(stop.best_metric() == doctest::Approx(0.61));
}

TEST_CASE("bounded queue preserves order and honors close") {
  nn::BoundedQueue<int> q(2);
  std::thread producer([&] {
    for (int i = 0; i < 100; ++i) CHECK(q.push(int(i)));
    q.close();
  });
  for (int i = 0; i < 100; ++i) {
    auto v = q.pop();
    REQUIRE(v.has_value());
    CHECK(*v == i);
  }
  CHECK(!q.pop().has_value());
  producer.join();
  CHECK(!q.push(5));  // closed
}

TEST_CASE("dropout at rate zero and in inference mode is the identity") {
  nn::Dropout<float> drop(0.0);
  std::vector<float> x = {1.0f, -2.0f, 3.0f};
  Rng rng(5);
  CHECK(drop.forward(x, true, rng) == x);
  nn::Dropout<float> half(0.5);
  CHECK(half.forward(x, false, rng) == x);
}

TEST_CASE("dropout scales kept units by the inverse keep rate") {
  nn::Dropout<float> drop(0.25);
  std::vector<float> x(4096, 1.0f);
  Rng rng(11);
  const auto& y = drop.forward(x, true, rng);
  std::size_t zeros = 0;
  for (float v : y) {
    if (v == 0.0f)
      ++zeros;
    else
      CHECK(v == doctest::Approx(1.0f / 0.75f));
  }
  CHECK(zeros > 800);
  CHECK(zeros < 1250);
}

TEST_CASE("lstm zoneout: inference blends states deterministically") {
  nn::Store<float> s;
  Rng init(3);
  const double z = 0.4;
  nn::LstmLayer<float> layer(s, 2, 3, z, init);
  std::vector<float> x(nn::kSeqLen * 1 * 2, 0.5f);
  Rng unused(0);
  const auto h_all = layer.forward(s, x, 1, false, unused);

  // step_inference must reproduce the batched inference forward exactly.
  std::vector<float> h(3, 0.0f), c(3, 0.0f);
  for (std::size_t t = 0; t < nn::kSeqLen; ++t) {
    layer.step_inference(s, x.data() + t * 2, h.data(), c.data());
    for (std::size_t u = 0; u < 3; ++u) CHECK(h[u] == h_all[t * 3 + u]);
  }
}

TEST_CASE("lstm zoneout: training keep-masks are exact zeros and ones") {
  nn::Store<float> s;
  Rng init(3);
  nn::LstmLayer<float> layer(s, 2, 3, 0.5, init);
  std::vector<float> x(nn::kSeqLen * 4 * 2);
  Rng dat(9);
  for (auto& v : x) v = float(dat.uniform(-1.0, 1.0));

  Rng m1(17), m2(17);
  const auto h_a = layer.forward(s, x, 4, true, m1);
  const auto h_b = layer.forward(s, x, 4, true, m2);
  CHECK(h_a == h_b);  // same mask stream -> identical activations

  Rng m3(18);
  const auto h_c = layer.forward(s, x, 4, true, m3);
  CHECK(h_a != h_c);  // different masks actually change the rollout

  // With zoneout 1.0 every state would be carried; with 0.0 none. Check 0.0
  // training equals inference (no stochastic path left).
  nn::Store<float> s2;
  Rng init2(3);
  nn::LstmLayer<float> plain(s2, 2, 3, 0.0, init2);
  Rng m4(21), m5(22);
  const auto t_out = plain.forward(s2, x, 4, true, m4);
  const auto i_out = plain.forward(s2, x, 4, false, m5);
  CHECK(t_out == i_out);
}

TEST_CASE("causal convolution never looks forward in time") {
  nn::Store<float> s;
  Rng init(31);
  nn::CausalConv<float> conv(s, 2, 3, 2, 4, init);
  const std::size_t m = 2;
  std::vector<float> x(nn::kSeqLen * m * 2);
  Rng dat(32);
  for (auto& v : x) v = float(dat.uniform(-1.0, 1.0));
  const auto base = conv.forward(s, x, m);

  // Perturb the last step; nothing before it may change.
  std::vector<float> x2 = x;
  for (std::size_t f = 0; f < 2; ++f) x2[(nn::kSeqLen - 1) * m * 2 + f] += 10.0f;
  const auto& bumped = conv.forward(s, x2, m);
  for (std::size_t t = 0; t + 1 < nn::kSeqLen; ++t)
    for (std::size_t i = 0; i < m * 3; ++i) CHECK(bumped[t * m * 3 + i] == base[t * m * 3 + i]);
}

TEST_CASE("tcn block receptive field matches its dilations") {
  // Two stacked blocks with k=2 and dilations (1,2),(4,8) reach 16 steps back,
  // so with 12 steps the final output sees the whole window.
  nn::Store<float> s;
  Rng init(41);
  nn::TcnBlock<float> b1(s, 1, 4, 2, 1, 2, 0.0, init);
  nn::TcnBlock<float> b2(s, 4, 4, 2, 4, 8, 0.0, init);
  const std::size_t m = 1;
  std::vector<float> x(nn::kSeqLen, 0.1f);
  Rng unused(0);
  auto run = [&](const std::vector<float>& in) {
    const auto& h1 = b1.forward(s, in, m, false, unused);
    return b2.forward(s, h1, m, false, unused);
  };
  const auto base = run(x);
  for (std::size_t t = 0; t < nn::kSeqLen; ++t) {
    auto x2 = x;
    x2[t] += 1.0f;
    const auto& out = run(x2);
    // Causality: outputs strictly before t unchanged.
    for (std::size_t u = 0; u < t; ++u)
      for (std::size_t ch = 0; ch < 4; ++ch) CHECK(out[u * 4 + ch] == base[u * 4 + ch]);
    // Reach: the step-12 output must react to every input step.
    bool last_changed = false;
    for (std::size_t ch = 0; ch < 4; ++ch)
      if (out[(nn::kSeqLen - 1) * 4 + ch] != base[(nn::kSeqLen - 1) * 4 + ch])
        last_changed = true;
    CAPTURE(t);
    CHECK(last_changed);
  }
}
