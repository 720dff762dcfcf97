#pragma once

// Layer set with hand-written reverse-mode gradients. Templated on the
// scalar type: float for training/inference, double for finite-difference
// gradient checks. Sequence tensors are time-major: x[t*(m*F) + i*F + f],
// so each time step is one contiguous rows-by-features block and the dense
// head can run over all steps as a single (T*m) x F matrix.
//
// Bit-reproducibility contract: every forward accumulates each output element
// in an order independent of the batch size, so scoring one row alone equals
// scoring it inside any batch, bit for bit (within one kernel backend).

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <vector>

#include "riskseq/common.hpp"
#include "riskseq/kernels.hpp"

namespace riskseq::nn {

constexpr int kSeqLen = 12;

enum class Act { linear, relu, sigmoid };

template <typename T>
struct Store {
  std::vector<T> values;
  std::vector<T> grads;

  std::size_t alloc(std::size_t n) {
    std::size_t off = values.size();
    values.resize(off + n, T(0));
    grads.resize(off + n, T(0));
    return off;
  }
  void zero_grads() { std::fill(grads.begin(), grads.end(), T(0)); }
};

namespace detail {

inline void mm_nn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  kern::matmul_nn(a, b, c, m, k, n, acc);
}
inline void mm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  kern::matmul_nn(a, b, c, m, k, n, acc);
}
inline void mm_tn(const float* a, const float* b, float* c, int m, int k, int n, bool acc) {
  kern::matmul_tn(a, b, c, m, k, n, acc);
}
inline void mm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  kern::matmul_tn(a, b, c, m, k, n, acc);
}
inline void mm_nt(const float* a, const float* b, float* c, int m, int n, int k, bool acc) {
  kern::matmul_nt(a, b, c, m, n, k, acc);
}
inline void mm_nt(const double* a, const double* b, double* c, int m, int n, int k, bool acc) {
  kern::matmul_nt(a, b, c, m, n, k, acc);
}

template <typename T>
void add_bias_rows(T* y, const T* b, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] += b[c];
}

template <typename T>
void colsum_add(const T* dy, T* db, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
}

template <typename T>
void init_uniform(T* w, std::size_t n, double bound, Rng& rng) {
  for (std::size_t i = 0; i < n; ++i) w[i] = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace detail

// ---------------------------------------------------------------------------

template <typename T>
class Dense {
 public:
  Dense(Store<T>& s, std::size_t in, std::size_t out, Act act, Rng& init)
      : in_(in), out_(out), act_(act) {
    w_ = s.alloc(in * out);  // [in x out]
    b_ = s.alloc(out);
    const double bound = 1.0 / std::sqrt(double(in));
    detail::init_uniform(s.values.data() + w_, in * out, bound, init);
    // Nonzero bias keeps relu/layer-norm stacks off their kinks when dropout
    // blanks an entire row, so the loss stays differentiable at init.
    detail::init_uniform(s.values.data() + b_, out, bound, init);
  }

  const std::vector<T>& forward(Store<T>& s, const std::vector<T>& x, std::size_t rows) {
    x_ = x;
    y_.resize(rows * out_);
    detail::mm_nn(x.data(), s.values.data() + w_, y_.data(), int(rows), int(in_), int(out_),
                  false);
    detail::add_bias_rows(y_.data(), s.values.data() + b_, rows, out_);
    switch (act_) {
      case Act::linear: break;
      case Act::relu:
        for (auto& v : y_) v = v > T(0) ? v : T(0);
        break;
      case Act::sigmoid:
        for (auto& v : y_) v = static_cast<T>(sigmoid(double(v)));
        break;
    }
    return y_;
  }

  const std::vector<T>& backward(Store<T>& s, const std::vector<T>& dy, std::size_t rows) {
    dz_ = dy;
    switch (act_) {
      case Act::linear: break;
      case Act::relu:
        for (std::size_t i = 0; i < dz_.size(); ++i)
          if (y_[i] <= T(0)) dz_[i] = T(0);
        break;
      case Act::sigmoid:
        for (std::size_t i = 0; i < dz_.size(); ++i) dz_[i] *= y_[i] * (T(1) - y_[i]);
        break;
    }
    detail::mm_tn(x_.data(), dz_.data(), s.grads.data() + w_, int(rows), int(in_), int(out_),
                  true);
    detail::colsum_add(dz_.data(), s.grads.data() + b_, rows, out_);
    dx_.resize(rows * in_);
    detail::mm_nt(dz_.data(), s.values.data() + w_, dx_.data(), int(rows), int(out_), int(in_),
                  false);
    return dx_;
  }

  // One row, no caching; same arithmetic as forward() row by row.
  void apply_row(const Store<T>& s, const T* x, T* y) const {
    detail::mm_nn(x, s.values.data() + w_, y, 1, int(in_), int(out_), false);
    for (std::size_t c = 0; c < out_; ++c) y[c] += s.values[b_ + c];
    switch (act_) {
      case Act::linear: break;
      case Act::relu:
        for (std::size_t c = 0; c < out_; ++c) y[c] = y[c] > T(0) ? y[c] : T(0);
        break;
      case Act::sigmoid:
        for (std::size_t c = 0; c < out_; ++c) y[c] = static_cast<T>(sigmoid(double(y[c])));
        break;
    }
  }

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  std::size_t in_, out_;
  Act act_;
  std::size_t w_ = 0, b_ = 0;
  std::vector<T> x_, y_, dz_, dx_;
};

// ---------------------------------------------------------------------------

template <typename T>
class Dropout {
 public:
  explicit Dropout(double rate) : rate_(rate) {
    if (!(rate >= 0.0 && rate < 1.0)) throw ValidationError("dropout: rate must lie in [0,1)");
  }

  // Inverted dropout; identity at inference or rate 0.
  const std::vector<T>& forward(const std::vector<T>& x, bool training, Rng& rng) {
    y_ = x;
    active_ = training && rate_ > 0.0;
    if (!active_) return y_;
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    mask_.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = rng.bernoulli(rate_) ? T(0) : scale;
      y_[i] *= mask_[i];
    }
    return y_;
  }

  const std::vector<T>& backward(const std::vector<T>& dy) {
    dx_ = dy;
    if (active_)
      for (std::size_t i = 0; i < dx_.size(); ++i) dx_[i] *= mask_[i];
    return dx_;
  }

 private:
  double rate_;
  bool active_ = false;
  std::vector<T> mask_, y_, dx_;
};

// ---------------------------------------------------------------------------

template <typename T>
class LayerNorm {
 public:
  LayerNorm(Store<T>& s, std::size_t channels) : c_(channels) {
    gain_ = s.alloc(channels);
    bias_ = s.alloc(channels);
    std::fill_n(s.values.data() + gain_, channels, T(1));
  }

  const std::vector<T>& forward(Store<T>& s, const std::vector<T>& x, std::size_t rows) {
    constexpr double kEps = 1e-5;
    xhat_.resize(rows * c_);
    inv_std_.resize(rows);
    y_.resize(rows * c_);
    const T* g = s.values.data() + gain_;
    const T* b = s.values.data() + bias_;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = x.data() + r * c_;
      double mean = 0.0;
      for (std::size_t c = 0; c < c_; ++c) mean += double(xr[c]);
      mean /= double(c_);
      double var = 0.0;
      for (std::size_t c = 0; c < c_; ++c) {
        double d = double(xr[c]) - mean;
        var += d * d;
      }
      var /= double(c_);
      const T istd = static_cast<T>(1.0 / std::sqrt(var + kEps));
      inv_std_[r] = istd;
      for (std::size_t c = 0; c < c_; ++c) {
        T xh = static_cast<T>((double(xr[c]) - mean) * double(istd));
        xhat_[r * c_ + c] = xh;
        y_[r * c_ + c] = xh * g[c] + b[c];
      }
    }
    return y_;
  }

  const std::vector<T>& backward(Store<T>& s, const std::vector<T>& dy, std::size_t rows) {
    dx_.resize(rows * c_);
    T* dg = s.grads.data() + gain_;
    T* db = s.grads.data() + bias_;
    const T* g = s.values.data() + gain_;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dyr = dy.data() + r * c_;
      const T* xh = xhat_.data() + r * c_;
      double m1 = 0.0, m2 = 0.0;  // mean(dxhat), mean(dxhat * xhat)
      for (std::size_t c = 0; c < c_; ++c) {
        double dxh = double(dyr[c]) * double(g[c]);
        m1 += dxh;
        m2 += dxh * double(xh[c]);
        dg[c] += dyr[c] * xh[c];
        db[c] += dyr[c];
      }
      m1 /= double(c_);
      m2 /= double(c_);
      for (std::size_t c = 0; c < c_; ++c) {
        double dxh = double(dyr[c]) * double(g[c]);
        dx_[r * c_ + c] =
            static_cast<T>(double(inv_std_[r]) * (dxh - m1 - double(xh[c]) * m2));
      }
    }
    return dx_;
  }

 private:
  std::size_t c_;
  std::size_t gain_ = 0, bias_ = 0;
  std::vector<T> xhat_, inv_std_, y_, dx_;
};

// ---------------------------------------------------------------------------

// Left-padded dilated convolution: y[t] = b + sum_j x[t - j*d] W_j, taps into
// negative time read zeros so y[t] depends only on x[<= t].
template <typename T>
class CausalConv {
 public:
  CausalConv(Store<T>& s, std::size_t cin, std::size_t cout, std::size_t k, std::size_t dil,
             Rng& init)
      : cin_(cin), cout_(cout), k_(k), d_(dil) {
    w_ = s.alloc(k * cin * cout);  // [tap][cin x cout]
    b_ = s.alloc(cout);
    const double bound = 1.0 / std::sqrt(double(k * cin));
    detail::init_uniform(s.values.data() + w_, k * cin * cout, bound, init);
    detail::init_uniform(s.values.data() + b_, cout, bound, init);
  }

  const std::vector<T>& forward(Store<T>& s, const std::vector<T>& x, std::size_t m) {
    m_ = m;
    x_ = x;
    const std::size_t rows = kSeqLen * m;
    y_.resize(rows * cout_);
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(s.values.data() + b_, cout_, y_.data() + r * cout_);
    for (std::size_t j = 0; j < k_; ++j) {
      const std::size_t shift = j * d_;  // tap j reads x[t - shift]
      if (shift >= kSeqLen) break;
      const std::size_t valid = (kSeqLen - shift) * m;
      detail::mm_nn(x.data(), s.values.data() + w_ + j * cin_ * cout_,
                    y_.data() + shift * m * cout_, int(valid), int(cin_), int(cout_), true);
    }
    return y_;
  }

  const std::vector<T>& backward(Store<T>& s, const std::vector<T>& dy, std::size_t m) {
    const std::size_t rows = kSeqLen * m;
    detail::colsum_add(dy.data(), s.grads.data() + b_, rows, cout_);
    dx_.assign(rows * cin_, T(0));
    for (std::size_t j = 0; j < k_; ++j) {
      const std::size_t shift = j * d_;
      if (shift >= kSeqLen) break;
      const std::size_t valid = (kSeqLen - shift) * m;
      detail::mm_tn(x_.data(), dy.data() + shift * m * cout_,
                    s.grads.data() + w_ + j * cin_ * cout_, int(valid), int(cin_), int(cout_),
                    true);
      // dx[t - shift] += dy[t] . W_j^T for the valid block
      dxblock_.resize(valid * cin_);
      detail::mm_nt(dy.data() + shift * m * cout_, s.values.data() + w_ + j * cin_ * cout_,
                    dxblock_.data(), int(valid), int(cout_), int(cin_), false);
      T* dst = dx_.data();
      const T* src = dxblock_.data();
      for (std::size_t i = 0; i < valid * cin_; ++i) dst[i] += src[i];
    }
    return dx_;
  }

  std::size_t out_channels() const { return cout_; }

 private:
  std::size_t cin_, cout_, k_, d_;
  std::size_t w_ = 0, b_ = 0;
  std::size_t m_ = 0;
  std::vector<T> x_, y_, dx_, dxblock_, scratch_;
};

// ---------------------------------------------------------------------------

// Residual block: relu(residual(x) + f(x)), f = [conv -> LN -> relu ->
// dropout] twice. The two convs take their own dilations; the residual is a
// 1x1 projection when channel counts differ.
template <typename T>
class TcnBlock {
 public:
  TcnBlock(Store<T>& s, std::size_t cin, std::size_t cout, std::size_t k, std::size_t d1,
           std::size_t d2, double dropout, Rng& init)
      : conv1_(s, cin, cout, k, d1, init),
        ln1_(s, cout),
        drop1_(dropout),
        conv2_(s, cout, cout, k, d2, init),
        ln2_(s, cout),
        drop2_(dropout) {
    if (cin != cout) proj_.emplace(s, cin, cout, 1, 1, init);
  }

  const std::vector<T>& forward(Store<T>& s, const std::vector<T>& x, std::size_t m,
                                bool training, Rng& rng) {
    const std::size_t rows = kSeqLen * m;
    const auto& c1 = conv1_.forward(s, x, m);
    const auto& n1 = ln1_.forward(s, c1, rows);
    a1_ = n1;
    for (auto& v : a1_) v = v > T(0) ? v : T(0);
    const auto& p1 = drop1_.forward(a1_, training, rng);
    const auto& c2 = conv2_.forward(s, p1, m);
    const auto& n2 = ln2_.forward(s, c2, rows);
    a2_ = n2;
    for (auto& v : a2_) v = v > T(0) ? v : T(0);
    const auto& p2 = drop2_.forward(a2_, training, rng);

    const std::vector<T>& res = proj_ ? proj_->forward(s, x, m) : x;
    y_.resize(rows * conv1_.out_channels());
    for (std::size_t i = 0; i < y_.size(); ++i) {
      T v = res[i] + p2[i];
      y_[i] = v > T(0) ? v : T(0);
    }
    return y_;
  }

  const std::vector<T>& backward(Store<T>& s, const std::vector<T>& dy, std::size_t m) {
    const std::size_t rows = kSeqLen * m;
    dsum_ = dy;
    for (std::size_t i = 0; i < dsum_.size(); ++i)
      if (y_[i] <= T(0)) dsum_[i] = T(0);

    // branch path
    const auto& dp2 = drop2_.backward(dsum_);
    da2_ = dp2;
    for (std::size_t i = 0; i < da2_.size(); ++i)
      if (a2_[i] <= T(0)) da2_[i] = T(0);
    const auto& dn2 = ln2_.backward(s, da2_, rows);
    const auto& dc2 = conv2_.backward(s, dn2, m);
    const auto& dp1 = drop1_.backward(dc2);
    da1_ = dp1;
    for (std::size_t i = 0; i < da1_.size(); ++i)
      if (a1_[i] <= T(0)) da1_[i] = T(0);
    const auto& dn1 = ln1_.backward(s, da1_, rows);
    dx_ = conv1_.backward(s, dn1, m);

    // residual path
    if (proj_) {
      const auto& dres = proj_->backward(s, dsum_, m);
      for (std::size_t i = 0; i < dx_.size(); ++i) dx_[i] += dres[i];
    } else {
      for (std::size_t i = 0; i < dx_.size(); ++i) dx_[i] += dsum_[i];
    }
    return dx_;
  }

 private:
  CausalConv<T> conv1_;
  LayerNorm<T> ln1_;
  Dropout<T> drop1_;
  CausalConv<T> conv2_;
  LayerNorm<T> ln2_;
  Dropout<T> drop2_;
  std::optional<CausalConv<T>> proj_;
  std::vector<T> a1_, a2_, y_, dsum_, da2_, da1_, dx_;
};

// ---------------------------------------------------------------------------

// LSTM over 12 steps with zoneout on both h and c. Training: per-unit
// Bernoulli masks carry the previous state through; inference: the
// deterministic expectation h <- (1-z) h_new + z h_prev.
template <typename T>
class LstmLayer {
 public:
  LstmLayer(Store<T>& s, std::size_t in, std::size_t hidden, double zoneout, Rng& init)
      : in_(in), h_(hidden), zoneout_(zoneout) {
    if (!(zoneout >= 0.0 && zoneout <= 1.0))
      throw ValidationError("zoneout: rate must lie in [0,1]");
    w_ = s.alloc(in * 4 * hidden);      // [in x 4H], gate order i,f,g,o
    u_ = s.alloc(hidden * 4 * hidden);  // [H x 4H]
    b_ = s.alloc(4 * hidden);
    detail::init_uniform(s.values.data() + w_, in * 4 * hidden, 1.0 / std::sqrt(double(in)),
                         init);
    detail::init_uniform(s.values.data() + u_, hidden * 4 * hidden,
                         1.0 / std::sqrt(double(hidden)), init);
    // forget-gate bias starts at 1
    std::fill_n(s.values.data() + b_ + hidden, hidden, T(1));
  }

  // x time-major [12][m x in]; returns h time-major [12][m x H].
  const std::vector<T>& forward(Store<T>& s, const std::vector<T>& x, std::size_t m,
                                bool training, Rng& rng) {
    m_ = m;
    x_ = x;
    const std::size_t mh = m * h_;
    h_all_.assign(kSeqLen * mh, T(0));
    for (auto* buf : {&gates_, &cprev_, &cnew_, &tanhc_, &hprev_, &wc_, &wh_})
      buf->resize(kSeqLen);

    std::vector<T> h_prev(mh, T(0)), c_prev(mh, T(0));
    for (int t = 0; t < kSeqLen; ++t) {
      auto& g4 = gates_[size_t(t)];
      g4.resize(m * 4 * h_);
      detail::mm_nn(x.data() + size_t(t) * m * in_, s.values.data() + w_, g4.data(), int(m),
                    int(in_), int(4 * h_), false);
      detail::mm_nn(h_prev.data(), s.values.data() + u_, g4.data(), int(m), int(h_),
                    int(4 * h_), true);
      detail::add_bias_rows(g4.data(), s.values.data() + b_, m, 4 * h_);

      cprev_[size_t(t)] = c_prev;
      hprev_[size_t(t)] = h_prev;
      auto& cn = cnew_[size_t(t)];
      auto& tc = tanhc_[size_t(t)];
      cn.resize(mh);
      tc.resize(mh);

      for (std::size_t i = 0; i < m; ++i) {
        T* g = g4.data() + i * 4 * h_;
        for (std::size_t uu = 0; uu < h_; ++uu) {
          g[uu] = static_cast<T>(sigmoid(double(g[uu])));                    // i
          g[h_ + uu] = static_cast<T>(sigmoid(double(g[h_ + uu])));          // f
          g[2 * h_ + uu] = static_cast<T>(std::tanh(double(g[2 * h_ + uu])));  // g
          g[3 * h_ + uu] = static_cast<T>(sigmoid(double(g[3 * h_ + uu])));  // o
          const std::size_t idx = i * h_ + uu;
          cn[idx] = g[h_ + uu] * c_prev[idx] + g[uu] * g[2 * h_ + uu];
          tc[idx] = static_cast<T>(std::tanh(double(cn[idx])));
        }
      }

      // zoneout mix weights for the new state (prev gets 1 - w)
      auto& wc = wc_[size_t(t)];
      auto& wh = wh_[size_t(t)];
      wc.resize(mh);
      wh.resize(mh);
      if (training) {
        for (std::size_t i = 0; i < mh; ++i) wc[i] = rng.bernoulli(zoneout_) ? T(0) : T(1);
        for (std::size_t i = 0; i < mh; ++i) wh[i] = rng.bernoulli(zoneout_) ? T(0) : T(1);
      } else {
        std::fill(wc.begin(), wc.end(), static_cast<T>(1.0 - zoneout_));
        std::fill(wh.begin(), wh.end(), static_cast<T>(1.0 - zoneout_));
      }

      T* h_out = h_all_.data() + size_t(t) * mh;
      for (std::size_t i = 0; i < m; ++i) {
        const T* g = g4.data() + i * 4 * h_;
        for (std::size_t uu = 0; uu < h_; ++uu) {
          const std::size_t idx = i * h_ + uu;
          const T h_new = g[3 * h_ + uu] * tc[idx];
          c_prev[idx] = wc[idx] * cn[idx] + (T(1) - wc[idx]) * c_prev[idx];
          h_out[idx] = wh[idx] * h_new + (T(1) - wh[idx]) * h_prev[idx];
        }
      }
      std::copy_n(h_out, mh, h_prev.data());
    }
    return h_all_;
  }

  // dh_all time-major [12][m x H]; returns dx time-major [12][m x in].
  const std::vector<T>& backward(Store<T>& s, const std::vector<T>& dh_all, std::size_t m) {
    const std::size_t mh = m * h_;
    dx_.assign(kSeqLen * m * in_, T(0));
    std::vector<T> dc(mh, T(0)), dh_carry(mh, T(0));
    std::vector<T> dz(m * 4 * h_);

    for (int t = kSeqLen - 1; t >= 0; --t) {
      const auto& g4 = gates_[size_t(t)];
      const auto& cp = cprev_[size_t(t)];
      const auto& tc = tanhc_[size_t(t)];
      const auto& hp = hprev_[size_t(t)];
      const auto& wc = wc_[size_t(t)];
      const auto& wh = wh_[size_t(t)];
      const T* dh_in = dh_all.data() + size_t(t) * mh;

      for (std::size_t i = 0; i < m; ++i) {
        const T* g = g4.data() + i * 4 * h_;
        T* dzr = dz.data() + i * 4 * h_;
        for (std::size_t uu = 0; uu < h_; ++uu) {
          const std::size_t idx = i * h_ + uu;
          const T gi = g[uu], gf = g[h_ + uu], gg = g[2 * h_ + uu], go = g[3 * h_ + uu];

          const T dh_out = dh_in[idx] + dh_carry[idx];
          const T dh_new = dh_out * wh[idx];
          const T dc_out = dc[idx];
          T dc_new = dc_out * wc[idx];
          const T do_ = dh_new * tc[idx];
          dc_new += dh_new * go * (T(1) - tc[idx] * tc[idx]);

          const T df = dc_new * cp[idx];
          const T di = dc_new * gg;
          const T dgg = dc_new * gi;

          // carry to t-1 (dh via U added after the GEMM below)
          dc[idx] = dc_new * gf + dc_out * (T(1) - wc[idx]);
          dh_carry[idx] = dh_out * (T(1) - wh[idx]);

          dzr[uu] = di * gi * (T(1) - gi);
          dzr[h_ + uu] = df * gf * (T(1) - gf);
          dzr[2 * h_ + uu] = dgg * (T(1) - gg * gg);
          dzr[3 * h_ + uu] = do_ * go * (T(1) - go);
        }
      }

      detail::mm_tn(x_.data() + size_t(t) * m * in_, dz.data(), s.grads.data() + w_, int(m),
                    int(in_), int(4 * h_), true);
      detail::mm_tn(hp.data(), dz.data(), s.grads.data() + u_, int(m), int(h_), int(4 * h_),
                    true);
      detail::colsum_add(dz.data(), s.grads.data() + b_, m, 4 * h_);
      detail::mm_nt(dz.data(), s.values.data() + w_, dx_.data() + size_t(t) * m * in_, int(m),
                    int(4 * h_), int(in_), false);
      dhu_.resize(mh);
      detail::mm_nt(dz.data(), s.values.data() + u_, dhu_.data(), int(m), int(4 * h_), int(h_),
                    false);
      for (std::size_t i = 0; i < mh; ++i) dh_carry[i] += dhu_[i];
    }
    return dx_;
  }

  std::size_t hidden() const { return h_; }

  // Single-step inference from an explicit state (serving path). Must follow
  // exactly the same arithmetic as forward() in inference mode.
  void step_inference(const Store<T>& s, const T* x_t, T* h, T* c) const {
    std::vector<T> z(4 * h_);
    detail::mm_nn(x_t, s.values.data() + w_, z.data(), 1, int(in_), int(4 * h_), false);
    detail::mm_nn(h, s.values.data() + u_, z.data(), 1, int(h_), int(4 * h_), true);
    for (std::size_t c2 = 0; c2 < 4 * h_; ++c2) z[c2] += s.values[b_ + c2];
    const T keep = static_cast<T>(1.0 - zoneout_);
    for (std::size_t uu = 0; uu < h_; ++uu) {
      const T gi = static_cast<T>(sigmoid(double(z[uu])));
      const T gf = static_cast<T>(sigmoid(double(z[h_ + uu])));
      const T gg = static_cast<T>(std::tanh(double(z[2 * h_ + uu])));
      const T go = static_cast<T>(sigmoid(double(z[3 * h_ + uu])));
      const T cn = gf * c[uu] + gi * gg;
      const T tc = static_cast<T>(std::tanh(double(cn)));
      const T hn = go * tc;
      c[uu] = keep * cn + (T(1) - keep) * c[uu];
      h[uu] = keep * hn + (T(1) - keep) * h[uu];
    }
  }

 private:
  std::size_t in_, h_;
  double zoneout_;
  std::size_t w_ = 0, u_ = 0, b_ = 0;
  std::size_t m_ = 0;
  std::vector<T> x_, h_all_, dx_, dhu_;
  std::vector<std::vector<T>> gates_, cprev_, cnew_, tanhc_, hprev_, wc_, wh_;
};

// ---------------------------------------------------------------------------

// Mean BCE over mask=1 entries; p clipped to [1e-7, 1-1e-7]. Gradients at
// masked entries are exactly zero. Layouts must match (any, typically
// time-major T x m).
template <typename T, typename Y = T, typename M = T>
double masked_bce(const std::vector<T>& p, const std::vector<Y>& y, const std::vector<M>& mask,
                  std::vector<T>& dp) {
  if (p.size() != y.size() || p.size() != mask.size())
    throw SchemaError("masked_bce: size mismatch");
  constexpr double kClip = 1e-7;
  double count = 0.0;
  for (const M& mv : mask) count += double(mv);
  if (count == 0.0) throw ValidationError("masked_bce: mask selects no steps");

  double loss = 0.0;
  dp.assign(p.size(), T(0));
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mask[i] == M(0)) continue;
    const double pi = double(p[i]);
    const double ph = std::clamp(pi, kClip, 1.0 - kClip);
    const double yi = double(y[i]);
    loss -= yi * std::log(ph) + (1.0 - yi) * std::log(1.0 - ph);
    if (pi > kClip && pi < 1.0 - kClip)
      dp[i] = static_cast<T>((ph - yi) / (ph * (1.0 - ph)) / count);
  }
  return loss / count;
}

// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  Adam(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, T(0)), v_(n, T(0)) {}

  void step(Store<T>& s, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, double(t_));
    const double bc2 = 1.0 - std::pow(beta2_, double(t_));
    kern::adam_update(s.values.data(), s.grads.data(), m_.data(), v_.data(), s.values.size(),
                      static_cast<T>(lr), static_cast<T>(beta1_), static_cast<T>(beta2_),
                      static_cast<T>(eps_), static_cast<T>(bc1), static_cast<T>(bc2));
  }

  std::int64_t steps() const { return t_; }
  std::vector<T>& m() { return m_; }
  std::vector<T>& v() { return v_; }
  const std::vector<T>& m() const { return m_; }
  const std::vector<T>& v() const { return v_; }
  void restore(std::vector<T> m, std::vector<T> v, std::int64_t t) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
  }

 private:
  double beta1_, beta2_, eps_;
  std::vector<T> m_, v_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------

// Stratified batches: every batch carries round(batch_size * global rate)
// positives with the rounding remainder carried across batches, so one epoch
// consumes each class exactly. Minority draws become with-replacement only if
// the pool is exhausted and the caller allowed it.
std::vector<std::vector<std::uint32_t>> balanced_batches(const std::vector<int>& labels,
                                                         std::size_t batch_size, Rng& rng,
                                                         bool allow_replacement = false,
                                                         bool* used_replacement = nullptr);

// Strict-improvement early stopping; ties count as non-improvement.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {
    if (patience < 1) throw ValidationError("early stopping: patience must be >= 1");
  }
  // Returns true when training should stop after this epoch.
  bool update(double metric, int epoch);
  int best_epoch() const { return best_epoch_; }
  double best_metric() const { return best_metric_; }

 private:
  int patience_;
  double best_metric_ = -std::numeric_limits<double>::infinity();
  int best_epoch_ = -1;
  int stale_ = 0;
};

// ---------------------------------------------------------------------------

// Producer/consumer handoff for batch assembly (capacity >= 2 per the
// concurrency contract). FIFO, so consumption order equals production order.
template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : cap_(capacity < 2 ? 2 : capacity) {}

  // Blocks while full; returns false when the queue was closed.
  bool push(T item) {
    std::unique_lock lk(mu_);
    cv_space_.wait(lk, [&] { return q_.size() < cap_ || closed_; });
    if (closed_) return false;
    q_.push_back(std::move(item));
    cv_item_.notify_one();
    return true;
  }

  // Blocks while empty; empty optional once closed and drained.
  std::optional<T> pop() {
    std::unique_lock lk(mu_);
    cv_item_.wait(lk, [&] { return !q_.empty() || closed_; });
    if (q_.empty()) return std::nullopt;
    T item = std::move(q_.front());
    q_.pop_front();
    cv_space_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    cv_item_.notify_all();
    cv_space_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_item_, cv_space_;
  std::deque<T> q_;
  std::size_t cap_;
  bool closed_ = false;
};

}  // namespace riskseq::nn
