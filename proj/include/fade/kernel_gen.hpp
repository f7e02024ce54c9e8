#pragma once

// Content-aware, channel-shared upsampling kernel generation from encoder
// (n, C, 2H, 2W) and decoder (n, C, H, W) features.
//
// Every generator produces, per high-resolution position, K*K logits
//   w_m = sum_{l, u, v} beta[m, l, u, v] * (alpha_en[l] . x_en + alpha_de[l] . x_de + a_l) + b_m
// followed by a softmax over m. They differ in how a window of encoder points
// is paired with a window of decoder points:
//   naive      : decoder is NN-interpolated to 2H x 2W, so both windows sit on the
//                same grid and a 2x2 group shares most decoder samples.
//   semi-shift : the encoder window is centred at (2i+dy, 2j+dx) while the decoder
//                window stays centred at (i, j) for all four members (dy, dx) of
//                the group. Only the encoder can make the four kernels differ.

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "fade/error.hpp"
#include "fade/ops.hpp"
#include "fade/tensor.hpp"

namespace fade {

template <Real T>
struct KernelGenParams {
  using value_type = T;

  ConvWeights<T> alpha_en;  // (d, C, 1, 1), no bias
  ConvWeights<T> alpha_de;  // (d, C, 1, 1), bias a
  ConvWeights<T> beta;      // (K*K, d, h, h), bias b
  std::size_t h = 3;
  std::size_t K = 5;
  std::size_t d = 64;

  std::size_t channels() const { return alpha_en.c_in(); }

  void validate() const {
    alpha_en.validate();
    alpha_de.validate();
    beta.validate();
    FADE_CHECK(alpha_en.c_in() == alpha_de.c_in(), ErrorCode::ChannelMismatch,
               "encoder and decoder compressors disagree on C");
    FADE_CHECK(alpha_en.c_out() == d && alpha_de.c_out() == d && beta.c_in() == d, ErrorCode::ChannelMismatch,
               "compressed width must be d=" + std::to_string(d));
    FADE_CHECK(beta.c_out() == K * K, ErrorCode::ChannelMismatch, "beta must emit K*K channels");
    FADE_CHECK(alpha_en.k_h() == 1 && alpha_en.k_w() == 1 && alpha_de.k_h() == 1 && alpha_de.k_w() == 1,
               ErrorCode::InvalidArgument, "compressors are 1x1");
    FADE_CHECK(beta.k_h() == h && beta.k_w() == h, ErrorCode::InvalidArgument, "beta must be h x h");
    FADE_CHECK(!alpha_en.bias && alpha_de.bias.has_value(), ErrorCode::InvalidArgument,
               "the single compressor bias a belongs to the decoder branch");
    FADE_CHECK(beta.bias.has_value(), ErrorCode::InvalidArgument, "beta carries bias b");
  }

  template <class F>
  void for_each_array(F&& f) {
    f("alpha_en.kernel", alpha_en.kernel.data());
    f("alpha_de.kernel", alpha_de.kernel.data());
    f("alpha_de.bias", std::span<T>(*alpha_de.bias));
    f("beta.kernel", beta.kernel.data());
    f("beta.bias", std::span<T>(*beta.bias));
  }

  KernelGenParams zeros_like() const {
    return {alpha_en.zeros_like(), alpha_de.zeros_like(), beta.zeros_like(), h, K, d};
  }

  template <Real U>
  KernelGenParams<U> cast() const {
    return {alpha_en.template cast<U>(), alpha_de.template cast<U>(), beta.template cast<U>(), h, K, d};
  }

  static KernelGenParams zeros(std::size_t C, std::size_t h = 3, std::size_t K = 5, std::size_t d = 64) {
    return {ConvWeights<T>(d, C, 1, 1, false), ConvWeights<T>(d, C, 1, 1, true),
            ConvWeights<T>(K * K, d, h, h, true), h, K, d};
  }

  /// Per-layer uniform +-fan_in^(-1/2). The two compressors share fan-in 2C,
  /// matching the single 2C -> d compressor they split.
  static KernelGenParams init(std::size_t C, SplitMix64& rng, std::size_t h = 3, std::size_t K = 5,
                              std::size_t d = 64) {
    KernelGenParams p = zeros(C, h, K, d);
    const double a_bound = 1.0 / std::sqrt(2.0 * static_cast<double>(C));
    for (auto& v : p.alpha_en.kernel.data()) v = static_cast<T>(rng.uniform(-a_bound, a_bound));
    for (auto& v : p.alpha_de.kernel.data()) v = static_cast<T>(rng.uniform(-a_bound, a_bound));
    for (auto& v : *p.alpha_de.bias) v = static_cast<T>(rng.uniform(-a_bound, a_bound));
    p.beta = init_conv<T>(K * K, d, h, h, true, rng);
    return p;
  }

  static KernelGenParams random(std::size_t C, SplitMix64& rng, std::size_t h = 3, std::size_t K = 5,
                                std::size_t d = 64, double scale = 1.0) {
    KernelGenParams p = zeros(C, h, K, d);
    p.for_each_array([&](const char*, std::span<T> s) {
      for (auto& v : s) v = static_cast<T>(rng.uniform(-scale, scale));
    });
    return p;
  }
};

template <Real T>
struct KernelMap {
  Tensor4<T> tensor;  // (n, K*K, 2H, 2W)
  bool normalized = false;

  std::size_t K() const { return static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(tensor.c())))); }
};

/// Sub-process corner: which member of each 2x2 output group is produced.
struct Corner {
  std::size_t dy = 0;
  std::size_t dx = 0;

  std::size_t index() const { return dy * 2 + dx; }
  static Corner from_index(std::size_t k) { return {k / 2, k % 2}; }
};

namespace detail {

template <Real T>
void check_feature_pair(const Tensor4<T>& enc, const Tensor4<T>& dec, std::size_t C) {
  FADE_CHECK(enc.n() == dec.n() && enc.h() == 2 * dec.h() && enc.w() == 2 * dec.w(), ErrorCode::ShapeMismatch,
             "encoder " + enc.shape().str() + " must be exactly 2x decoder " + dec.shape().str());
  FADE_CHECK(enc.c() == C && dec.c() == C, ErrorCode::ChannelMismatch,
             "features have " + std::to_string(enc.c()) + "/" + std::to_string(dec.c()) +
                 " channels, parameters expect " + std::to_string(C));
}

inline void check_window(std::size_t h) {
  FADE_CHECK(h % 2 == 1, ErrorCode::UnsupportedWindow, "window size h must be odd, got " + std::to_string(h));
}

}  // namespace detail

/// alpha_en and alpha_de stacked along c_in into one (d, 2C, 1, 1) compressor
/// with bias a. Encoder channels come first.
template <Real T>
ConvWeights<T> stack_compressors(const KernelGenParams<T>& p) {
  const std::size_t C = p.channels();
  ConvWeights<T> w(p.d, 2 * C, 1, 1, true);
  for (std::size_t l = 0; l < p.d; ++l)
    for (std::size_t k = 0; k < C; ++k) {
      w.kernel(l, k, 0, 0) = p.alpha_en.kernel(l, k, 0, 0);
      w.kernel(l, C + k, 0, 0) = p.alpha_de.kernel(l, k, 0, 0);
    }
  *w.bias = *p.alpha_de.bias;
  return w;
}

/// Interpolate, concatenate, compress 2C -> d, h x h convolution, softmax.
template <Real T>
KernelMap<T> gen_kernels_naive(const Tensor4<T>& enc, const Tensor4<T>& dec, const KernelGenParams<T>& p) {
  p.validate();
  detail::check_feature_pair(enc, dec, p.channels());
  detail::check_window(p.h);
  // Scoped so the interpolated, concatenated and compressed maps are released
  // as soon as their consumer has run.
  Tensor4<T> logits;
  {
    Tensor4<T> compressed;
    {
      Tensor4<T> cat;
      {
        const Tensor4<T> up = nn_interpolate_x2(dec);
        cat = concat_channels(enc, up);
      }
      compressed = conv2d(cat, stack_compressors(p), 1, Padding{});
    }
    logits = conv2d(compressed, p.beta, 1, Padding::uniform(p.h / 2));
  }
  return {softmax_channels(logits), true};
}

/// Geometry of the encoder branch for one corner: the window centred at
/// (2i+dy, 2j+dx) with stride 2 needs r = h/2 zero rows on the named side and
/// r-1 on the other. For h = 1 the "r-1" side is a crop of one row/column.
struct EncoderFrame {
  Padding pad;
  Padding crop;
};

inline EncoderFrame encoder_frame(Corner corner, std::size_t h) {
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(h / 2);
  const std::ptrdiff_t dy = static_cast<std::ptrdiff_t>(corner.dy), dx = static_cast<std::ptrdiff_t>(corner.dx);
  const std::ptrdiff_t top = r - dy, bottom = r + dy - 1, left = r - dx, right = r + dx - 1;
  auto pos = [](std::ptrdiff_t v) { return static_cast<std::size_t>(std::max<std::ptrdiff_t>(v, 0)); };
  auto neg = [](std::ptrdiff_t v) { return static_cast<std::size_t>(std::max<std::ptrdiff_t>(-v, 0)); };
  return {{pos(top), pos(bottom), pos(left), pos(right)}, {neg(top), neg(bottom), neg(left), neg(right)}};
}

/// beta (without its bias) applied with stride 2 to the compressed encoder map
/// for one corner. Output (n, K*K, H, W).
template <Real T>
Tensor4<T> encoder_branch(const Tensor4<T>& compressed_enc, const ConvWeights<T>& beta, Corner corner) {
  const EncoderFrame frame = encoder_frame(corner, beta.k_h());
  const ConvWeights<T> beta_nobias{beta.kernel, std::nullopt};
  if (frame.crop == Padding{}) return conv2d(compressed_enc, beta_nobias, 2, frame.pad);
  return conv2d(crop2d(compressed_enc, frame.crop), beta_nobias, 2, frame.pad);
}

/// Decoder branch exactly as written: compress with alpha_de (+a), zero pad
/// h/2 on every side, beta with stride 1 (+b).
template <Real T>
Tensor4<T> decoder_branch(const Tensor4<T>& dec, const KernelGenParams<T>& p) {
  const Tensor4<T> compressed = conv2d(dec, p.alpha_de, 1, Padding{});
  return conv2d(compressed, p.beta, 1, Padding::uniform(p.h / 2));
}

/// One semi-shift sub-process: decoder branch + encoder branch for `corner`.
template <Real T>
Tensor4<T> semishift_subprocess(const Tensor4<T>& enc, const Tensor4<T>& dec, const KernelGenParams<T>& p,
                                Corner corner) {
  p.validate();
  detail::check_feature_pair(enc, dec, p.channels());
  detail::check_window(p.h);
  FADE_CHECK(corner.dy < 2 && corner.dx < 2, ErrorCode::InvalidArgument, "corner must be in {0,1}^2");
  const Tensor4<T> compressed_enc = conv2d(enc, p.alpha_en, 1, Padding{});
  Tensor4<T> out = decoder_branch(dec, p);
  add_inplace(out, encoder_branch(compressed_enc, p.beta, corner));
  return out;
}

/// The decoder branch with alpha_de folded into beta. Because the compressed
/// decoder map is zero padded after its bias a is added, a contributes only
/// through in-bounds taps; bias_kernel (K*K, 1, h, h) = sum_l beta[., l] * a_l is
/// therefore convolved with an all-ones map under the same padding.
template <Real T>
struct FoldedDecoderBranch {
  ConvWeights<T> kernel;       // (K*K, C, h, h), bias b
  ConvWeights<T> bias_kernel;  // (K*K, 1, h, h), no bias
};

template <Real T>
FoldedDecoderBranch<T> fold_decoder_branch(const KernelGenParams<T>& p) {
  const std::size_t KK = p.K * p.K, C = p.channels(), hh = p.h * p.h;
  FoldedDecoderBranch<T> f{ConvWeights<T>(KK, C, p.h, p.h, true), ConvWeights<T>(KK, 1, p.h, p.h, false)};
  *f.kernel.bias = *p.beta.bias;
  for (std::size_t m = 0; m < KK; ++m)
    for (std::size_t l = 0; l < p.d; ++l) {
      const T* bw = p.beta.kernel.plane(m, l);
      const T a = (*p.alpha_de.bias)[l];
      T* bk = f.bias_kernel.kernel.plane(m, 0);
      for (std::size_t t = 0; t < hh; ++t) bk[t] += bw[t] * a;
      for (std::size_t k = 0; k < C; ++k) {
        const T alpha = p.alpha_de.kernel(l, k, 0, 0);
        T* fk = f.kernel.kernel.plane(m, k);
        for (std::size_t t = 0; t < hh; ++t) fk[t] += bw[t] * alpha;
      }
    }
  return f;
}

/// Folded decoder branch, (n, K*K, H, W). Equals decoder_branch up to rounding.
template <Real T>
Tensor4<T> decoder_branch_folded(const Tensor4<T>& dec, const FoldedDecoderBranch<T>& f) {
  const std::size_t r = f.kernel.k_h() / 2;
  Tensor4<T> out = conv2d(dec, f.kernel, 1, Padding::uniform(r));
  const Tensor4<T> bias_map =
      conv2d(Tensor4<T>(1, 1, dec.h(), dec.w(), T(1)), f.bias_kernel, 1, Padding::uniform(r));
  const std::size_t plane = bias_map.size();
  for (std::size_t b = 0; b < out.n(); ++b) {
    T* dst = out.plane(b, 0);
    for (std::size_t i = 0; i < plane; ++i) dst[i] += bias_map.data()[i];
  }
  return out;
}

/// Semi-shift kernel logits before softmax, (n, K*K, 2H, 2W). The decoder branch
/// is shared by all four sub-processes and computed once.
template <Real T>
Tensor4<T> semishift_logits(const Tensor4<T>& enc, const Tensor4<T>& dec, const KernelGenParams<T>& p) {
  p.validate();
  detail::check_feature_pair(enc, dec, p.channels());
  detail::check_window(p.h);
  std::array<Tensor4<T>, 4> subs;
  {
    const Tensor4<T> compressed_enc = conv2d(enc, p.alpha_en, 1, Padding{});
    const Tensor4<T> dec_branch = decoder_branch_folded(dec, fold_decoder_branch(p));
    for (std::size_t k = 0; k < 4; ++k) {
      subs[k] = encoder_branch(compressed_enc, p.beta, Corner::from_index(k));
      add_inplace(subs[k], dec_branch);
    }
  }
  return interleave_x2(subs);
}

template <Real T>
KernelMap<T> gen_kernels_semishift(const Tensor4<T>& enc, const Tensor4<T>& dec, const KernelGenParams<T>& p) {
  return {softmax_channels(semishift_logits(enc, dec, p)), true};
}

/// Slow reference: evaluates the kernel weight formula per output position with
/// explicit loops over compressed channel, window row, window column and input
/// channel, then a scalar softmax. Out-of-range taps contribute zero, including
/// their share of a.
template <Real T>
KernelMap<T> gen_kernels_oracle(const Tensor4<T>& enc, const Tensor4<T>& dec, const KernelGenParams<T>& p) {
  p.validate();
  detail::check_feature_pair(enc, dec, p.channels());
  detail::check_window(p.h);
  const std::size_t C = p.channels(), KK = p.K * p.K, H = dec.h(), W = dec.w();
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(p.h / 2);
  Tensor4<T> out(enc.n(), KK, 2 * H, 2 * W);
  std::vector<T> logits(KK);
  for (std::size_t b = 0; b < enc.n(); ++b)
    for (std::size_t y = 0; y < 2 * H; ++y)
      for (std::size_t x = 0; x < 2 * W; ++x) {
        const std::ptrdiff_t i = static_cast<std::ptrdiff_t>(y / 2), j = static_cast<std::ptrdiff_t>(x / 2);
        for (std::size_t m = 0; m < KK; ++m) {
          T w = (*p.beta.bias)[m];
          for (std::size_t l = 0; l < p.d; ++l)
            for (std::size_t u = 0; u < p.h; ++u)
              for (std::size_t v = 0; v < p.h; ++v) {
                const std::ptrdiff_t ey = static_cast<std::ptrdiff_t>(y) + static_cast<std::ptrdiff_t>(u) - r;
                const std::ptrdiff_t ex = static_cast<std::ptrdiff_t>(x) + static_cast<std::ptrdiff_t>(v) - r;
                const std::ptrdiff_t dy = i + static_cast<std::ptrdiff_t>(u) - r;
                const std::ptrdiff_t dx = j + static_cast<std::ptrdiff_t>(v) - r;
                T inner = 0;
                if (ey >= 0 && ey < static_cast<std::ptrdiff_t>(2 * H) && ex >= 0 &&
                    ex < static_cast<std::ptrdiff_t>(2 * W))
                  for (std::size_t k = 0; k < C; ++k)
                    inner += p.alpha_en.kernel(l, k, 0, 0) *
                             enc(b, k, static_cast<std::size_t>(ey), static_cast<std::size_t>(ex));
                if (dy >= 0 && dy < static_cast<std::ptrdiff_t>(H) && dx >= 0 && dx < static_cast<std::ptrdiff_t>(W)) {
                  for (std::size_t k = 0; k < C; ++k)
                    inner += p.alpha_de.kernel(l, k, 0, 0) *
                             dec(b, k, static_cast<std::size_t>(dy), static_cast<std::size_t>(dx));
                  inner += (*p.alpha_de.bias)[l];
                }
                w += p.beta.kernel(m, l, u, v) * inner;
              }
          logits[m] = w;
        }
        T mx = -std::numeric_limits<T>::infinity();
        for (T v : logits) mx = std::max(mx, v);
        T total = 0;
        for (std::size_t m = 0; m < KK; ++m) total += std::exp(logits[m] - mx);
        for (std::size_t m = 0; m < KK; ++m) out(b, m, y, x) = std::exp(logits[m] - mx) / total;
      }
  return {std::move(out), true};
}

/// Kernel logits of a single window from 2C concatenated channels and one
/// (d, 2C) compressor. `window_cat` is (1, 2C, h, h).
template <Real T>
std::vector<T> window_logits_concat(const Tensor4<T>& window_cat, const ConvWeights<T>& alpha_cat,
                                    const ConvWeights<T>& beta) {
  const std::size_t d = alpha_cat.c_out(), KK = beta.c_out(), h = beta.k_h();
  std::vector<T> out(KK);
  for (std::size_t m = 0; m < KK; ++m) {
    T w = 0;
    for (std::size_t l = 0; l < d; ++l)
      for (std::size_t u = 0; u < h; ++u)
        for (std::size_t v = 0; v < h; ++v) {
          T inner = 0;
          for (std::size_t k = 0; k < window_cat.c(); ++k) inner += alpha_cat.kernel(l, k, 0, 0) * window_cat(0, k, u, v);
          inner += (*alpha_cat.bias)[l];
          w += beta.kernel(m, l, u, v) * inner;
        }
    out[m] = w + (*beta.bias)[m];
  }
  return out;
}

/// Same window via two per-source 1x1 compressions, the shared h x h
/// convolution applied to each, and a sum.
template <Real T>
std::vector<T> window_logits_split(const Tensor4<T>& window_en, const Tensor4<T>& window_de,
                                   const KernelGenParams<T>& p) {
  const std::size_t KK = p.K * p.K;
  std::vector<T> out(KK);
  for (std::size_t m = 0; m < KK; ++m) {
    T from_enc = 0, from_dec = 0;
    for (std::size_t l = 0; l < p.d; ++l)
      for (std::size_t u = 0; u < p.h; ++u)
        for (std::size_t v = 0; v < p.h; ++v) {
          T ce = 0, cd = 0;
          for (std::size_t k = 0; k < window_en.c(); ++k) ce += p.alpha_en.kernel(l, k, 0, 0) * window_en(0, k, u, v);
          for (std::size_t k = 0; k < window_de.c(); ++k) cd += p.alpha_de.kernel(l, k, 0, 0) * window_de(0, k, u, v);
          from_enc += p.beta.kernel(m, l, u, v) * ce;
          from_dec += p.beta.kernel(m, l, u, v) * (cd + (*p.alpha_de.bias)[l]);
        }
    out[m] = from_enc + from_dec + (*p.beta.bias)[m];
  }
  return out;
}

}  // namespace fade
