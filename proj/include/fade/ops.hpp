#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "fade/error.hpp"
#include "fade/fault.hpp"
#include "fade/tensor.hpp"

namespace fade {

/// Output extent of a strided window over a padded axis. Throws when the window
/// does not tile the padded axis exactly.
inline std::size_t conv_out_extent(std::size_t in, std::size_t pad_lo, std::size_t pad_hi,
                                   std::size_t k, std::size_t stride) {
  FADE_CHECK(stride >= 1, ErrorCode::InvalidArgument, "stride must be positive");
  const std::size_t padded = in + pad_lo + pad_hi;
  FADE_CHECK(padded >= k, ErrorCode::NonIntegerOutputShape,
             "window " + std::to_string(k) + " larger than padded extent " + std::to_string(padded));
  FADE_CHECK((padded - k) % stride == 0, ErrorCode::NonIntegerOutputShape,
             "(" + std::to_string(padded) + " - " + std::to_string(k) + ") not divisible by stride " +
                 std::to_string(stride));
  return (padded - k) / stride + 1;
}

namespace detail {

/// Outputs [lo, hi) along one axis whose tap k lands inside the unpadded input.
inline std::pair<std::size_t, std::size_t> conv_valid_range(std::size_t k, std::size_t pad_lo, std::size_t in,
                                                            std::size_t out_n, std::size_t stride) {
  const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad_lo);
  const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(stride);
  const std::ptrdiff_t lo = off >= 0 ? 0 : (-off + s - 1) / s;
  const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(in) - 1 - off;
  const std::ptrdiff_t hi = last < 0 ? 0 : std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(out_n), last / s + 1);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

}  // namespace detail

/// Cross-correlation with zero padding. Each output accumulates input channels
/// outermost, then kernel rows, then kernel columns; bias is added last.
template <Real T>
Tensor4<T> conv2d(const Tensor4<T>& input, const ConvWeights<T>& weights, std::size_t stride,
                  const Padding& pad) {
  weights.validate();
  FADE_CHECK(input.c() == weights.c_in(), ErrorCode::ChannelMismatch,
             "conv2d: input has " + std::to_string(input.c()) + " channels, weights expect " +
                 std::to_string(weights.c_in()));
  const std::size_t kh = weights.k_h(), kw = weights.k_w();
  const std::size_t oh = conv_out_extent(input.h(), pad.top, pad.bottom, kh, stride);
  const std::size_t ow = conv_out_extent(input.w(), pad.left, pad.right, kw, stride);
  const std::size_t ih = input.h(), iw = input.w(), cin = input.c();
  Tensor4<T> out(input.n(), weights.c_out(), oh, ow);


  // Every output still accumulates channel by channel, then kernel row, then
  // kernel column; the loops are only reordered so the innermost one is contiguous.
  std::vector<std::pair<std::size_t, std::size_t>> rows(kh), cols(kw);
  for (std::size_t k = 0; k < kh; ++k) rows[k] = detail::conv_valid_range(k, pad.top, ih, oh, stride);
  for (std::size_t k = 0; k < kw; ++k) cols[k] = detail::conv_valid_range(k, pad.left, iw, ow, stride);
  for (std::size_t b = 0; b < input.n(); ++b) {
    for (std::size_t co = 0; co < weights.c_out(); ++co) {
      T* dst = out.plane(b, co);
      const T* wco = weights.kernel.plane(co, 0);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* src = input.plane(b, ci);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto [oy_lo, oy_hi] = rows[ky];
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto [ox_lo, ox_hi] = cols[kx];
            const T wv = wco[(ci * kh + ky) * kw + kx];
            for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
              if (ox_lo >= ox_hi) continue;
              // First valid input element of this output row for tap (ky, kx).
              const T* in = src + (oy * stride + ky - pad.top) * iw + (ox_lo * stride + kx - pad.left);
              T* drow = dst + oy * ow + ox_lo;
              const std::size_t count = ox_hi - ox_lo;
              if (stride == 1) {
                for (std::size_t i = 0; i < count; ++i) drow[i] += wv * in[i];
              } else {
                for (std::size_t i = 0; i < count; ++i) drow[i] += wv * in[i * stride];
              }
            }
          }
        }
      }
      if (weights.bias) {
        const T bv = (*weights.bias)[co];
        for (std::size_t i = 0; i < oh * ow; ++i) dst[i] += bv;
      }
    }
  }
  return out;
}

template <Real T>
Tensor4<T> pad2d(const Tensor4<T>& input, const Padding& pad) {
  Tensor4<T> out(input.n(), input.c(), input.h() + pad.top + pad.bottom,
                 input.w() + pad.left + pad.right);
  for (std::size_t b = 0; b < input.n(); ++b)
    for (std::size_t ch = 0; ch < input.c(); ++ch)
      for (std::size_t y = 0; y < input.h(); ++y)
        std::copy_n(input.plane(b, ch) + y * input.w(), input.w(),
                    out.plane(b, ch) + (y + pad.top) * out.w() + pad.left);
  return out;
}

/// Inverse of pad2d: drops the border.
template <Real T>
Tensor4<T> crop2d(const Tensor4<T>& input, const Padding& pad) {
  FADE_CHECK(input.h() >= pad.top + pad.bottom && input.w() >= pad.left + pad.right,
             ErrorCode::ShapeMismatch, "crop2d: border larger than tensor");
  Tensor4<T> out(input.n(), input.c(), input.h() - pad.top - pad.bottom,
                 input.w() - pad.left - pad.right);
  for (std::size_t b = 0; b < out.n(); ++b)
    for (std::size_t ch = 0; ch < out.c(); ++ch)
      for (std::size_t y = 0; y < out.h(); ++y)
        std::copy_n(input.plane(b, ch) + (y + pad.top) * input.w() + pad.left, out.w(),
                    out.plane(b, ch) + y * out.w());
  return out;
}

template <Real T>
Tensor4<T> nn_interpolate_x2(const Tensor4<T>& input) {
  Tensor4<T> out(input.n(), input.c(), 2 * input.h(), 2 * input.w());
  for (std::size_t b = 0; b < input.n(); ++b)
    for (std::size_t ch = 0; ch < input.c(); ++ch) {
      const T* src = input.plane(b, ch);
      T* dst = out.plane(b, ch);
      for (std::size_t y = 0; y < out.h(); ++y)
        for (std::size_t x = 0; x < out.w(); ++x) dst[y * out.w() + x] = src[(y / 2) * input.w() + x / 2];
    }
  return out;
}

/// x2 bilinear resize, half-pixel centers: source coordinate (y + 0.5) / 2 - 0.5,
/// clamped to the valid range at the borders.
template <Real T>
Tensor4<T> bilinear_x2(const Tensor4<T>& input) {
  const std::size_t ih = input.h(), iw = input.w();
  Tensor4<T> out(input.n(), input.c(), 2 * ih, 2 * iw);
  auto sample = [](std::size_t o, std::size_t extent) {
    double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    src = std::max(src, 0.0);
    std::size_t i0 = std::min(static_cast<std::size_t>(src), extent - 1);
    std::size_t i1 = std::min(i0 + 1, extent - 1);
    double frac = std::min(src - static_cast<double>(i0), 1.0);
    return std::tuple{i0, i1, frac};
  };
  for (std::size_t b = 0; b < input.n(); ++b)
    for (std::size_t ch = 0; ch < input.c(); ++ch) {
      const T* src = input.plane(b, ch);
      T* dst = out.plane(b, ch);
      for (std::size_t y = 0; y < out.h(); ++y) {
        auto [y0, y1, fy] = sample(y, ih);
        for (std::size_t x = 0; x < out.w(); ++x) {
          auto [x0, x1, fx] = sample(x, iw);
          const T wy1 = static_cast<T>(fy), wy0 = T(1) - wy1;
          const T wx1 = static_cast<T>(fx), wx0 = T(1) - wx1;
          dst[y * out.w() + x] = wy0 * (wx0 * src[y0 * iw + x0] + wx1 * src[y0 * iw + x1]) +
                                 wy1 * (wx0 * src[y1 * iw + x0] + wx1 * src[y1 * iw + x1]);
        }
      }
    }
  return out;
}

template <Real T>
Tensor4<T> maxpool_x2(const Tensor4<T>& input) {
  FADE_CHECK(input.h() % 2 == 0 && input.w() % 2 == 0, ErrorCode::OddSpatialDims,
             "maxpool_x2 needs even spatial dims, got " + input.shape().str());
  Tensor4<T> out(input.n(), input.c(), input.h() / 2, input.w() / 2);
  for (std::size_t b = 0; b < input.n(); ++b)
    for (std::size_t ch = 0; ch < input.c(); ++ch)
      for (std::size_t y = 0; y < out.h(); ++y)
        for (std::size_t x = 0; x < out.w(); ++x)
          out(b, ch, y, x) = std::max({input(b, ch, 2 * y, 2 * x), input(b, ch, 2 * y, 2 * x + 1),
                                       input(b, ch, 2 * y + 1, 2 * x), input(b, ch, 2 * y + 1, 2 * x + 1)});
  return out;
}

/// Softmax across channels at every (batch, y, x), max-subtracted.
template <Real T>
Tensor4<T> softmax_channels(const Tensor4<T>& input) {
  const T sign = fault::armed() ? T(-1) : T(1);
  Tensor4<T> out(input.shape());
  const std::size_t plane = input.h() * input.w();
  for (std::size_t b = 0; b < input.n(); ++b) {
    const T* src = input.plane(b, 0);
    T* dst = out.plane(b, 0);
    for (std::size_t p = 0; p < plane; ++p) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t ch = 0; ch < input.c(); ++ch) mx = std::max(mx, sign * src[ch * plane + p]);
      T total = 0;
      for (std::size_t ch = 0; ch < input.c(); ++ch) {
        const T e = std::exp(sign * src[ch * plane + p] - mx);
        dst[ch * plane + p] = e;
        total += e;
      }
      for (std::size_t ch = 0; ch < input.c(); ++ch) dst[ch * plane + p] /= total;
    }
  }
  return out;
}

template <Real T>
T sigmoid(T x) {
  if (x >= 0) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <Real T>
Tensor4<T> sigmoid_map(const Tensor4<T>& input) {
  Tensor4<T> out(input.shape());
  std::transform(input.data().begin(), input.data().end(), out.data().begin(),
                 [](T v) { return sigmoid(v); });
  return out;
}

template <Real T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  FADE_CHECK(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
             "add: " + a.shape().str() + " vs " + b.shape().str());
  Tensor4<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  return out;
}

template <Real T>
void add_inplace(Tensor4<T>& acc, const Tensor4<T>& b) {
  FADE_CHECK(acc.shape() == b.shape(), ErrorCode::ShapeMismatch,
             "add_inplace: " + acc.shape().str() + " vs " + b.shape().str());
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += b.data()[i];
}

/// Channel concatenation, first operand's channels first.
template <Real T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  FADE_CHECK(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(), ErrorCode::ShapeMismatch,
             "concat_channels: " + a.shape().str() + " vs " + b.shape().str());
  Tensor4<T> out(a.n(), a.c() + b.c(), a.h(), a.w());
  const std::size_t plane = a.h() * a.w();
  for (std::size_t n = 0; n < a.n(); ++n) {
    std::copy_n(a.plane(n, 0), a.c() * plane, out.plane(n, 0));
    std::copy_n(b.plane(n, 0), b.c() * plane, out.plane(n, a.c()));
  }
  return out;
}

/// Splits channels [0, first) and [first, c).
template <Real T>
std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>& t, std::size_t first) {
  FADE_CHECK(first <= t.c(), ErrorCode::ShapeMismatch, "split_channels: split point past channel count");
  Tensor4<T> a(t.n(), first, t.h(), t.w()), b(t.n(), t.c() - first, t.h(), t.w());
  const std::size_t plane = t.h() * t.w();
  for (std::size_t n = 0; n < t.n(); ++n) {
    std::copy_n(t.plane(n, 0), first * plane, a.plane(n, 0));
    std::copy_n(t.plane(n, first), (t.c() - first) * plane, b.plane(n, 0));
  }
  return {std::move(a), std::move(b)};
}

/// Pixel shuffle with ratio 2: channel c*4 + dy*2 + dx at (y, x) moves to channel c at (2y+dy, 2x+dx).
template <Real T>
Tensor4<T> pixel_shuffle_x2(const Tensor4<T>& input) {
  FADE_CHECK(input.c() % 4 == 0, ErrorCode::ShapeMismatch, "pixel_shuffle_x2 needs channels divisible by 4");
  Tensor4<T> out(input.n(), input.c() / 4, 2 * input.h(), 2 * input.w());
  for (std::size_t b = 0; b < input.n(); ++b)
    for (std::size_t ch = 0; ch < input.c(); ++ch) {
      const std::size_t oc = ch / 4, dy = (ch % 4) / 2, dx = ch % 2;
      for (std::size_t y = 0; y < input.h(); ++y)
        for (std::size_t x = 0; x < input.w(); ++x) out(b, oc, 2 * y + dy, 2 * x + dx) = input(b, ch, y, x);
    }
  return out;
}

template <Real T>
Tensor4<T> pixel_unshuffle_x2(const Tensor4<T>& input) {
  FADE_CHECK(input.h() % 2 == 0 && input.w() % 2 == 0, ErrorCode::OddSpatialDims,
             "pixel_unshuffle_x2 needs even spatial dims");
  Tensor4<T> out(input.n(), input.c() * 4, input.h() / 2, input.w() / 2);
  for (std::size_t b = 0; b < out.n(); ++b)
    for (std::size_t ch = 0; ch < out.c(); ++ch) {
      const std::size_t ic = ch / 4, dy = (ch % 4) / 2, dx = ch % 2;
      for (std::size_t y = 0; y < out.h(); ++y)
        for (std::size_t x = 0; x < out.w(); ++x) out(b, ch, y, x) = input(b, ic, 2 * y + dy, 2 * x + dx);
    }
  return out;
}

/// Scatters four (n, c, H, W) corner maps into one (n, c, 2H, 2W) map; corner
/// index is dy*2 + dx and lands at (2i+dy, 2j+dx).
template <Real T>
Tensor4<T> interleave_x2(const std::array<Tensor4<T>, 4>& corners) {
  const Shape4 s = corners[0].shape();
  for (const auto& t : corners)
    FADE_CHECK(t.shape() == s, ErrorCode::ShapeMismatch, "interleave_x2: corner shapes differ");
  Tensor4<T> out(s.n, s.c, 2 * s.h, 2 * s.w);
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t dy = k / 2, dx = k % 2;
    for (std::size_t b = 0; b < s.n; ++b)
      for (std::size_t ch = 0; ch < s.c; ++ch) {
        const T* src = corners[k].plane(b, ch);
        T* dst = out.plane(b, ch);
        for (std::size_t i = 0; i < s.h; ++i)
          for (std::size_t j = 0; j < s.w; ++j) dst[(2 * i + dy) * out.w() + 2 * j + dx] = src[i * s.w + j];
      }
  }
  return out;
}

template <Real T>
std::array<Tensor4<T>, 4> deinterleave_x2(const Tensor4<T>& t) {
  FADE_CHECK(t.h() % 2 == 0 && t.w() % 2 == 0, ErrorCode::OddSpatialDims,
             "deinterleave_x2 needs even spatial dims");
  std::array<Tensor4<T>, 4> corners;
  for (std::size_t k = 0; k < 4; ++k) {
    const std::size_t dy = k / 2, dx = k % 2;
    corners[k] = Tensor4<T>(t.n(), t.c(), t.h() / 2, t.w() / 2);
    for (std::size_t b = 0; b < t.n(); ++b)
      for (std::size_t ch = 0; ch < t.c(); ++ch)
        for (std::size_t i = 0; i < t.h() / 2; ++i)
          for (std::size_t j = 0; j < t.w() / 2; ++j) corners[k](b, ch, i, j) = t(b, ch, 2 * i + dy, 2 * j + dx);
  }
  return corners;
}

}  // namespace fade
