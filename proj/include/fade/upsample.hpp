#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "fade/error.hpp"
#include "fade/kernel_gen.hpp"
#include "fade/ops.hpp"
#include "fade/tensor.hpp"

namespace fade {

/// Single-channel blend map in (0, 1) at high resolution, (n, 1, 2H, 2W).
template <Real T>
struct GateMap {
  Tensor4<T> tensor;
};

template <Real T>
struct GateParams {
  using value_type = T;

  ConvWeights<T> conv;  // (1, C, 1, 1) with bias

  void validate(std::size_t C) const {
    conv.validate();
    FADE_CHECK(conv.c_out() == 1, ErrorCode::InvalidArgument, "gate conv must produce one channel");
    FADE_CHECK(conv.c_in() == C, ErrorCode::ChannelMismatch,
               "gate conv expects " + std::to_string(conv.c_in()) + " channels, got " + std::to_string(C));
    FADE_CHECK(conv.k_h() == 1 && conv.k_w() == 1 && conv.bias, ErrorCode::InvalidArgument,
               "gate conv is 1x1 with bias");
  }

  template <class F>
  void for_each_array(F&& f) {
    f("gate.kernel", conv.kernel.data());
    f("gate.bias", std::span<T>(*conv.bias));
  }

  GateParams zeros_like() const { return {conv.zeros_like()}; }
  template <Real U>
  GateParams<U> cast() const { return {conv.template cast<U>()}; }

  static GateParams zeros(std::size_t C) { return {ConvWeights<T>(1, C, 1, 1, true)}; }
  static GateParams init(std::size_t C, SplitMix64& rng) { return {init_conv<T>(1, C, 1, 1, true, rng)}; }
};

enum class FusionMode { None, Skipping, Gating };

inline const char* to_string(FusionMode m) {
  switch (m) {
    case FusionMode::None: return "none";
    case FusionMode::Skipping: return "skipping";
    case FusionMode::Gating: return "gating";
  }
  return "?";
}

inline FusionMode fusion_from_string(const std::string& s) {
  if (s == "none") return FusionMode::None;
  if (s == "skipping" || s == "skip") return FusionMode::Skipping;
  if (s == "gating" || s == "gate") return FusionMode::Gating;
  throw Error(ErrorCode::InvalidArgument, "unknown fusion mode '" + s + "'");
}

template <Real T>
struct FadeParams {
  using value_type = T;

  KernelGenParams<T> kernel_gen;
  GateParams<T> gate;
  FusionMode fusion = FusionMode::Gating;

  bool use_gate() const { return fusion == FusionMode::Gating; }

  void validate() const {
    kernel_gen.validate();
    gate.validate(kernel_gen.channels());
  }

  template <class F>
  void for_each_array(F&& f) {
    kernel_gen.for_each_array(f);
    gate.for_each_array(f);
  }

  FadeParams zeros_like() const { return {kernel_gen.zeros_like(), gate.zeros_like(), fusion}; }
  template <Real U>
  FadeParams<U> cast() const { return {kernel_gen.template cast<U>(), gate.template cast<U>(), fusion}; }

  static FadeParams init(std::size_t C, SplitMix64& rng, FusionMode fusion = FusionMode::Gating, std::size_t h = 3,
                         std::size_t K = 5, std::size_t d = 64) {
    FadeParams p;
    p.kernel_gen = KernelGenParams<T>::init(C, rng, h, K, d);
    p.gate = GateParams<T>::init(C, rng);
    p.fusion = fusion;
    return p;
  }
};

/// Kernel generation from a single source: 1x1 compression C -> d (with bias)
/// and a 3x3 convolution d -> out. Decoder-only (CARAFE) uses out = 4*K*K followed
/// by pixel shuffle; encoder-only uses out = K*K at full resolution.
template <Real T>
struct SingleSourceKernelParams {
  using value_type = T;

  ConvWeights<T> compress;  // (d, C, 1, 1), bias
  ConvWeights<T> kernel;    // (out, d, h, h), bias
  std::size_t K = 5;

  template <class F>
  void for_each_array(F&& f) {
    f("compress.kernel", compress.kernel.data());
    f("compress.bias", std::span<T>(*compress.bias));
    f("kernel.kernel", kernel.kernel.data());
    f("kernel.bias", std::span<T>(*kernel.bias));
  }

  SingleSourceKernelParams zeros_like() const { return {compress.zeros_like(), kernel.zeros_like(), K}; }
  template <Real U>
  SingleSourceKernelParams<U> cast() const { return {compress.template cast<U>(), kernel.template cast<U>(), K}; }

  static SingleSourceKernelParams zeros(std::size_t C, std::size_t out, std::size_t K, std::size_t d, std::size_t h) {
    return {ConvWeights<T>(d, C, 1, 1, true), ConvWeights<T>(out, d, h, h, true), K};
  }
  static SingleSourceKernelParams init(std::size_t C, std::size_t out, std::size_t K, std::size_t d, std::size_t h,
                                       SplitMix64& rng) {
    return {init_conv<T>(d, C, 1, 1, true, rng), init_conv<T>(out, d, h, h, true, rng), K};
  }

  static SingleSourceKernelParams carafe(std::size_t C, SplitMix64& rng, std::size_t K = 5, std::size_t d = 64,
                                         std::size_t h = 3) {
    return init(C, 4 * K * K, K, d, h, rng);
  }
  static SingleSourceKernelParams encoder_only(std::size_t C, SplitMix64& rng, std::size_t K = 5, std::size_t d = 64,
                                               std::size_t h = 3) {
    return init(C, K * K, K, d, h, rng);
  }
};

namespace detail {

inline std::size_t kernel_extent(std::size_t channels) {
  const auto K = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(channels))));
  FADE_CHECK(K * K == channels && K % 2 == 1, ErrorCode::ShapeMismatch,
             "kernel map channels must be K*K for odd K, got " + std::to_string(channels));
  return K;
}

}  // namespace detail

/// Kernel-weighted reassembly of the K x K decoder window anchored at
/// (y/2, x/2) for every high-resolution output (y, x); kernels are shared across
/// channels, out-of-range taps read zero.
template <Real T>
Tensor4<T> reassemble(const Tensor4<T>& dec, const KernelMap<T>& kernels) {
  FADE_CHECK(kernels.normalized, ErrorCode::UnnormalizedKernels, "reassemble needs softmax-normalized kernels");
  const Tensor4<T>& km = kernels.tensor;
  FADE_CHECK(km.n() == dec.n() && km.h() == 2 * dec.h() && km.w() == 2 * dec.w(), ErrorCode::ShapeMismatch,
             "kernel map " + km.shape().str() + " does not match decoder " + dec.shape().str());
  const std::size_t K = detail::kernel_extent(km.c());
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(K / 2);
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(dec.h()), W = static_cast<std::ptrdiff_t>(dec.w());
  const std::size_t OH = km.h(), OW = km.w(), plane = OH * OW;
  Tensor4<T> out(dec.n(), dec.c(), OH, OW);
  for (std::size_t b = 0; b < dec.n(); ++b) {
    const T* kb = km.plane(b, 0);
    for (std::size_t c = 0; c < dec.c(); ++c) {
      const T* src = dec.plane(b, c);
      T* dst = out.plane(b, c);
      for (std::size_t y = 0; y < OH; ++y)
        for (std::size_t x = 0; x < OW; ++x) {
          const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(y / 2), px = static_cast<std::ptrdiff_t>(x / 2);
          T acc = 0;
          for (std::ptrdiff_t u = 0; u < static_cast<std::ptrdiff_t>(K); ++u) {
            const std::ptrdiff_t sy = py + u - r;
            if (sy < 0 || sy >= H) continue;
            for (std::ptrdiff_t v = 0; v < static_cast<std::ptrdiff_t>(K); ++v) {
              const std::ptrdiff_t sx = px + v - r;
              if (sx < 0 || sx >= W) continue;
              acc += kb[static_cast<std::size_t>(u * static_cast<std::ptrdiff_t>(K) + v) * plane + y * OW + x] *
                     src[sy * W + sx];
            }
          }
          dst[y * OW + x] = acc;
        }
    }
  }
  return out;
}

template <Real T>
GateMap<T> gate_generate(const Tensor4<T>& dec, const GateParams<T>& gp) {
  gp.validate(dec.c());
  return {sigmoid_map(nn_interpolate_x2(conv2d(dec, gp.conv, 1, Padding{})))};
}

/// enc * G + pre * (1 - G), G broadcast across channels.
template <Real T>
Tensor4<T> gated_blend(const Tensor4<T>& enc, const Tensor4<T>& pre, const GateMap<T>& g) {
  FADE_CHECK(enc.shape() == pre.shape(), ErrorCode::ShapeMismatch,
             "gated_blend: encoder " + enc.shape().str() + " vs pre-upsampled " + pre.shape().str());
  const Tensor4<T>& gm = g.tensor;
  FADE_CHECK(gm.n() == enc.n() && gm.c() == 1 && gm.h() == enc.h() && gm.w() == enc.w(), ErrorCode::ShapeMismatch,
             "gate map " + gm.shape().str() + " does not match " + enc.shape().str());
  Tensor4<T> out(enc.shape());
  const std::size_t plane = enc.h() * enc.w();
  for (std::size_t b = 0; b < enc.n(); ++b) {
    const T* gp = gm.plane(b, 0);
    for (std::size_t c = 0; c < enc.c(); ++c) {
      const T* e = enc.plane(b, c);
      const T* p = pre.plane(b, c);
      T* o = out.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) o[i] = e[i] * gp[i] + p[i] * (T(1) - gp[i]);
    }
  }
  return out;
}

template <Real T>
Tensor4<T> fuse(const Tensor4<T>& enc, const Tensor4<T>& dec, const Tensor4<T>& pre_up, const FadeParams<T>& fp) {
  switch (fp.fusion) {
    case FusionMode::None: return pre_up;
    case FusionMode::Skipping: return add(enc, pre_up);
    case FusionMode::Gating: return gated_blend(enc, pre_up, gate_generate(dec, fp.gate));
  }
  return pre_up;
}

/// Semi-shift kernels, reassembly, then the configured fusion with the encoder.
template <Real T>
Tensor4<T> fade_forward(const Tensor4<T>& enc, const Tensor4<T>& dec, const FadeParams<T>& fp) {
  fp.validate();
  const Tensor4<T> pre_up = reassemble(dec, gen_kernels_semishift(enc, dec, fp.kernel_gen));
  return fuse(enc, dec, pre_up, fp);
}

/// Same pipeline with the interpolate-and-concatenate kernel generator.
template <Real T>
Tensor4<T> fade_naive_forward(const Tensor4<T>& enc, const Tensor4<T>& dec, const FadeParams<T>& fp) {
  fp.validate();
  const Tensor4<T> pre_up = reassemble(dec, gen_kernels_naive(enc, dec, fp.kernel_gen));
  return fuse(enc, dec, pre_up, fp);
}

template <Real T>
KernelMap<T> carafe_kernels(const Tensor4<T>& dec, const SingleSourceKernelParams<T>& p) {
  FADE_CHECK(p.kernel.c_out() == 4 * p.K * p.K, ErrorCode::ShapeMismatch, "decoder-only kernel conv must emit 4*K*K");
  FADE_CHECK(dec.c() == p.compress.c_in(), ErrorCode::ShapeMismatch, "decoder channels do not match compressor");
  Tensor4<T> shuffled;
  {
    const Tensor4<T> compressed = conv2d(dec, p.compress, 1, Padding{});
    shuffled = pixel_shuffle_x2(conv2d(compressed, p.kernel, 1, Padding::uniform(p.kernel.k_h() / 2)));
  }
  return {softmax_channels(shuffled), true};
}

/// Decoder-only baseline.
template <Real T>
Tensor4<T> carafe_forward(const Tensor4<T>& dec, const SingleSourceKernelParams<T>& p) {
  return reassemble(dec, carafe_kernels(dec, p));
}

template <Real T>
KernelMap<T> encoder_only_kernels(const Tensor4<T>& enc, const SingleSourceKernelParams<T>& p) {
  FADE_CHECK(p.kernel.c_out() == p.K * p.K, ErrorCode::ShapeMismatch, "encoder-only kernel conv must emit K*K");
  FADE_CHECK(enc.c() == p.compress.c_in(), ErrorCode::ShapeMismatch, "encoder channels do not match compressor");
  const Tensor4<T> compressed = conv2d(enc, p.compress, 1, Padding{});
  return {softmax_channels(conv2d(compressed, p.kernel, 1, Padding::uniform(p.kernel.k_h() / 2))), true};
}

template <Real T>
Tensor4<T> encoder_only_forward(const Tensor4<T>& enc, const Tensor4<T>& dec, const SingleSourceKernelParams<T>& p) {
  FADE_CHECK(enc.n() == dec.n() && enc.h() == 2 * dec.h() && enc.w() == 2 * dec.w(), ErrorCode::ShapeMismatch,
             "encoder " + enc.shape().str() + " must be exactly 2x decoder " + dec.shape().str());
  return reassemble(dec, encoder_only_kernels(enc, p));
}

}  // namespace fade
