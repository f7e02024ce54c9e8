#pragma once

// Reverse-mode gradients for the operator graph. The graph is fixed and
// shallow, so each composite op saves its own intermediates in a *Saved struct
// during the forward pass and replays them backwards; there is no general tape.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fade/error.hpp"
#include "fade/kernel_gen.hpp"
#include "fade/ops.hpp"
#include "fade/tensor.hpp"
#include "fade/upsample.hpp"

namespace fade {

// ---------------------------------------------------------------------------
// Primitive vector-Jacobian products

template <Real T>
struct ConvGrads {
  Tensor4<T> input;
  ConvWeights<T> weights;
};

template <Real T>
ConvGrads<T> conv2d_vjp(const Tensor4<T>& input, const ConvWeights<T>& weights, std::size_t stride,
                        const Padding& pad, const Tensor4<T>& grad_out) {
  const std::size_t kh = weights.k_h(), kw = weights.k_w();
  const std::size_t oh = conv_out_extent(input.h(), pad.top, pad.bottom, kh, stride);
  const std::size_t ow = conv_out_extent(input.w(), pad.left, pad.right, kw, stride);
  FADE_CHECK((grad_out.shape() == Shape4{input.n(), weights.c_out(), oh, ow}), ErrorCode::ShapeMismatch,
             "conv2d_vjp: cotangent " + grad_out.shape().str() + " does not match output");
  ConvGrads<T> g{Tensor4<T>(input.shape()), weights.zeros_like()};
  const std::size_t ih = input.h(), iw = input.w();
  std::vector<std::pair<std::size_t, std::size_t>> rows(kh), cols(kw);
  for (std::size_t k = 0; k < kh; ++k) rows[k] = detail::conv_valid_range(k, pad.top, ih, oh, stride);
  for (std::size_t k = 0; k < kw; ++k) cols[k] = detail::conv_valid_range(k, pad.left, iw, ow, stride);
  for (std::size_t b = 0; b < input.n(); ++b)
    for (std::size_t co = 0; co < weights.c_out(); ++co) {
      const T* go = grad_out.plane(b, co);
      if (g.weights.bias) {
        T bias_acc = 0;
        for (std::size_t i = 0; i < oh * ow; ++i) bias_acc += go[i];
        (*g.weights.bias)[co] += bias_acc;
      }
      for (std::size_t ci = 0; ci < input.c(); ++ci) {
        const T* src = input.plane(b, ci);
        T* gsrc = g.input.plane(b, ci);
        const T* wk = weights.kernel.plane(co, ci);
        T* gwk = g.weights.kernel.plane(co, ci);
        for (std::size_t ky = 0; ky < kh; ++ky) {
          const auto [oy_lo, oy_hi] = rows[ky];
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const auto [ox_lo, ox_hi] = cols[kx];
            if (ox_lo >= ox_hi) continue;
            const T wv = wk[ky * kw + kx];
            T gw = 0;
            for (std::size_t oy = oy_lo; oy < oy_hi; ++oy) {
              const std::size_t base = (oy * stride + ky - pad.top) * iw + (ox_lo * stride + kx - pad.left);
              const T* grow = go + oy * ow + ox_lo;
              for (std::size_t i = 0; i < ox_hi - ox_lo; ++i) {
                gw += grow[i] * src[base + i * stride];
                gsrc[base + i * stride] += grow[i] * wv;
              }
            }
            gwk[ky * kw + kx] += gw;
          }
        }
      }
    }
  return g;
}

/// Adjoint of replication: sum over each 2x2 block.
template <Real T>
Tensor4<T> nn_interpolate_x2_vjp(const Tensor4<T>& grad_out) {
  FADE_CHECK(grad_out.h() % 2 == 0 && grad_out.w() % 2 == 0, ErrorCode::ShapeMismatch,
             "nn_interpolate_x2_vjp needs even spatial dims");
  Tensor4<T> g(grad_out.n(), grad_out.c(), grad_out.h() / 2, grad_out.w() / 2);
  for (std::size_t b = 0; b < g.n(); ++b)
    for (std::size_t c = 0; c < g.c(); ++c)
      for (std::size_t y = 0; y < grad_out.h(); ++y)
        for (std::size_t x = 0; x < grad_out.w(); ++x) g(b, c, y / 2, x / 2) += grad_out(b, c, y, x);
  return g;
}

/// Given softmax output y: dx = y * (g - sum_c y g) per position.
template <Real T>
Tensor4<T> softmax_channels_vjp(const Tensor4<T>& y, const Tensor4<T>& grad_out) {
  FADE_CHECK(y.shape() == grad_out.shape(), ErrorCode::ShapeMismatch, "softmax_channels_vjp: shape mismatch");
  Tensor4<T> g(y.shape());
  const std::size_t plane = y.h() * y.w();
  for (std::size_t b = 0; b < y.n(); ++b) {
    const T* yp = y.plane(b, 0);
    const T* gp = grad_out.plane(b, 0);
    T* out = g.plane(b, 0);
    for (std::size_t p = 0; p < plane; ++p) {
      T dot = 0;
      for (std::size_t c = 0; c < y.c(); ++c) dot += yp[c * plane + p] * gp[c * plane + p];
      for (std::size_t c = 0; c < y.c(); ++c) out[c * plane + p] = yp[c * plane + p] * (gp[c * plane + p] - dot);
    }
  }
  return g;
}

/// Given sigmoid output y: dx = g * y * (1 - y).
template <Real T>
Tensor4<T> sigmoid_map_vjp(const Tensor4<T>& y, const Tensor4<T>& grad_out) {
  FADE_CHECK(y.shape() == grad_out.shape(), ErrorCode::ShapeMismatch, "sigmoid_map_vjp: shape mismatch");
  Tensor4<T> g(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T v = y.data()[i];
    g.data()[i] = grad_out.data()[i] * v * (T(1) - v);
  }
  return g;
}

template <Real T>
struct ReassembleGrads {
  Tensor4<T> dec;
  Tensor4<T> kernels;
};

template <Real T>
ReassembleGrads<T> reassemble_vjp(const Tensor4<T>& dec, const KernelMap<T>& kernels, const Tensor4<T>& grad_out) {
  const Tensor4<T>& km = kernels.tensor;
  FADE_CHECK(km.n() == dec.n() && km.h() == 2 * dec.h() && km.w() == 2 * dec.w(), ErrorCode::ShapeMismatch,
             "reassemble_vjp: kernel map does not match decoder");
  FADE_CHECK((grad_out.shape() == Shape4{dec.n(), dec.c(), km.h(), km.w()}), ErrorCode::ShapeMismatch,
             "reassemble_vjp: cotangent shape");
  const std::size_t K = detail::kernel_extent(km.c());
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(K / 2);
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(dec.h()), W = static_cast<std::ptrdiff_t>(dec.w());
  const std::size_t OH = km.h(), OW = km.w(), plane = OH * OW;
  ReassembleGrads<T> g{Tensor4<T>(dec.shape()), Tensor4<T>(km.shape())};
  for (std::size_t b = 0; b < dec.n(); ++b) {
    const T* kb = km.plane(b, 0);
    T* gkb = g.kernels.plane(b, 0);
    for (std::size_t c = 0; c < dec.c(); ++c) {
      const T* src = dec.plane(b, c);
      T* gsrc = g.dec.plane(b, c);
      const T* go = grad_out.plane(b, c);
      for (std::size_t y = 0; y < OH; ++y)
        for (std::size_t x = 0; x < OW; ++x) {
          const T gv = go[y * OW + x];
          const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(y / 2), px = static_cast<std::ptrdiff_t>(x / 2);
          for (std::ptrdiff_t u = 0; u < static_cast<std::ptrdiff_t>(K); ++u) {
            const std::ptrdiff_t sy = py + u - r;
            if (sy < 0 || sy >= H) continue;
            for (std::ptrdiff_t v = 0; v < static_cast<std::ptrdiff_t>(K); ++v) {
              const std::ptrdiff_t sx = px + v - r;
              if (sx < 0 || sx >= W) continue;
              const std::size_t kidx = static_cast<std::size_t>(u * static_cast<std::ptrdiff_t>(K) + v) * plane + y * OW + x;
              gkb[kidx] += gv * src[sy * W + sx];
              gsrc[sy * W + sx] += gv * kb[kidx];
            }
          }
        }
    }
  }
  return g;
}

template <Real T>
struct BlendGrads {
  Tensor4<T> enc;
  Tensor4<T> pre;
  Tensor4<T> gate;  // (n, 1, 2H, 2W)
};

template <Real T>
BlendGrads<T> gated_blend_vjp(const Tensor4<T>& enc, const Tensor4<T>& pre, const GateMap<T>& g,
                              const Tensor4<T>& grad_out) {
  FADE_CHECK(enc.shape() == pre.shape() && grad_out.shape() == enc.shape(), ErrorCode::ShapeMismatch,
             "gated_blend_vjp: shape mismatch");
  const Tensor4<T>& gm = g.tensor;
  BlendGrads<T> out{Tensor4<T>(enc.shape()), Tensor4<T>(enc.shape()), Tensor4<T>(gm.shape())};
  const std::size_t plane = enc.h() * enc.w();
  for (std::size_t b = 0; b < enc.n(); ++b) {
    const T* gp = gm.plane(b, 0);
    T* gg = out.gate.plane(b, 0);
    for (std::size_t c = 0; c < enc.c(); ++c) {
      const T* e = enc.plane(b, c);
      const T* p = pre.plane(b, c);
      const T* go = grad_out.plane(b, c);
      T* ge = out.enc.plane(b, c);
      T* gpre = out.pre.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) {
        ge[i] = gp[i] * go[i];
        gpre[i] = (T(1) - gp[i]) * go[i];
        gg[i] += (e[i] - p[i]) * go[i];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kernel generation

template <Real T>
struct KernelGenGrads {
  Tensor4<T> enc;
  Tensor4<T> dec;
  KernelGenParams<T> params;
};

template <Real T>
struct SemishiftSaved {
  FoldedDecoderBranch<T> folded;
  Tensor4<T> compressed_enc;
  KernelMap<T> kernels;
};

template <Real T>
SemishiftSaved<T> semishift_forward_saved(const Tensor4<T>& enc, const Tensor4<T>& dec, const KernelGenParams<T>& p) {
  p.validate();
  detail::check_feature_pair(enc, dec, p.channels());
  detail::check_window(p.h);
  SemishiftSaved<T> s{fold_decoder_branch(p), conv2d(enc, p.alpha_en, 1, Padding{}), {}};
  const Tensor4<T> dec_branch = decoder_branch_folded(dec, s.folded);
  std::array<Tensor4<T>, 4> subs;
  for (std::size_t k = 0; k < 4; ++k) {
    subs[k] = encoder_branch(s.compressed_enc, p.beta, Corner::from_index(k));
    add_inplace(subs[k], dec_branch);
  }
  s.kernels = {softmax_channels(interleave_x2(subs)), true};
  return s;
}

template <Real T>
KernelGenGrads<T> semishift_backward(const Tensor4<T>& enc, const Tensor4<T>& dec, const KernelGenParams<T>& p,
                                     const SemishiftSaved<T>& s, const Tensor4<T>& grad_kernels) {
  KernelGenGrads<T> g{Tensor4<T>(enc.shape()), Tensor4<T>(dec.shape()), p.zeros_like()};
  const auto g_subs = deinterleave_x2(softmax_channels_vjp(s.kernels.tensor, grad_kernels));

  // Encoder branch, one strided convolution per corner.
  Tensor4<T> g_ce(s.compressed_enc.shape());
  const ConvWeights<T> beta_nobias{p.beta.kernel, std::nullopt};
  for (std::size_t k = 0; k < 4; ++k) {
    const EncoderFrame frame = encoder_frame(Corner::from_index(k), p.h);
    const bool cropped = !(frame.crop == Padding{});
    const Tensor4<T> view = cropped ? crop2d(s.compressed_enc, frame.crop) : Tensor4<T>();
    auto cg = conv2d_vjp(cropped ? view : s.compressed_enc, beta_nobias, 2, frame.pad, g_subs[k]);
    add_inplace(g.params.beta.kernel, cg.weights.kernel);
    add_inplace(g_ce, cropped ? pad2d(cg.input, frame.crop) : cg.input);
  }
  auto enc_g = conv2d_vjp(enc, p.alpha_en, 1, Padding{}, g_ce);
  g.enc = std::move(enc_g.input);
  g.params.alpha_en.kernel = std::move(enc_g.weights.kernel);

  // Decoder branch is shared by all four corners.
  Tensor4<T> g_db = g_subs[0];
  for (std::size_t k = 1; k < 4; ++k) add_inplace(g_db, g_subs[k]);
  const Padding pad = Padding::uniform(p.h / 2);
  auto dec_g = conv2d_vjp(dec, s.folded.kernel, 1, pad, g_db);
  g.dec = std::move(dec_g.input);
  *g.params.beta.bias = *dec_g.weights.bias;

  Tensor4<T> g_bias_map(1, g_db.c(), g_db.h(), g_db.w());
  for (std::size_t b = 0; b < g_db.n(); ++b)
    for (std::size_t i = 0; i < g_bias_map.size(); ++i) g_bias_map.data()[i] += g_db.plane(b, 0)[i];
  auto bias_g = conv2d_vjp(Tensor4<T>(1, 1, dec.h(), dec.w(), T(1)), s.folded.bias_kernel, 1, pad, g_bias_map);

  // Unfold: kernel[m, k] = sum_l beta[m, l] alpha_de[l, k], bias_kernel[m] = sum_l beta[m, l] a_l.
  const std::size_t KK = p.K * p.K, C = p.channels(), hh = p.h * p.h;
  const Tensor4<T>& g_fold = dec_g.weights.kernel;
  const Tensor4<T>& g_bk = bias_g.weights.kernel;
  for (std::size_t m = 0; m < KK; ++m)
    for (std::size_t l = 0; l < p.d; ++l) {
      const T* bw = p.beta.kernel.plane(m, l);
      T* gbw = g.params.beta.kernel.plane(m, l);
      const T a = (*p.alpha_de.bias)[l];
      T ga = 0;
      for (std::size_t t = 0; t < hh; ++t) {
        gbw[t] += g_bk.plane(m, 0)[t] * a;
        ga += g_bk.plane(m, 0)[t] * bw[t];
      }
      (*g.params.alpha_de.bias)[l] += ga;
      for (std::size_t k = 0; k < C; ++k) {
        const T* gf = g_fold.plane(m, k);
        const T alpha = p.alpha_de.kernel(l, k, 0, 0);
        T galpha = 0;
        for (std::size_t t = 0; t < hh; ++t) {
          gbw[t] += gf[t] * alpha;
          galpha += gf[t] * bw[t];
        }
        g.params.alpha_de.kernel(l, k, 0, 0) += galpha;
      }
    }
  return g;
}

template <Real T>
KernelGenGrads<T> gen_kernels_semishift_vjp(const Tensor4<T>& enc, const Tensor4<T>& dec, const KernelGenParams<T>& p,
                                            const Tensor4<T>& grad_kernels) {
  return semishift_backward(enc, dec, p, semishift_forward_saved(enc, dec, p), grad_kernels);
}

template <Real T>
struct NaiveSaved {
  Tensor4<T> cat;
  Tensor4<T> compressed;
  KernelMap<T> kernels;
};

template <Real T>
NaiveSaved<T> naive_forward_saved(const Tensor4<T>& enc, const Tensor4<T>& dec, const KernelGenParams<T>& p) {
  p.validate();
  detail::check_feature_pair(enc, dec, p.channels());
  detail::check_window(p.h);
  NaiveSaved<T> s;
  s.cat = concat_channels(enc, nn_interpolate_x2(dec));
  s.compressed = conv2d(s.cat, stack_compressors(p), 1, Padding{});
  s.kernels = {softmax_channels(conv2d(s.compressed, p.beta, 1, Padding::uniform(p.h / 2))), true};
  return s;
}

template <Real T>
KernelGenGrads<T> naive_backward(const KernelGenParams<T>& p, const NaiveSaved<T>& s,
                                 const Tensor4<T>& grad_kernels) {
  KernelGenGrads<T> g{{}, {}, p.zeros_like()};
  const Tensor4<T> g_logits = softmax_channels_vjp(s.kernels.tensor, grad_kernels);
  auto conv_g = conv2d_vjp(s.compressed, p.beta, 1, Padding::uniform(p.h / 2), g_logits);
  g.params.beta = std::move(conv_g.weights);
  auto comp_g = conv2d_vjp(s.cat, stack_compressors(p), 1, Padding{}, conv_g.input);
  const std::size_t C = p.channels();
  for (std::size_t l = 0; l < p.d; ++l)
    for (std::size_t k = 0; k < C; ++k) {
      g.params.alpha_en.kernel(l, k, 0, 0) = comp_g.weights.kernel(l, k, 0, 0);
      g.params.alpha_de.kernel(l, k, 0, 0) = comp_g.weights.kernel(l, C + k, 0, 0);
    }
  *g.params.alpha_de.bias = *comp_g.weights.bias;
  auto [g_enc, g_up] = split_channels(comp_g.input, C);
  g.enc = std::move(g_enc);
  g.dec = nn_interpolate_x2_vjp(g_up);
  return g;
}

// ---------------------------------------------------------------------------
// Full operators

template <Real T>
struct FadeGrads {
  Tensor4<T> enc;
  Tensor4<T> dec;
  FadeParams<T> params;
};

template <Real T>
struct FadeSaved {
  SemishiftSaved<T> kernel_gen;
  Tensor4<T> pre_up;
  GateMap<T> gate;  // empty unless gating
  Tensor4<T> output;
};

template <Real T>
FadeSaved<T> fade_forward_saved(const Tensor4<T>& enc, const Tensor4<T>& dec, const FadeParams<T>& fp) {
  fp.validate();
  FadeSaved<T> s;
  s.kernel_gen = semishift_forward_saved(enc, dec, fp.kernel_gen);
  s.pre_up = reassemble(dec, s.kernel_gen.kernels);
  switch (fp.fusion) {
    case FusionMode::None: s.output = s.pre_up; break;
    case FusionMode::Skipping: s.output = add(enc, s.pre_up); break;
    case FusionMode::Gating:
      s.gate = gate_generate(dec, fp.gate);
      s.output = gated_blend(enc, s.pre_up, s.gate);
      break;
  }
  return s;
}

template <Real T>
FadeGrads<T> fade_backward(const Tensor4<T>& enc, const Tensor4<T>& dec, const FadeParams<T>& fp,
                           const FadeSaved<T>& s, const Tensor4<T>& grad_out) {
  FadeGrads<T> g{Tensor4<T>(enc.shape()), Tensor4<T>(dec.shape()), fp.zeros_like()};
  Tensor4<T> g_pre;
  switch (fp.fusion) {
    case FusionMode::None: g_pre = grad_out; break;
    case FusionMode::Skipping:
      g_pre = grad_out;
      g.enc = grad_out;
      break;
    case FusionMode::Gating: {
      auto bg = gated_blend_vjp(enc, s.pre_up, s.gate, grad_out);
      g.enc = std::move(bg.enc);
      g_pre = std::move(bg.pre);
      const Tensor4<T> g_low = nn_interpolate_x2_vjp(sigmoid_map_vjp(s.gate.tensor, bg.gate));
      auto gate_g = conv2d_vjp(dec, fp.gate.conv, 1, Padding{}, g_low);
      g.dec = std::move(gate_g.input);
      g.params.gate.conv = std::move(gate_g.weights);
      break;
    }
  }
  auto rg = reassemble_vjp(dec, s.kernel_gen.kernels, g_pre);
  add_inplace(g.dec, rg.dec);
  auto kg = semishift_backward(enc, dec, fp.kernel_gen, s.kernel_gen, rg.kernels);
  add_inplace(g.enc, kg.enc);
  add_inplace(g.dec, kg.dec);
  g.params.kernel_gen = std::move(kg.params);
  return g;
}

template <Real T>
FadeGrads<T> fade_forward_vjp(const Tensor4<T>& enc, const Tensor4<T>& dec, const FadeParams<T>& fp,
                              const Tensor4<T>& grad_out) {
  return fade_backward(enc, dec, fp, fade_forward_saved(enc, dec, fp), grad_out);
}

template <Real T>
struct SingleSourceGrads {
  Tensor4<T> enc;  // empty for the decoder-only operator
  Tensor4<T> dec;
  SingleSourceKernelParams<T> params;
};

template <Real T>
struct SingleSourceSaved {
  Tensor4<T> compressed;
  KernelMap<T> kernels;
  Tensor4<T> output;
};

template <Real T>
SingleSourceSaved<T> carafe_forward_saved(const Tensor4<T>& dec, const SingleSourceKernelParams<T>& p) {
  FADE_CHECK(p.kernel.c_out() == 4 * p.K * p.K, ErrorCode::ShapeMismatch, "decoder-only kernel conv must emit 4*K*K");
  SingleSourceSaved<T> s;
  s.compressed = conv2d(dec, p.compress, 1, Padding{});
  const Tensor4<T> logits = conv2d(s.compressed, p.kernel, 1, Padding::uniform(p.kernel.k_h() / 2));
  s.kernels = {softmax_channels(pixel_shuffle_x2(logits)), true};
  s.output = reassemble(dec, s.kernels);
  return s;
}

template <Real T>
SingleSourceGrads<T> carafe_backward(const Tensor4<T>& dec, const SingleSourceKernelParams<T>& p,
                                     const SingleSourceSaved<T>& s, const Tensor4<T>& grad_out) {
  SingleSourceGrads<T> g{{}, {}, p.zeros_like()};
  auto rg = reassemble_vjp(dec, s.kernels, grad_out);
  const Tensor4<T> g_logits = pixel_unshuffle_x2(softmax_channels_vjp(s.kernels.tensor, rg.kernels));
  auto kg = conv2d_vjp(s.compressed, p.kernel, 1, Padding::uniform(p.kernel.k_h() / 2), g_logits);
  auto cg = conv2d_vjp(dec, p.compress, 1, Padding{}, kg.input);
  g.dec = std::move(rg.dec);
  add_inplace(g.dec, cg.input);
  g.params.kernel = std::move(kg.weights);
  g.params.compress = std::move(cg.weights);
  return g;
}

template <Real T>
SingleSourceSaved<T> encoder_only_forward_saved(const Tensor4<T>& enc, const Tensor4<T>& dec,
                                                const SingleSourceKernelParams<T>& p) {
  FADE_CHECK(p.kernel.c_out() == p.K * p.K, ErrorCode::ShapeMismatch, "encoder-only kernel conv must emit K*K");
  SingleSourceSaved<T> s;
  s.compressed = conv2d(enc, p.compress, 1, Padding{});
  s.kernels = {softmax_channels(conv2d(s.compressed, p.kernel, 1, Padding::uniform(p.kernel.k_h() / 2))), true};
  s.output = reassemble(dec, s.kernels);
  return s;
}

template <Real T>
SingleSourceGrads<T> encoder_only_backward(const Tensor4<T>& enc, const Tensor4<T>& dec,
                                           const SingleSourceKernelParams<T>& p, const SingleSourceSaved<T>& s,
                                           const Tensor4<T>& grad_out) {
  SingleSourceGrads<T> g{{}, {}, p.zeros_like()};
  auto rg = reassemble_vjp(dec, s.kernels, grad_out);
  const Tensor4<T> g_logits = softmax_channels_vjp(s.kernels.tensor, rg.kernels);
  auto kg = conv2d_vjp(s.compressed, p.kernel, 1, Padding::uniform(p.kernel.k_h() / 2), g_logits);
  auto cg = conv2d_vjp(enc, p.compress, 1, Padding{}, kg.input);
  g.dec = std::move(rg.dec);
  g.enc = std::move(cg.input);
  g.params.kernel = std::move(kg.weights);
  g.params.compress = std::move(cg.weights);
  return g;
}

// ---------------------------------------------------------------------------
// Optimizer

/// Plain SGD with optional heavy-ball momentum (off by default). Params is any
/// type exposing value_type and for_each_array(f(name, span)).
template <class Params>
class Sgd {
 public:
  using T = typename Params::value_type;

  explicit Sgd(double lr, double momentum = 0.0) : lr_(lr), momentum_(momentum) {
    FADE_CHECK(lr > 0, ErrorCode::InvalidArgument, "learning rate must be positive");
    FADE_CHECK(momentum >= 0 && momentum < 1, ErrorCode::InvalidArgument, "momentum must be in [0, 1)");
  }

  void step(Params& params, Params& grads) {
    std::vector<std::span<T>> p_arrays, g_arrays;
    params.for_each_array([&](const char*, std::span<T> s) { p_arrays.push_back(s); });
    grads.for_each_array([&](const char*, std::span<T> s) { g_arrays.push_back(s); });
    FADE_CHECK(p_arrays.size() == g_arrays.size(), ErrorCode::ShapeMismatch, "gradient structure differs from params");
    if (momentum_ != 0.0 && velocity_.empty())
      for (auto& s : p_arrays) velocity_.emplace_back(s.size(), T(0));
    for (std::size_t a = 0; a < p_arrays.size(); ++a) {
      FADE_CHECK(p_arrays[a].size() == g_arrays[a].size(), ErrorCode::ShapeMismatch, "gradient array size differs");
      for (std::size_t i = 0; i < p_arrays[a].size(); ++i) {
        T update = g_arrays[a][i];
        if (momentum_ != 0.0) {
          velocity_[a][i] = static_cast<T>(momentum_) * velocity_[a][i] + update;
          update = velocity_[a][i];
        }
        p_arrays[a][i] -= static_cast<T>(lr_) * update;
      }
    }
  }

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<T>> velocity_;
};

/// One plain SGD step: params - lr * grads.
template <class Params>
Params sgd_step(Params params, Params grads, double lr) {
  Sgd<Params>(lr).step(params, grads);
  return params;
}

}  // namespace fade
