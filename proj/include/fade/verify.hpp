#pragma once

// Named self-checks across all modules. Each check draws its random instances
// from the given seed and returns an empty string on success or a short
// description of the first violation.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fade/autograd.hpp"
#include "fade/error.hpp"
#include "fade/experiments.hpp"
#include "fade/gradcheck.hpp"
#include "fade/kernel_gen.hpp"
#include "fade/ops.hpp"
#include "fade/profiler.hpp"
#include "fade/tensor.hpp"
#include "fade/tensor_io.hpp"
#include "fade/upsample.hpp"

namespace fade {

struct Invariant {
  std::string module;
  std::string name;
  std::function<std::string(std::uint64_t seed)> check;
};

struct InvariantResult {
  std::string module;
  std::string name;
  bool passed = false;
  std::string detail;
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

template <Real T>
std::string check_normalized(const KernelMap<T>& km, double tol) {
  const Tensor4<T>& t = km.tensor;
  const std::size_t plane = t.h() * t.w();
  for (std::size_t b = 0; b < t.n(); ++b)
    for (std::size_t p = 0; p < plane; ++p) {
      double s = 0;
      for (std::size_t m = 0; m < t.c(); ++m) {
        const double v = t.plane(b, m)[p];
        if (!(v >= 0.0 && v <= 1.0)) return "weight " + fmt(v) + " outside [0,1]";
        s += v;
      }
      if (std::abs(s - 1.0) > tol) return "kernel sums to " + fmt(s);
    }
  return {};
}

struct Instance {
  Tensor4<double> enc, dec;
  KernelGenParams<double> params;
};

inline Instance random_instance(SplitMix64& rng, std::size_t C, std::size_t H, std::size_t W, std::size_t d = 8,
                                std::size_t K = 5, std::size_t h = 3) {
  Instance in;
  in.dec = random_tensor<double>({2, C, H, W}, rng);
  in.enc = random_tensor<double>({2, C, 2 * H, 2 * W}, rng);
  in.params = KernelGenParams<double>::random(C, rng, h, K, d, 0.5);
  return in;
}

inline std::size_t between(SplitMix64& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

template <class F>
std::string expect_error(ErrorCode code, F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (e.code() == code) return {};
    return std::string("raised ") + to_string(e.code()) + " instead of " + to_string(code);
  }
  return std::string("did not raise ") + to_string(code);
}

}  // namespace detail

inline std::vector<Invariant> all_invariants() {
  using detail::fmt;
  std::vector<Invariant> v;
  auto add = [&](std::string module, std::string name, std::function<std::string(std::uint64_t)> f) {
    v.push_back({std::move(module), std::move(name), std::move(f)});
  };

  // --- tensor_core -----------------------------------------------------------
  add("tensor_core", "ften_roundtrip_bitwise", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const auto a = random_tensor<float>({2, 3, 4, 5}, rng);
    const auto b = random_tensor<double>({1, 2, 3, 1}, rng);
    if (!(std::get<Tensor4<float>>(decode_tensor(encode_tensor(a))) == a)) return "f32 roundtrip differs";
    if (!(std::get<Tensor4<double>>(decode_tensor(encode_tensor(b))) == b)) return "f64 roundtrip differs";
    return {};
  });
  add("tensor_core", "ften_rejects_corruption", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    auto bytes = encode_tensor(random_tensor<float>({1, 1, 2, 2}, rng));
    auto bad = bytes;
    bad[0] = 'X';
    if (auto e = detail::expect_error(ErrorCode::BadMagic, [&] { decode_tensor(bad); }); !e.empty()) return e;
    bytes.resize(bytes.size() - 3);
    return detail::expect_error(ErrorCode::TruncatedFile, [&] { decode_tensor(bytes); });
  });
  add("tensor_core", "conv2d_matches_dense_loop", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    for (int t = 0; t < 10; ++t) {
      const std::size_t k = detail::between(rng, 1, 3), s = detail::between(rng, 1, 2);
      const std::size_t ih = 2 * detail::between(rng, 2, 4) + k, iw = 2 * detail::between(rng, 2, 4) + k;
      const Padding pad = Padding::uniform(s == 1 ? k / 2 : 0);
      const auto in = random_tensor<double>({2, detail::between(rng, 1, 3), ih, iw}, rng);
      const auto w = random_conv<double>(detail::between(rng, 1, 3), in.c(), k, k, true, rng);
      if (s == 2 && (ih - k) % 2 != 0) continue;
      const auto fast = conv2d(in, w, s, pad);
      const auto [dense, mults] = conv2d_counted(in, w, s, pad);
      if (max_abs_diff(fast, dense) > 1e-12) return "differs by " + fmt(max_abs_diff(fast, dense));
    }
    return {};
  });
  add("tensor_core", "maxpool_of_nn_interpolate_is_identity", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const auto x = random_tensor<float>({2, 3, 5, 4}, rng);
    return maxpool_x2(nn_interpolate_x2(x)) == x ? "" : "maxpool(nn(x)) != x";
  });
  add("tensor_core", "pixel_shuffle_and_interleave_roundtrip", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const auto x = random_tensor<float>({2, 8, 3, 4}, rng);
    if (!(pixel_unshuffle_x2(pixel_shuffle_x2(x)) == x)) return "pixel shuffle roundtrip differs";
    const auto hi = random_tensor<float>({2, 3, 6, 8}, rng);
    if (!(interleave_x2(deinterleave_x2(hi)) == hi)) return "interleave roundtrip differs";
    return {};
  });
  add("tensor_core", "softmax_normalized", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    return detail::check_normalized(KernelMap<double>{softmax_channels(random_tensor<double>({2, 25, 4, 4}, rng, -30, 30)), true},
                                    1e-12);
  });
  add("tensor_core", "softmax_preserves_logit_order", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const auto x = random_tensor<double>({1, 9, 3, 3}, rng, -3, 3);
    const auto y = softmax_channels(x);
    for (std::size_t p = 0; p < 9; ++p)
      for (std::size_t a = 0; a < 9; ++a)
        for (std::size_t b = 0; b < 9; ++b)
          if (x.plane(0, a)[p] > x.plane(0, b)[p] && !(y.plane(0, a)[p] > y.plane(0, b)[p]))
            return "larger logit received a smaller weight";
    return {};
  });
  add("tensor_core", "softmax_shift_invariant", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const auto x = random_tensor<double>({1, 9, 3, 3}, rng, -3, 3);
    Tensor4<double> shifted = x;
    for (auto& e : shifted.data()) e += 100.0;
    const double diff = max_abs_diff(softmax_channels(x), softmax_channels(shifted));
    return diff <= 1e-12 ? "" : "shift changed weights by " + fmt(diff);
  });

  // --- kernel_gen -------------------------------------------------------------
  add("kernel_gen", "semishift_equals_oracle_f64", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    for (int t = 0; t < 3; ++t) {
      auto in = detail::random_instance(rng, detail::between(rng, 1, 4), detail::between(rng, 3, 6),
                                        detail::between(rng, 3, 6));
      const double diff = max_abs_diff(gen_kernels_semishift(in.enc, in.dec, in.params).tensor,
                                       gen_kernels_oracle(in.enc, in.dec, in.params).tensor);
      if (diff > 1e-12) return "max abs diff " + fmt(diff);
    }
    return {};
  });
  add("kernel_gen", "semishift_equals_oracle_f32", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    auto in = detail::random_instance(rng, 3, 4, 5);
    const auto p = in.params.cast<float>();
    const auto enc = in.enc.cast<float>(), dec = in.dec.cast<float>();
    const double diff = max_abs_diff(gen_kernels_semishift(enc, dec, p).tensor, gen_kernels_oracle(enc, dec, p).tensor);
    return diff <= 1e-5 ? "" : "max abs diff " + fmt(diff);
  });
  add("kernel_gen", "subprocess_literal_matches_interleaved", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    auto in = detail::random_instance(rng, 2, 3, 4);
    const auto corners = deinterleave_x2(semishift_logits(in.enc, in.dec, in.params));
    for (std::size_t k = 0; k < 4; ++k) {
      const double diff =
          max_abs_diff(corners[k], semishift_subprocess(in.enc, in.dec, in.params, Corner::from_index(k)));
      if (diff > 1e-12) return "corner " + std::to_string(k) + " differs by " + fmt(diff);
    }
    return {};
  });
  add("kernel_gen", "folded_decoder_branch_exact", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    auto in = detail::random_instance(rng, 3, 4, 3);
    const double diff =
        max_abs_diff(decoder_branch(in.dec, in.params), decoder_branch_folded(in.dec, fold_decoder_branch(in.params)));
    return diff <= 1e-12 ? "" : "differs by " + fmt(diff);
  });
  add("kernel_gen", "concat_conv_equals_split_sum", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    for (int t = 0; t < 10; ++t) {
      const std::size_t C = detail::between(rng, 1, 4);
      const auto p = KernelGenParams<double>::random(C, rng, 3, 3, 4);
      const auto we = random_tensor<double>({1, C, 3, 3}, rng), wd = random_tensor<double>({1, C, 3, 3}, rng);
      const auto a = window_logits_concat(concat_channels(we, wd), stack_compressors(p), p.beta);
      const auto b = window_logits_split(we, wd, p);
      for (std::size_t m = 0; m < a.size(); ++m)
        if (std::abs(a[m] - b[m]) > 1e-10) return "window logit differs by " + fmt(std::abs(a[m] - b[m]));
    }
    return {};
  });
  add("kernel_gen", "all_generators_normalized", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    auto in = detail::random_instance(rng, 3, 4, 4);
    const auto carafe = SingleSourceKernelParams<double>::carafe(3, rng, 5, 8);
    const auto enc_only = SingleSourceKernelParams<double>::encoder_only(3, rng, 5, 8);
    const std::vector<KernelMap<double>> maps{
        gen_kernels_semishift(in.enc, in.dec, in.params), gen_kernels_naive(in.enc, in.dec, in.params),
        gen_kernels_oracle(in.enc, in.dec, in.params), carafe_kernels(in.dec, carafe), encoder_only_kernels(in.enc, enc_only)};
    for (const auto& km : maps)
      if (auto e = detail::check_normalized(km, 1e-12); !e.empty()) return e;
    return {};
  });
  add("kernel_gen", "constant_encoder_gives_equal_group_kernels", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const std::size_t C = 3, H = 5, W = 6;
    Tensor4<float> enc(1, C, 2 * H, 2 * W);
    for (std::size_t c = 0; c < C; ++c) std::fill_n(enc.plane(0, c), 4 * H * W, static_cast<float>(rng.uniform(-1, 1)));
    const auto dec = random_tensor<float>({1, C, H, W}, rng);
    const auto p = KernelGenParams<float>::random(C, rng, 3, 5, 8, 0.5);
    const auto km = gen_kernels_semishift(enc, dec, p).tensor;
    for (std::size_t m = 0; m < km.c(); ++m)
      for (std::size_t i = 1; i + 1 < H; ++i)
        for (std::size_t j = 1; j + 1 < W; ++j) {
          const float ref = km(0, m, 2 * i, 2 * j);
          if (km(0, m, 2 * i, 2 * j + 1) != ref || km(0, m, 2 * i + 1, 2 * j) != ref ||
              km(0, m, 2 * i + 1, 2 * j + 1) != ref)
            return "group (" + std::to_string(i) + "," + std::to_string(j) + ") kernels differ";
        }
    return {};
  });
  add("kernel_gen", "channel_mismatch_rejected", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    auto in = detail::random_instance(rng, 3, 3, 3);
    const auto dec = random_tensor<double>({2, 2, 3, 3}, rng);
    return detail::expect_error(ErrorCode::ChannelMismatch, [&] { gen_kernels_semishift(in.enc, dec, in.params); });
  });

  // --- upsample ---------------------------------------------------------------
  add("upsample", "one_hot_center_kernels_are_nn_interpolation", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const auto dec = random_tensor<float>({2, 3, 4, 5}, rng);
    Tensor4<float> k(2, 25, 8, 10);
    std::fill_n(k.plane(0, 12), 80, 1.0f);
    std::fill_n(k.plane(1, 12), 80, 1.0f);
    return reassemble(dec, KernelMap<float>{k, true}) == nn_interpolate_x2(dec) ? "" : "reassembly differs from NN";
  });
  add("upsample", "gate_zero_and_one_blend_identities", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const auto enc = random_tensor<float>({2, 3, 4, 4}, rng), pre = random_tensor<float>({2, 3, 4, 4}, rng);
    if (!(gated_blend(enc, pre, GateMap<float>{Tensor4<float>(2, 1, 4, 4, 0.0f)}) == pre)) return "G=0 is not pre";
    if (!(gated_blend(enc, pre, GateMap<float>{Tensor4<float>(2, 1, 4, 4, 1.0f)}) == enc)) return "G=1 is not enc";
    return {};
  });
  add("upsample", "constant_decoder_reproduced_in_interior", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const std::size_t H = 6, W = 6;
    const double c = rng.uniform(-2, 2);
    const Tensor4<double> dec(1, 2, H, W, c);
    const auto enc = random_tensor<double>({1, 2, 2 * H, 2 * W}, rng);
    const auto p = KernelGenParams<double>::random(2, rng, 3, 3, 4);
    const auto out = reassemble(dec, gen_kernels_semishift(enc, dec, p));
    for (std::size_t y = 2; y < 2 * H - 2; ++y)
      for (std::size_t x = 2; x < 2 * W - 2; ++x)
        if (std::abs(out(0, 1, y, x) - c) > 1e-12) return "interior value " + fmt(out(0, 1, y, x)) + " != " + fmt(c);
    return {};
  });
  add("upsample", "fusion_none_equals_reassembly", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    auto in = detail::random_instance(rng, 2, 3, 3);
    FadeParams<double> fp{in.params, GateParams<double>::init(2, rng), FusionMode::None};
    return fade_forward(in.enc, in.dec, fp) == reassemble(in.dec, gen_kernels_semishift(in.enc, in.dec, in.params))
               ? ""
               : "mode none differs from the pre-upsampled feature";
  });
  add("upsample", "fade_output_shape_and_finite", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    auto in = detail::random_instance(rng, 4, 4, 3);
    for (FusionMode m : {FusionMode::None, FusionMode::Skipping, FusionMode::Gating}) {
      FadeParams<double> fp{in.params, GateParams<double>::init(4, rng), m};
      const auto y = fade_forward(in.enc, in.dec, fp);
      if (y.shape() != in.enc.shape()) return "output " + y.shape().str() + " for mode " + to_string(m);
      if (!y.all_finite()) return std::string("non-finite output for mode ") + to_string(m);
    }
    return {};
  });
  add("upsample", "unnormalized_kernels_rejected", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const auto dec = random_tensor<float>({1, 2, 3, 3}, rng);
    return detail::expect_error(ErrorCode::UnnormalizedKernels,
                                [&] { reassemble(dec, KernelMap<float>{Tensor4<float>(1, 25, 6, 6), false}); });
  });

  // --- autograd ---------------------------------------------------------------
  add("autograd", "fade_forward_matches_finite_differences", [](std::uint64_t seed) -> std::string {
    const auto r = finite_diff_check(make_problem<double>(OpId::FadeForward, seed));
    return r.max_rel_err <= 1e-5 ? "" : "max rel err " + fmt(r.max_rel_err) + " at " + r.worst_leaf;
  });
  add("autograd", "conv2d_matches_finite_differences", [](std::uint64_t seed) -> std::string {
    const auto r = finite_diff_check(make_problem<double>(OpId::Conv2d, seed));
    return r.max_rel_err <= 1e-9 ? "" : "max rel err " + fmt(r.max_rel_err);
  });
  add("autograd", "softmax_vjp_of_constant_cotangent_is_zero", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const auto y = softmax_channels(random_tensor<double>({2, 9, 3, 3}, rng));
    const auto g = softmax_channels_vjp(y, Tensor4<double>(y.shape(), 1.7));
    for (double e : g.data())
      if (std::abs(e) > 1e-14) return "residual " + fmt(e);
    return {};
  });
  add("autograd", "nn_interpolate_vjp_is_block_sum", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    Tensor4<double> g(1, 2, 4, 6);
    for (auto& e : g.data()) e = static_cast<double>(rng.below(21)) - 10.0;
    const auto s = nn_interpolate_x2_vjp(g);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < 3; ++j)
          if (s(0, c, i, j) != g(0, c, 2 * i, 2 * j) + g(0, c, 2 * i, 2 * j + 1) + g(0, c, 2 * i + 1, 2 * j) +
                                   g(0, c, 2 * i + 1, 2 * j + 1))
            return "block sum mismatch";
    return {};
  });
  add("autograd", "gate_zero_blocks_encoder_gradient", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const auto enc = random_tensor<double>({1, 2, 4, 4}, rng), pre = random_tensor<double>({1, 2, 4, 4}, rng);
    const auto bg = gated_blend_vjp(enc, pre, GateMap<double>{Tensor4<double>(1, 1, 4, 4, 0.0)},
                                    random_tensor<double>({1, 2, 4, 4}, rng));
    for (double e : bg.enc.data())
      if (e != 0.0) return "encoder gradient " + fmt(e);
    return {};
  });
  add("autograd", "sgd_step_closed_form", [](std::uint64_t) -> std::string {
    ConvWeights<double> p(1, 1, 1, 1, false), g(1, 1, 1, 1, false);
    p.kernel.data()[0] = 1.0;
    g.kernel.data()[0] = 2.0;
    const double got = sgd_step(p, g, 0.1).kernel.data()[0];
    return std::abs(got - 0.8) <= 1e-15 ? "" : "theta=" + fmt(got);
  });

  // --- profiler ---------------------------------------------------------------
  add("profiler", "semishift_cheaper_than_naive_on_all_grids", [](std::uint64_t) -> std::string {
    for (const auto& g : grid_names())
      for (const auto& d : bench_grid(g)) {
        if (d.kind != OpKind::FadeNaive) continue;
        OpDesc s = d;
        s.kind = OpKind::FadeSemishift;
        const auto a = count_kernel_gen_flops(s), b = count_kernel_gen_flops(d);
        if (!(a.macs < b.macs && a.flops < b.flops && a.peak_bytes < b.peak_bytes))
          return g + " C=" + std::to_string(d.C) + " H=" + std::to_string(d.H) + " not strictly cheaper";
      }
    return {};
  });
  add("profiler", "conv_macs_match_instrumented_loop", [](std::uint64_t seed) -> std::string {
    SplitMix64 rng(seed);
    const auto in = random_tensor<float>({2, 3, 6, 6}, rng);
    const auto w = random_conv<float>(4, 3, 3, 3, true, rng);
    const auto [y, mults] = conv2d_counted(in, w, 1, Padding::uniform(1));
    const auto expect = conv_macs(2, 4, 6, 6, 3, 3, 3);
    return mults == expect ? "" : std::to_string(mults) + " multiplies vs formula " + std::to_string(expect);
  });
  add("profiler", "report_bounds_hold", [](std::uint64_t) -> std::string {
    for (const auto& d : bench_grid("fig9a")) {
      const auto r = count_flops(d);
      if (r.flops < 2 * r.macs) return std::string(kind_name(d.kind)) + ": flops < 2*macs";
      if (r.peak_bytes < r.largest_buffer_bytes) return std::string(kind_name(d.kind)) + ": peak below largest buffer";
    }
    const auto b = count_flops({OpKind::Bilinear, 16, 56, 56});
    return b.macs == 0 && b.flops == 7ull * 16 * 112 * 112 ? "" : "bilinear count off";
  });

  // --- experiments ------------------------------------------------------------
  add("experiments", "toy_dataset_deterministic_and_pooled", [](std::uint64_t seed) -> std::string {
    const auto a = make_toy_dataset(seed, 10, 4, 16), b = make_toy_dataset(seed, 10, 4, 16);
    if (!(a.train.enc == b.train.enc && a.test.enc == b.test.enc)) return "same seed gave different data";
    for (const auto* d : {&a.train, &a.test}) {
      for (float e : d->enc.data())
        if (e != 0.0f && e != 1.0f) return "non-binary pixel";
      if (!(maxpool_x2(d->enc) == d->dec)) return "dec is not maxpool(enc)";
    }
    return {};
  });
  add("experiments", "period_two_stripes_defeat_decoder_only", [](std::uint64_t seed) -> std::string {
    const auto data = make_toy_data(stripe_image(16, 2, seed % 2 == 0, seed % 2));
    for (float e : data.dec.data())
      if (e != 1.0f) return "pooled stripes are not all ones";
    const double m = mse(bilinear_x2(data.dec), data.image());
    return m >= 0.2 ? "" : "bilinear MSE " + fmt(m);
  });
  add("experiments", "untrained_report_equals_forward", [](std::uint64_t seed) -> std::string {
    ToyConfig cfg;
    cfg.n_train = 4;
    cfg.n_test = 4;
    const auto a = train_toy(ToyKind::FadeFull, 0, 0.05, seed, cfg);
    const auto b = train_toy(ToyKind::FadeFull, 0, 0.05, seed, cfg);
    if (!a.epoch_mse.empty()) return "epoch list not empty";
    return a.final_test_mse == b.final_test_mse && a.final_test_mse > 0 ? "" : "untrained evaluation not reproducible";
  });
  add("experiments", "training_reduces_loss", [](std::uint64_t seed) -> std::string {
    ToyConfig cfg;
    cfg.n_train = 8;
    cfg.n_test = 4;
    const auto r = train_toy(ToyKind::FadeFull, 20, 0.05, seed, cfg);
    return r.final_train_mse < r.epoch_mse.front() ? "" : "final " + fmt(r.final_train_mse) + " >= initial " + fmt(r.epoch_mse.front());
  });

  return v;
}

inline std::vector<InvariantResult> run_invariants(std::uint64_t seed) {
  std::vector<InvariantResult> out;
  for (const auto& inv : all_invariants()) {
    InvariantResult r{inv.module, inv.name, false, {}};
    try {
      r.detail = inv.check(seed);
      r.passed = r.detail.empty();
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fade
