#pragma once

// Closed-form cost model for the upsampling operators plus a wall-clock bench.
//
// Conventions (float32, 4 bytes per element):
//   conv2d MACs     = N * C_out * H_out * W_out * C_in * k_h * k_w (padded taps included)
//   reassembly MACs = N * C * 2H * 2W * K^2
//   flops           = 2 * macs + softmax 5/elem + sigmoid 4/elem + bilinear 7/output
//                     + gated blend 3/elem + elementwise add 1/elem
// Conv biases are not counted. Peak memory is the largest sum of live
// intermediate buffers over a stage schedule that mirrors the scoping in
// kernel_gen.hpp / upsample.hpp; inputs, outputs handed back to the caller at
// the end and parameters are not intermediates, except that each schedule keeps
// the final output as a live buffer in its last stage.
//
// The semi-shift decoder branch uses beta folded through alpha_de. Folding
// depends only on parameters, so its cost is reported separately as setup_macs.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fade/error.hpp"
#include "fade/ops.hpp"
#include "fade/tensor.hpp"
#include "fade/upsample.hpp"

namespace fade {

enum class OpKind { Bilinear, Carafe, FadeNaive, FadeSemishift, FadeFull };

inline constexpr std::array<OpKind, 5> kAllOpKinds{OpKind::Bilinear, OpKind::Carafe, OpKind::FadeNaive,
                                                   OpKind::FadeSemishift, OpKind::FadeFull};

inline const char* kind_name(OpKind k) {
  switch (k) {
    case OpKind::Bilinear: return "bilinear";
    case OpKind::Carafe: return "carafe";
    case OpKind::FadeNaive: return "fade_naive";
    case OpKind::FadeSemishift: return "fade_semishift";
    case OpKind::FadeFull: return "fade_full";
  }
  return "?";
}

inline OpKind kind_from_name(std::string_view name) {
  for (OpKind k : kAllOpKinds)
    if (name == kind_name(k)) return k;
  throw Error(ErrorCode::UnknownKind, "unknown operator kind '" + std::string(name) + "'");
}

/// One operator configuration. H, W are decoder (low-resolution) sizes.
struct OpDesc {
  OpKind kind = OpKind::FadeSemishift;
  std::size_t C = 64;
  std::size_t H = 56;
  std::size_t W = 56;
  std::size_t K = 5;
  std::size_t h = 3;
  std::size_t d = 64;
  std::size_t N = 1;

  void validate() const {
    FADE_CHECK(C > 0 && H > 0 && W > 0 && N > 0 && d > 0, ErrorCode::InvalidArgument,
               "operator dimensions must be positive");
    FADE_CHECK(K % 2 == 1 && h % 2 == 1, ErrorCode::UnsupportedWindow, "K and h must be odd");
  }
};

struct Buffer {
  std::string name;
  std::uint64_t elements = 0;
};

struct Stage {
  std::string name;
  std::uint64_t macs = 0;
  std::uint64_t extra_flops = 0;  // non-MAC work
  std::vector<Buffer> live;       // buffers alive while this stage runs

  std::uint64_t live_elements() const {
    std::uint64_t s = 0;
    for (const auto& b : live) s += b.elements;
    return s;
  }
};

struct FlopReport {
  std::uint64_t macs = 0;
  std::uint64_t flops = 0;
  std::uint64_t peak_bytes = 0;
  std::uint64_t largest_buffer_bytes = 0;
  std::uint64_t setup_macs = 0;
  std::optional<double> wall_ns;
  std::vector<Stage> stages;

  /// Stage by name, or nullptr.
  const Stage* stage(std::string_view name) const {
    for (const auto& s : stages)
      if (s.name == name) return &s;
    return nullptr;
  }
};

inline constexpr std::uint64_t kBytesPerElement = 4;

inline std::uint64_t conv_macs(std::uint64_t n, std::uint64_t c_out, std::uint64_t h_out, std::uint64_t w_out,
                               std::uint64_t c_in, std::uint64_t kh, std::uint64_t kw) {
  return n * c_out * h_out * w_out * c_in * kh * kw;
}

inline std::uint64_t reassembly_macs(std::uint64_t n, std::uint64_t C, std::uint64_t H, std::uint64_t W,
                                     std::uint64_t K) {
  return n * C * (2 * H) * (2 * W) * K * K;
}

namespace detail {

struct Schedule {
  std::vector<Stage> stages;

  Stage& add(std::string name, std::uint64_t macs, std::uint64_t extra, std::vector<Buffer> live) {
    stages.push_back({std::move(name), macs, extra, std::move(live)});
    return stages.back();
  }
};

inline FlopReport finish(Schedule s, std::uint64_t setup_macs = 0) {
  FlopReport r;
  r.setup_macs = setup_macs;
  for (const auto& st : s.stages) {
    r.macs += st.macs;
    r.flops += 2 * st.macs + st.extra_flops;
    r.peak_bytes = std::max(r.peak_bytes, st.live_elements() * kBytesPerElement);
    for (const auto& b : st.live) r.largest_buffer_bytes = std::max(r.largest_buffer_bytes, b.elements * kBytesPerElement);
  }
  r.stages = std::move(s.stages);
  return r;
}

inline void append_reassembly(Schedule& s, const OpDesc& o) {
  const std::uint64_t hi = o.N * 4 * o.H * o.W, KK = o.K * o.K;
  s.add("reassemble", reassembly_macs(o.N, o.C, o.H, o.W, o.K), 0, {{"kernels", KK * hi}, {"pre_up", o.C * hi}});
}

inline void semishift_stages(Schedule& s, const OpDesc& o) {
  const std::uint64_t lo = o.N * o.H * o.W, hi = 4 * lo, KK = o.K * o.K;
  const std::uint64_t plane = o.H * o.W;
  const Buffer ce{"compressed_enc", o.d * hi}, db{"decoder_branch", KK * lo}, subs{"sub_logits", 4 * KK * lo};
  s.add("compress_encoder", conv_macs(o.N, o.d, 2 * o.H, 2 * o.W, o.C, 1, 1), 0, {ce});
  // Folded decoder conv plus the border-aware bias map (an all-ones plane
  // convolved with the folded bias kernel, added once per batch element).
  s.add("decoder_branch", conv_macs(o.N, KK, o.H, o.W, o.C, o.h, o.h) + conv_macs(1, KK, o.H, o.W, 1, o.h, o.h),
        KK * lo, {ce, db, {"ones", plane}, {"bias_map", KK * plane}});
  s.add("encoder_branch", 4 * conv_macs(o.N, KK, o.H, o.W, o.d, o.h, o.h), 4 * KK * lo, {ce, db, subs});
  s.add("interleave", 0, 0, {subs, {"logits", KK * hi}});
  s.add("softmax", 0, 5 * KK * hi, {{"logits", KK * hi}, {"kernels", KK * hi}});
}

inline void naive_stages(Schedule& s, const OpDesc& o) {
  const std::uint64_t hi = o.N * 4 * o.H * o.W, KK = o.K * o.K;
  const Buffer up{"interpolated_dec", o.C * hi}, cat{"concatenated", 2 * o.C * hi}, comp{"compressed", o.d * hi};
  s.add("interpolate", 0, 0, {up});
  s.add("concat", 0, 0, {up, cat});
  s.add("compress", conv_macs(o.N, o.d, 2 * o.H, 2 * o.W, 2 * o.C, 1, 1), 0, {cat, comp});
  s.add("kernel_conv", conv_macs(o.N, KK, 2 * o.H, 2 * o.W, o.d, o.h, o.h), 0, {comp, {"logits", KK * hi}});
  s.add("softmax", 0, 5 * KK * hi, {{"logits", KK * hi}, {"kernels", KK * hi}});
}

inline void carafe_stages(Schedule& s, const OpDesc& o) {
  const std::uint64_t lo = o.N * o.H * o.W, hi = 4 * lo, KK = o.K * o.K;
  const Buffer comp{"compressed", o.d * lo}, logits{"logits_lowres", 4 * KK * lo}, shuf{"shuffled", KK * hi};
  s.add("compress", conv_macs(o.N, o.d, o.H, o.W, o.C, 1, 1), 0, {comp});
  s.add("kernel_conv", conv_macs(o.N, 4 * KK, o.H, o.W, o.d, o.h, o.h), 0, {comp, logits});
  s.add("pixel_shuffle", 0, 0, {comp, logits, shuf});
  s.add("softmax", 0, 5 * KK * hi, {shuf, {"kernels", KK * hi}});
}

inline void gate_stages(Schedule& s, const OpDesc& o) {
  const std::uint64_t lo = o.N * o.H * o.W, hi = 4 * lo;
  const Buffer pre{"pre_up", o.C * hi};
  // sigmoid(nn(conv(dec))) is one expression, so all three maps coexist.
  s.add("gate_conv", conv_macs(o.N, 1, o.H, o.W, o.C, 1, 1), 0, {pre, {"gate_low", lo}});
  s.add("gate_interp", 0, 0, {pre, {"gate_low", lo}, {"gate_up", hi}});
  s.add("gate_sigmoid", 0, 4 * hi, {pre, {"gate_low", lo}, {"gate_up", hi}, {"gate", hi}});
  s.add("blend", 0, 3 * o.C * hi, {pre, {"gate", hi}, {"output", o.C * hi}});
}

inline std::uint64_t fold_setup_macs(const OpDesc& o) {
  const std::uint64_t KK = o.K * o.K, hh = o.h * o.h;
  return KK * o.d * hh * (o.C + 1);
}

}  // namespace detail

/// Cost of kernel generation alone (everything up to the normalized kernel
/// map). Only meaningful for the kernel-predicting kinds.
inline FlopReport count_kernel_gen_flops(const OpDesc& desc) {
  desc.validate();
  detail::Schedule s;
  switch (desc.kind) {
    case OpKind::Bilinear: throw Error(ErrorCode::UnknownKind, "bilinear has no kernel generator");
    case OpKind::Carafe: detail::carafe_stages(s, desc); return detail::finish(std::move(s));
    case OpKind::FadeNaive: detail::naive_stages(s, desc); return detail::finish(std::move(s));
    case OpKind::FadeSemishift:
    case OpKind::FadeFull:
      detail::semishift_stages(s, desc);
      return detail::finish(std::move(s), detail::fold_setup_macs(desc));
  }
  throw Error(ErrorCode::UnknownKind, "unknown operator kind");
}

/// Whole-operator cost: kernel generation, reassembly and (fade_full) gating.
inline FlopReport count_flops(const OpDesc& desc) {
  desc.validate();
  detail::Schedule s;
  std::uint64_t setup = 0;
  const std::uint64_t out = desc.N * desc.C * 4 * desc.H * desc.W;
  switch (desc.kind) {
    case OpKind::Bilinear: s.add("bilinear", 0, 7 * out, {{"output", out}}); break;
    case OpKind::Carafe:
      detail::carafe_stages(s, desc);
      detail::append_reassembly(s, desc);
      break;
    case OpKind::FadeNaive:
      detail::naive_stages(s, desc);
      detail::append_reassembly(s, desc);
      break;
    case OpKind::FadeSemishift:
      detail::semishift_stages(s, desc);
      detail::append_reassembly(s, desc);
      setup = detail::fold_setup_macs(desc);
      break;
    case OpKind::FadeFull:
      detail::semishift_stages(s, desc);
      detail::append_reassembly(s, desc);
      detail::gate_stages(s, desc);
      setup = detail::fold_setup_macs(desc);
      break;
  }
  return detail::finish(std::move(s), setup);
}

/// Literal dense convolution over the zero-padded input that counts every
/// multiply it performs. Used to check the closed-form MAC count.
template <Real T>
std::pair<Tensor4<T>, std::uint64_t> conv2d_counted(const Tensor4<T>& input, const ConvWeights<T>& w,
                                                    std::size_t stride, const Padding& pad) {
  const Tensor4<T> padded = pad2d(input, pad);
  const std::size_t oh = conv_out_extent(input.h(), pad.top, pad.bottom, w.k_h(), stride);
  const std::size_t ow = conv_out_extent(input.w(), pad.left, pad.right, w.k_w(), stride);
  Tensor4<T> out(input.n(), w.c_out(), oh, ow);
  std::uint64_t mults = 0;
  for (std::size_t b = 0; b < input.n(); ++b)
    for (std::size_t co = 0; co < w.c_out(); ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          T acc = 0;
          for (std::size_t ci = 0; ci < w.c_in(); ++ci)
            for (std::size_t u = 0; u < w.k_h(); ++u)
              for (std::size_t v = 0; v < w.k_w(); ++v) {
                acc += w.kernel(co, ci, u, v) * padded(b, ci, y * stride + u, x * stride + v);
                ++mults;
              }
          out(b, co, y, x) = acc + (w.bias ? (*w.bias)[co] : T(0));
        }
  return {std::move(out), mults};
}

// ---------------------------------------------------------------------------
// Benchmark grids and CSV

struct BenchRow {
  OpDesc desc;
  FlopReport report;
};

inline std::vector<OpDesc> expand_kinds(const std::vector<OpDesc>& points) {
  std::vector<OpDesc> out;
  for (const auto& p : points)
    for (OpKind k : kAllOpKinds) {
      OpDesc d = p;
      d.kind = k;
      out.push_back(d);
    }
  return out;
}

/// Named grids: fig9a fixes the decoder at 56x56 (encoder 112x112) and sweeps
/// channels; fig9b/fig9c fix C = 64 / 256 and sweep the decoder size.
inline std::vector<OpDesc> bench_grid(std::string_view name) {
  std::vector<OpDesc> points;
  if (name == "fig9a") {
    for (std::size_t C : {16, 32, 64, 128, 256}) points.push_back({OpKind::Bilinear, C, 56, 56});
  } else if (name == "fig9b" || name == "fig9c") {
    const std::size_t C = name == "fig9b" ? 64 : 256;
    for (std::size_t H : {14, 28, 56, 112}) points.push_back({OpKind::Bilinear, C, H, H});
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown grid '" + std::string(name) + "'");
  }
  return expand_kinds(points);
}

inline const std::vector<std::string>& grid_names() {
  static const std::vector<std::string> names{"fig9a", "fig9b", "fig9c"};
  return names;
}

/// One timed call of the operator described by `desc` on float inputs drawn
/// from `rng`. Parameters use the standard initialization.
class BenchCase {
 public:
  BenchCase(const OpDesc& desc, SplitMix64& rng) : desc_(desc) {
    desc.validate();
    dec_ = random_tensor<float>({desc.N, desc.C, desc.H, desc.W}, rng);
    enc_ = random_tensor<float>({desc.N, desc.C, 2 * desc.H, 2 * desc.W}, rng);
    const FusionMode fusion = desc.kind == OpKind::FadeFull ? FusionMode::Gating : FusionMode::None;
    fade_ = FadeParams<float>::init(desc.C, rng, fusion, desc.h, desc.K, desc.d);
    carafe_ = SingleSourceKernelParams<float>::carafe(desc.C, rng, desc.K, desc.d, desc.h);
  }

  Tensor4<float> run() const {
    switch (desc_.kind) {
      case OpKind::Bilinear: return bilinear_x2(dec_);
      case OpKind::Carafe: return carafe_forward(dec_, carafe_);
      case OpKind::FadeNaive: return fade_naive_forward(enc_, dec_, fade_);
      case OpKind::FadeSemishift:
      case OpKind::FadeFull: return fade_forward(enc_, dec_, fade_);
    }
    throw Error(ErrorCode::UnknownKind, "unknown operator kind");
  }

 private:
  OpDesc desc_;
  Tensor4<float> enc_, dec_;
  FadeParams<float> fade_;
  SingleSourceKernelParams<float> carafe_;
};

/// Analytic report for every desc; with trials > 0 also the median wall time of
/// `trials` runs on seeded random inputs (single thread).
inline std::vector<BenchRow> bench_run(const std::vector<OpDesc>& grid, std::size_t trials, std::uint64_t seed,
                                       bool timing = true) {
  FADE_CHECK(!timing || trials >= 3, ErrorCode::InvalidArgument, "bench needs at least 3 trials");
  std::vector<BenchRow> rows;
  SplitMix64 root(seed);
  for (const auto& desc : grid) {
    BenchRow row{desc, count_flops(desc)};
    SplitMix64 rng = root.fork(rows.size());
    if (timing) {
      const BenchCase bc(desc, rng);
      std::vector<double> ns;
      for (std::size_t t = 0; t < trials; ++t) {
        const auto t0 = std::chrono::steady_clock::now();
        const Tensor4<float> y = bc.run();
        const auto t1 = std::chrono::steady_clock::now();
        FADE_CHECK(y.all_finite(), ErrorCode::NonFiniteData, std::string(kind_name(desc.kind)) + " produced non-finite output");
        ns.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
      }
      std::sort(ns.begin(), ns.end());
      row.report.wall_ns = ns.size() % 2 ? ns[ns.size() / 2] : 0.5 * (ns[ns.size() / 2 - 1] + ns[ns.size() / 2]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

inline constexpr std::string_view kBenchCsvHeader = "kind,C,H,W,K,h,d,macs,flops,peak_bytes,wall_ns_median";

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << kBenchCsvHeader << '\n';
  for (const auto& r : rows) {
    const auto& d = r.desc;
    os << kind_name(d.kind) << ',' << d.C << ',' << d.H << ',' << d.W << ',' << d.K << ',' << d.h << ',' << d.d << ','
       << r.report.macs << ',' << r.report.flops << ',' << r.report.peak_bytes << ',';
    if (r.report.wall_ns) os << static_cast<std::uint64_t>(*r.report.wall_ns + 0.5);
    os << '\n';
  }
}

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  write_bench_csv(os, rows);
  return os.str();
}

}  // namespace fade
