#pragma once

// Name-addressed access to every differentiable op, so one routine can
// compare analytic vector-Jacobian products with central finite differences.
// Parameters travel as named leaves; conv biases are (1, c_out, 1, 1) tensors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fade/autograd.hpp"
#include "fade/error.hpp"
#include "fade/tensor.hpp"

namespace fade {

enum class OpId {
  Conv2d,
  NnInterpolateX2,
  SoftmaxChannels,
  SigmoidMap,
  Reassemble,
  GatedBlend,
  GenKernelsSemishift,
  FadeForward,
  GenKernelsNaive,
  CarafeForward,
  EncoderOnlyForward,
};

inline constexpr std::array<OpId, 11> kAllOps{
    OpId::Conv2d,         OpId::NnInterpolateX2,     OpId::SoftmaxChannels, OpId::SigmoidMap,
    OpId::Reassemble,     OpId::GatedBlend,          OpId::GenKernelsSemishift, OpId::FadeForward,
    OpId::GenKernelsNaive, OpId::CarafeForward,      OpId::EncoderOnlyForward};

inline const char* op_name(OpId op) {
  switch (op) {
    case OpId::Conv2d: return "conv2d";
    case OpId::NnInterpolateX2: return "nn_interpolate_x2";
    case OpId::SoftmaxChannels: return "softmax_channels";
    case OpId::SigmoidMap: return "sigmoid_map";
    case OpId::Reassemble: return "reassemble";
    case OpId::GatedBlend: return "gated_blend";
    case OpId::GenKernelsSemishift: return "gen_kernels_semishift";
    case OpId::FadeForward: return "fade_forward";
    case OpId::GenKernelsNaive: return "gen_kernels_naive";
    case OpId::CarafeForward: return "carafe_forward";
    case OpId::EncoderOnlyForward: return "encoder_only_forward";
  }
  return "?";
}

inline OpId op_from_name(std::string_view name) {
  for (OpId op : kAllOps)
    if (name == op_name(op)) return op;
  throw Error(ErrorCode::UnknownOp, "no registered op named '" + std::string(name) + "'");
}

/// Non-differentiable configuration of an op instance.
struct OpConfig {
  std::size_t stride = 1;
  Padding padding{};
  std::size_t h = 3;
  std::size_t K = 5;
  std::size_t d = 8;
  FusionMode fusion = FusionMode::Gating;
};

template <Real T>
struct Leaf {
  std::string name;
  Tensor4<T> value;
};

template <Real T>
using Leaves = std::vector<Leaf<T>>;

/// Cotangents for every leaf, same names and shapes as the primal leaves.
template <Real T>
using GradBundle = Leaves<T>;

template <Real T>
struct Problem {
  OpId op = OpId::Conv2d;
  OpConfig config;
  Leaves<T> leaves;
};

namespace detail {

template <Real T>
const Tensor4<T>& leaf(const Leaves<T>& leaves, std::string_view name) {
  for (const auto& l : leaves)
    if (l.name == name) return l.value;
  throw Error(ErrorCode::ShapeMismatch, "missing primal input '" + std::string(name) + "'");
}

template <Real T>
Tensor4<T> bias_leaf(const std::vector<T>& b) {
  return Tensor4<T>(Shape4{1, b.size(), 1, 1}, b);
}

template <Real T>
ConvWeights<T> conv_from(const Leaves<T>& leaves, std::string_view kernel, std::string_view bias) {
  ConvWeights<T> w;
  w.kernel = leaf(leaves, kernel);
  if (!bias.empty()) {
    const auto& b = leaf(leaves, bias);
    w.bias = std::vector<T>(b.data().begin(), b.data().end());
  }
  w.validate();
  return w;
}

template <Real T>
void push_conv(Leaves<T>& out, const ConvWeights<T>& w, const std::string& kernel, const std::string& bias) {
  out.push_back({kernel, w.kernel});
  if (!bias.empty()) out.push_back({bias, bias_leaf(*w.bias)});
}

template <Real T>
KernelGenParams<T> kernel_gen_from(const Leaves<T>& leaves, const OpConfig& cfg) {
  KernelGenParams<T> p;
  p.alpha_en = conv_from(leaves, "alpha_en", "");
  p.alpha_de = conv_from(leaves, "alpha_de", "a");
  p.beta = conv_from(leaves, "beta", "b");
  p.h = cfg.h;
  p.K = cfg.K;
  p.d = p.alpha_en.c_out();
  return p;
}

template <Real T>
void push_kernel_gen(Leaves<T>& out, const KernelGenParams<T>& p) {
  push_conv(out, p.alpha_en, "alpha_en", "");
  push_conv(out, p.alpha_de, "alpha_de", "a");
  push_conv(out, p.beta, "beta", "b");
}

template <Real T>
SingleSourceKernelParams<T> single_source_from(const Leaves<T>& leaves, const OpConfig& cfg) {
  return {conv_from(leaves, "compress", "compress_bias"), conv_from(leaves, "kernel", "kernel_bias"), cfg.K};
}

template <Real T>
void push_single_source(Leaves<T>& out, const SingleSourceKernelParams<T>& p) {
  push_conv(out, p.compress, "compress", "compress_bias");
  push_conv(out, p.kernel, "kernel", "kernel_bias");
}

}  // namespace detail

template <Real T>
Tensor4<T> evaluate(const Problem<T>& pr) {
  using detail::leaf;
  const auto& L = pr.leaves;
  const auto& cfg = pr.config;
  switch (pr.op) {
    case OpId::Conv2d:
      return conv2d(leaf(L, "input"), detail::conv_from(L, "kernel", "bias"), cfg.stride, cfg.padding);
    case OpId::NnInterpolateX2: return nn_interpolate_x2(leaf(L, "input"));
    case OpId::SoftmaxChannels: return softmax_channels(leaf(L, "input"));
    case OpId::SigmoidMap: return sigmoid_map(leaf(L, "input"));
    case OpId::Reassemble: return reassemble(leaf(L, "dec"), KernelMap<T>{leaf(L, "kernels"), true});
    case OpId::GatedBlend: return gated_blend(leaf(L, "enc"), leaf(L, "pre"), GateMap<T>{leaf(L, "gate")});
    case OpId::GenKernelsSemishift:
      return gen_kernels_semishift(leaf(L, "enc"), leaf(L, "dec"), detail::kernel_gen_from(L, cfg)).tensor;
    case OpId::GenKernelsNaive:
      return gen_kernels_naive(leaf(L, "enc"), leaf(L, "dec"), detail::kernel_gen_from(L, cfg)).tensor;
    case OpId::FadeForward: {
      FadeParams<T> fp{detail::kernel_gen_from(L, cfg), {detail::conv_from(L, "gate", "gate_bias")}, cfg.fusion};
      return fade_forward(leaf(L, "enc"), leaf(L, "dec"), fp);
    }
    case OpId::CarafeForward: return carafe_forward(leaf(L, "dec"), detail::single_source_from(L, cfg));
    case OpId::EncoderOnlyForward:
      return encoder_only_forward(leaf(L, "enc"), leaf(L, "dec"), detail::single_source_from(L, cfg));
  }
  throw Error(ErrorCode::UnknownOp, "unhandled op");
}

/// Analytic cotangents of every leaf given the output cotangent.
template <Real T>
GradBundle<T> vjp(const Problem<T>& pr, const Tensor4<T>& cot) {
  using detail::leaf;
  const auto& L = pr.leaves;
  const auto& cfg = pr.config;
  GradBundle<T> out;
  switch (pr.op) {
    case OpId::Conv2d: {
      auto w = detail::conv_from(L, "kernel", "bias");
      auto g = conv2d_vjp(leaf(L, "input"), w, cfg.stride, cfg.padding, cot);
      out.push_back({"input", std::move(g.input)});
      detail::push_conv(out, g.weights, "kernel", w.bias ? "bias" : "");
      break;
    }
    case OpId::NnInterpolateX2: out.push_back({"input", nn_interpolate_x2_vjp(cot)}); break;
    case OpId::SoftmaxChannels:
      out.push_back({"input", softmax_channels_vjp(softmax_channels(leaf(L, "input")), cot)});
      break;
    case OpId::SigmoidMap: out.push_back({"input", sigmoid_map_vjp(sigmoid_map(leaf(L, "input")), cot)}); break;
    case OpId::Reassemble: {
      auto g = reassemble_vjp(leaf(L, "dec"), KernelMap<T>{leaf(L, "kernels"), true}, cot);
      out.push_back({"dec", std::move(g.dec)});
      out.push_back({"kernels", std::move(g.kernels)});
      break;
    }
    case OpId::GatedBlend: {
      auto g = gated_blend_vjp(leaf(L, "enc"), leaf(L, "pre"), GateMap<T>{leaf(L, "gate")}, cot);
      out.push_back({"enc", std::move(g.enc)});
      out.push_back({"pre", std::move(g.pre)});
      out.push_back({"gate", std::move(g.gate)});
      break;
    }
    case OpId::GenKernelsSemishift:
    case OpId::GenKernelsNaive: {
      const auto& enc = leaf(L, "enc");
      const auto& dec = leaf(L, "dec");
      const auto p = detail::kernel_gen_from(L, cfg);
      auto g = pr.op == OpId::GenKernelsSemishift ? gen_kernels_semishift_vjp(enc, dec, p, cot)
                                                   : naive_backward(p, naive_forward_saved(enc, dec, p), cot);
      out.push_back({"enc", std::move(g.enc)});
      out.push_back({"dec", std::move(g.dec)});
      detail::push_kernel_gen(out, g.params);
      break;
    }
    case OpId::FadeForward: {
      FadeParams<T> fp{detail::kernel_gen_from(L, cfg), {detail::conv_from(L, "gate", "gate_bias")}, cfg.fusion};
      auto g = fade_forward_vjp(leaf(L, "enc"), leaf(L, "dec"), fp, cot);
      out.push_back({"enc", std::move(g.enc)});
      out.push_back({"dec", std::move(g.dec)});
      detail::push_kernel_gen(out, g.params.kernel_gen);
      detail::push_conv(out, g.params.gate.conv, "gate", "gate_bias");
      break;
    }
    case OpId::CarafeForward: {
      const auto p = detail::single_source_from(L, cfg);
      const auto& dec = leaf(L, "dec");
      auto g = carafe_backward(dec, p, carafe_forward_saved(dec, p), cot);
      out.push_back({"dec", std::move(g.dec)});
      detail::push_single_source(out, g.params);
      break;
    }
    case OpId::EncoderOnlyForward: {
      const auto p = detail::single_source_from(L, cfg);
      const auto& enc = leaf(L, "enc");
      const auto& dec = leaf(L, "dec");
      auto g = encoder_only_backward(enc, dec, p, encoder_only_forward_saved(enc, dec, p), cot);
      out.push_back({"enc", std::move(g.enc)});
      out.push_back({"dec", std::move(g.dec)});
      detail::push_single_source(out, g.params);
      break;
    }
  }
  // Keep the primal leaf order so bundles line up with Problem::leaves.
  GradBundle<T> ordered;
  for (const auto& l : L) {
    auto it = std::find_if(out.begin(), out.end(), [&](const Leaf<T>& g) { return g.name == l.name; });
    FADE_CHECK(it != out.end(), ErrorCode::ShapeMismatch, "no cotangent produced for '" + l.name + "'");
    FADE_CHECK(it->value.shape() == l.value.shape(), ErrorCode::ShapeMismatch,
               "cotangent of '" + l.name + "' has shape " + it->value.shape().str() + ", primal " +
                   l.value.shape().str());
    ordered.push_back(std::move(*it));
  }
  return ordered;
}

/// Random instance of `op` with batch 2 and spatial sizes <= 6. Inputs and
/// weights are uniform in [-1, 1] except where a range is structurally needed
/// (normalized kernels, gate in (0, 1)).
template <Real T>
Problem<T> make_problem(OpId op, std::uint64_t seed, OpConfig cfg = {}) {
  SplitMix64 rng(seed * 0x2545F4914F6CDD1DULL + static_cast<std::uint64_t>(op));
  Problem<T> pr{op, cfg, {}};
  auto& L = pr.leaves;
  // Batch 2 for the cheap primitives; the composite ops use batch 1 to keep
  // the extended-precision probe fast.
  const bool composite = op == OpId::GenKernelsSemishift || op == OpId::GenKernelsNaive ||
                         op == OpId::FadeForward || op == OpId::CarafeForward || op == OpId::EncoderOnlyForward;
  const std::size_t n = composite ? 1 : 2, C = 2, H = 3, W = 3;
  auto rnd = [&](Shape4 s, double lo = -1.0, double hi = 1.0) { return random_tensor<T>(s, rng, lo, hi); };
  auto add_kernel_gen = [&] {
    auto p = KernelGenParams<T>::random(C, rng, cfg.h, cfg.K, cfg.d, 0.25);
    detail::push_kernel_gen(L, p);
  };
  switch (op) {
    case OpId::Conv2d:
      pr.config.stride = 2;
      pr.config.padding = {1, 0, 1, 0};
      L.push_back({"input", rnd({n, 3, 6, 6})});
      detail::push_conv(L, random_conv<T>(4, 3, 3, 3, true, rng), "kernel", "bias");
      break;
    case OpId::NnInterpolateX2:
    case OpId::SigmoidMap: L.push_back({"input", rnd({n, 3, 4, 5}, -3.0, 3.0)}); break;
    case OpId::SoftmaxChannels: L.push_back({"input", rnd({n, 4, 3, 3}, -2.0, 2.0)}); break;
    case OpId::Reassemble: {
      L.push_back({"dec", rnd({n, 3, H, W})});
      L.push_back({"kernels", softmax_channels(rnd({n, cfg.K * cfg.K, 2 * H, 2 * W}, -2.0, 2.0))});
      break;
    }
    case OpId::GatedBlend:
      L.push_back({"enc", rnd({n, 3, 4, 4})});
      L.push_back({"pre", rnd({n, 3, 4, 4})});
      L.push_back({"gate", rnd({n, 1, 4, 4}, 0.05, 0.95)});
      break;
    case OpId::GenKernelsSemishift:
    case OpId::GenKernelsNaive:
      L.push_back({"enc", rnd({n, C, 2 * H, 2 * W})});
      L.push_back({"dec", rnd({n, C, H, W})});
      add_kernel_gen();
      break;
    case OpId::FadeForward:
      L.push_back({"enc", rnd({n, C, 2 * H, 2 * W})});
      L.push_back({"dec", rnd({n, C, H, W})});
      add_kernel_gen();
      detail::push_conv(L, random_conv<T>(1, C, 1, 1, true, rng), "gate", "gate_bias");
      break;
    case OpId::CarafeForward:
      L.push_back({"dec", rnd({n, C, H, W})});
      detail::push_single_source(L, SingleSourceKernelParams<T>{random_conv<T>(cfg.d, C, 1, 1, true, rng, 0.5),
                                                                random_conv<T>(4 * cfg.K * cfg.K, cfg.d, cfg.h, cfg.h,
                                                                               true, rng, 0.25),
                                                                cfg.K});
      break;
    case OpId::EncoderOnlyForward:
      L.push_back({"enc", rnd({n, C, 2 * H, 2 * W})});
      L.push_back({"dec", rnd({n, C, H, W})});
      detail::push_single_source(L, SingleSourceKernelParams<T>{random_conv<T>(cfg.d, C, 1, 1, true, rng, 0.5),
                                                                random_conv<T>(cfg.K * cfg.K, cfg.d, cfg.h, cfg.h,
                                                                               true, rng, 0.25),
                                                                cfg.K});
      break;
  }
  return pr;
}

template <Real U, Real T>
Problem<U> cast_problem(const Problem<T>& pr) {
  Problem<U> out{pr.op, pr.config, {}};
  for (const auto& l : pr.leaves) out.leaves.push_back({l.name, l.value.template cast<U>()});
  return out;
}

/// Default relative step. With the long double probe, 1e-5 balances
/// truncation against roundoff for the composite ops.
inline constexpr double kFiniteDiffEps = 1e-5;

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::string worst_leaf;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Central differences of L = sum(y^2) against the analytic f64 vjp with
/// cotangent 2y. Step per coordinate eps_scale * max(1, |theta|); relative error
/// uses max(|analytic|, |numeric|, 1e-8) as denominator. The probe forward
/// passes run in Probe precision.
template <Real Probe = long double>
FiniteDiffReport finite_diff_check(const Problem<double>& problem, double eps_scale = kFiniteDiffEps) {
  auto loss = [](const Tensor4<Probe>& y) {
    Probe s = 0;
    for (Probe v : y.data()) s += v * v;
    return s;
  };
  const Tensor4<double> y = evaluate(problem);
  Tensor4<double> cot(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) cot.data()[i] = 2.0 * y.data()[i];
  const GradBundle<double> analytic = vjp(problem, cot);

  FiniteDiffReport report;
  Problem<Probe> probe = cast_problem<Probe>(problem);
  for (std::size_t li = 0; li < probe.leaves.size(); ++li) {
    auto values = probe.leaves[li].value.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Probe theta = values[i];
      const Probe eps = static_cast<Probe>(eps_scale) * std::max<Probe>(1, std::abs(theta));
      values[i] = theta + eps;
      const Probe up = loss(evaluate(probe));
      values[i] = theta - eps;
      const Probe down = loss(evaluate(probe));
      values[i] = theta;
      const double numeric = static_cast<double>((up - down) / (2 * eps));
      const double exact = analytic[li].value.data()[i];
      FADE_CHECK(std::isfinite(numeric) && std::isfinite(exact), ErrorCode::NonFiniteGradient,
                 std::string(op_name(problem.op)) + ": non-finite gradient at " + probe.leaves[li].name + "[" +
                     std::to_string(i) + "]");
      const double rel = std::abs(exact - numeric) / std::max({std::abs(exact), std::abs(numeric), 1e-8});
      ++report.coordinates;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_leaf = probe.leaves[li].name;
        report.worst_index = i;
        report.worst_analytic = exact;
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace fade
