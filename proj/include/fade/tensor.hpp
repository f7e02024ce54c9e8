#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fade/error.hpp"

namespace fade {

template <class T>
concept Real = std::floating_point<T>;

struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  friend bool operator==(const Shape4&, const Shape4&) = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

/// Dense NCHW tensor. Element (b, ch, y, x) lives at ((b*c + ch)*h + y)*w + x.
template <Real T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : Tensor4(Shape4{n, c, h, w}, fill) {}
  Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    FADE_CHECK(data_.size() == shape_.numel(), ErrorCode::ShapeMismatch,
               "data length does not match shape " + shape_.str());
  }

  const Shape4& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return ((b * shape_.c + ch) * shape_.h + y) * shape_.w + x;
  }

  T& operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) {
    return data_[index(b, ch, y, x)];
  }
  const T& operator()(std::size_t b, std::size_t ch, std::size_t y, std::size_t x) const {
    return data_[index(b, ch, y, x)];
  }

  T* plane(std::size_t b, std::size_t ch) { return data_.data() + index(b, ch, 0, 0); }
  const T* plane(std::size_t b, std::size_t ch) const { return data_.data() + index(b, ch, 0, 0); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class F>
  void for_each_array(F&& f) {
    f("tensor", data());
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <Real U>
  Tensor4<U> cast() const {
    Tensor4<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.storage().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

/// Zero-fill border, in pixels.
struct Padding {
  std::size_t top = 0;
  std::size_t bottom = 0;
  std::size_t left = 0;
  std::size_t right = 0;

  static constexpr Padding uniform(std::size_t p) { return {p, p, p, p}; }
  friend bool operator==(const Padding&, const Padding&) = default;
};

/// Convolution weights, kernel laid out (c_out, c_in, k_h, k_w).
template <Real T>
struct ConvWeights {
  using value_type = T;

  Tensor4<T> kernel;
  std::optional<std::vector<T>> bias;

  ConvWeights() = default;
  ConvWeights(std::size_t c_out, std::size_t c_in, std::size_t kh, std::size_t kw, bool with_bias)
      : kernel(c_out, c_in, kh, kw) {
    if (with_bias) bias = std::vector<T>(c_out, T(0));
  }
  ConvWeights(Tensor4<T> k, std::optional<std::vector<T>> b) : kernel(std::move(k)), bias(std::move(b)) {
    validate();
  }

  std::size_t c_out() const { return kernel.n(); }
  std::size_t c_in() const { return kernel.c(); }
  std::size_t k_h() const { return kernel.h(); }
  std::size_t k_w() const { return kernel.w(); }

  void validate() const {
    FADE_CHECK(k_h() >= 1 && k_w() >= 1, ErrorCode::InvalidArgument, "kernel extent must be >= 1");
    FADE_CHECK(!bias || bias->size() == c_out(), ErrorCode::ShapeMismatch,
               "bias length must equal c_out");
  }

  /// Visits every trainable array: the kernel, then the bias if present.
  template <class F>
  void for_each_array(F&& f) {
    f("kernel", kernel.data());
    if (bias) f("bias", std::span<T>(*bias));
  }
  template <class F>
  void for_each_array(F&& f) const {
    f("kernel", kernel.data());
    if (bias) f("bias", std::span<const T>(*bias));
  }

  template <Real U>
  ConvWeights<U> cast() const {
    ConvWeights<U> out;
    out.kernel = kernel.template cast<U>();
    if (bias) out.bias = std::vector<U>(bias->begin(), bias->end());
    return out;
  }

  /// Same shapes, all zeros (used for gradient accumulators).
  ConvWeights zeros_like() const {
    ConvWeights out;
    out.kernel = Tensor4<T>(kernel.shape());
    if (bias) out.bias = std::vector<T>(bias->size(), T(0));
    return out;
  }
};

/// SplitMix64 (Steele, Lea, Flood 2014): state += 0x9E3779B97F4A7C15, then
/// z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9; z = (z ^ (z >> 27)) * 0x94D049BB133111EB;
/// z ^ (z >> 31). Uniform doubles take the top 53 bits.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t below(std::uint64_t bound) { return next() % bound; }

  /// Independent child stream; used to keep train/test or per-layer draws disjoint.
  SplitMix64 fork(std::uint64_t salt) { return SplitMix64(next() ^ (salt * 0xD1B54A32D192ED03ULL)); }

 private:
  std::uint64_t state_;
};

template <Real T>
Tensor4<T> random_tensor(Shape4 shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor4<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <Real T>
ConvWeights<T> random_conv(std::size_t c_out, std::size_t c_in, std::size_t kh, std::size_t kw,
                           bool with_bias, SplitMix64& rng, double scale = 1.0) {
  ConvWeights<T> w(c_out, c_in, kh, kw, with_bias);
  for (auto& v : w.kernel.data()) v = static_cast<T>(rng.uniform(-scale, scale));
  if (w.bias)
    for (auto& v : *w.bias) v = static_cast<T>(rng.uniform(-scale, scale));
  return w;
}

/// Uniform in +-fan_in^(-1/2) for both kernel and bias.
template <Real T>
ConvWeights<T> init_conv(std::size_t c_out, std::size_t c_in, std::size_t kh, std::size_t kw,
                         bool with_bias, SplitMix64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(c_in * kh * kw));
  return random_conv<T>(c_out, c_in, kh, kw, with_bias, rng, bound);
}

template <Real T>
T max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  FADE_CHECK(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
             "max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

template <Real T>
T sum(const Tensor4<T>& t) {
  T s = 0;
  for (T v : t.data()) s += v;
  return s;
}

}  // namespace fade
