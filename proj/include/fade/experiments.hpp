#pragma once

// Toy detail-reconstruction task. Images are binary stripe / checkerboard
// patterns; the encoder feature is the image itself and the decoder feature is
// its 2x2 max pool, so fine structure survives only on the encoder side. Each
// arm upsamples dec back to the image resolution and is trained with full-batch
// SGD on the mean squared error against the image.

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "fade/autograd.hpp"
#include "fade/error.hpp"
#include "fade/ops.hpp"
#include "fade/tensor.hpp"
#include "fade/upsample.hpp"

namespace fade {

enum class ToyKind { Bilinear, Carafe, EncoderOnly, FadeNoGate, FadeSkip, FadeFull };

inline constexpr std::array<ToyKind, 6> kAllToyKinds{ToyKind::Bilinear,   ToyKind::Carafe,   ToyKind::EncoderOnly,
                                                     ToyKind::FadeNoGate, ToyKind::FadeSkip, ToyKind::FadeFull};

inline const char* toy_kind_name(ToyKind k) {
  switch (k) {
    case ToyKind::Bilinear: return "bilinear";
    case ToyKind::Carafe: return "carafe";
    case ToyKind::EncoderOnly: return "encoder_only";
    case ToyKind::FadeNoGate: return "fade_no_gate";
    case ToyKind::FadeSkip: return "fade_skip";
    case ToyKind::FadeFull: return "fade_full";
  }
  return "?";
}

inline ToyKind toy_kind_from_name(std::string_view name) {
  for (ToyKind k : kAllToyKinds)
    if (name == toy_kind_name(k)) return k;
  throw Error(ErrorCode::UnknownKind, "unknown toy kind '" + std::string(name) + "'");
}

/// A batch of instances: enc = image (n, 1, 2H, 2W), dec = maxpool_x2(image).
struct ToyData {
  Tensor4<float> enc;
  Tensor4<float> dec;
  const Tensor4<float>& image() const { return enc; }
  std::size_t size() const { return enc.n(); }
};

struct ToyDatasets {
  ToyData train;
  ToyData test;
};

inline ToyData make_toy_data(Tensor4<float> images) {
  Tensor4<float> dec = maxpool_x2(images);
  return {std::move(images), std::move(dec)};
}

/// Binary stripes of the given period, on for the first floor(period/2) pixels of
/// each cycle.
inline Tensor4<float> stripe_image(std::size_t size, std::size_t period, bool vertical, std::size_t phase) {
  Tensor4<float> img(1, 1, size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const std::size_t t = (vertical ? x : y) + phase;
      img(0, 0, y, x) = t % period < period / 2 ? 1.0f : 0.0f;
    }
  return img;
}

inline Tensor4<float> checker_image(std::size_t size, std::size_t cell, std::size_t phase_y, std::size_t phase_x) {
  Tensor4<float> img(1, 1, size, size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x)
      img(0, 0, y, x) = ((y + phase_y) / cell + (x + phase_x) / cell) % 2 ? 1.0f : 0.0f;
  return img;
}

namespace detail {

// Three stripe images (period 2-6, random phase and axis) per checkerboard
// (cell 1-3), on average.
inline Tensor4<float> random_pattern_batch(std::size_t n, std::size_t size, SplitMix64& rng) {
  Tensor4<float> batch(n, 1, size, size);
  for (std::size_t b = 0; b < n; ++b) {
    Tensor4<float> img;
    if (rng.below(4) < 3) {
      const std::size_t period = 2 + rng.below(5);
      const bool vertical = rng.below(2) == 0;
      img = stripe_image(size, period, vertical, rng.below(period));
    } else {
      const std::size_t cell = 1 + rng.below(3);
      const std::size_t py = rng.below(2 * cell), px = rng.below(2 * cell);
      img = checker_image(size, cell, py, px);
    }
    std::copy(img.data().begin(), img.data().end(), batch.plane(b, 0));
  }
  return batch;
}

}  // namespace detail

/// Deterministic in seed; train and test draw from separate child streams.
inline ToyDatasets make_toy_dataset(std::uint64_t seed, std::size_t n_train, std::size_t n_test, std::size_t size) {
  FADE_CHECK(size >= 8 && size % 2 == 0, ErrorCode::BadSize, "image size must be even and >= 8, got " + std::to_string(size));
  FADE_CHECK(n_train >= 1 && n_test >= 1, ErrorCode::BadSize, "need at least one train and one test image");
  SplitMix64 root(seed);
  SplitMix64 train_rng = root.fork(1);
  SplitMix64 test_rng = root.fork(2);
  return {make_toy_data(detail::random_pattern_batch(n_train, size, train_rng)),
          make_toy_data(detail::random_pattern_batch(n_test, size, test_rng))};
}

struct ToyConfig {
  std::size_t n_train = 32;
  std::size_t n_test = 32;
  std::size_t size = 16;
  std::size_t K = 5;
  std::size_t h = 3;
  std::size_t d = 8;
};

struct TrainReport {
  ToyKind kind = ToyKind::Bilinear;
  std::vector<double> epoch_mse;  // training MSE of the forward pass each step used
  double final_train_mse = 0.0;
  double final_test_mse = 0.0;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double lr = 0.0;
};

inline double mse(const Tensor4<float>& y, const Tensor4<float>& target) {
  FADE_CHECK(y.shape() == target.shape(), ErrorCode::ShapeMismatch, "mse: " + y.shape().str() + " vs " + target.shape().str());
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = static_cast<double>(y.data()[i]) - static_cast<double>(target.data()[i]);
    s += e * e;
  }
  return s / static_cast<double>(y.size());
}

/// d(mean sq err)/dy.
inline Tensor4<float> mse_grad(const Tensor4<float>& y, const Tensor4<float>& target) {
  Tensor4<float> g(y.shape());
  const float scale = 2.0f / static_cast<float>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) g.data()[i] = scale * (y.data()[i] - target.data()[i]);
  return g;
}

namespace detail {

class ToyArm {
 public:
  ToyArm(ToyKind kind, const ToyConfig& cfg, SplitMix64& rng) : kind_(kind) {
    switch (kind) {
      case ToyKind::Bilinear: break;
      case ToyKind::Carafe: single_ = SingleSourceKernelParams<float>::carafe(1, rng, cfg.K, cfg.d, cfg.h); break;
      case ToyKind::EncoderOnly:
        single_ = SingleSourceKernelParams<float>::encoder_only(1, rng, cfg.K, cfg.d, cfg.h);
        break;
      case ToyKind::FadeNoGate: fade_ = FadeParams<float>::init(1, rng, FusionMode::None, cfg.h, cfg.K, cfg.d); break;
      case ToyKind::FadeSkip: fade_ = FadeParams<float>::init(1, rng, FusionMode::Skipping, cfg.h, cfg.K, cfg.d); break;
      case ToyKind::FadeFull: fade_ = FadeParams<float>::init(1, rng, FusionMode::Gating, cfg.h, cfg.K, cfg.d); break;
    }
  }

  Tensor4<float> forward(const ToyData& d) const {
    switch (kind_) {
      case ToyKind::Bilinear: return bilinear_x2(d.dec);
      case ToyKind::Carafe: return carafe_forward(d.dec, single_);
      case ToyKind::EncoderOnly: return encoder_only_forward(d.enc, d.dec, single_);
      default: return fade_forward(d.enc, d.dec, fade_);
    }
  }

  /// One full-batch SGD step; returns the MSE of the forward pass it used.
  double step(const ToyData& d, double lr) {
    switch (kind_) {
      case ToyKind::Bilinear: return mse(forward(d), d.image());
      case ToyKind::Carafe: {
        const auto s = carafe_forward_saved(d.dec, single_);
        auto g = carafe_backward(d.dec, single_, s, mse_grad(s.output, d.image()));
        Sgd<SingleSourceKernelParams<float>>(lr).step(single_, g.params);
        return mse(s.output, d.image());
      }
      case ToyKind::EncoderOnly: {
        const auto s = encoder_only_forward_saved(d.enc, d.dec, single_);
        auto g = encoder_only_backward(d.enc, d.dec, single_, s, mse_grad(s.output, d.image()));
        Sgd<SingleSourceKernelParams<float>>(lr).step(single_, g.params);
        return mse(s.output, d.image());
      }
      default: {
        const auto s = fade_forward_saved(d.enc, d.dec, fade_);
        auto g = fade_backward(d.enc, d.dec, fade_, s, mse_grad(s.output, d.image()));
        Sgd<FadeParams<float>>(lr).step(fade_, g.params);
        return mse(s.output, d.image());
      }
    }
  }

 private:
  ToyKind kind_;
  SingleSourceKernelParams<float> single_;
  FadeParams<float> fade_;
};

}  // namespace detail

/// Trains one arm on make_toy_dataset(seed, ...). Parameters come from a stream
/// independent of the data, so every kind sees identical images for a seed.
/// epochs = 0 evaluates the initialization.
inline TrainReport train_toy(ToyKind kind, std::size_t epochs, double lr, std::uint64_t seed, const ToyConfig& cfg = {}) {
  FADE_CHECK(lr > 0, ErrorCode::InvalidArgument, "learning rate must be positive");
  const ToyDatasets data = make_toy_dataset(seed, cfg.n_train, cfg.n_test, cfg.size);
  SplitMix64 param_rng = SplitMix64(seed).fork(3);
  detail::ToyArm arm(kind, cfg, param_rng);
  TrainReport r;
  r.kind = kind;
  r.seed = seed;
  r.epochs = epochs;
  r.lr = lr;
  r.epoch_mse.reserve(epochs);
  for (std::size_t e = 0; e < epochs; ++e) r.epoch_mse.push_back(arm.step(data.train, lr));
  r.final_train_mse = mse(arm.forward(data.train), data.train.image());
  r.final_test_mse = mse(arm.forward(data.test), data.test.image());
  return r;
}

inline TrainReport train_toy(std::string_view kind, std::size_t epochs, double lr, std::uint64_t seed,
                             const ToyConfig& cfg = {}) {
  return train_toy(toy_kind_from_name(kind), epochs, lr, seed, cfg);
}

inline constexpr std::size_t kMinAblationEpochs = 50;

/// All six kinds on shared data and seed.
inline std::vector<TrainReport> ablation_suite(std::uint64_t seed, std::size_t epochs = 200, double lr = 0.05,
                                               const ToyConfig& cfg = {}) {
  FADE_CHECK(epochs >= kMinAblationEpochs, ErrorCode::InvalidArgument,
             "ablation budget must be at least " + std::to_string(kMinAblationEpochs) + " epochs");
  std::vector<TrainReport> out;
  for (ToyKind k : kAllToyKinds) out.push_back(train_toy(k, epochs, lr, seed, cfg));
  return out;
}

inline std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline constexpr std::string_view kAblationCsvHeader = "kind,final_train_mse,final_test_mse,epochs,lr,seed";

inline void write_ablation_csv(std::ostream& os, const std::vector<TrainReport>& reports) {
  os << kAblationCsvHeader << '\n';
  for (const auto& r : reports)
    os << toy_kind_name(r.kind) << ',' << format_real(r.final_train_mse) << ',' << format_real(r.final_test_mse) << ','
       << r.epochs << ',' << format_real(r.lr) << ',' << r.seed << '\n';
}

inline std::string ablation_csv(const std::vector<TrainReport>& reports) {
  std::ostringstream os;
  write_ablation_csv(os, reports);
  return os.str();
}

}  // namespace fade
