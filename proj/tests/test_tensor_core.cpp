#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "fade/ops.hpp"
#include "fade/tensor.hpp"
#include "fade/tensor_io.hpp"

using namespace fade;

namespace {

template <Real T>
Tensor4<T> from_list(Shape4 s, std::initializer_list<T> v) {
  return Tensor4<T>(s, std::vector<T>(v));
}

// Six nested loops over the zero-padded input.
template <Real T>
Tensor4<T> conv_reference(const Tensor4<T>& in, const ConvWeights<T>& w, std::size_t stride, Padding pad) {
  const std::size_t oh = (in.h() + pad.top + pad.bottom - w.k_h()) / stride + 1;
  const std::size_t ow = (in.w() + pad.left + pad.right - w.k_w()) / stride + 1;
  Tensor4<T> out(in.n(), w.c_out(), oh, ow);
  for (std::size_t b = 0; b < in.n(); ++b)
    for (std::size_t co = 0; co < w.c_out(); ++co)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          T acc = 0;
          for (std::size_t ci = 0; ci < in.c(); ++ci)
            for (std::size_t u = 0; u < w.k_h(); ++u)
              for (std::size_t v = 0; v < w.k_w(); ++v) {
                const auto iy = static_cast<std::ptrdiff_t>(y * stride + u) - static_cast<std::ptrdiff_t>(pad.top);
                const auto ix = static_cast<std::ptrdiff_t>(x * stride + v) - static_cast<std::ptrdiff_t>(pad.left);
                if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(in.h()) ||
                    ix >= static_cast<std::ptrdiff_t>(in.w()))
                  continue;
                acc += w.kernel(co, ci, u, v) * in(b, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
          out(b, co, y, x) = acc + (w.bias ? (*w.bias)[co] : T(0));
        }
  return out;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("fade_test_" + name)).string();
}

}  // namespace

TEST(Shape, NumelAndIndexLayout) {
  Tensor4<float> t(2, 3, 4, 5);
  EXPECT_EQ(t.size(), 120u);
  EXPECT_EQ(t.index(1, 2, 3, 4), ((1u * 3 + 2) * 4 + 3) * 5 + 4);
  EXPECT_THROW(Tensor4<float>(Shape4{1, 1, 2, 2}, std::vector<float>(3)), Error);
}

TEST(SplitMix64, KnownSequenceAndDeterminism) {
  // Reference values for seed 0 from the published SplitMix64 generator.
  SplitMix64 rng(0);
  EXPECT_EQ(rng.next(), 0xE220A8397B1DCDAFULL);
  EXPECT_EQ(rng.next(), 0x6E789E6AA1B965F4ULL);
  SplitMix64 a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  SplitMix64 c(7);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Conv2d, OnesKernelCountsWindow) {
  const Tensor4<float> in(1, 1, 3, 3, 1.0f);
  ConvWeights<float> w(1, 1, 3, 3, false);
  w.kernel.fill(1.0f);
  const auto out = conv2d(in, w, 1, Padding::uniform(1));
  EXPECT_EQ(out, from_list<float>({1, 1, 3, 3}, {4, 6, 4, 6, 9, 6, 4, 6, 4}));
}

TEST(Conv2d, OneHotCenterIsIdentity) {
  SplitMix64 rng(1);
  const auto in = random_tensor<float>({2, 3, 5, 4}, rng);
  ConvWeights<float> w(3, 3, 3, 3, false);
  for (std::size_t c = 0; c < 3; ++c) w.kernel(c, c, 1, 1) = 1.0f;
  EXPECT_EQ(conv2d(in, w, 1, Padding::uniform(1)), in);
}

TEST(Conv2d, StridedAsymmetricPaddingMatchesNestedLoops) {
  SplitMix64 rng(2);
  // Height 7 + 1 - 3 is odd, so stride 2 does not tile it.
  const auto odd = random_tensor<float>({2, 5, 7, 6}, rng);
  const auto w = random_conv<float>(4, 5, 3, 3, true, rng);
  EXPECT_THROW(
      {
        try {
          conv2d(odd, w, 2, Padding{1, 0, 1, 0});
        } catch (const Error& e) {
          EXPECT_EQ(e.code(), ErrorCode::NonIntegerOutputShape);
          throw;
        }
      },
      Error);
  const auto in = random_tensor<float>({2, 5, 8, 8}, rng);
  const auto out = conv2d(in, w, 2, Padding{1, 0, 1, 0});
  EXPECT_EQ(out.shape(), (Shape4{2, 4, 4, 4}));
  EXPECT_LE(max_abs_diff(out, conv_reference(in, w, 2, Padding{1, 0, 1, 0})), 1e-5f);
}

TEST(Conv2d, RandomTrialsMatchNestedLoops) {
  SplitMix64 rng(3);
  int ran = 0;
  for (int t = 0; t < 200 && ran < 20; ++t) {
    const std::size_t kh = 1 + rng.below(3), kw = 1 + rng.below(3), s = 1 + rng.below(2);
    const Padding pad{rng.below(3), rng.below(3), rng.below(3), rng.below(3)};
    const auto in = random_tensor<float>({1 + rng.below(2), 1 + rng.below(3), 1 + rng.below(8), 1 + rng.below(8)}, rng);
    const auto w = random_conv<float>(1 + rng.below(3), in.c(), kh, kw, rng.below(2) == 1, rng);
    Tensor4<float> out;
    try {
      out = conv2d(in, w, s, pad);
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::NonIntegerOutputShape);
      continue;
    }
    ++ran;
    EXPECT_LE(max_abs_diff(out, conv_reference(in, w, s, pad)), 1e-5f);
  }
  EXPECT_EQ(ran, 20);
}

TEST(Conv2d, PaddingWiderThanKernelStaysInBounds) {
  SplitMix64 rng(4);
  const auto in = random_tensor<double>({1, 2, 3, 3}, rng);
  const auto w = random_conv<double>(2, 2, 1, 1, true, rng);
  const Padding pad{3, 2, 0, 4};
  const auto out = conv2d(in, w, 1, pad);
  EXPECT_EQ(out.shape(), (Shape4{1, 2, 8, 7}));
  EXPECT_LE(max_abs_diff(out, conv_reference(in, w, 1, pad)), 1e-14);
}

TEST(Conv2d, LinearInInput) {
  SplitMix64 rng(5);
  const auto x = random_tensor<float>({2, 3, 6, 6}, rng), y = random_tensor<float>({2, 3, 6, 6}, rng);
  const auto w = random_conv<float>(2, 3, 3, 3, false, rng);
  const float a = 0.7f, b = -1.3f;
  Tensor4<float> mix(x.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = a * x.data()[i] + b * y.data()[i];
  const auto lhs = conv2d(mix, w, 1, Padding::uniform(1));
  const auto cx = conv2d(x, w, 1, Padding::uniform(1)), cy = conv2d(y, w, 1, Padding::uniform(1));
  for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs.data()[i], a * cx.data()[i] + b * cy.data()[i], 1e-5);
}

TEST(Conv2d, Errors) {
  const Tensor4<float> in(1, 2, 4, 4);
  EXPECT_THROW(conv2d(in, ConvWeights<float>(1, 3, 1, 1, false), 1, {}), Error);
  try {
    conv2d(in, ConvWeights<float>(1, 3, 1, 1, false), 1, {});
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ChannelMismatch);
  }
  try {
    conv2d(in, ConvWeights<float>(1, 2, 3, 3, false), 2, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonIntegerOutputShape);
  }
}

TEST(Conv2d, Deterministic) {
  SplitMix64 rng(6);
  const auto in = random_tensor<float>({2, 4, 7, 7}, rng);
  const auto w = random_conv<float>(3, 4, 3, 3, true, rng);
  EXPECT_EQ(conv2d(in, w, 1, Padding::uniform(1)), conv2d(in, w, 1, Padding::uniform(1)));
}

TEST(Pad2d, Examples) {
  const auto x = from_list<float>({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(pad2d(x, Padding{1, 0, 1, 0}), from_list<float>({1, 1, 3, 3}, {0, 0, 0, 0, 1, 2, 0, 3, 4}));
  EXPECT_EQ(pad2d(x, Padding{}), x);
  SplitMix64 rng(7);
  const auto r = random_tensor<double>({2, 3, 4, 5}, rng);
  const auto p = pad2d(r, Padding{1, 2, 0, 3});
  EXPECT_EQ(p.shape(), (Shape4{2, 3, 7, 8}));
  EXPECT_NEAR(sum(p), sum(r), 1e-12);
  EXPECT_EQ(crop2d(p, Padding{1, 2, 0, 3}), r);
}

TEST(NnInterpolate, Examples) {
  const auto x = from_list<float>({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(nn_interpolate_x2(x),
            from_list<float>({1, 1, 4, 4}, {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
  EXPECT_EQ(nn_interpolate_x2(Tensor4<float>(1, 2, 3, 3, 2.5f)), Tensor4<float>(1, 2, 6, 6, 2.5f));
  SplitMix64 rng(8);
  const auto r = random_tensor<float>({2, 2, 3, 4}, rng);
  const auto up = nn_interpolate_x2(r);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < 6; y += 2)
        for (std::size_t x2 = 0; x2 < 8; x2 += 2) {
          const float v = up(b, c, y, x2);
          EXPECT_EQ(up(b, c, y, x2 + 1), v);
          EXPECT_EQ(up(b, c, y + 1, x2), v);
          EXPECT_EQ(up(b, c, y + 1, x2 + 1), v);
        }
}

TEST(Bilinear, Examples) {
  EXPECT_EQ(bilinear_x2(Tensor4<float>(1, 1, 3, 4, 0.75f)), Tensor4<float>(1, 1, 6, 8, 0.75f));
  const auto y = bilinear_x2(from_list<double>({1, 1, 1, 2}, {0, 1}));
  EXPECT_EQ(y.shape(), (Shape4{1, 1, 2, 4}));
  const double expect[4] = {0, 0.25, 0.75, 1};
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_DOUBLE_EQ(y(0, 0, r, x), expect[x]);
  SplitMix64 rng(9);
  const auto in = random_tensor<double>({1, 2, 8, 8}, rng, 0.0, 1.0);
  const double m_in = sum(in) / static_cast<double>(in.size());
  const auto up = bilinear_x2(in);
  const double m_out = sum(up) / static_cast<double>(up.size());
  EXPECT_LE(std::abs(m_out - m_in), 0.05 * std::abs(m_in));
}

TEST(Maxpool, Examples) {
  EXPECT_EQ(maxpool_x2(from_list<float>({1, 1, 2, 2}, {1, 2, 3, 4})), from_list<float>({1, 1, 1, 1}, {4}));
  EXPECT_EQ(maxpool_x2(Tensor4<float>(1, 1, 4, 6, -1.5f)), Tensor4<float>(1, 1, 2, 3, -1.5f));
  SplitMix64 rng(10);
  const auto r = random_tensor<float>({2, 2, 6, 4}, rng);
  const auto p = maxpool_x2(r);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t y = 0; y < 3; ++y)
        for (std::size_t x = 0; x < 2; ++x)
          EXPECT_EQ(p(b, c, y, x), std::max({r(b, c, 2 * y, 2 * x), r(b, c, 2 * y, 2 * x + 1), r(b, c, 2 * y + 1, 2 * x),
                                             r(b, c, 2 * y + 1, 2 * x + 1)}));
  try {
    maxpool_x2(Tensor4<float>(1, 1, 3, 4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OddSpatialDims);
  }
  EXPECT_EQ(maxpool_x2(nn_interpolate_x2(r)), r);
}

TEST(Softmax, Examples) {
  const auto eq = softmax_channels(Tensor4<double>(1, 4, 2, 2, 3.0));
  for (double v : eq.data()) EXPECT_DOUBLE_EQ(v, 0.25);
  const auto two = softmax_channels(from_list<double>({1, 2, 1, 1}, {0.0, std::log(3.0)}));
  EXPECT_NEAR(two(0, 0, 0, 0), 0.25, 1e-15);
  EXPECT_NEAR(two(0, 1, 0, 0), 0.75, 1e-15);

  SplitMix64 rng(11);
  const auto x = random_tensor<float>({2, 9, 3, 4}, rng, -5, 5);
  Tensor4<float> shifted = x;
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t p = 0; p < 12; ++p) {
      const float c = static_cast<float>(rng.uniform(-20, 20));
      for (std::size_t ch = 0; ch < 9; ++ch) shifted.plane(b, ch)[p] += c;
    }
  const auto y = softmax_channels(x);
  EXPECT_LE(max_abs_diff(y, softmax_channels(shifted)), 1e-6f);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t p = 0; p < 12; ++p) {
      float s = 0;
      for (std::size_t ch = 0; ch < 9; ++ch) s += y.plane(b, ch)[p];
      EXPECT_NEAR(s, 1.0f, 1e-5f);
    }
}

TEST(Softmax, ExtremeLogitsStayFinite) {
  const auto y = softmax_channels(from_list<double>({1, 3, 1, 1}, {1000.0, -1000.0, 999.0}));
  EXPECT_TRUE(y.all_finite());
  EXPECT_NEAR(y(0, 0, 0, 0) + y(0, 2, 0, 0), 1.0, 1e-15);
}

TEST(Sigmoid, Examples) {
  EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
  EXPECT_NEAR(sigmoid(30.0), 1.0, 1e-9);
  EXPECT_NEAR(sigmoid(-30.0), 0.0, 1e-9);
  EXPECT_TRUE(std::isfinite(sigmoid(-1000.0)));
  SplitMix64 rng(12);
  const auto x = random_tensor<float>({1, 2, 5, 5}, rng, -8, 8);
  Tensor4<float> neg = x;
  for (auto& v : neg.data()) v = -v;
  const auto a = sigmoid_map(x), b = sigmoid_map(neg);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a.data()[i] + b.data()[i], 1.0f, 1e-6f);
    EXPECT_GT(a.data()[i], 0.0f);
    EXPECT_LT(a.data()[i], 1.0f);
  }
}

TEST(Rearrange, ShuffleAndInterleaveRoundTrip) {
  SplitMix64 rng(13);
  const auto x = random_tensor<float>({2, 8, 3, 2}, rng);
  const auto s = pixel_shuffle_x2(x);
  EXPECT_EQ(s.shape(), (Shape4{2, 2, 6, 4}));
  // Channel c*4 + dy*2 + dx lands at (2i+dy, 2j+dx) of channel c.
  EXPECT_EQ(s(1, 1, 3, 2), x(1, 1 * 4 + 1 * 2 + 0, 1, 1));
  EXPECT_EQ(pixel_unshuffle_x2(s), x);

  std::array<Tensor4<float>, 4> corners;
  for (auto& c : corners) c = random_tensor<float>({1, 2, 3, 3}, rng);
  const auto hi = interleave_x2(corners);
  EXPECT_EQ(hi(0, 1, 2 * 1 + 1, 2 * 2 + 0), corners[2](0, 1, 1, 2));
  const auto back = deinterleave_x2(hi);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(back[k], corners[k]);
}

TEST(Ften, RoundTripBitExact) {
  SplitMix64 rng(14);
  const auto f = random_tensor<float>({2, 3, 4, 5}, rng);
  const auto d = random_tensor<double>({1, 1, 3, 2}, rng);
  const std::string pf = temp_path("f.ften"), pd = temp_path("d.ften");
  write_tensor(pf, f);
  write_tensor(pd, d);
  EXPECT_EQ(std::get<Tensor4<float>>(read_tensor_any(pf)), f);
  EXPECT_EQ(read_tensor<double>(pd), d);
  EXPECT_EQ(std::filesystem::file_size(pf), 32u + 120u * 4u);
  // Header layout.
  const auto bytes = encode_tensor(f);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "FTEN");
  EXPECT_EQ(bytes[4], 1);  // version, little-endian
  EXPECT_EQ(bytes[8], 1);  // dtype f32
  EXPECT_EQ(bytes[12], 4);
  EXPECT_EQ(bytes[16], 2);
  std::filesystem::remove(pf);
  std::filesystem::remove(pd);
}

TEST(Ften, Errors) {
  auto code_of = [](const std::vector<char>& bytes) {
    try {
      decode_tensor(bytes);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  SplitMix64 rng(15);
  auto good = encode_tensor(random_tensor<float>({2, 3, 4, 5}, rng));
  auto bad = good;
  bad[1] = 'X';
  EXPECT_EQ(code_of(bad), ErrorCode::BadMagic);
  // Header says 2x3x4x5 (120 floats) but only 100 follow.
  auto trunc = good;
  trunc.resize(32 + 100 * 4);
  EXPECT_EQ(code_of(trunc), ErrorCode::TruncatedFile);
  EXPECT_EQ(code_of(std::vector<char>(good.begin(), good.begin() + 20)), ErrorCode::TruncatedFile);
  Tensor4<float> nan(1, 1, 1, 2);
  nan.data()[1] = std::nanf("");
  EXPECT_EQ(code_of(encode_tensor(nan)), ErrorCode::NonFiniteData);
  try {
    read_tensor_any(temp_path("does_not_exist.ften"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::IoError);
  }
}
