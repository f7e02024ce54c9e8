#pragma once

// FTEN tensor files. Little-endian throughout:
//   bytes 0-3  magic "FTEN"
//   u32        version (1)
//   u32        dtype code (1 = f32, 2 = f64)
//   u32        ndim (4)
//   4 x u32    n, c, h, w
//   payload    n*c*h*w elements, row-major, no compression

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

#include "fade/error.hpp"
#include "fade/tensor.hpp"

namespace fade {

inline constexpr std::array<char, 4> kFtenMagic{'F', 'T', 'E', 'N'};
inline constexpr std::uint32_t kFtenVersion = 1;
inline constexpr std::size_t kFtenHeaderBytes = 4 + 4 * 7;

enum class DType : std::uint32_t { F32 = 1, F64 = 2 };

template <Real T>
constexpr DType dtype_of() {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8, "only f32/f64 tensors are serializable");
  return sizeof(T) == 4 ? DType::F32 : DType::F64;
}

namespace detail {

template <class U>
void put_le(std::vector<char>& buf, U value) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  auto bits = std::bit_cast<Bits>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const char* p) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    bits |= static_cast<Bits>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<U>(bits);
}

template <Real T>
Tensor4<T> decode_payload(const std::vector<char>& bytes, Shape4 shape) {
  Tensor4<T> t(shape);
  const char* p = bytes.data() + kFtenHeaderBytes;
  for (auto& v : t.data()) {
    v = get_le<T>(p);
    p += sizeof(T);
  }
  FADE_CHECK(t.all_finite(), ErrorCode::NonFiniteData, "tensor payload contains NaN or Inf");
  return t;
}

}  // namespace detail

using AnyTensor = std::variant<Tensor4<float>, Tensor4<double>>;

template <Real T>
std::vector<char> encode_tensor(const Tensor4<T>& t) {
  std::vector<char> buf(kFtenMagic.begin(), kFtenMagic.end());
  buf.reserve(kFtenHeaderBytes + t.size() * sizeof(T));
  detail::put_le(buf, kFtenVersion);
  detail::put_le(buf, static_cast<std::uint32_t>(dtype_of<T>()));
  detail::put_le(buf, std::uint32_t{4});
  for (std::size_t d : {t.n(), t.c(), t.h(), t.w()}) detail::put_le(buf, static_cast<std::uint32_t>(d));
  for (T v : t.data()) detail::put_le(buf, v);
  return buf;
}

inline AnyTensor decode_tensor(const std::vector<char>& bytes) {
  FADE_CHECK(bytes.size() >= 4 && std::memcmp(bytes.data(), kFtenMagic.data(), 4) == 0,
             ErrorCode::BadMagic, "missing FTEN magic");
  FADE_CHECK(bytes.size() >= kFtenHeaderBytes, ErrorCode::TruncatedFile, "header shorter than 32 bytes");
  const char* p = bytes.data() + 4;
  const auto version = detail::get_le<std::uint32_t>(p);
  const auto dtype = detail::get_le<std::uint32_t>(p + 4);
  const auto ndim = detail::get_le<std::uint32_t>(p + 8);
  FADE_CHECK(version == kFtenVersion, ErrorCode::BadMagic, "unsupported FTEN version " + std::to_string(version));
  FADE_CHECK(dtype == 1 || dtype == 2, ErrorCode::BadMagic, "unknown dtype code " + std::to_string(dtype));
  FADE_CHECK(ndim == 4, ErrorCode::BadMagic, "ndim must be 4, got " + std::to_string(ndim));
  Shape4 shape{detail::get_le<std::uint32_t>(p + 12), detail::get_le<std::uint32_t>(p + 16),
               detail::get_le<std::uint32_t>(p + 20), detail::get_le<std::uint32_t>(p + 24)};
  const std::size_t elem = dtype == 1 ? 4 : 8;
  const std::size_t need = kFtenHeaderBytes + shape.numel() * elem;
  FADE_CHECK(bytes.size() >= need, ErrorCode::TruncatedFile,
             "header declares " + shape.str() + " (" + std::to_string(shape.numel()) + " elements) but payload holds " +
                 std::to_string((bytes.size() - kFtenHeaderBytes) / elem));
  FADE_CHECK(bytes.size() == need, ErrorCode::InvalidArgument, "trailing bytes after FTEN payload");
  if (dtype == 1) return detail::decode_payload<float>(bytes, shape);
  return detail::decode_payload<double>(bytes, shape);
}

template <Real T>
void write_tensor(const std::string& path, const Tensor4<T>& t) {
  const auto buf = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  FADE_CHECK(out.good(), ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  FADE_CHECK(out.good(), ErrorCode::IoError, "write failed: " + path);
}

inline AnyTensor read_tensor_any(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  FADE_CHECK(in.good(), ErrorCode::IoError, "cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

/// Reads any FTEN file, converting to T when the stored dtype differs.
template <Real T>
Tensor4<T> read_tensor(const std::string& path) {
  return std::visit([](auto&& t) { return t.template cast<T>(); }, read_tensor_any(path));
}

}  // namespace fade
