#pragma once

#include <stdexcept>
#include <string>

namespace fade {

enum class ErrorCode {
  ChannelMismatch,
  NonIntegerOutputShape,
  OddSpatialDims,
  ShapeMismatch,
  UnsupportedWindow,
  UnnormalizedKernels,
  BadMagic,
  TruncatedFile,
  NonFiniteData,
  IoError,
  UnknownOp,
  UnknownKind,
  NonFiniteGradient,
  BadSize,
  InvalidArgument,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::NonIntegerOutputShape: return "NonIntegerOutputShape";
    case ErrorCode::OddSpatialDims: return "OddSpatialDims";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnsupportedWindow: return "UnsupportedWindow";
    case ErrorCode::UnnormalizedKernels: return "UnnormalizedKernels";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::NonFiniteData: return "NonFiniteData";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UnknownOp: return "UnknownOp";
    case ErrorCode::UnknownKind: return "UnknownKind";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::BadSize: return "BadSize";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define FADE_CHECK(cond, code, msg)          \
  do {                                       \
    if (!(cond)) throw ::fade::Error(code, msg); \
  } while (0)

}  // namespace fade
