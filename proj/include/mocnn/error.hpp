#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mocnn {

enum class Errc {
  AngleCountMismatch,
  BehindCamera,
  UnreachableForegroundFraction,
  TooFewSamples,
  BadDimensions,
  EmptySplit,
  ShapeMismatch,
  DegenerateMask,
  BadLabel,
  EpochOutOfRange,
  FormatError,
  CheckpointMismatch,
  InsufficientSamples,
  NonFinite,
  InvalidArgument,
  Io,
};

constexpr std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::AngleCountMismatch: return "AngleCountMismatch";
    case Errc::BehindCamera: return "BehindCamera";
    case Errc::UnreachableForegroundFraction: return "UnreachableForegroundFraction";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::BadDimensions: return "BadDimensions";
    case Errc::EmptySplit: return "EmptySplit";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::DegenerateMask: return "DegenerateMask";
    case Errc::BadLabel: return "BadLabel";
    case Errc::EpochOutOfRange: return "EpochOutOfRange";
    case Errc::FormatError: return "FormatError";
    case Errc::CheckpointMismatch: return "CheckpointMismatch";
    case Errc::InsufficientSamples: return "InsufficientSamples";
    case Errc::NonFinite: return "NonFinite";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace mocnn
