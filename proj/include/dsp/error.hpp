#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace dsp {

enum class Errc {
  InvalidTree,
  UnbalancedBrackets,
  EmptyNode,
  TokenOutsideNode,
  TrailingTokens,
  UnknownSymbol,
  InvalidInput,
  NotRecoverable,
  SpanOutOfBounds,
  OverlappingSpans,
  DuplicateSlotName,
  IndexOutOfRange,
  UnresolvedRef,
  LengthMismatch,
  EmptyBeam,
  AlignmentError,
  EmptyInput,
  OverMaxLen,
  ShapeMismatch,
  UncopiableToken,
  DivergedLoss,
  ParseError,
  ValidationError,
  IoError,
  ConfigError,
};

inline std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::InvalidTree: return "InvalidTree";
    case Errc::UnbalancedBrackets: return "UnbalancedBrackets";
    case Errc::EmptyNode: return "EmptyNode";
    case Errc::TokenOutsideNode: return "TokenOutsideNode";
    case Errc::TrailingTokens: return "TrailingTokens";
    case Errc::UnknownSymbol: return "UnknownSymbol";
    case Errc::InvalidInput: return "InvalidInput";
    case Errc::NotRecoverable: return "NotRecoverable";
    case Errc::SpanOutOfBounds: return "SpanOutOfBounds";
    case Errc::OverlappingSpans: return "OverlappingSpans";
    case Errc::DuplicateSlotName: return "DuplicateSlotName";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::UnresolvedRef: return "UnresolvedRef";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::EmptyBeam: return "EmptyBeam";
    case Errc::AlignmentError: return "AlignmentError";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::OverMaxLen: return "OverMaxLen";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::UncopiableToken: return "UncopiableToken";
    case Errc::DivergedLoss: return "DivergedLoss";
    case Errc::ParseError: return "ParseError";
    case Errc::ValidationError: return "ValidationError";
    case Errc::IoError: return "IoError";
    case Errc::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  Errc code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace dsp
