#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fmri3d {

enum class ErrorKind {
  ShapeMismatch,
  RankError,
  IndexOutOfRange,
  UnknownInput,
  NonScalarLoss,
  NonDeterministicFunction,
  DegenerateBatch,
  InvalidSpec,
  MissingModality,
  BadMagic,
  UnsupportedDatatype,
  TruncatedFile,
  DegenerateAxis,
  EmptyInput,
  NonFiniteLoss,
  Io,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::RankError: return "RankError";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::UnknownInput: return "UnknownInput";
    case ErrorKind::NonScalarLoss: return "NonScalarLoss";
    case ErrorKind::NonDeterministicFunction: return "NonDeterministicFunction";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::MissingModality: return "MissingModality";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::DegenerateAxis: return "DegenerateAxis";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

/// Single exception type for the engine; `kind()` identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace fmri3d
