#pragma once

#include <stdexcept>
#include <string>

namespace uav {

enum class ErrorCode {
  InvalidTree,
  Parse,
  DuplicateId,
  NonFiniteAttribute,
  UnknownId,
  UnexpectedKey,
  TruncatedSequence,
  UnknownValue,
  PadTooSmall,
  DimensionMismatch,
  EmptyMask,
  NonFiniteLoss,
  MagicMismatch,
  VersionMismatch,
  HashMismatch,
  Truncation,
  ChecksumMismatch,
  RecallUnattainable,
  DegenerateDataset,
  NoPropellers,
  Config,
  Io,
};

const char* to_string(ErrorCode code);

// Single exception type for the library; the code carries the category the
// command-line front end maps onto exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace uav
