#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hil {

enum class ErrorCode {
  ZeroVector,
  DimensionMismatch,
  ParseError,
  InvalidSpec,
  UnknownLabel,
  EmptyBank,
  EmptyPool,
  NonFinite,
  NoClusters,
  StaleLabels,
  NoRelevant,
  MismatchedInstances,
  NoPairs,
  Io,
  MissingCheckpoint,
  InvalidConfig,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above so that
// callers (the CLI in particular) can map it to an exit status and message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hil
