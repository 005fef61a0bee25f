#pragma once

#include <stdexcept>
#include <string>

namespace yoda {

enum class ErrorCode {
  EmptyMask,
  EmptyInput,
  InvalidSlabWidth,
  IndexOutOfRange,
  DimMismatch,
  FormatError,
  InvalidParam,
  InvalidSpec,
  NumericallySingular,
  UnsupportedKind,
  TrainingDiverged,
  NoValidLesions,
  IoError,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Raised when the loss becomes non-finite; carries the optimizer step.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(long step, const std::string& what)
      : Error(ErrorCode::TrainingDiverged, what + " at step " + std::to_string(step)),
        step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace yoda
