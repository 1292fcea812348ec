#pragma once

#include <stdexcept>
#include <string>

namespace tiledet {

enum class Errc {
  UnsupportedFormat,
  CorruptFile,
  ZeroDimension,
  IoFailure,
  InvalidDimensions,
  IdealLowPassUnsupported,
  OutOfBounds,
  WrongChannelCount,
  PartitionMismatch,
  EmptySet,
  ImageTooSmall,
  ImageSmallerThanTile,
  DegenerateOutput,
  DimensionMismatch,
  IndivisibleDimensions,
  ShapeMismatch,
  EmptySequence,
  NonFiniteLoss,
  EmptyCorpus,
  InvalidArgument,
};

const char* errc_name(Errc code) noexcept;

// Every library failure is reported as an Error carrying a stable code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Raised by training when the objective stops being finite.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(long step, const std::string& what)
      : Error(Errc::NonFiniteLoss, what + " (step " + std::to_string(step) + ")"), step_(step) {}

  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace tiledet
