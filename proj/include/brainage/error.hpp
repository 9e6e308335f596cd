#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace brainage {

enum class ErrorKind {
  // nifti
  BadMagic,
  UnsupportedDatatype,
  Truncated,
  NonFinite,
  IoFailure,
  // preprocess
  EmptyInput,
  AllZeroVolume,
  DegenerateVolume,
  KTooLarge,
  TargetTooLarge,
  // augment
  BadAxis,
  BadConfig,
  // engine
  ShapeMismatch,
  BadProbability,
  EmptyBatch,
  NoGraph,
  MissingGradient,
  EpochOutOfRange,
  BadCheckpoint,
  // models
  BadSpec,
  WrongSliceCount,
  // pipeline
  EmptyManifest,
  EmptySplit,
  DivergedLoss,
  BadRange,
  BadManifest,
  // cli
  UsageError,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace brainage
