#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace shades {

enum class ErrorKind {
  InvalidInput,
  InvalidCamera,
  InvalidConfig,
  InsufficientFrames,
  DegenerateMask,
  DegeneratePrediction,
  PriorCacheMiss,
  NonFiniteLoss,
  CheckpointError,
  MissingArtifacts,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Exception carrying a machine-readable kind. `what()` is "<Kind>: <message>".
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace shades
