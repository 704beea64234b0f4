#include "shades/error.hpp"

namespace shades {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "InvalidInput";
    case ErrorKind::InvalidCamera: return "InvalidCamera";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InsufficientFrames: return "InsufficientFrames";
    case ErrorKind::DegenerateMask: return "DegenerateMask";
    case ErrorKind::DegeneratePrediction: return "DegeneratePrediction";
    case ErrorKind::PriorCacheMiss: return "PriorCacheMiss";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::CheckpointError: return "CheckpointError";
    case ErrorKind::MissingArtifacts: return "MissingArtifacts";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind),
      message_(message) {}

}  // namespace shades
