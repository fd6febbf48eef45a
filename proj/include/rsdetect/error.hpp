#pragma once

#include <stdexcept>
#include <string>

namespace rsdetect {

enum class ErrorKind {
  MissingData,
  ShapeError,
  ConfigError,
  DegenerateLabels,
  TrainingDiverged,
  DataError,
};

inline const char* to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::MissingData: return "MissingData";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::DegenerateLabels: return "DegenerateLabels";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::DataError: return "DataError";
  }
  return "Unknown";
}

// Single exception type for the library; callers switch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), message_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  // what() without the kind prefix
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

}  // namespace rsdetect
