#pragma once

#include <stdexcept>
#include <string>

namespace can {

// Base of every error thrown by the library. `kind()` is a stable,
// machine-readable tag used by the CLI's JSON error report.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& m) : Error("dimension_error", m) {}
};

class NumericError : public Error {
 public:
  NumericError(const std::string& m, long sample_index)
      : Error("numeric_error", m), sample_index_(sample_index) {}
  long sample_index() const noexcept { return sample_index_; }

 private:
  long sample_index_;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& m) : Error("domain_error", m) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& m) : Error("config_error", m) {}
};

class TrainingDiverged : public Error {
 public:
  explicit TrainingDiverged(const std::string& m)
      : Error("training_diverged", m) {}
};

class SetpointUnreachable : public Error {
 public:
  SetpointUnreachable(const std::string& m, double closest_fraction)
      : Error("setpoint_unreachable", m), closest_(closest_fraction) {}
  double closest_fraction() const noexcept { return closest_; }

 private:
  double closest_;
};

class NuggetError : public Error {
 public:
  NuggetError(const std::string& m, double suggested_nugget)
      : Error("nugget_error", m), suggested_(suggested_nugget) {}
  double suggested_nugget() const noexcept { return suggested_; }

 private:
  double suggested_;
};

class AlignmentError : public Error {
 public:
  explicit AlignmentError(const std::string& m) : Error("alignment_error", m) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& m) : Error("io_error", m) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& m) : Error("usage_error", m) {}
};

}  // namespace can
