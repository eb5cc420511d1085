#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace bodyslam {

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidTemplate : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DegenerateGeometry : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Point at or behind the camera plane.
class BehindCamera : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class InitializationFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parse failures and schema/version mismatches of serialized files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite cost during optimization. Carries the cost trace up to the failure.
class Diverged : public std::runtime_error {
 public:
  Diverged(const std::string& what, std::vector<double> trace)
      : std::runtime_error(what), trace_(std::move(trace)) {}
  const std::vector<double>& trace() const { return trace_; }

 private:
  std::vector<double> trace_;
};

}  // namespace bodyslam
