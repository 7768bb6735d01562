#pragma once

#include <stdexcept>
#include <string>

namespace nncsl {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParamError : std::invalid_argument {
  explicit ParamError(const std::string& msg) : std::invalid_argument(msg) {}
};

struct DomainError : std::domain_error {
  explicit DomainError(const std::string& msg) : std::domain_error(msg) {}
};

struct ProtocolError : std::runtime_error {
  explicit ProtocolError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IngestionError : std::runtime_error {
  explicit IngestionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct StateError : std::runtime_error {
  explicit StateError(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised when a training loss turns non-finite. Carries enough context to
// report the offending task/step from the CLI.
struct DivergenceError : std::runtime_error {
  int task = -1;
  long step = -1;
  explicit DivergenceError(const std::string& msg, int task_ = -1, long step_ = -1)
      : std::runtime_error(msg), task(task_), step(step_) {}
};

}  // namespace nncsl
