#pragma once

#include <stdexcept>
#include <string>

namespace dsurf {

/// Base for all library errors. `kind()` is a stable machine-readable tag.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& m) : Error("config", m) {}
};

struct DataError : Error {
  explicit DataError(const std::string& m) : Error("data", m) {}
};

/// Non-finite loss or gradient during optimization.
struct TrainingFault : Error {
  explicit TrainingFault(const std::string& m) : Error("training", m) {}
};

/// Non-finite field output while rendering a ray.
struct RenderFault : Error {
  explicit RenderFault(const std::string& m) : Error("render", m) {}
};

/// A degenerate input for which a quantity is undefined (empty mask, ...).
struct DegenerateInput : Error {
  explicit DegenerateInput(const std::string& m) : Error("degenerate", m) {}
};

}  // namespace dsurf
