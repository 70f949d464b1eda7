#pragma once

#include <stdexcept>
#include <string>

namespace rssm {

// Errors thrown by the belief math when an input violates a contract.
// They all derive from std::runtime_error so callers can catch broadly.

struct ShapeMismatch : std::runtime_error {
  explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct DimMismatch : std::runtime_error {
  explicit DimMismatch(const std::string& what) : std::runtime_error(what) {}
};

struct NonPositiveDefinite : std::runtime_error {
  explicit NonPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};

struct NonPositiveVariance : std::runtime_error {
  explicit NonPositiveVariance(const std::string& what) : std::runtime_error(what) {}
};

struct NotScalarLoss : std::runtime_error {
  explicit NotScalarLoss(const std::string& what) : std::runtime_error(what) {}
};

struct TooShort : std::runtime_error {
  explicit TooShort(const std::string& what) : std::runtime_error(what) {}
};

struct Diverged : std::runtime_error {
  explicit Diverged(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct CheckpointMismatch : std::runtime_error {
  explicit CheckpointMismatch(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace rssm
