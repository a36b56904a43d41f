#pragma once

#include <stdexcept>
#include <string>

namespace mrsn {

/// Numerical failure: a kernel Gram matrix stayed singular after jitter escalation.
class IllConditionedError : public std::runtime_error {
 public:
  explicit IllConditionedError(const std::string& what) : std::runtime_error(what) {}
};

/// Geometric degeneracy, e.g. coincident generator positions in a Voronoi partition.
class DegenerateConfigurationError : public std::runtime_error {
 public:
  explicit DegenerateConfigurationError(const std::string& what) : std::runtime_error(what) {}
};

/// An inner solver failed to converge; carries context assembled by the caller.
class SubproblemFailure : public std::runtime_error {
 public:
  explicit SubproblemFailure(const std::string& what) : std::runtime_error(what) {}
};

class InvalidArgument : public std::invalid_argument {
 public:
  explicit InvalidArgument(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace mrsn
