#pragma once

#include <stdexcept>
#include <string>

namespace anchored {

/// Base of every error raised by the library. `kind()` is a stable short tag
/// the CLI prints and tests match on.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define ANCHORED_DEFINE_ERROR(Name, tag)                                  \
  class Name : public Error {                                             \
   public:                                                                \
    explicit Name(const std::string& what) : Error(tag, what) {}          \
  }

ANCHORED_DEFINE_ERROR(InvalidParameter, "invalid-parameter");
ANCHORED_DEFINE_ERROR(InvalidArgument, "invalid-argument");
ANCHORED_DEFINE_ERROR(CapacityError, "capacity");
ANCHORED_DEFINE_ERROR(NumericalError, "numerical");
ANCHORED_DEFINE_ERROR(InvalidConstraint, "invalid-constraint");
ANCHORED_DEFINE_ERROR(InvalidAnchorset, "invalid-anchorset");
ANCHORED_DEFINE_ERROR(DegenerateSample, "degenerate-sample");
ANCHORED_DEFINE_ERROR(ConditioningFailure, "conditioning-failure");
ANCHORED_DEFINE_ERROR(DegenerateWeights, "degenerate-weights");
ANCHORED_DEFINE_ERROR(ForwardFailure, "forward-failure");
ANCHORED_DEFINE_ERROR(SolverFailureRate, "solver-failure-rate");
ANCHORED_DEFINE_ERROR(ConfigError, "config");
ANCHORED_DEFINE_ERROR(IntegrityError, "integrity");
ANCHORED_DEFINE_ERROR(UsageError, "usage");

#undef ANCHORED_DEFINE_ERROR

}  // namespace anchored
