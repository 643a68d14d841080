#pragma once

#include <stdexcept>
#include <string>

namespace rbs {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define RBS_DECLARE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  };

RBS_DECLARE_ERROR(ShapeError)
RBS_DECLARE_ERROR(InvalidMaskError)
RBS_DECLARE_ERROR(NonFiniteError)
RBS_DECLARE_ERROR(InvalidSpecError)
RBS_DECLARE_ERROR(TerminalStateError)
RBS_DECLARE_ERROR(InvalidActionError)
RBS_DECLARE_ERROR(NoParentError)
RBS_DECLARE_ERROR(NonTerminalError)
RBS_DECLARE_ERROR(EnumerationCapError)
RBS_DECLARE_ERROR(UnreachableGoalError)
RBS_DECLARE_ERROR(InvalidTrajectoryError)
RBS_DECLARE_ERROR(EmptyBufferError)
RBS_DECLARE_ERROR(InvalidEvalError)
RBS_DECLARE_ERROR(DivisibilityError)
RBS_DECLARE_ERROR(CompositionError)
RBS_DECLARE_ERROR(IncompatibleCheckpointError)
RBS_DECLARE_ERROR(FormatError)

#undef RBS_DECLARE_ERROR

// Config errors carry the 1-based line they refer to (0 when not line-bound).
class ConfigError : public Error {
 public:
  ConfigError(int line, const std::string& what)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace rbs
