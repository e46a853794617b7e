#pragma once

#include <stdexcept>
#include <string>

namespace irb {

// Base for every error raised by the library. The CLI maps these to exit code 1
// and ConfigError to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define IRB_DEFINE_ERROR(Name)             \
  class Name : public Error {              \
   public:                                 \
    using Error::Error;                    \
  }

// geometry
IRB_DEFINE_ERROR(NonPositiveDepth);
IRB_DEFINE_ERROR(NotARotation);
IRB_DEFINE_ERROR(DegenerateConfiguration);
IRB_DEFINE_ERROR(LengthMismatch);
IRB_DEFINE_ERROR(InvalidIntrinsics);

// field / grad
IRB_DEFINE_ERROR(NonFiniteParameters);
IRB_DEFINE_ERROR(NonFiniteGradient);

// losses / correspondences
IRB_DEFINE_ERROR(NoConfidentMatches);
IRB_DEFINE_ERROR(BoundsViolation);
IRB_DEFINE_ERROR(InsufficientOverlap);

// pipeline / eval
IRB_DEFINE_ERROR(InitializationDiverged);
IRB_DEFINE_ERROR(ShapeMismatch);
IRB_DEFINE_ERROR(InvalidSpec);

// io
IRB_DEFINE_ERROR(IoError);
IRB_DEFINE_ERROR(ConfigError);

#undef IRB_DEFINE_ERROR

class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

}  // namespace irb
