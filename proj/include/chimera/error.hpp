#pragma once

#include <stdexcept>
#include <string>

namespace chimera {

// Base class for every error the library raises. Each subclass names one
// failure kind so callers (and the CLI exit-code mapping) can dispatch on type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define CHIMERA_DEFINE_ERROR(Name)     \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

CHIMERA_DEFINE_ERROR(ParseError);
CHIMERA_DEFINE_ERROR(ValidationError);
CHIMERA_DEFINE_ERROR(InsufficientAtoms);
CHIMERA_DEFINE_ERROR(UnknownAtom);
CHIMERA_DEFINE_ERROR(DimensionMismatch);
CHIMERA_DEFINE_ERROR(NonFiniteGradient);
CHIMERA_DEFINE_ERROR(NonFiniteLoss);
CHIMERA_DEFINE_ERROR(TooFewSamples);
CHIMERA_DEFINE_ERROR(NonConvergent);
CHIMERA_DEFINE_ERROR(GraderUnavailable);
CHIMERA_DEFINE_ERROR(MalformedVerdict);
CHIMERA_DEFINE_ERROR(MixedScale);
CHIMERA_DEFINE_ERROR(MalformedReport);
CHIMERA_DEFINE_ERROR(FormatError);
// Raised for bad user input on the command line or in config files (exit 2).
CHIMERA_DEFINE_ERROR(UsageError);

#undef CHIMERA_DEFINE_ERROR

}  // namespace chimera
