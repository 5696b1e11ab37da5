#pragma once

#include <stdexcept>
#include <string>

namespace nervetrace {

// Base of every domain failure. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define NERVETRACE_DEFINE_ERROR(Name)        \
  class Name : public Error {                \
   public:                                   \
    using Error::Error;                      \
  };

NERVETRACE_DEFINE_ERROR(IngestError)
NERVETRACE_DEFINE_ERROR(MetadataError)
NERVETRACE_DEFINE_ERROR(MaskError)
NERVETRACE_DEFINE_ERROR(GeometryError)
NERVETRACE_DEFINE_ERROR(SeedError)
NERVETRACE_DEFINE_ERROR(StateError)
NERVETRACE_DEFINE_ERROR(ParamError)
NERVETRACE_DEFINE_ERROR(EmptyVideoError)
NERVETRACE_DEFINE_ERROR(EmptyReportError)
NERVETRACE_DEFINE_ERROR(LockError)
NERVETRACE_DEFINE_ERROR(NotFoundError)
NERVETRACE_DEFINE_ERROR(FormatError)
NERVETRACE_DEFINE_ERROR(ReplayError)
NERVETRACE_DEFINE_ERROR(SplitError)
NERVETRACE_DEFINE_ERROR(TimeoutError)

#undef NERVETRACE_DEFINE_ERROR

}  // namespace nervetrace
