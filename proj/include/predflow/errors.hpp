#pragma once

#include <stdexcept>
#include <string>

namespace predflow {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PREDFLOW_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

PREDFLOW_DEFINE_ERROR(DimensionMismatch);
PREDFLOW_DEFINE_ERROR(NotPositiveDefinite);
PREDFLOW_DEFINE_ERROR(SingularScale);
PREDFLOW_DEFINE_ERROR(DegenerateData);
PREDFLOW_DEFINE_ERROR(ModelNotLinear);
PREDFLOW_DEFINE_ERROR(Diverged);
PREDFLOW_DEFINE_ERROR(IoError);
PREDFLOW_DEFINE_ERROR(BadFormat);
PREDFLOW_DEFINE_ERROR(ConfigInvalid);

#undef PREDFLOW_DEFINE_ERROR

// Throws DimensionMismatch with a "<what>: expected a, got b" message.
void require_dim(long expected, long actual, const char* what);

}  // namespace predflow
