#pragma once

#include <stdexcept>
#include <string>

namespace dircr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DIRCR_DEFINE_ERROR(Name)          \
  class Name : public Error {             \
   public:                                \
    explicit Name(const std::string& msg) \
        : Error(#Name ": " + msg) {}      \
  }

DIRCR_DEFINE_ERROR(ShapeMismatch);
DIRCR_DEFINE_ERROR(IndexOutOfRange);
DIRCR_DEFINE_ERROR(InconsistentPrefix);
DIRCR_DEFINE_ERROR(RangeViolation);
DIRCR_DEFINE_ERROR(GenerationExhausted);
DIRCR_DEFINE_ERROR(FormatError);
DIRCR_DEFINE_ERROR(TruncatedFile);
DIRCR_DEFINE_ERROR(DegenerateInput);
DIRCR_DEFINE_ERROR(NonFiniteLoss);
DIRCR_DEFINE_ERROR(EmptyDataset);
DIRCR_DEFINE_ERROR(VersionMismatch);
DIRCR_DEFINE_ERROR(CorruptFile);
DIRCR_DEFINE_ERROR(ConfigError);
DIRCR_DEFINE_ERROR(IoError);

#undef DIRCR_DEFINE_ERROR

}  // namespace dircr
