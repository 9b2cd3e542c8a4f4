#pragma once

#include <stdexcept>
#include <string>

namespace drscreen {

/// Base of every error raised by the toolkit. `kind()` is a stable short tag
/// used in CLI diagnostics and HTTP error bodies.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define DRSCREEN_DEFINE_ERROR(Name, tag)                                 \
  class Name : public Error {                                            \
   public:                                                               \
    explicit Name(const std::string& what) : Error(tag, what) {}         \
  };

DRSCREEN_DEFINE_ERROR(RangeError, "range")
DRSCREEN_DEFINE_ERROR(DecodeError, "decode")
DRSCREEN_DEFINE_ERROR(BoundsError, "bounds")
DRSCREEN_DEFINE_ERROR(ShapeError, "shape")
DRSCREEN_DEFINE_ERROR(ParameterError, "parameter")
DRSCREEN_DEFINE_ERROR(ConfigError, "config")
DRSCREEN_DEFINE_ERROR(DataError, "data")
DRSCREEN_DEFINE_ERROR(NumericError, "numeric")
DRSCREEN_DEFINE_ERROR(FormatError, "format")
DRSCREEN_DEFINE_ERROR(UniquenessError, "uniqueness")
DRSCREEN_DEFINE_ERROR(UndefinedCurveError, "undefined-curve")
DRSCREEN_DEFINE_ERROR(NotFoundError, "not-found")
DRSCREEN_DEFINE_ERROR(ClientError, "client")
DRSCREEN_DEFINE_ERROR(UnavailableError, "unavailable")
DRSCREEN_DEFINE_ERROR(IoError, "io")

#undef DRSCREEN_DEFINE_ERROR

}  // namespace drscreen
