#pragma once

#include <stdexcept>
#include <string>

namespace xbld {

/// Base for all library errors so callers can catch one type at the CLI edge.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Array / image shape disagreements.
struct ShapeError : Error {
  using Error::Error;
};

/// Invalid argument values (sizes, ranges, unknown names, bad configs).
struct ValueError : Error {
  using Error::Error;
};

/// Loss or gradient became non-finite.
struct NumericError : Error {
  using Error::Error;
};

/// Operation requires a mask with at least one set pixel.
struct EmptyMaskError : Error {
  using Error::Error;
};

/// File-system and codec failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace xbld
