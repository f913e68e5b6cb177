#pragma once

#include <stdexcept>
#include <string>

namespace flowcf {

// Base class for all library errors. Subclasses exist so callers can
// distinguish bad shapes from bad values from bad files.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape / dimension disagreements. Message names the offending op.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Domain violations: non-finite values, out-of-range labels, bad parameters.
class ValueError : public Error {
 public:
  explicit ValueError(const std::string& msg) : Error(msg) {}
};

// On-disk format violations: bad magic, truncation, manifest mismatches.
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// Filesystem-level failures (open/read/write).
class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace flowcf
