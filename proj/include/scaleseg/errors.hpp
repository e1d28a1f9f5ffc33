#ifndef SCALESEG_ERRORS_HPP_
#define SCALESEG_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace scaleseg {

// Bad shapes, out-of-range values, malformed configuration. Maps to exit 1.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Unreadable/unwritable files and malformed file payloads. Maps to exit 2.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace scaleseg

#endif  // SCALESEG_ERRORS_HPP_
