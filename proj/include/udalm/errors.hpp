#ifndef UDALM_ERRORS_HPP
#define UDALM_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace udalm {

// Error categories map to CLI exit codes: usage=1, data=2, numeric=3.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or graph-construction violations; carries the offending node id
// when raised during graph building.
struct ShapeError : std::invalid_argument {
  explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

}  // namespace udalm

#endif
