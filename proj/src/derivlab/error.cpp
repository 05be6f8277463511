#include "derivlab/error.hpp"

namespace derivlab {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Configuration: return "configuration error";
    case ErrorKind::Shape: return "shape error";
    case ErrorKind::Axis: return "axis error";
    case ErrorKind::Numerical: return "numerical error";
    case ErrorKind::EmptyBatch: return "empty batch";
    case ErrorKind::Specification: return "specification error";
    case ErrorKind::Capability: return "capability error";
    case ErrorKind::Domain: return "domain error";
    case ErrorKind::Stability: return "stability error";
    case ErrorKind::Boundary: return "boundary error";
    case ErrorKind::Divergence: return "divergence error";
    case ErrorKind::Schema: return "schema error";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::Runtime: return "runtime error";
  }
  return "error";
}

Error::Error(ErrorKind kind, const std::string& message, std::optional<std::int64_t> index)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message),
      kind_(kind),
      index_(index) {}

void fail(ErrorKind kind, const std::string& message, std::optional<std::int64_t> index) {
  throw Error(kind, message, index);
}

}  // namespace derivlab
