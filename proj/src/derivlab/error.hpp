#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace derivlab {

enum class ErrorKind {
  Configuration,
  Shape,
  Axis,
  Numerical,
  EmptyBatch,
  Specification,
  Capability,
  Domain,
  Stability,
  Boundary,
  Divergence,
  Schema,
  Io,
  Runtime,
};

std::string_view to_string(ErrorKind kind);

// Single exception type for the library. `index` carries the offending
// batch row, step, or stage where one exists.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message,
        std::optional<std::int64_t> index = std::nullopt);

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::int64_t> index() const noexcept { return index_; }

 private:
  ErrorKind kind_;
  std::optional<std::int64_t> index_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& message,
                       std::optional<std::int64_t> index = std::nullopt);

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace derivlab
