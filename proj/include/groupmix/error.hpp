#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace groupmix {

enum class ErrorKind {
  shape,
  index,
  empty_batch,
  degenerate_weights,
  numeric,
  config,
  data,
  weight,
  empty_buffer,
  unsupported,
  precondition,
  annotation,
  io,
};

std::string_view to_string(ErrorKind kind);

// Coarse category used by the command line: config, data, numeric or io.
std::string_view category(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace groupmix
