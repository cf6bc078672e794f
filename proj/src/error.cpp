#include "groupmix/error.hpp"

namespace groupmix {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::shape: return "shape";
    case ErrorKind::index: return "index";
    case ErrorKind::empty_batch: return "empty_batch";
    case ErrorKind::degenerate_weights: return "degenerate_weights";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::config: return "config";
    case ErrorKind::data: return "data";
    case ErrorKind::weight: return "weight";
    case ErrorKind::empty_buffer: return "empty_buffer";
    case ErrorKind::unsupported: return "unsupported";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::annotation: return "annotation";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

std::string_view category(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::numeric:
    case ErrorKind::degenerate_weights:
      return "numeric";
    case ErrorKind::config:
    case ErrorKind::precondition:
    case ErrorKind::weight:
      return "config";
    case ErrorKind::io:
      return "io";
    default:
      return "data";
  }
}

}  // namespace groupmix
