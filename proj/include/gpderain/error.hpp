#pragma once

#include <stdexcept>
#include <string>

namespace gpderain {

enum class ErrorKind {
  Shape,
  DegenerateVector,
  Numeric,
  IllConditioned,
  Parse,
  Format,
  Size,
  Ordering,
  Compatibility,
  Io,
  Config,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::DegenerateVector: return "degenerate-vector";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::IllConditioned: return "ill-conditioned";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Format: return "format";
    case ErrorKind::Size: return "size";
    case ErrorKind::Ordering: return "ordering";
    case ErrorKind::Compatibility: return "compatibility";
    case ErrorKind::Io: return "io";
    case ErrorKind::Config: return "config";
  }
  return "unknown";
}

/// Every failure raised by the library carries a kind so callers (the CLI in
/// particular) can map it onto an exit code without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind), detail_(what) {}

  ErrorKind kind() const noexcept { return kind_; }
  /// Message without the kind prefix, for re-wrapping with extra context.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

/// Raised when a symmetric positive-definite factorization fails.
class IllConditionedError : public Error {
 public:
  IllConditionedError(const std::string& what, double diagonal_min)
      : Error(ErrorKind::IllConditioned, what + " (diagonal min " + std::to_string(diagonal_min) + ")"),
        diagonal_min_(diagonal_min) {}
  IllConditionedError(const std::string& context, const IllConditionedError& inner)
      : Error(ErrorKind::IllConditioned, context + inner.detail()), diagonal_min_(inner.diagonal_min()) {}

  double diagonal_min() const noexcept { return diagonal_min_; }

 private:
  double diagonal_min_;
};

/// Malformed input file; `offset` is the byte position where parsing stopped.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::Parse, what + " at byte " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

}  // namespace gpderain
