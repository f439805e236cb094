#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xrdattn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DomainError : public Error { using Error::Error; };
class DegenerateInput : public Error { using Error::Error; };
class LengthError : public Error { using Error::Error; };
class ShapeError : public Error { using Error::Error; };
class DegenerateBatch : public Error { using Error::Error; };
class GraphError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class ArityError : public Error { using Error::Error; };
class VersionError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class WindowError : public Error { using Error::Error; };

/// Raised when an activation or loss stops being finite. Training fills in
/// the epoch/batch where it happened; -1 means "not inside a training loop".
class NonFiniteError : public Error {
 public:
  NonFiniteError(const std::string& what, long epoch = -1, long batch = -1)
      : Error(what), epoch_(epoch), batch_(batch) {}
  long epoch() const { return epoch_; }
  long batch() const { return batch_; }

 private:
  long epoch_;
  long batch_;
};

/// Malformed file content; carries the byte offset where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace xrdattn
