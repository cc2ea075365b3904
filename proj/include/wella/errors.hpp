#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace wella {

// Base class for all library errors. `code()` is a stable machine-readable
// identifier (e.g. "duplicate_module"); `what()` carries the human-readable
// message. Subsystems derive one type per distinguishable failure so callers
// can catch exactly what they can handle.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

// Filesystem-level failure (open/read/write).
class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io_error", message) {}
};

}  // namespace wella
