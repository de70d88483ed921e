#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace bihl {

// Runtime failure carrying a stable machine-readable code ("oob",
// "malformed", "scale-too-large", ...) alongside the human-readable message.
// Callers that need to branch on the failure kind should use code(), not the
// message text.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& detail)
      : std::runtime_error(code + ": " + detail), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

}  // namespace bihl
