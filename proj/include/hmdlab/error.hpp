#pragma once

#include <stdexcept>
#include <string>

namespace hmdlab {

/// Category of a failed operation. Each category maps to one family of
/// contract violations so callers (and the CLI) can react without string
/// matching.
enum class ErrorKind {
  kParse,
  kProfile,
  kSize,
  kDegenerateInput,
  kGrouping,
  kConfiguration,
  kPrecondition,
  kDivergence,
  kFeatureMismatch,
  kUnsupported,
  kEmptyEvaluation,
  kOracle,
  kShape,
  kRange,
  kInvariant,
  kDomain,
  kMapping,
  kIo,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace hmdlab
