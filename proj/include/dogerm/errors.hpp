#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace dogerm {

// Base class for all toolkit errors. `name()` is the stable identifier the
// CLI prints on failure; `what()` carries the context.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& message)
      : std::runtime_error(message), name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

// checkpoint container
struct IoError : Error {
  explicit IoError(const std::string& m) : Error("IoError", m) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& m) : Error("FormatError", m) {}
};
struct TruncationError : Error {
  explicit TruncationError(const std::string& m) : Error("TruncationError", m) {}
};
struct NonFiniteError : Error {
  explicit NonFiniteError(const std::string& m) : Error("NonFiniteError", m) {}
};

// vocabularies
struct VocabError : Error {
  explicit VocabError(const std::string& m) : Error("VocabError", m) {}
};

// merging
struct AmbiguousRuleError : Error {
  explicit AmbiguousRuleError(const std::string& m) : Error("AmbiguousRuleError", m) {}
};
struct ShapeMismatchError : Error {
  explicit ShapeMismatchError(const std::string& m) : Error("ShapeMismatchError", m) {}
};
struct AlignmentError : Error {
  explicit AlignmentError(const std::string& m) : Error("AlignmentError", m) {}
};
struct AssemblyError : Error {
  explicit AssemblyError(const std::string& m) : Error("AssemblyError", m) {}
};

// toy reward model
struct TokenRangeError : Error {
  explicit TokenRangeError(const std::string& m) : Error("TokenRangeError", m) {}
};
struct LengthError : Error {
  explicit LengthError(const std::string& m) : Error("LengthError", m) {}
};
struct EmptyBatchError : Error {
  explicit EmptyBatchError(const std::string& m) : Error("EmptyBatchError", m) {}
};
struct DivergenceError : Error {
  explicit DivergenceError(const std::string& m) : Error("DivergenceError", m) {}
};

// evaluation
struct RangeError : Error {
  explicit RangeError(const std::string& m) : Error("RangeError", m) {}
};

}  // namespace dogerm
