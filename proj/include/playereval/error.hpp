#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace playereval {

enum class ErrorKind {
  InvalidArgument,
  EmptyConditioningSet,
  EmptyData,
  SingularSystem,
  NonFinite,
  DegeneratePlayer,
  InsufficientPlayerData,
  FluctuationDiverged,
  DegenerateEif,
  DegenerateSe,
  NonDiscreteDgp,
  InvalidDgp,
  MissingColumn,
  NonBinaryOutcome,
  UnparseableValue,
  Io,
  Config,
};

std::string_view to_string(ErrorKind kind);

/// Every library failure is reported through this exception; `kind()` is the
/// machine-readable tag that the CLI writes into its error document.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace playereval
