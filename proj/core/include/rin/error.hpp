#pragma once

#include <stdexcept>
#include <string>

namespace rin {

// Violated API precondition (bad argument combinations, non-scalar loss, ...).
struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Operands whose shapes cannot be combined. Message names both shapes.
struct ShapeError : ContractError {
  using ContractError::ContractError;
};

// Invalid model/run configuration (divisibility, ranges, missing keys).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed or truncated files (datasets, checkpoints, configs on disk).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Degenerate noise schedule state (gamma outside its valid range).
struct ScheduleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Runtime failures inside the training loop; message carries the step index.
struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rin
