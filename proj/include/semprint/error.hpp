#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace semprint {

enum class ErrorCode {
  invalid_argument,
  parse_error,
  range_order,
  unknown_property,
  dangling_reference,
  conflicting_annotation,
  under_constrained,
  degenerate_element,
  ill_posed,
  solver_failure,
  category_mismatch,
  model_invalid,
  precondition,
  insufficient_data,
  print_complete,
  io_error,
};

/// Stable lowercase identifier for an error code, used in CLI diagnostics.
std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Iterative solve that did not reach the requested tolerance.
class SolverFailure : public Error {
 public:
  SolverFailure(const std::string& message, std::vector<double> residual_history)
      : Error(ErrorCode::solver_failure, message),
        residual_history_(std::move(residual_history)) {}

  const std::vector<double>& residual_history() const noexcept { return residual_history_; }

 private:
  std::vector<double> residual_history_;
};

}  // namespace semprint
