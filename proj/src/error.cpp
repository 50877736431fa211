#include "semprint/error.hpp"

namespace semprint {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::parse_error: return "parse_error";
    case ErrorCode::range_order: return "range_order";
    case ErrorCode::unknown_property: return "unknown_property";
    case ErrorCode::dangling_reference: return "dangling_reference";
    case ErrorCode::conflicting_annotation: return "conflicting_annotation";
    case ErrorCode::under_constrained: return "under_constrained";
    case ErrorCode::degenerate_element: return "degenerate_element";
    case ErrorCode::ill_posed: return "ill_posed";
    case ErrorCode::solver_failure: return "solver_failure";
    case ErrorCode::category_mismatch: return "category_mismatch";
    case ErrorCode::model_invalid: return "model_invalid";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::insufficient_data: return "insufficient_data";
    case ErrorCode::print_complete: return "print_complete";
    case ErrorCode::io_error: return "io_error";
  }
  return "unknown";
}

}  // namespace semprint
