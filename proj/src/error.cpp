#include "smk/error.hpp"

namespace smk {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::InvalidSpec: return "invalid-spec";
    case ErrorKind::MalformedHeader: return "malformed-header";
    case ErrorKind::DimensionMismatch: return "dimension-mismatch";
    case ErrorKind::Io: return "io";
    case ErrorKind::ContractViolation: return "contract-violation";
    case ErrorKind::NumericalFailure: return "numerical-failure";
    case ErrorKind::MissingPair: return "missing-pair";
    case ErrorKind::EmptyReport: return "empty-report";
  }
  return "unknown";
}

}  // namespace smk
