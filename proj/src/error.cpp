#include "mkfuse/error.hpp"

namespace mkfuse {

const char* to_string(ErrCode code) {
  switch (code) {
    case ErrCode::Syntax: return "Syntax";
    case ErrCode::UnknownIdentifier: return "UnknownIdentifier";
    case ErrCode::TypeMismatch: return "TypeMismatch";
    case ErrCode::DuplicateName: return "DuplicateName";
    case ErrCode::UnresolvedCall: return "UnresolvedCall";
    case ErrCode::UnresolvedLabel: return "UnresolvedLabel";
    case ErrCode::Recursion: return "Recursion";
    case ErrCode::BadBarrierId: return "BadBarrierId";
    case ErrCode::MisalignedCount: return "MisalignedCount";
    case ErrCode::DimensionMismatch: return "DimensionMismatch";
    case ErrCode::GridMismatch: return "GridMismatch";
    case ErrCode::ThreadBudgetExceeded: return "ThreadBudgetExceeded";
    case ErrCode::SharedMemoryOverflow: return "SharedMemoryOverflow";
    case ErrCode::DoesNotFit: return "DoesNotFit";
    case ErrCode::OutOfBounds: return "OutOfBounds";
    case ErrCode::DivideByZero: return "DivideByZero";
    case ErrCode::BarrierDeadlock: return "BarrierDeadlock";
    case ErrCode::BarrierOverflow: return "BarrierOverflow";
    case ErrCode::DivergentBarrier: return "DivergentBarrier";
    case ErrCode::NothingFeasible: return "NothingFeasible";
    case ErrCode::IncompatibleFixedDims: return "IncompatibleFixedDims";
    case ErrCode::InvalidArgument: return "InvalidArgument";
    case ErrCode::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrCode code, std::string message, SourcePos pos)
    : code_(code), message_(std::move(message)), pos_(pos) {
  formatted_ = std::string("[") + to_string(code_) + "] ";
  if (pos_.valid()) {
    formatted_ += std::to_string(pos_.line) + ":" + std::to_string(pos_.col) + ": ";
  }
  formatted_ += message_;
}

void fail(ErrCode code, std::string message, SourcePos pos) {
  throw Error(code, std::move(message), pos);
}

}  // namespace mkfuse
