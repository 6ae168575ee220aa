#pragma once

#include <exception>
#include <string>

namespace mkfuse {

/// 1-based source location; line 0 means "no position".
struct SourcePos {
  int line = 0;
  int col = 0;
  bool valid() const { return line > 0; }
};

enum class ErrCode {
  Syntax,
  UnknownIdentifier,
  TypeMismatch,
  DuplicateName,
  UnresolvedCall,
  UnresolvedLabel,
  Recursion,
  BadBarrierId,
  MisalignedCount,
  DimensionMismatch,
  GridMismatch,
  ThreadBudgetExceeded,
  SharedMemoryOverflow,
  DoesNotFit,
  OutOfBounds,
  DivideByZero,
  BarrierDeadlock,
  BarrierOverflow,
  DivergentBarrier,
  NothingFeasible,
  IncompatibleFixedDims,
  InvalidArgument,
  Io,
};

const char* to_string(ErrCode code);

class Error : public std::exception {
 public:
  Error(ErrCode code, std::string message, SourcePos pos = {});

  ErrCode code() const { return code_; }
  const SourcePos& pos() const { return pos_; }
  const std::string& message() const { return message_; }
  const char* what() const noexcept override { return formatted_.c_str(); }

 private:
  ErrCode code_;
  std::string message_;
  SourcePos pos_;
  std::string formatted_;  // "[Code] line:col: message"
};

[[noreturn]] void fail(ErrCode code, std::string message, SourcePos pos = {});

}  // namespace mkfuse
