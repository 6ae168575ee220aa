#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mkfuse/error.hpp"

namespace mkfuse {

enum class Tok : uint8_t {
  End,
  Ident,
  IntLit,
  FloatLit,
  Annotation,  // "//@ ..." comment body (without the marker)
  // keywords
  KwKernel, KwDims, KwFixed, KwInt, KwFloat, KwVoid, KwShared,
  KwIf, KwElse, KwFor, KwWhile, KwSyncthreads, KwBarSync,
  KwAtomicAdd, KwGoto, KwReturn,
  // punctuation
  LParen, RParen, LBrace, RBrace, LBracket, RBracket,
  Comma, Semi, Colon, Dot,
  Assign,
  Plus, Minus, Star, Slash, Percent,
  Shl, Shr, Amp, Caret, Pipe,
  Lt, Le, Gt, Ge, EqEq, Ne,
  AndAnd, OrOr, Bang,
};

const char* tok_name(Tok t);

struct Token {
  Tok kind = Tok::End;
  std::string text;      // identifier / annotation body
  int32_t int_value = 0;
  float float_value = 0.0f;
  SourcePos pos;
};

/// Produces the full token stream (annotations included, in order).
std::vector<Token> lex(const std::string& source);

}  // namespace mkfuse
