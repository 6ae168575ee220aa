#include "lexer.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>

namespace mkfuse {

const char* tok_name(Tok t) {
  switch (t) {
    case Tok::End: return "end of input";
    case Tok::Ident: return "identifier";
    case Tok::IntLit: return "integer literal";
    case Tok::FloatLit: return "float literal";
    case Tok::Annotation: return "annotation";
    case Tok::KwKernel: return "'kernel'";
    case Tok::KwDims: return "'dims'";
    case Tok::KwFixed: return "'fixed'";
    case Tok::KwInt: return "'int'";
    case Tok::KwFloat: return "'float'";
    case Tok::KwVoid: return "'void'";
    case Tok::KwShared: return "'shared'";
    case Tok::KwIf: return "'if'";
    case Tok::KwElse: return "'else'";
    case Tok::KwFor: return "'for'";
    case Tok::KwWhile: return "'while'";
    case Tok::KwSyncthreads: return "'syncthreads'";
    case Tok::KwBarSync: return "'bar_sync'";
    case Tok::KwAtomicAdd: return "'atomic_add'";
    case Tok::KwGoto: return "'goto'";
    case Tok::KwReturn: return "'return'";
    case Tok::LParen: return "'('";
    case Tok::RParen: return "')'";
    case Tok::LBrace: return "'{'";
    case Tok::RBrace: return "'}'";
    case Tok::LBracket: return "'['";
    case Tok::RBracket: return "']'";
    case Tok::Comma: return "','";
    case Tok::Semi: return "';'";
    case Tok::Colon: return "':'";
    case Tok::Dot: return "'.'";
    case Tok::Assign: return "'='";
    case Tok::Plus: return "'+'";
    case Tok::Minus: return "'-'";
    case Tok::Star: return "'*'";
    case Tok::Slash: return "'/'";
    case Tok::Percent: return "'%'";
    case Tok::Shl: return "'<<'";
    case Tok::Shr: return "'>>'";
    case Tok::Amp: return "'&'";
    case Tok::Caret: return "'^'";
    case Tok::Pipe: return "'|'";
    case Tok::Lt: return "'<'";
    case Tok::Le: return "'<='";
    case Tok::Gt: return "'>'";
    case Tok::Ge: return "'>='";
    case Tok::EqEq: return "'=='";
    case Tok::Ne: return "'!='";
    case Tok::AndAnd: return "'&&'";
    case Tok::OrOr: return "'||'";
    case Tok::Bang: return "'!'";
  }
  return "?";
}

namespace {

const std::map<std::string, Tok>& keyword_table() {
  static const std::map<std::string, Tok> table = {
      {"kernel", Tok::KwKernel},
      {"dims", Tok::KwDims},
      {"fixed", Tok::KwFixed},
      {"int", Tok::KwInt},
      {"float", Tok::KwFloat},
      {"void", Tok::KwVoid},
      {"shared", Tok::KwShared},
      {"if", Tok::KwIf},
      {"else", Tok::KwElse},
      {"for", Tok::KwFor},
      {"while", Tok::KwWhile},
      {"syncthreads", Tok::KwSyncthreads},
      {"bar_sync", Tok::KwBarSync},
      {"atomic_add", Tok::KwAtomicAdd},
      {"goto", Tok::KwGoto},
      {"return", Tok::KwReturn},
  };
  return table;
}

struct Cursor {
  const std::string& src;
  size_t i = 0;
  int line = 1;
  int col = 1;

  bool eof() const { return i >= src.size(); }
  char peek(size_t off = 0) const { return i + off < src.size() ? src[i + off] : '\0'; }
  char advance() {
    char c = src[i++];
    if (c == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
    return c;
  }
  SourcePos pos() const { return {line, col}; }
};

}  // namespace

std::vector<Token> lex(const std::string& source) {
  std::vector<Token> out;
  Cursor c{source};

  auto push = [&](Tok kind, SourcePos pos) { out.push_back(Token{kind, {}, 0, 0.0f, pos}); };

  while (!c.eof()) {
    char ch = c.peek();
    if (ch == ' ' || ch == '\t' || ch == '\r' || ch == '\n') {
      c.advance();
      continue;
    }
    SourcePos pos = c.pos();
    if (ch == '/' && c.peek(1) == '/') {
      c.advance();
      c.advance();
      bool annotation = c.peek() == '@';
      if (annotation) c.advance();
      std::string body;
      while (!c.eof() && c.peek() != '\n') body.push_back(c.advance());
      if (annotation) out.push_back(Token{Tok::Annotation, body, 0, 0.0f, pos});
      continue;
    }
    if (ch == '/' && c.peek(1) == '*') {
      c.advance();
      c.advance();
      while (!c.eof() && !(c.peek() == '*' && c.peek(1) == '/')) c.advance();
      if (c.eof()) fail(ErrCode::Syntax, "unterminated block comment", pos);
      c.advance();
      c.advance();
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') {
      std::string word;
      while (!c.eof() && (std::isalnum(static_cast<unsigned char>(c.peek())) || c.peek() == '_'))
        word.push_back(c.advance());
      auto it = keyword_table().find(word);
      if (it != keyword_table().end()) {
        push(it->second, pos);
      } else {
        out.push_back(Token{Tok::Ident, word, 0, 0.0f, pos});
      }
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(ch))) {
      std::string digits;
      while (!c.eof() && std::isdigit(static_cast<unsigned char>(c.peek())))
        digits.push_back(c.advance());
      bool is_float = false;
      if (c.peek() == '.' && std::isdigit(static_cast<unsigned char>(c.peek(1)))) {
        is_float = true;
        digits.push_back(c.advance());
        while (!c.eof() && std::isdigit(static_cast<unsigned char>(c.peek())))
          digits.push_back(c.advance());
      }
      if ((c.peek() == 'e' || c.peek() == 'E') &&
          (std::isdigit(static_cast<unsigned char>(c.peek(1))) ||
           ((c.peek(1) == '+' || c.peek(1) == '-') &&
            std::isdigit(static_cast<unsigned char>(c.peek(2)))))) {
        is_float = true;
        digits.push_back(c.advance());
        if (c.peek() == '+' || c.peek() == '-') digits.push_back(c.advance());
        while (!c.eof() && std::isdigit(static_cast<unsigned char>(c.peek())))
          digits.push_back(c.advance());
      }
      Token t;
      t.pos = pos;
      if (is_float) {
        t.kind = Tok::FloatLit;
        t.float_value = std::strtof(digits.c_str(), nullptr);
        if (!std::isfinite(t.float_value))
          fail(ErrCode::Syntax, "float literal out of float32 range", pos);
      } else {
        t.kind = Tok::IntLit;
        errno = 0;
        long long v = std::strtoll(digits.c_str(), nullptr, 10);
        if (v > 2147483647LL) fail(ErrCode::Syntax, "integer literal out of int32 range", pos);
        t.int_value = static_cast<int32_t>(v);
      }
      out.push_back(std::move(t));
      continue;
    }

    c.advance();
    auto two = [&](char second, Tok pair, Tok single) {
      if (c.peek() == second) {
        c.advance();
        push(pair, pos);
      } else {
        push(single, pos);
      }
    };
    switch (ch) {
      case '(': push(Tok::LParen, pos); break;
      case ')': push(Tok::RParen, pos); break;
      case '{': push(Tok::LBrace, pos); break;
      case '}': push(Tok::RBrace, pos); break;
      case '[': push(Tok::LBracket, pos); break;
      case ']': push(Tok::RBracket, pos); break;
      case ',': push(Tok::Comma, pos); break;
      case ';': push(Tok::Semi, pos); break;
      case ':': push(Tok::Colon, pos); break;
      case '.': push(Tok::Dot, pos); break;
      case '+': push(Tok::Plus, pos); break;
      case '-': push(Tok::Minus, pos); break;
      case '*': push(Tok::Star, pos); break;
      case '/': push(Tok::Slash, pos); break;
      case '%': push(Tok::Percent, pos); break;
      case '^': push(Tok::Caret, pos); break;
      case '=': two('=', Tok::EqEq, Tok::Assign); break;
      case '!': two('=', Tok::Ne, Tok::Bang); break;
      case '&': two('&', Tok::AndAnd, Tok::Amp); break;
      case '|': two('|', Tok::OrOr, Tok::Pipe); break;
      case '<':
        if (c.peek() == '<') {
          c.advance();
          push(Tok::Shl, pos);
        } else {
          two('=', Tok::Le, Tok::Lt);
        }
        break;
      case '>':
        if (c.peek() == '>') {
          c.advance();
          push(Tok::Shr, pos);
        } else {
          two('=', Tok::Ge, Tok::Gt);
        }
        break;
      default:
        fail(ErrCode::Syntax, std::string("unexpected character '") + ch + "'", pos);
    }
  }
  out.push_back(Token{Tok::End, {}, 0, 0.0f, c.pos()});
  return out;
}

}  // namespace mkfuse
