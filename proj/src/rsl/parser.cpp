#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <optional>
#include <unordered_map>

#include "ast.hpp"
#include "rewardevo/core/digest.hpp"

namespace rewardevo::rsl {
namespace {

enum class Tok { Number, Ident, String, Op, Newline, Indent, Dedent, End };

struct Token {
  Tok type;
  std::string text;
  double number = 0.0;
  int line = 1;
  int column = 1;
};

[[noreturn]] void fail(ParseErrorKind kind, int line, int column, const std::string& message)
{
  throw ParseError(kind, line, column, message);
}

class Lexer {
public:
  explicit Lexer(std::string_view src) : src_(src) {}

  std::vector<Token> run()
  {
    std::vector<Token> out;
    while (pos_ < src_.size()) {
      if (at_line_start_ && depth_ == 0) {
        indentation(out);
        if (pos_ >= src_.size()) {
          break;
        }
      }
      const char c = src_[pos_];
      if (c == '\n') {
        if (depth_ == 0) {
          push_newline(out, line_, col_);
          at_line_start_ = true;
        }
        advance();
        continue;
      }
      if (c == ' ' || c == '\t' || c == '\r' || c == '\f' || c == '\v') {
        advance();
        continue;
      }
      if (c == '#') {
        while (pos_ < src_.size() && src_[pos_] != '\n') {
          advance();
        }
        continue;
      }
      if (c == '\\' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '\n') {
        advance();
        advance();
        continue;
      }
      if (c == ';') {
        push_newline(out, line_, col_);
        advance();
        continue;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) ||
          (c == '.' && pos_ + 1 < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
        out.push_back(number());
        continue;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        Token t{Tok::Ident, {}, 0.0, line_, col_};
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
          t.text.push_back(src_[pos_]);
          advance();
        }
        out.push_back(std::move(t));
        continue;
      }
      if (c == '"' || c == '\'') {
        out.push_back(string_literal(c));
        continue;
      }
      out.push_back(op());
    }
    push_newline(out, line_, col_);
    while (indents_.size() > 1) {
      indents_.pop_back();
      out.push_back(Token{Tok::Dedent, "<dedent>", 0.0, line_, col_});
    }
    out.push_back(Token{Tok::End, "<end>", 0.0, line_, col_});
    return out;
  }

private:
  // Measures the leading whitespace of a logical line and emits indent/dedent
  // tokens. Blank and comment-only lines are ignored. The first code line sets
  // the base level, so uniformly indented snippets parse.
  void indentation(std::vector<Token>& out)
  {
    int width = 0;
    while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t' || src_[pos_] == '\r' ||
                                  src_[pos_] == '\f')) {
      width = src_[pos_] == '\t' ? (width / 8 + 1) * 8 : width + 1;
      advance();
    }
    if (pos_ >= src_.size() || src_[pos_] == '\n' || src_[pos_] == '#') {
      return;
    }
    if (src_[pos_] == '\\' && pos_ + 1 < src_.size() && src_[pos_ + 1] == '\n') {
      return;
    }
    at_line_start_ = false;
    if (indents_.empty()) {
      indents_.push_back(width);
      return;
    }
    if (width > indents_.back()) {
      indents_.push_back(width);
      out.push_back(Token{Tok::Indent, "<indent>", 0.0, line_, col_});
      return;
    }
    while (width < indents_.back()) {
      indents_.pop_back();
      if (indents_.empty() || width > indents_.back()) {
        fail(ParseErrorKind::Syntax, line_, col_, "dedent does not match any outer indentation level");
      }
      out.push_back(Token{Tok::Dedent, "<dedent>", 0.0, line_, col_});
    }
  }

  void advance()
  {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  static void push_newline(std::vector<Token>& out, int line, int col)
  {
    if (!out.empty() && out.back().type != Tok::Newline) {
      out.push_back(Token{Tok::Newline, "<newline>", 0.0, line, col});
    }
  }

  Token number()
  {
    Token t{Tok::Number, {}, 0.0, line_, col_};
    auto take_digits = [&] {
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        t.text.push_back(src_[pos_]);
        advance();
      }
    };
    take_digits();
    if (pos_ < src_.size() && src_[pos_] == '.') {
      t.text.push_back('.');
      advance();
      take_digits();
    }
    if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
      std::size_t look = pos_ + 1;
      if (look < src_.size() && (src_[look] == '+' || src_[look] == '-')) {
        ++look;
      }
      if (look < src_.size() && std::isdigit(static_cast<unsigned char>(src_[look]))) {
        while (pos_ < look) {
          t.text.push_back(src_[pos_]);
          advance();
        }
        take_digits();
      }
    }
    if (pos_ < src_.size() && (std::isalpha(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      fail(ParseErrorKind::Syntax, t.line, t.column, "malformed number literal");
    }
    std::string_view text = t.text;
    if (text.front() == '.') {
      t.text.insert(t.text.begin(), '0');
      text = t.text;
    }
    const auto res = std::from_chars(text.data(), text.data() + text.size(), t.number);
    if (res.ec != std::errc() || !std::isfinite(t.number)) {
      fail(ParseErrorKind::Syntax, t.line, t.column, "number literal out of range: " + t.text);
    }
    return t;
  }

  Token string_literal(char quote)
  {
    Token t{Tok::String, {}, 0.0, line_, col_};
    advance();
    while (true) {
      if (pos_ >= src_.size() || src_[pos_] == '\n') {
        fail(ParseErrorKind::Syntax, t.line, t.column, "unterminated string literal");
      }
      const char c = src_[pos_];
      if (c == quote) {
        advance();
        break;
      }
      if (c == '\\') {
        advance();
        if (pos_ >= src_.size() || (src_[pos_] != '\\' && src_[pos_] != '"' && src_[pos_] != '\'')) {
          fail(ParseErrorKind::Syntax, line_, col_, "unsupported escape in string literal");
        }
      }
      t.text.push_back(src_[pos_]);
      advance();
    }
    return t;
  }

  Token op()
  {
    static constexpr std::string_view kTwo[] = {"**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/="};
    Token t{Tok::Op, {}, 0.0, line_, col_};
    const std::string_view rest = src_.substr(pos_);
    for (std::string_view two : kTwo) {
      if (rest.starts_with(two)) {
        t.text = two;
        advance();
        advance();
        return t;
      }
    }
    const char c = src_[pos_];
    static constexpr std::string_view kOne = "+-*/%<>=()[]{},:.";
    if (kOne.find(c) == std::string_view::npos) {
      const auto uc = static_cast<unsigned char>(c);
      std::string shown = (uc >= 0x20 && uc < 0x7f) ? std::string(1, c) : "byte " + std::to_string(uc);
      fail(ParseErrorKind::Syntax, line_, col_, "unexpected character " + shown);
    }
    if (c == '(' || c == '[' || c == '{') {
      ++depth_;
    } else if ((c == ')' || c == ']' || c == '}') && depth_ > 0) {
      --depth_;
    }
    t.text = std::string(1, c);
    advance();
    return t;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
  int depth_ = 0;
  bool at_line_start_ = true;
  std::vector<int> indents_;
};

const std::map<std::string, std::pair<int, int>, std::less<>> kArities{
    {"abs", {1, 1}},     {"min", {1, -1}},    {"max", {1, -1}},     {"sum", {1, 2}},     {"mean", {1, 2}},
    {"std", {1, 2}},     {"median", {1, 1}},  {"quantile", {2, 2}}, {"ptp", {1, 2}},     {"clip", {3, 3}},
    {"tanh", {1, 1}},    {"exp", {1, 1}},     {"log", {1, 1}},      {"log1p", {1, 1}},   {"sqrt", {1, 1}},
    {"sign", {1, 1}},    {"norm", {1, 2}},    {"argsort", {1, 1}},  {"sort", {1, 1}},    {"len", {1, 1}},
    {"dot", {2, 2}},     {"corr", {2, 2}},    {"roll", {2, 2}},     {"zeros", {1, 2}},   {"ones", {1, 2}},
    {"rows", {1, 1}},    {"cols", {1, 1}},    {"diff", {1, 1}},     {"reverse", {1, 1}}, {"outer", {2, 2}},
    {"floor", {1, 1}},   {"ceil", {1, 1}},    {"round", {1, 1}},    {"float", {1, 1}},   {"int", {1, 1}},
    {"argmin", {1, 1}},  {"argmax", {1, 1}},
};

const std::map<std::string, Builtin, std::less<>> kBuiltins{
    {"abs", Builtin::Abs},         {"min", Builtin::Min},         {"max", Builtin::Max},
    {"sum", Builtin::Sum},         {"mean", Builtin::Mean},       {"std", Builtin::Std},
    {"median", Builtin::Median},   {"quantile", Builtin::Quantile}, {"ptp", Builtin::Ptp},
    {"clip", Builtin::Clip},       {"tanh", Builtin::Tanh},       {"exp", Builtin::Exp},
    {"log", Builtin::Log},         {"log1p", Builtin::Log1p},     {"sqrt", Builtin::Sqrt},
    {"sign", Builtin::Sign},       {"norm", Builtin::Norm},       {"argsort", Builtin::Argsort},
    {"sort", Builtin::Sort},       {"len", Builtin::Len},         {"dot", Builtin::Dot},
    {"corr", Builtin::Corr},       {"roll", Builtin::Roll},       {"zeros", Builtin::Zeros},
    {"ones", Builtin::Ones},       {"rows", Builtin::Rows},       {"cols", Builtin::Cols},
    {"diff", Builtin::Diff},       {"reverse", Builtin::Reverse}, {"outer", Builtin::Outer},
    {"floor", Builtin::Floor},     {"ceil", Builtin::Ceil},       {"round", Builtin::Round},
    {"float", Builtin::Float},     {"int", Builtin::Int},         {"argmin", Builtin::Argmin},
    {"argmax", Builtin::Argmax},
};

bool is_reserved(std::string_view w)
{
  static constexpr std::string_view kWords[] = {"if",   "elif", "else",  "for",   "in",    "and",  "or",
                                                "not",  "return", "true", "false", "True", "False", "ctx"};
  for (auto k : kWords) {
    if (k == w) {
      return true;
    }
  }
  return false;
}

std::optional<std::string> unsupported_reason(std::string_view w)
{
  static const std::map<std::string_view, std::string_view> kWords{
      {"def", "function definitions are not supported"},
      {"lambda", "lambda expressions are not supported"},
      {"while", "while loops are not supported; use for i in range(n)"},
      {"import", "imports are not supported; all builtins are available directly"},
      {"from", "imports are not supported; all builtins are available directly"},
      {"class", "class definitions are not supported"},
      {"break", "break is not supported"},
      {"continue", "continue is not supported"},
      {"pass", "pass is not supported; put a statement in the block"},
      {"try", "exception handling is not supported"},
      {"except", "exception handling is not supported"},
      {"with", "with blocks are not supported"},
      {"yield", "generators are not supported"},
      {"global", "global declarations are not supported"},
      {"nonlocal", "nonlocal declarations are not supported"},
      {"del", "del is not supported"},
      {"assert", "assert is not supported"},
      {"None", "None is not supported; use ctx.has or ctx.get with a default"},
      {"is", "identity comparison is not supported"},
  };
  if (auto it = kWords.find(w); it != kWords.end()) {
    return std::string(it->second);
  }
  return std::nullopt;
}

class Parser {
public:
  explicit Parser(std::vector<Token> tokens) : toks_(std::move(tokens)) {}

  std::shared_ptr<ProgramAst> program(std::set<std::string>& fields)
  {
    fields_ = &fields;
    auto ast = std::make_shared<ProgramAst>();
    skip_newlines();
    while (!is_word("return")) {
      if (peek().type == Tok::End) {
        fail(ParseErrorKind::Syntax, peek().line, peek().column,
             "program must end with `return total, components`");
      }
      ast->body.push_back(statement(1));
      end_of_statement();
      skip_newlines();
    }
    const Token& ret = next();
    ast->total = expression();
    if (!is_op(",")) {
      fail(ParseErrorKind::Syntax, ret.line, ret.column,
           "return must provide two values: `return total, components`");
    }
    next();
    ast->components = expression();
    skip_newlines();
    if (peek().type != Tok::End) {
      fail(ParseErrorKind::Unsupported, peek().line, peek().column,
           "return must be the final statement of the program");
    }
    ast->slot_names = slot_names_;
    return ast;
  }

private:
  const Token& peek(std::size_t ahead = 0) const
  {
    return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
  }
  const Token& next()
  {
    const Token& t = toks_[pos_];
    if (pos_ + 1 < toks_.size()) {
      ++pos_;
    }
    return t;
  }
  bool is_op(std::string_view s, std::size_t ahead = 0) const
  {
    return peek(ahead).type == Tok::Op && peek(ahead).text == s;
  }
  bool is_word(std::string_view s, std::size_t ahead = 0) const
  {
    return peek(ahead).type == Tok::Ident && peek(ahead).text == s;
  }
  void skip_newlines()
  {
    while (peek().type == Tok::Newline) {
      next();
    }
  }
  [[noreturn]] void unexpected(std::string_view wanted) const
  {
    const Token& t = peek();
    fail(ParseErrorKind::Syntax, t.line, t.column,
         "expected " + std::string(wanted) + " but found '" + t.text + "'");
  }
  const Token& expect_op(std::string_view s)
  {
    if (!is_op(s)) {
      unexpected("'" + std::string(s) + "'");
    }
    return next();
  }
  void end_of_statement()
  {
    if (pos_ > 0 && toks_[pos_ - 1].type == Tok::Dedent) {
      return;  // an indented block just closed
    }
    if (peek().type == Tok::Newline) {
      next();
    } else if (peek().type != Tok::Dedent && peek().type != Tok::End) {
      unexpected("end of statement");
    }
  }

  void check_depth(int depth, const Token& at) const
  {
    if (depth > kMaxNestingDepth) {
      fail(ParseErrorKind::NestingTooDeep, at.line, at.column, "program nests too deeply");
    }
  }

  ExprPtr node(ExprKind kind, const Token& at)
  {
    auto e = std::make_unique<Expr>();
    e->kind = kind;
    e->line = at.line;
    e->column = at.column;
    return e;
  }

  // Finalizes a node built from kids, enforcing the tree-depth limit.
  ExprPtr seal(ExprPtr e)
  {
    int d = 0;
    for (const auto& k : e->kids) {
      d = std::max(d, depth_of_.at(k.get()));
    }
    ++d;
    if (d > kMaxNestingDepth) {
      fail(ParseErrorKind::NestingTooDeep, e->line, e->column, "expression nests too deeply");
    }
    depth_of_[e.get()] = d;
    return e;
  }

  int lookup(const std::string& name) const
  {
    auto it = slots_.find(name);
    return it == slots_.end() ? -1 : it->second;
  }
  int declare(const std::string& name)
  {
    if (auto it = slots_.find(name); it != slots_.end()) {
      return it->second;
    }
    const int slot = static_cast<int>(slot_names_.size());
    slots_.emplace(name, slot);
    slot_names_.push_back(name);
    return slot;
  }

  void reject_word(const Token& t)
  {
    if (auto why = unsupported_reason(t.text)) {
      fail(ParseErrorKind::Unsupported, t.line, t.column, *why);
    }
  }

  StmtPtr statement(int depth)
  {
    const Token& t = peek();
    check_depth(depth, t);
    if (t.type != Tok::Ident) {
      unexpected("a statement");
    }
    reject_word(t);
    if (t.text == "if") {
      return if_statement(depth);
    }
    if (t.text == "for") {
      return for_statement(depth);
    }
    if (t.text == "return") {
      fail(ParseErrorKind::Unsupported, t.line, t.column, "return is only allowed as the final statement");
    }
    if (is_reserved(t.text)) {
      fail(ParseErrorKind::Syntax, t.line, t.column, "unexpected keyword '" + t.text + "'");
    }
    auto s = std::make_unique<Stmt>();
    s->line = t.line;
    s->column = t.column;
    s->name = t.text;
    next();
    if (is_op("[")) {
      s->kind = StmtKind::IndexAssign;
      s->slot = lookup(s->name);
      if (s->slot < 0) {
        fail(ParseErrorKind::UnknownIdentifier, t.line, t.column, "unknown identifier '" + s->name + "'");
      }
      next();
      s->subscripts.push_back(subscript_item());
      if (is_op(",")) {
        next();
        s->subscripts.push_back(subscript_item());
      }
      expect_op("]");
    } else {
      s->kind = StmtKind::Assign;
    }
    s->op = assign_op();
    if (s->kind == StmtKind::Assign && s->op != AssignOp::Set) {
      s->slot = lookup(s->name);
      if (s->slot < 0) {
        fail(ParseErrorKind::UnknownIdentifier, t.line, t.column, "unknown identifier '" + s->name + "'");
      }
    }
    s->value = expression();
    if (s->kind == StmtKind::Assign && s->op == AssignOp::Set) {
      s->slot = declare(s->name);
    }
    return s;
  }

  AssignOp assign_op()
  {
    const Token& t = peek();
    if (t.type == Tok::Op) {
      if (t.text == "=") {
        next();
        return AssignOp::Set;
      }
      if (t.text == "+=") {
        next();
        return AssignOp::Add;
      }
      if (t.text == "-=") {
        next();
        return AssignOp::Sub;
      }
      if (t.text == "*=") {
        next();
        return AssignOp::Mul;
      }
      if (t.text == "/=") {
        next();
        return AssignOp::Div;
      }
    }
    unexpected("an assignment");
  }

  // `: NEWLINE INDENT stmt+ DEDENT`, or a single statement on the header line.
  Block block(int depth)
  {
    expect_op(":");
    Block body;
    if (peek().type != Tok::Newline) {
      body.push_back(statement(depth + 1));
      return body;
    }
    next();
    if (peek().type != Tok::Indent) {
      unexpected("an indented block");
    }
    next();
    while (peek().type != Tok::Dedent) {
      if (peek().type == Tok::End) {
        unexpected("end of block");
      }
      body.push_back(statement(depth + 1));
      end_of_statement();
      skip_newlines();
    }
    next();
    return body;
  }

  StmtPtr if_statement(int depth)
  {
    const Token& t = next();
    auto s = std::make_unique<Stmt>();
    s->kind = StmtKind::If;
    s->line = t.line;
    s->column = t.column;
    Branch first;
    first.condition = expression();
    first.body = block(depth);
    s->branches.push_back(std::move(first));
    while (true) {
      const std::size_t save = pos_;
      skip_newlines();
      if (is_word("elif")) {
        next();
        Branch b;
        b.condition = expression();
        b.body = block(depth);
        s->branches.push_back(std::move(b));
        continue;
      }
      if (is_word("else")) {
        next();
        s->has_else = true;
        s->else_body = block(depth);
      } else {
        pos_ = save;
      }
      break;
    }
    return s;
  }

  StmtPtr for_statement(int depth)
  {
    const Token& t = next();
    auto s = std::make_unique<Stmt>();
    s->kind = StmtKind::For;
    s->line = t.line;
    s->column = t.column;
    if (peek().type != Tok::Ident || is_reserved(peek().text)) {
      unexpected("a loop variable");
    }
    reject_word(peek());
    s->name = next().text;
    if (!is_word("in")) {
      unexpected("'in'");
    }
    next();
    if (!is_word("range")) {
      fail(ParseErrorKind::Unsupported, peek().line, peek().column, "for loops must iterate over range(...)");
    }
    next();
    expect_op("(");
    s->range_args.push_back(expression());
    while (is_op(",")) {
      next();
      s->range_args.push_back(expression());
    }
    if (s->range_args.size() > 3) {
      fail(ParseErrorKind::Arity, t.line, t.column, "range takes 1 to 3 arguments");
    }
    expect_op(")");
    s->slot = declare(s->name);
    s->body = block(depth);
    return s;
  }

  ExprPtr expression()
  {
    ExprPtr value = or_expr();
    if (is_word("if")) {
      const Token& t = next();
      ExprPtr cond = or_expr();
      if (!is_word("else")) {
        unexpected("'else' in conditional expression");
      }
      next();
      ExprPtr otherwise = expression();
      auto e = node(ExprKind::Ternary, t);
      e->kids.push_back(std::move(value));
      e->kids.push_back(std::move(cond));
      e->kids.push_back(std::move(otherwise));
      return seal(std::move(e));
    }
    return value;
  }

  ExprPtr or_expr()
  {
    ExprPtr lhs = and_expr();
    while (is_word("or")) {
      const Token& t = next();
      auto e = node(ExprKind::Or, t);
      e->kids.push_back(std::move(lhs));
      e->kids.push_back(and_expr());
      lhs = seal(std::move(e));
    }
    return lhs;
  }

  ExprPtr and_expr()
  {
    ExprPtr lhs = not_expr();
    while (is_word("and")) {
      const Token& t = next();
      auto e = node(ExprKind::And, t);
      e->kids.push_back(std::move(lhs));
      e->kids.push_back(not_expr());
      lhs = seal(std::move(e));
    }
    return lhs;
  }

  ExprPtr not_expr()
  {
    if (is_word("not")) {
      const Token& t = next();
      check_depth(++unary_run_, t);
      auto e = node(ExprKind::Not, t);
      e->kids.push_back(not_expr());
      --unary_run_;
      return seal(std::move(e));
    }
    return comparison();
  }

  std::optional<CompareOp> compare_op() const
  {
    if (peek().type != Tok::Op) {
      return std::nullopt;
    }
    const std::string& s = peek().text;
    if (s == "<") return CompareOp::Lt;
    if (s == "<=") return CompareOp::Le;
    if (s == ">") return CompareOp::Gt;
    if (s == ">=") return CompareOp::Ge;
    if (s == "==") return CompareOp::Eq;
    if (s == "!=") return CompareOp::Ne;
    return std::nullopt;
  }

  ExprPtr comparison()
  {
    ExprPtr lhs = additive();
    if (is_word("in") || is_word("is")) {
      fail(ParseErrorKind::Unsupported, peek().line, peek().column,
           "membership tests are not supported; use ctx.has(\"name\")");
    }
    if (auto op = compare_op()) {
      const Token& t = next();
      auto e = node(ExprKind::Compare, t);
      e->op = static_cast<int>(*op);
      e->kids.push_back(std::move(lhs));
      e->kids.push_back(additive());
      if (compare_op()) {
        fail(ParseErrorKind::Unsupported, peek().line, peek().column,
             "chained comparisons are not supported; combine with 'and'");
      }
      return seal(std::move(e));
    }
    return lhs;
  }

  ExprPtr binary(ExprPtr lhs, BinaryOp op, const Token& t, ExprPtr rhs)
  {
    auto e = node(ExprKind::Binary, t);
    e->op = static_cast<int>(op);
    e->kids.push_back(std::move(lhs));
    e->kids.push_back(std::move(rhs));
    return seal(std::move(e));
  }

  ExprPtr additive()
  {
    ExprPtr lhs = term();
    while (is_op("+") || is_op("-")) {
      const Token& t = next();
      const BinaryOp op = t.text == "+" ? BinaryOp::Add : BinaryOp::Sub;
      lhs = binary(std::move(lhs), op, t, term());
    }
    return lhs;
  }

  ExprPtr term()
  {
    ExprPtr lhs = unary();
    while (is_op("*") || is_op("/") || is_op("//") || is_op("%")) {
      const Token& t = next();
      BinaryOp op = BinaryOp::Mul;
      if (t.text == "/") op = BinaryOp::Div;
      if (t.text == "//") op = BinaryOp::FloorDiv;
      if (t.text == "%") op = BinaryOp::Mod;
      lhs = binary(std::move(lhs), op, t, unary());
    }
    return lhs;
  }

  ExprPtr unary()
  {
    if (is_op("-") || is_op("+")) {
      const Token& t = next();
      check_depth(++unary_run_, t);
      ExprPtr operand = unary();
      --unary_run_;
      if (t.text == "+") {
        return operand;
      }
      auto e = node(ExprKind::Neg, t);
      e->kids.push_back(std::move(operand));
      return seal(std::move(e));
    }
    return power();
  }

  ExprPtr power()
  {
    ExprPtr base = postfix();
    if (is_op("**")) {
      const Token& t = next();
      check_depth(++unary_run_, t);
      ExprPtr exponent = unary();
      --unary_run_;
      return binary(std::move(base), BinaryOp::Pow, t, std::move(exponent));
    }
    return base;
  }

  ExprPtr subscript_item()
  {
    if (peek().type == Tok::String) {
      const Token& t = next();
      auto e = node(ExprKind::String, t);
      e->text = t.text;
      return seal(std::move(e));
    }
    return expression();
  }

  ExprPtr postfix()
  {
    ExprPtr target = primary();
    while (is_op("[")) {
      const Token& t = next();
      check_depth(++nest_, t);
      if (is_op(":")) {
        next();
        auto e = node(ExprKind::Slice, t);
        e->kids.push_back(std::move(target));
        if (!is_op("]")) {
          e->has_hi = true;
          e->kids.push_back(expression());
        }
        expect_op("]");
        target = seal(std::move(e));
        --nest_;
        continue;
      }
      ExprPtr first = subscript_item();
      if (is_op(":")) {
        next();
        auto e = node(ExprKind::Slice, t);
        e->kids.push_back(std::move(target));
        e->has_lo = true;
        e->kids.push_back(std::move(first));
        if (!is_op("]")) {
          e->has_hi = true;
          e->kids.push_back(expression());
        }
        expect_op("]");
        target = seal(std::move(e));
        --nest_;
        continue;
      }
      auto e = node(ExprKind::Index, t);
      e->kids.push_back(std::move(target));
      e->kids.push_back(std::move(first));
      if (is_op(",")) {
        next();
        e->kids.push_back(subscript_item());
      }
      expect_op("]");
      target = seal(std::move(e));
      --nest_;
    }
    if (is_op(".")) {
      fail(ParseErrorKind::Syntax, peek().line, peek().column, "attribute access is only supported on ctx");
    }
    if (is_op("(")) {
      fail(ParseErrorKind::Syntax, peek().line, peek().column, "only builtin functions can be called");
    }
    return target;
  }

  std::string string_arg(std::string_view what)
  {
    if (peek().type != Tok::String) {
      unexpected(std::string(what) + " as a string literal");
    }
    return next().text;
  }

  ExprPtr ctx_access(const Token& at)
  {
    expect_op(".");
    if (peek().type != Tok::Ident) {
      unexpected("a field name after 'ctx.'");
    }
    if ((is_word("get") || is_word("has")) && is_op("(", 1)) {
      const bool get = is_word("get");
      next();
      next();
      auto e = node(get ? ExprKind::CtxGet : ExprKind::CtxHas, at);
      e->text = string_arg("a field name");
      if (get) {
        expect_op(",");
        e->kids.push_back(expression());
      }
      expect_op(")");
      fields_->insert(e->text);
      return seal(std::move(e));
    }
    std::string path = next().text;
    while (is_op(".") && peek(1).type == Tok::Ident) {
      next();
      path += ".";
      path += next().text;
    }
    auto e = node(ExprKind::Ctx, at);
    e->text = path;
    fields_->insert(path);
    return seal(std::move(e));
  }

  ExprPtr call(const Token& name)
  {
    auto it = kBuiltins.find(name.text);
    if (it == kBuiltins.end()) {
      if (name.text == "range") {
        fail(ParseErrorKind::Unsupported, name.line, name.column, "range(...) is only valid in a for loop");
      }
      fail(ParseErrorKind::UnknownBuiltin, name.line, name.column, "unknown builtin '" + name.text + "'");
    }
    auto e = node(ExprKind::Call, name);
    e->builtin = it->second;
    e->text = name.text;
    expect_op("(");
    check_depth(++nest_, name);
    if (!is_op(")")) {
      e->kids.push_back(expression());
      while (is_op(",")) {
        next();
        if (is_op(")")) {
          break;
        }
        e->kids.push_back(expression());
      }
    }
    expect_op(")");
    --nest_;
    const auto [lo, hi] = kArities.at(name.text);
    const int n = static_cast<int>(e->kids.size());
    if (n < lo || (hi >= 0 && n > hi)) {
      fail(ParseErrorKind::Arity, name.line, name.column,
           name.text + " takes " + (lo == hi ? std::to_string(lo) : std::to_string(lo) + ".." + (hi < 0 ? "n" : std::to_string(hi))) +
               " argument(s), got " + std::to_string(n));
    }
    return seal(std::move(e));
  }

  ExprPtr primary()
  {
    const Token& t = peek();
    switch (t.type) {
      case Tok::Number: {
        next();
        auto e = node(ExprKind::Number, t);
        e->number = t.number;
        return seal(std::move(e));
      }
      case Tok::String:
        fail(ParseErrorKind::Syntax, t.line, t.column,
             "string literals are only allowed as record keys and ctx field names");
      case Tok::Ident: {
        next();
        reject_word(t);
        if (t.text == "true" || t.text == "True" || t.text == "false" || t.text == "False") {
          auto e = node(ExprKind::Bool, t);
          e->flag = t.text == "true" || t.text == "True";
          return seal(std::move(e));
        }
        if (t.text == "ctx") {
          return ctx_access(t);
        }
        if (is_reserved(t.text)) {
          fail(ParseErrorKind::Syntax, t.line, t.column, "unexpected keyword '" + t.text + "'");
        }
        if (is_op("(")) {
          return call(t);
        }
        const int slot = lookup(t.text);
        if (slot < 0) {
          fail(ParseErrorKind::UnknownIdentifier, t.line, t.column, "unknown identifier '" + t.text + "'");
        }
        auto e = node(ExprKind::Var, t);
        e->text = t.text;
        e->slot = slot;
        return seal(std::move(e));
      }
      case Tok::Op:
        if (t.text == "(") {
          next();
          check_depth(++nest_, t);
          ExprPtr inner = expression();
          if (is_op(",")) {
            fail(ParseErrorKind::Unsupported, peek().line, peek().column, "tuples are not supported");
          }
          expect_op(")");
          --nest_;
          return inner;
        }
        if (t.text == "[") {
          next();
          check_depth(++nest_, t);
          auto e = node(ExprKind::VectorLit, t);
          if (!is_op("]")) {
            e->kids.push_back(expression());
            while (is_op(",")) {
              next();
              if (is_op("]")) {
                break;
              }
              e->kids.push_back(expression());
            }
          }
          expect_op("]");
          --nest_;
          return seal(std::move(e));
        }
        if (t.text == "{") {
          return record_literal();
        }
        break;
      default:
        break;
    }
    unexpected("an expression");
  }

  ExprPtr record_literal()
  {
    const Token& t = next();
    check_depth(++nest_, t);
    auto e = node(ExprKind::RecordLit, t);
    skip_newlines();
    while (!is_op("}")) {
      e->keys.push_back(string_arg("a record key"));
      expect_op(":");
      skip_newlines();
      e->kids.push_back(expression());
      skip_newlines();
      if (is_op(",")) {
        next();
        skip_newlines();
      } else if (!is_op("}")) {
        unexpected("',' or '}' in record literal");
      }
    }
    next();
    --nest_;
    return seal(std::move(e));
  }

  std::vector<Token> toks_;
  std::size_t pos_ = 0;
  int nest_ = 0;
  int unary_run_ = 0;
  std::unordered_map<std::string, int> slots_;
  std::vector<std::string> slot_names_;
  std::unordered_map<const Expr*, int> depth_of_;
  std::set<std::string>* fields_ = nullptr;
};

}  // namespace

std::string_view to_string(ParseErrorKind kind)
{
  switch (kind) {
    case ParseErrorKind::Syntax: return "syntax";
    case ParseErrorKind::UnknownIdentifier: return "unknown-identifier";
    case ParseErrorKind::UnknownBuiltin: return "unknown-builtin";
    case ParseErrorKind::Arity: return "arity";
    case ParseErrorKind::Unsupported: return "unsupported";
    case ParseErrorKind::SourceTooLarge: return "source-too-large";
    case ParseErrorKind::NestingTooDeep: return "nesting-too-deep";
  }
  return "unknown";
}

ParseError::ParseError(ParseErrorKind kind, int line, int column, const std::string& message)
    : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) + ": " +
                         std::string(to_string(kind)) + ": " + message),
      kind_(kind), line_(line), column_(column), detail_(message)
{
}

const std::map<std::string, std::pair<int, int>, std::less<>>& builtin_arities() { return kArities; }

std::string_view builtin_name(Builtin b)
{
  for (const auto& [name, id] : kBuiltins) {
    if (id == b) {
      return name;
    }
  }
  return "?";
}

RewardProgram parse(std::string_view source)
{
  if (source.size() > kMaxSourceBytes) {
    throw ParseError(ParseErrorKind::SourceTooLarge, 1, 1,
                     "source exceeds " + std::to_string(kMaxSourceBytes) + " bytes");
  }
  RewardProgram program;
  program.source = std::string(source);
  Parser parser(Lexer(source).run());
  program.ast = parser.program(program.referenced_fields);
  program.content_hash = sha256_hex(print_program(*program.ast));
  return program;
}

std::string RewardProgram::canonical_text() const { return ast ? print_program(*ast) : std::string(); }

std::string canonical_hash(const RewardProgram& program) { return sha256_hex(program.canonical_text()); }

std::set<std::string> validate(const RewardProgram& program, const FieldDictionary& schema)
{
  std::set<std::string> unknown;
  for (const auto& f : program.referenced_fields) {
    if (!schema.contains(f)) {
      unknown.insert(f);
    }
  }
  return unknown;
}

}  // namespace rewardevo::rsl
