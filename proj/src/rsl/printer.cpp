#include <array>
#include <charconv>

#include "ast.hpp"

namespace rewardevo::rsl {
namespace {

std::string number_text(double v)
{
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::string quote_text(std::string_view s)
{
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') {
      out.push_back('\\');
    }
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string_view binary_symbol(BinaryOp op)
{
  switch (op) {
    case BinaryOp::Add: return "+";
    case BinaryOp::Sub: return "-";
    case BinaryOp::Mul: return "*";
    case BinaryOp::Div: return "/";
    case BinaryOp::FloorDiv: return "//";
    case BinaryOp::Mod: return "%";
    case BinaryOp::Pow: return "**";
  }
  return "?";
}

std::string_view compare_symbol(CompareOp op)
{
  switch (op) {
    case CompareOp::Lt: return "<";
    case CompareOp::Le: return "<=";
    case CompareOp::Gt: return ">";
    case CompareOp::Ge: return ">=";
    case CompareOp::Eq: return "==";
    case CompareOp::Ne: return "!=";
  }
  return "?";
}

std::string_view assign_symbol(AssignOp op)
{
  switch (op) {
    case AssignOp::Set: return "=";
    case AssignOp::Add: return "+=";
    case AssignOp::Sub: return "-=";
    case AssignOp::Mul: return "*=";
    case AssignOp::Div: return "/=";
  }
  return "?";
}

void print_expr(const Expr& e, std::string& out);

void print_list(const std::vector<ExprPtr>& kids, std::size_t from, std::string& out)
{
  for (std::size_t i = from; i < kids.size(); ++i) {
    if (i > from) {
      out += ", ";
    }
    print_expr(*kids[i], out);
  }
}

void print_expr(const Expr& e, std::string& out)
{
  switch (e.kind) {
    case ExprKind::Number:
      out += number_text(e.number);
      return;
    case ExprKind::Bool:
      out += e.flag ? "true" : "false";
      return;
    case ExprKind::String:
      out += quote_text(e.text);
      return;
    case ExprKind::Var:
      out += e.text;
      return;
    case ExprKind::Ctx:
      out += "ctx.";
      out += e.text;
      return;
    case ExprKind::CtxGet:
      out += "ctx.get(" + quote_text(e.text) + ", ";
      print_expr(*e.kids[0], out);
      out += ")";
      return;
    case ExprKind::CtxHas:
      out += "ctx.has(" + quote_text(e.text) + ")";
      return;
    case ExprKind::Neg:
      out += "(-";
      print_expr(*e.kids[0], out);
      out += ")";
      return;
    case ExprKind::Not:
      out += "(not ";
      print_expr(*e.kids[0], out);
      out += ")";
      return;
    case ExprKind::Binary:
    case ExprKind::And:
    case ExprKind::Or:
    case ExprKind::Compare: {
      std::string_view sym = e.kind == ExprKind::And  ? "and"
                             : e.kind == ExprKind::Or ? "or"
                             : e.kind == ExprKind::Binary ? binary_symbol(static_cast<BinaryOp>(e.op))
                                                          : compare_symbol(static_cast<CompareOp>(e.op));
      out += "(";
      print_expr(*e.kids[0], out);
      out += " ";
      out += sym;
      out += " ";
      print_expr(*e.kids[1], out);
      out += ")";
      return;
    }
    case ExprKind::Ternary:
      out += "(";
      print_expr(*e.kids[0], out);
      out += " if ";
      print_expr(*e.kids[1], out);
      out += " else ";
      print_expr(*e.kids[2], out);
      out += ")";
      return;
    case ExprKind::Call:
      out += e.text;
      out += "(";
      print_list(e.kids, 0, out);
      out += ")";
      return;
    case ExprKind::Index:
      print_expr(*e.kids[0], out);
      out += "[";
      print_list(e.kids, 1, out);
      out += "]";
      return;
    case ExprKind::Slice: {
      print_expr(*e.kids[0], out);
      out += "[";
      std::size_t k = 1;
      if (e.has_lo) {
        print_expr(*e.kids[k++], out);
      }
      out += ":";
      if (e.has_hi) {
        print_expr(*e.kids[k], out);
      }
      out += "]";
      return;
    }
    case ExprKind::VectorLit:
      out += "[";
      print_list(e.kids, 0, out);
      out += "]";
      return;
    case ExprKind::RecordLit:
      out += "{";
      for (std::size_t i = 0; i < e.kids.size(); ++i) {
        if (i > 0) {
          out += ", ";
        }
        out += quote_text(e.keys[i]);
        out += ": ";
        print_expr(*e.kids[i], out);
      }
      out += "}";
      return;
  }
}

void print_block(const Block& block, int indent, std::string& out);

void print_stmt(const Stmt& s, int indent, std::string& out)
{
  const std::string pad(static_cast<std::size_t>(4 * indent), ' ');
  out += pad;
  switch (s.kind) {
    case StmtKind::Assign:
    case StmtKind::IndexAssign:
      out += s.name;
      if (s.kind == StmtKind::IndexAssign) {
        out += "[";
        print_list(s.subscripts, 0, out);
        out += "]";
      }
      out += " ";
      out += assign_symbol(s.op);
      out += " ";
      print_expr(*s.value, out);
      out += "\n";
      return;
    case StmtKind::If:
      for (std::size_t i = 0; i < s.branches.size(); ++i) {
        out += i == 0 ? "if " : pad + "elif ";
        print_expr(*s.branches[i].condition, out);
        out += ":\n";
        print_block(s.branches[i].body, indent + 1, out);
      }
      if (s.has_else) {
        out += pad + "else:\n";
        print_block(s.else_body, indent + 1, out);
      }
      return;
    case StmtKind::For:
      out += "for " + s.name + " in range(";
      print_list(s.range_args, 0, out);
      out += "):\n";
      print_block(s.body, indent + 1, out);
      return;
  }
}

void print_block(const Block& block, int indent, std::string& out)
{
  for (const auto& s : block) {
    print_stmt(*s, indent, out);
  }
}

}  // namespace

std::string print_program(const ProgramAst& ast)
{
  std::string out;
  print_block(ast.body, 0, out);
  out += "return ";
  print_expr(*ast.total, out);
  out += ", ";
  print_expr(*ast.components, out);
  out += "\n";
  return out;
}

}  // namespace rewardevo::rsl
