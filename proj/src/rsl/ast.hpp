#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rewardevo/rsl/rsl.hpp"

namespace rewardevo::rsl {

enum class Builtin {
  Abs, Min, Max, Sum, Mean, Std, Median, Quantile, Ptp, Clip, Tanh, Exp, Log, Log1p, Sqrt, Sign,
  Norm, Argsort, Sort, Len, Dot, Corr, Roll, Zeros, Ones, Rows, Cols, Diff, Reverse, Outer,
  Floor, Ceil, Round, Float, Int, Argmin, Argmax,
};

enum class ExprKind {
  Number,
  Bool,
  String,
  Var,
  Ctx,      // text = dotted path
  CtxGet,   // text = path, kids[0] = default
  CtxHas,   // text = path
  Neg,
  Not,
  Binary,   // op in BinaryOp
  And,
  Or,
  Compare,  // op in CompareOp
  Ternary,  // kids = {then, cond, otherwise}
  Call,
  Index,    // kids[0] = target, kids[1..] = subscripts (1 or 2)
  Slice,    // kids[0] = target, lo/hi optional via has_lo/has_hi
  VectorLit,
  RecordLit,  // keys in `keys`, values in kids
};

enum class BinaryOp { Add, Sub, Mul, Div, FloorDiv, Mod, Pow };
enum class CompareOp { Lt, Le, Gt, Ge, Eq, Ne };

struct Expr;
using ExprPtr = std::unique_ptr<Expr>;

struct Expr {
  ExprKind kind;
  int line = 0;
  int column = 0;
  double number = 0.0;
  bool flag = false;
  int op = 0;
  int slot = -1;
  Builtin builtin = Builtin::Abs;
  bool has_lo = false;
  bool has_hi = false;
  std::string text;
  std::vector<std::string> keys;
  std::vector<ExprPtr> kids;
};

enum class StmtKind { Assign, IndexAssign, If, For };

// 0 plain assignment, otherwise the compound operator.
enum class AssignOp { Set, Add, Sub, Mul, Div };

struct Stmt;
using StmtPtr = std::unique_ptr<Stmt>;
using Block = std::vector<StmtPtr>;

struct Branch {
  ExprPtr condition;
  Block body;
};

struct Stmt {
  StmtKind kind;
  int line = 0;
  int column = 0;
  int slot = -1;
  std::string name;
  AssignOp op = AssignOp::Set;
  std::vector<ExprPtr> subscripts;  // IndexAssign: 1 or 2 subscripts
  ExprPtr value;
  std::vector<Branch> branches;     // If: if + elif chain
  bool has_else = false;
  Block else_body;
  std::vector<ExprPtr> range_args;  // For: 1 to 3 bounds
  Block body;
};

struct ProgramAst {
  Block body;
  ExprPtr total;
  ExprPtr components;
  std::vector<std::string> slot_names;
};

std::string_view builtin_name(Builtin b);

std::string print_program(const ProgramAst& ast);

}  // namespace rewardevo::rsl
