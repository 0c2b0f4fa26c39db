#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <span>

#include "ast.hpp"
#include "rewardevo/core/json.hpp"

namespace rewardevo::rsl {

std::size_t Value::size() const
{
  switch (kind()) {
    case Kind::None: return 0;
    case Kind::Scalar:
    case Kind::Bool: return 1;
    case Kind::Vector: return vector().size();
    case Kind::Matrix: return matrix().data.size();
    case Kind::Record: return record().size();
    case Kind::String: return string().size();
  }
  return 0;
}

bool Value::operator==(const Value& other) const
{
  if (kind() != other.kind()) {
    return false;
  }
  switch (kind()) {
    case Kind::None: return true;
    case Kind::Scalar: return scalar() == other.scalar();
    case Kind::Bool: return boolean() == other.boolean();
    case Kind::Vector: return vector() == other.vector();
    case Kind::Matrix:
      return matrix().rows == other.matrix().rows && matrix().cols == other.matrix().cols &&
             matrix().data == other.matrix().data;
    case Kind::Record: return record() == other.record();
    case Kind::String: return string() == other.string();
  }
  return false;
}

std::string_view kind_name(Value::Kind kind)
{
  switch (kind) {
    case Value::Kind::None: return "none";
    case Value::Kind::Scalar: return "scalar";
    case Value::Kind::Bool: return "boolean";
    case Value::Kind::Vector: return "vector";
    case Value::Kind::Matrix: return "matrix";
    case Value::Kind::Record: return "record";
    case Value::Kind::String: return "string";
  }
  return "?";
}

std::string_view to_string(RuntimeErrorKind kind)
{
  switch (kind) {
    case RuntimeErrorKind::StepBudget: return "step-budget-exceeded";
    case RuntimeErrorKind::NonFinite: return "non-finite";
    case RuntimeErrorKind::MissingKey: return "missing-key";
    case RuntimeErrorKind::TypeMismatch: return "type-mismatch";
    case RuntimeErrorKind::IndexOutOfRange: return "index-out-of-range";
    case RuntimeErrorKind::UndefinedVariable: return "undefined-variable";
    case RuntimeErrorKind::CollectionTooLarge: return "collection-too-large";
    case RuntimeErrorKind::Domain: return "domain";
  }
  return "unknown";
}

RuntimeError::RuntimeError(RuntimeErrorKind kind, int line, int column, const std::string& message)
    : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) + ": " +
                         std::string(to_string(kind)) + ": " + message),
      kind_(kind), line_(line), column_(column)
{
}

void MapContext::erase(std::string_view path)
{
  if (auto it = fields_.find(path); it != fields_.end()) {
    fields_.erase(it);
  }
}

const Value* MapContext::find(std::string_view path) const
{
  auto it = fields_.find(path);
  return it == fields_.end() ? nullptr : &it->second;
}

namespace {

using Kind = Value::Kind;

struct Loc {
  int line;
  int column;
};

Loc loc(const Expr& e) { return {e.line, e.column}; }
Loc loc(const Stmt& s) { return {s.line, s.column}; }

class Interpreter {
public:
  Interpreter(const ProgramAst& ast, const FieldSource& ctx, const EvalLimits& limits)
      : ast_(ast), ctx_(ctx), limits_(limits), slots_(ast.slot_names.size())
  {
  }

  RewardOutput run()
  {
    exec(ast_.body);
    const Value total = eval(*ast_.total);
    if (!total.is_numeric()) {
      fail(RuntimeErrorKind::TypeMismatch, loc(*ast_.total),
           "returned total must be a scalar, got " + std::string(kind_name(total.kind())));
    }
    const Value comps = eval(*ast_.components);
    if (comps.kind() != Kind::Record) {
      fail(RuntimeErrorKind::TypeMismatch, loc(*ast_.components),
           "returned components must be a record, got " + std::string(kind_name(comps.kind())));
    }
    RewardOutput out;
    out.total = finite(total.scalar(), loc(*ast_.total));
    out.components = comps.record();
    for (const auto& [k, v] : out.components) {
      finite(v, loc(*ast_.components));
    }
    return out;
  }

private:
  [[noreturn]] static void fail(RuntimeErrorKind kind, Loc at, const std::string& message)
  {
    throw RuntimeError(kind, at.line, at.column, message);
  }

  void charge(std::uint64_t n, Loc at)
  {
    steps_ += n;
    if (steps_ > limits_.max_interpreter_steps) {
      fail(RuntimeErrorKind::StepBudget, at,
           "step budget of " + std::to_string(limits_.max_interpreter_steps) + " exceeded");
    }
  }

  double finite(double v, Loc at) const
  {
    if (limits_.reject_non_finite && !std::isfinite(v)) {
      fail(RuntimeErrorKind::NonFinite, at, "computation produced a non-finite value");
    }
    return v;
  }

  void check_size(std::size_t n, Loc at) const
  {
    if (n > limits_.max_collection_length) {
      fail(RuntimeErrorKind::CollectionTooLarge, at,
           "collection of " + std::to_string(n) + " elements exceeds the limit of " +
               std::to_string(limits_.max_collection_length));
    }
  }

  Value make_vector(Vector v, Loc at)
  {
    check_size(v.size(), at);
    charge(v.size(), at);
    for (double e : v) {
      finite(e, at);
    }
    return Value(std::move(v));
  }

  Value make_matrix(Matrix m, Loc at)
  {
    check_size(m.data.size(), at);
    charge(m.data.size(), at);
    for (double e : m.data) {
      finite(e, at);
    }
    return Value(std::move(m));
  }

  static std::string describe(const Value& v) { return std::string(kind_name(v.kind())); }

  double number(const Value& v, Loc at, std::string_view what) const
  {
    if (!v.is_numeric()) {
      fail(RuntimeErrorKind::TypeMismatch, at, std::string(what) + " must be a scalar, got " + describe(v));
    }
    return v.scalar();
  }

  long long integer(const Value& v, Loc at, std::string_view what) const
  {
    const double d = number(v, at, what);
    if (d != std::floor(d) || std::abs(d) > 9.0e15) {
      fail(RuntimeErrorKind::TypeMismatch, at, std::string(what) + " must be an integer");
    }
    return static_cast<long long>(d);
  }

  std::size_t index(const Value& v, std::size_t n, Loc at) const
  {
    long long i = integer(v, at, "index");
    if (i < 0) {
      i += static_cast<long long>(n);
    }
    if (i < 0 || i >= static_cast<long long>(n)) {
      fail(RuntimeErrorKind::IndexOutOfRange, at,
           "index " + std::to_string(integer(v, at, "index")) + " out of range for length " + std::to_string(n));
    }
    return static_cast<std::size_t>(i);
  }

  bool truthy(const Value& v, Loc at) const
  {
    if (v.kind() == Kind::Bool) {
      return v.boolean();
    }
    if (v.kind() == Kind::Scalar) {
      return v.scalar() != 0.0;
    }
    fail(RuntimeErrorKind::TypeMismatch, at, "condition must be a scalar or boolean, got " + describe(v));
  }

  // Elementwise combination with scalar, vector and matrix broadcasting.
  template <class F>
  Value broadcast(const Value& a, const Value& b, Loc at, F fn)
  {
    auto apply = [&](double x, double y) { return finite(fn(x, y), at); };
    const Kind ka = a.is_numeric() ? Kind::Scalar : a.kind();
    const Kind kb = b.is_numeric() ? Kind::Scalar : b.kind();
    auto bad = [&]() -> Value {
      fail(RuntimeErrorKind::TypeMismatch, at, "cannot combine " + describe(a) + " with " + describe(b));
    };
    if (ka == Kind::Scalar && kb == Kind::Scalar) {
      charge(1, at);
      return apply(a.scalar(), b.scalar());
    }
    if (ka == Kind::Vector || kb == Kind::Vector) {
      if (ka == Kind::Vector && kb == Kind::Vector) {
        const auto& x = a.vector();
        const auto& y = b.vector();
        if (x.size() != y.size()) {
          fail(RuntimeErrorKind::TypeMismatch, at,
               "vector lengths differ: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
        }
        charge(x.size(), at);
        Vector out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          out[i] = apply(x[i], y[i]);
        }
        return Value(std::move(out));
      }
      if (ka == Kind::Vector && kb == Kind::Scalar) {
        const auto& x = a.vector();
        const double y = b.scalar();
        charge(x.size(), at);
        Vector out(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
          out[i] = apply(x[i], y);
        }
        return Value(std::move(out));
      }
      if (ka == Kind::Scalar && kb == Kind::Vector) {
        const double x = a.scalar();
        const auto& y = b.vector();
        charge(y.size(), at);
        Vector out(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) {
          out[i] = apply(x, y[i]);
        }
        return Value(std::move(out));
      }
    }
    if (ka == Kind::Matrix || kb == Kind::Matrix) {
      const bool left = ka == Kind::Matrix;
      const Matrix& m = left ? a.matrix() : b.matrix();
      const Value& other = left ? b : a;
      const Kind ko = left ? kb : ka;
      Matrix out{m.rows, m.cols, std::vector<double>(m.data.size())};
      charge(m.data.size(), at);
      auto put = [&](std::size_t k, double mv, double ov) {
        out.data[k] = left ? apply(mv, ov) : apply(ov, mv);
      };
      if (ko == Kind::Scalar) {
        const double s = other.scalar();
        for (std::size_t k = 0; k < m.data.size(); ++k) {
          put(k, m.data[k], s);
        }
        return Value(std::move(out));
      }
      if (ko == Kind::Vector) {
        const auto& v = other.vector();
        if (v.size() != m.cols) {
          fail(RuntimeErrorKind::TypeMismatch, at,
               "cannot broadcast vector of length " + std::to_string(v.size()) + " across matrix rows of width " +
                   std::to_string(m.cols));
        }
        for (std::size_t r = 0; r < m.rows; ++r) {
          for (std::size_t c = 0; c < m.cols; ++c) {
            put(r * m.cols + c, m.data[r * m.cols + c], v[c]);
          }
        }
        return Value(std::move(out));
      }
      if (ko == Kind::Matrix) {
        const Matrix& o = other.matrix();
        if (o.rows != m.rows || o.cols != m.cols) {
          fail(RuntimeErrorKind::TypeMismatch, at, "matrix shapes differ");
        }
        for (std::size_t k = 0; k < m.data.size(); ++k) {
          put(k, m.data[k], o.data[k]);
        }
        return Value(std::move(out));
      }
    }
    return bad();
  }

  Value arith(BinaryOp op, const Value& a, const Value& b, Loc at)
  {
    switch (op) {
      case BinaryOp::Add: return broadcast(a, b, at, [](double x, double y) { return x + y; });
      case BinaryOp::Sub: return broadcast(a, b, at, [](double x, double y) { return x - y; });
      case BinaryOp::Mul: return broadcast(a, b, at, [](double x, double y) { return x * y; });
      case BinaryOp::Div:
        return broadcast(a, b, at, [this, at](double x, double y) {
          if (y == 0.0 && limits_.reject_non_finite) {
            fail(RuntimeErrorKind::NonFinite, at, "division by zero");
          }
          return x / y;
        });
      case BinaryOp::FloorDiv:
        return broadcast(a, b, at, [this, at](double x, double y) {
          if (y == 0.0 && limits_.reject_non_finite) {
            fail(RuntimeErrorKind::NonFinite, at, "division by zero");
          }
          return std::floor(x / y);
        });
      case BinaryOp::Mod:
        return broadcast(a, b, at, [this, at](double x, double y) {
          if (y == 0.0 && limits_.reject_non_finite) {
            fail(RuntimeErrorKind::NonFinite, at, "modulo by zero");
          }
          return x - y * std::floor(x / y);
        });
      case BinaryOp::Pow: return broadcast(a, b, at, [](double x, double y) { return std::pow(x, y); });
    }
    fail(RuntimeErrorKind::TypeMismatch, at, "unknown operator");
  }

  Value compare(CompareOp op, const Value& a, const Value& b, Loc at)
  {
    auto test = [op](double x, double y) {
      switch (op) {
        case CompareOp::Lt: return x < y;
        case CompareOp::Le: return x <= y;
        case CompareOp::Gt: return x > y;
        case CompareOp::Ge: return x >= y;
        case CompareOp::Eq: return x == y;
        case CompareOp::Ne: return x != y;
      }
      return false;
    };
    if (a.is_numeric() && b.is_numeric()) {
      charge(1, at);
      return Value(test(a.scalar(), b.scalar()));
    }
    return broadcast(a, b, at, [&](double x, double y) { return test(x, y) ? 1.0 : 0.0; });
  }

  Value eval(const Expr& e)
  {
    charge(1, loc(e));
    switch (e.kind) {
      case ExprKind::Number: return Value(e.number);
      case ExprKind::Bool: return Value(e.flag);
      case ExprKind::String: return Value(e.text);
      case ExprKind::Var: {
        const Value& v = slots_[static_cast<std::size_t>(e.slot)];
        if (v.is_none()) {
          fail(RuntimeErrorKind::UndefinedVariable, loc(e), "variable '" + e.text + "' is not assigned on this path");
        }
        return v;
      }
      case ExprKind::Ctx: {
        const Value* v = ctx_.find(e.text);
        if (v == nullptr || v->is_none()) {
          fail(RuntimeErrorKind::MissingKey, loc(e),
               "context field '" + e.text + "' is absent; use ctx.get(\"" + e.text + "\", default)");
        }
        return *v;
      }
      case ExprKind::CtxGet: {
        const Value* v = ctx_.find(e.text);
        if (v == nullptr || v->is_none()) {
          return eval(*e.kids[0]);
        }
        return *v;
      }
      case ExprKind::CtxHas: {
        const Value* v = ctx_.find(e.text);
        return Value(v != nullptr && !v->is_none());
      }
      case ExprKind::Neg: {
        const Value v = eval(*e.kids[0]);
        return arith(BinaryOp::Sub, Value(0.0), v, loc(e));
      }
      case ExprKind::Not: return Value(!truthy(eval(*e.kids[0]), loc(e)));
      case ExprKind::Binary: {
        const Value a = eval(*e.kids[0]);
        const Value b = eval(*e.kids[1]);
        return arith(static_cast<BinaryOp>(e.op), a, b, loc(e));
      }
      case ExprKind::And:
        if (!truthy(eval(*e.kids[0]), loc(e))) {
          return Value(false);
        }
        return Value(truthy(eval(*e.kids[1]), loc(e)));
      case ExprKind::Or:
        if (truthy(eval(*e.kids[0]), loc(e))) {
          return Value(true);
        }
        return Value(truthy(eval(*e.kids[1]), loc(e)));
      case ExprKind::Compare: {
        const Value a = eval(*e.kids[0]);
        const Value b = eval(*e.kids[1]);
        return compare(static_cast<CompareOp>(e.op), a, b, loc(e));
      }
      case ExprKind::Ternary:
        return truthy(eval(*e.kids[1]), loc(e)) ? eval(*e.kids[0]) : eval(*e.kids[2]);
      case ExprKind::Call: {
        std::vector<Value> args;
        args.reserve(e.kids.size());
        for (const auto& k : e.kids) {
          args.push_back(eval(*k));
        }
        return call(e, args);
      }
      case ExprKind::Index: return index_expr(e);
      case ExprKind::Slice: return slice_expr(e);
      case ExprKind::VectorLit: return vector_literal(e);
      case ExprKind::RecordLit: {
        Record r;
        for (std::size_t i = 0; i < e.kids.size(); ++i) {
          const Value v = eval(*e.kids[i]);
          r[e.keys[i]] = finite(number(v, loc(*e.kids[i]), "record value"), loc(*e.kids[i]));
        }
        return Value(std::move(r));
      }
    }
    fail(RuntimeErrorKind::TypeMismatch, loc(e), "unknown expression");
  }

  Value vector_literal(const Expr& e)
  {
    std::vector<Value> items;
    items.reserve(e.kids.size());
    for (const auto& k : e.kids) {
      items.push_back(eval(*k));
    }
    check_size(items.size(), loc(e));
    if (items.empty() || items.front().is_numeric()) {
      Vector out;
      out.reserve(items.size());
      for (std::size_t i = 0; i < items.size(); ++i) {
        out.push_back(number(items[i], loc(*e.kids[i]), "vector element"));
      }
      return make_vector(std::move(out), loc(e));
    }
    if (items.front().kind() == Kind::Vector) {
      Matrix m;
      m.rows = items.size();
      m.cols = items.front().vector().size();
      check_size(m.rows * m.cols, loc(e));
      for (const auto& it : items) {
        if (it.kind() != Kind::Vector || it.vector().size() != m.cols) {
          fail(RuntimeErrorKind::TypeMismatch, loc(e), "matrix literal rows must be vectors of equal length");
        }
        m.data.insert(m.data.end(), it.vector().begin(), it.vector().end());
      }
      return make_matrix(std::move(m), loc(e));
    }
    fail(RuntimeErrorKind::TypeMismatch, loc(e), "vector elements must be scalars");
  }

  Value index_expr(const Expr& e)
  {
    const Value target = eval(*e.kids[0]);
    const Value first = eval(*e.kids[1]);
    const Loc at = loc(e);
    if (e.kids.size() == 3) {
      const Value second = eval(*e.kids[2]);
      if (target.kind() != Kind::Matrix) {
        fail(RuntimeErrorKind::TypeMismatch, at, "two subscripts require a matrix, got " + describe(target));
      }
      const Matrix& m = target.matrix();
      const std::size_t r = index(first, m.rows, at);
      const std::size_t c = index(second, m.cols, at);
      return Value(m.at(r, c));
    }
    switch (target.kind()) {
      case Kind::Vector: {
        const auto& v = target.vector();
        if (first.kind() == Kind::Vector) {
          Vector out;
          out.reserve(first.vector().size());
          for (double i : first.vector()) {
            out.push_back(v[index(Value(i), v.size(), at)]);
          }
          return make_vector(std::move(out), at);
        }
        return Value(v[index(first, v.size(), at)]);
      }
      case Kind::Matrix: {
        const Matrix& m = target.matrix();
        if (first.kind() == Kind::Vector) {
          Matrix out{0, m.cols, {}};
          for (double i : first.vector()) {
            const std::size_t r = index(Value(i), m.rows, at);
            out.data.insert(out.data.end(), m.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols),
                            m.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * m.cols));
            ++out.rows;
          }
          return make_matrix(std::move(out), at);
        }
        const std::size_t r = index(first, m.rows, at);
        charge(m.cols, at);
        return Value(Vector(m.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols),
                            m.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * m.cols)));
      }
      case Kind::Record: {
        if (first.kind() != Kind::String) {
          fail(RuntimeErrorKind::TypeMismatch, at, "records are indexed by string keys");
        }
        const auto& r = target.record();
        auto it = r.find(first.string());
        if (it == r.end()) {
          fail(RuntimeErrorKind::MissingKey, at, "record has no key '" + first.string() + "'");
        }
        return Value(it->second);
      }
      default:
        fail(RuntimeErrorKind::TypeMismatch, at, "cannot index a " + describe(target));
    }
  }

  std::pair<std::size_t, std::size_t> slice_bounds(const Expr& e, std::size_t n)
  {
    const Loc at = loc(e);
    auto clamp = [&](const Value& v) {
      long long i = integer(v, at, "slice bound");
      const auto len = static_cast<long long>(n);
      if (i < 0) {
        i += len;
      }
      return static_cast<std::size_t>(std::clamp(i, 0LL, len));
    };
    std::size_t k = 1;
    std::size_t lo = 0;
    std::size_t hi = n;
    if (e.has_lo) {
      lo = clamp(eval(*e.kids[k++]));
    }
    if (e.has_hi) {
      hi = clamp(eval(*e.kids[k]));
    }
    return {lo, std::max(lo, hi)};
  }

  Value slice_expr(const Expr& e)
  {
    const Value target = eval(*e.kids[0]);
    const Loc at = loc(e);
    if (target.kind() == Kind::Vector) {
      const auto& v = target.vector();
      const auto [lo, hi] = slice_bounds(e, v.size());
      return make_vector(Vector(v.begin() + static_cast<std::ptrdiff_t>(lo), v.begin() + static_cast<std::ptrdiff_t>(hi)),
                         at);
    }
    if (target.kind() == Kind::Matrix) {
      const Matrix& m = target.matrix();
      const auto [lo, hi] = slice_bounds(e, m.rows);
      Matrix out{hi - lo, m.cols,
                 std::vector<double>(m.data.begin() + static_cast<std::ptrdiff_t>(lo * m.cols),
                                     m.data.begin() + static_cast<std::ptrdiff_t>(hi * m.cols))};
      return make_matrix(std::move(out), at);
    }
    fail(RuntimeErrorKind::TypeMismatch, at, "cannot slice a " + describe(target));
  }

  // ---- builtins -------------------------------------------------------------

  std::span<const double> flat(const Value& v, Loc at, double& scratch, std::string_view what) const
  {
    switch (v.kind()) {
      case Kind::Scalar:
      case Kind::Bool:
        scratch = v.scalar();
        return {&scratch, 1};
      case Kind::Vector: return v.vector();
      case Kind::Matrix: return v.matrix().data;
      default:
        fail(RuntimeErrorKind::TypeMismatch, at,
             std::string(what) + " expects numbers, a vector or a matrix, got " + describe(v));
    }
  }

  const Vector& need_vector(const Value& v, Loc at, std::string_view what) const
  {
    if (v.kind() != Kind::Vector) {
      fail(RuntimeErrorKind::TypeMismatch, at, std::string(what) + " expects a vector, got " + describe(v));
    }
    return v.vector();
  }

  template <class F>
  Value map_unary(const Value& v, Loc at, std::string_view what, F fn)
  {
    switch (v.kind()) {
      case Kind::Scalar:
      case Kind::Bool: charge(1, at); return Value(finite(fn(v.scalar()), at));
      case Kind::Vector: {
        Vector out(v.vector().size());
        charge(out.size(), at);
        for (std::size_t i = 0; i < out.size(); ++i) {
          out[i] = finite(fn(v.vector()[i]), at);
        }
        return Value(std::move(out));
      }
      case Kind::Matrix: {
        Matrix out = v.matrix();
        charge(out.data.size(), at);
        for (double& x : out.data) {
          x = finite(fn(x), at);
        }
        return Value(std::move(out));
      }
      default:
        fail(RuntimeErrorKind::TypeMismatch, at, std::string(what) + " expects numbers, got " + describe(v));
    }
  }

  enum class Reduce { Sum, Mean, Std, Min, Max, Ptp, Norm };

  double reduce(Reduce r, std::span<const double> xs, Loc at, std::string_view what)
  {
    charge(xs.size(), at);
    if (xs.empty() && r != Reduce::Sum && r != Reduce::Norm) {
      fail(RuntimeErrorKind::Domain, at, std::string(what) + " of an empty collection");
    }
    switch (r) {
      case Reduce::Sum: {
        double s = 0.0;
        for (double x : xs) s += x;
        return finite(s, at);
      }
      case Reduce::Mean: {
        double s = 0.0;
        for (double x : xs) s += x;
        return finite(s / static_cast<double>(xs.size()), at);
      }
      case Reduce::Std: {
        double s = 0.0;
        for (double x : xs) s += x;
        const double m = s / static_cast<double>(xs.size());
        double q = 0.0;
        for (double x : xs) q += (x - m) * (x - m);
        return finite(std::sqrt(q / static_cast<double>(xs.size())), at);
      }
      case Reduce::Min: return *std::min_element(xs.begin(), xs.end());
      case Reduce::Max: return *std::max_element(xs.begin(), xs.end());
      case Reduce::Ptp: {
        const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
        return finite(*hi - *lo, at);
      }
      case Reduce::Norm: {
        double q = 0.0;
        for (double x : xs) q += x * x;
        return finite(std::sqrt(q), at);
      }
    }
    return 0.0;
  }

  Value reduce_value(Reduce r, const std::vector<Value>& args, Loc at, std::string_view what)
  {
    if (args.size() == 2) {
      const long long axis = integer(args[1], at, "axis");
      if (axis != 0 && axis != 1) {
        fail(RuntimeErrorKind::Domain, at, "axis must be 0 or 1");
      }
      if (args[0].kind() == Kind::Vector && axis == 0) {
        return Value(reduce(r, args[0].vector(), at, what));
      }
      if (args[0].kind() != Kind::Matrix) {
        fail(RuntimeErrorKind::TypeMismatch, at, std::string(what) + " with an axis expects a matrix");
      }
      const Matrix& m = args[0].matrix();
      Vector out;
      std::vector<double> line;
      if (axis == 0) {
        for (std::size_t c = 0; c < m.cols; ++c) {
          line.clear();
          for (std::size_t row = 0; row < m.rows; ++row) {
            line.push_back(m.at(row, c));
          }
          out.push_back(reduce(r, line, at, what));
        }
      } else {
        for (std::size_t row = 0; row < m.rows; ++row) {
          out.push_back(reduce(r, std::span<const double>(m.data).subspan(row * m.cols, m.cols), at, what));
        }
      }
      return make_vector(std::move(out), at);
    }
    double scratch = 0.0;
    return Value(reduce(r, flat(args[0], at, scratch, what), at, what));
  }

  Value call(const Expr& e, const std::vector<Value>& a)
  {
    const Loc at = loc(e);
    const std::string_view name = e.text;
    switch (e.builtin) {
      case Builtin::Abs: return map_unary(a[0], at, name, [](double x) { return std::abs(x); });
      case Builtin::Tanh: return map_unary(a[0], at, name, [](double x) { return std::tanh(x); });
      case Builtin::Exp: return map_unary(a[0], at, name, [](double x) { return std::exp(x); });
      case Builtin::Log:
        return map_unary(a[0], at, name, [&](double x) {
          if (x <= 0.0) {
            fail(RuntimeErrorKind::Domain, at, "log of a non-positive value");
          }
          return std::log(x);
        });
      case Builtin::Log1p:
        return map_unary(a[0], at, name, [&](double x) {
          if (x <= -1.0) {
            fail(RuntimeErrorKind::Domain, at, "log1p of a value <= -1");
          }
          return std::log1p(x);
        });
      case Builtin::Sqrt:
        return map_unary(a[0], at, name, [&](double x) {
          if (x < 0.0) {
            fail(RuntimeErrorKind::Domain, at, "sqrt of a negative value");
          }
          return std::sqrt(x);
        });
      case Builtin::Sign:
        return map_unary(a[0], at, name, [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
      case Builtin::Floor: return map_unary(a[0], at, name, [](double x) { return std::floor(x); });
      case Builtin::Ceil: return map_unary(a[0], at, name, [](double x) { return std::ceil(x); });
      case Builtin::Round: return map_unary(a[0], at, name, [](double x) { return std::nearbyint(x); });
      case Builtin::Float: return Value(number(a[0], at, "float argument"));
      case Builtin::Int: return Value(std::trunc(number(a[0], at, "int argument")));
      case Builtin::Sum: return reduce_value(Reduce::Sum, a, at, name);
      case Builtin::Mean: return reduce_value(Reduce::Mean, a, at, name);
      case Builtin::Std: return reduce_value(Reduce::Std, a, at, name);
      case Builtin::Ptp: return reduce_value(Reduce::Ptp, a, at, name);
      case Builtin::Norm: return reduce_value(Reduce::Norm, a, at, name);
      case Builtin::Min:
      case Builtin::Max: {
        const bool is_min = e.builtin == Builtin::Min;
        const Reduce r = is_min ? Reduce::Min : Reduce::Max;
        if (a.size() == 1) {
          return reduce_value(r, a, at, name);
        }
        if (a.size() == 2 && a[0].kind() == Kind::Matrix && a[1].is_numeric()) {
          return reduce_value(r, a, at, name);
        }
        Value acc = a[0];
        for (std::size_t i = 1; i < a.size(); ++i) {
          acc = broadcast(acc, a[i], at, [is_min](double x, double y) { return is_min ? std::min(x, y) : std::max(x, y); });
        }
        return acc;
      }
      case Builtin::Median: {
        double scratch = 0.0;
        const auto xs = flat(a[0], at, scratch, name);
        if (xs.empty()) {
          fail(RuntimeErrorKind::Domain, at, "median of an empty collection");
        }
        charge(xs.size(), at);
        std::vector<double> s(xs.begin(), xs.end());
        std::sort(s.begin(), s.end());
        const std::size_t n = s.size();
        return Value(n % 2 == 1 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]));
      }
      case Builtin::Quantile: {
        double scratch = 0.0;
        const auto xs = flat(a[0], at, scratch, name);
        const double q = number(a[1], at, "quantile level");
        if (xs.empty() || q < 0.0 || q > 1.0) {
          fail(RuntimeErrorKind::Domain, at, "quantile needs a non-empty collection and a level in [0, 1]");
        }
        charge(xs.size(), at);
        std::vector<double> s(xs.begin(), xs.end());
        std::sort(s.begin(), s.end());
        const double pos = q * static_cast<double>(s.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const std::size_t hi = std::min(lo + 1, s.size() - 1);
        return Value(finite(s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]), at));
      }
      case Builtin::Clip: {
        const double lo = number(a[1], at, "clip lower bound");
        const double hi = number(a[2], at, "clip upper bound");
        return map_unary(a[0], at, name, [lo, hi](double x) { return std::min(std::max(x, lo), hi); });
      }
      case Builtin::Argsort:
      case Builtin::Sort: {
        const auto& v = need_vector(a[0], at, name);
        charge(v.size(), at);
        std::vector<std::size_t> order(v.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        Vector out(v.size());
        for (std::size_t i = 0; i < order.size(); ++i) {
          out[i] = e.builtin == Builtin::Argsort ? static_cast<double>(order[i]) : v[order[i]];
        }
        return Value(std::move(out));
      }
      case Builtin::Argmin:
      case Builtin::Argmax: {
        const auto& v = need_vector(a[0], at, name);
        if (v.empty()) {
          fail(RuntimeErrorKind::Domain, at, std::string(name) + " of an empty vector");
        }
        charge(v.size(), at);
        const auto it = e.builtin == Builtin::Argmin ? std::min_element(v.begin(), v.end())
                                                     : std::max_element(v.begin(), v.end());
        return Value(static_cast<double>(it - v.begin()));
      }
      case Builtin::Len:
        switch (a[0].kind()) {
          case Kind::Vector: return Value(a[0].vector().size());
          case Kind::Matrix: return Value(a[0].matrix().rows);
          case Kind::Record: return Value(a[0].record().size());
          default: fail(RuntimeErrorKind::TypeMismatch, at, "len expects a collection, got " + describe(a[0]));
        }
      case Builtin::Rows:
      case Builtin::Cols:
        if (a[0].kind() != Kind::Matrix) {
          fail(RuntimeErrorKind::TypeMismatch, at, std::string(name) + " expects a matrix, got " + describe(a[0]));
        }
        return Value(e.builtin == Builtin::Rows ? a[0].matrix().rows : a[0].matrix().cols);
      case Builtin::Dot: return dot(a[0], a[1], at);
      case Builtin::Corr: {
        const auto& x = need_vector(a[0], at, name);
        const auto& y = need_vector(a[1], at, name);
        if (x.size() != y.size()) {
          fail(RuntimeErrorKind::TypeMismatch, at, "corr needs vectors of equal length");
        }
        charge(2 * x.size(), at);
        const std::size_t n = x.size();
        if (n < 2) {
          return Value(0.0);
        }
        double mx = 0.0;
        double my = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          mx += x[i];
          my += y[i];
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        double sxy = 0.0;
        double sxx = 0.0;
        double syy = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          sxy += (x[i] - mx) * (y[i] - my);
          sxx += (x[i] - mx) * (x[i] - mx);
          syy += (y[i] - my) * (y[i] - my);
        }
        if (sxx == 0.0 || syy == 0.0) {
          return Value(0.0);
        }
        const double r = sxy / std::sqrt(sxx * syy);
        return Value(std::isfinite(r) ? std::clamp(r, -1.0, 1.0) : 0.0);
      }
      case Builtin::Roll: {
        const auto& v = need_vector(a[0], at, name);
        const long long k = integer(a[1], at, "roll shift");
        const auto n = static_cast<long long>(v.size());
        charge(v.size(), at);
        Vector out(v.size());
        for (long long i = 0; i < n; ++i) {
          out[static_cast<std::size_t>(((i + k) % n + n) % n)] = v[static_cast<std::size_t>(i)];
        }
        return Value(std::move(out));
      }
      case Builtin::Zeros:
      case Builtin::Ones: {
        const double fill = e.builtin == Builtin::Ones ? 1.0 : 0.0;
        auto dim = [&](const Value& v) {
          const long long n = integer(v, at, "size");
          if (n < 0) {
            fail(RuntimeErrorKind::Domain, at, "size must be non-negative");
          }
          check_size(static_cast<std::size_t>(n), at);
          return static_cast<std::size_t>(n);
        };
        if (a.size() == 1) {
          const std::size_t n = dim(a[0]);
          charge(n, at);
          return Value(Vector(n, fill));
        }
        const std::size_t r = dim(a[0]);
        const std::size_t c = dim(a[1]);
        check_size(r * c, at);
        charge(r * c, at);
        return Value(Matrix{r, c, std::vector<double>(r * c, fill)});
      }
      case Builtin::Diff: {
        const auto& v = need_vector(a[0], at, name);
        charge(v.size(), at);
        Vector out;
        for (std::size_t i = 1; i < v.size(); ++i) {
          out.push_back(finite(v[i] - v[i - 1], at));
        }
        return Value(std::move(out));
      }
      case Builtin::Reverse: {
        if (a[0].kind() == Kind::Matrix) {
          const Matrix& m = a[0].matrix();
          Matrix out{m.rows, m.cols, {}};
          charge(m.data.size(), at);
          for (std::size_t r = m.rows; r > 0; --r) {
            out.data.insert(out.data.end(), m.data.begin() + static_cast<std::ptrdiff_t>((r - 1) * m.cols),
                            m.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols));
          }
          return Value(std::move(out));
        }
        const auto& v = need_vector(a[0], at, name);
        charge(v.size(), at);
        return Value(Vector(v.rbegin(), v.rend()));
      }
      case Builtin::Outer: {
        const auto& x = need_vector(a[0], at, name);
        const auto& y = need_vector(a[1], at, name);
        check_size(x.size() * y.size(), at);
        Matrix m{x.size(), y.size(), std::vector<double>(x.size() * y.size())};
        for (std::size_t i = 0; i < x.size(); ++i) {
          for (std::size_t j = 0; j < y.size(); ++j) {
            m.data[i * y.size() + j] = x[i] * y[j];
          }
        }
        return make_matrix(std::move(m), at);
      }
    }
    fail(RuntimeErrorKind::TypeMismatch, at, "unknown builtin");
  }

  Value dot(const Value& a, const Value& b, Loc at)
  {
    if (a.kind() == Kind::Vector && b.kind() == Kind::Vector) {
      const auto& x = a.vector();
      const auto& y = b.vector();
      if (x.size() != y.size()) {
        fail(RuntimeErrorKind::TypeMismatch, at, "dot needs vectors of equal length");
      }
      charge(x.size(), at);
      double s = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        s += x[i] * y[i];
      }
      return Value(finite(s, at));
    }
    if (a.kind() == Kind::Matrix && b.kind() == Kind::Vector) {
      const Matrix& m = a.matrix();
      const auto& v = b.vector();
      if (v.size() != m.cols) {
        fail(RuntimeErrorKind::TypeMismatch, at, "dot: matrix width does not match vector length");
      }
      charge(m.data.size(), at);
      Vector out(m.rows, 0.0);
      for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
          out[r] += m.at(r, c) * v[c];
        }
        finite(out[r], at);
      }
      return Value(std::move(out));
    }
    if (a.kind() == Kind::Vector && b.kind() == Kind::Matrix) {
      const Matrix& m = b.matrix();
      const auto& v = a.vector();
      if (v.size() != m.rows) {
        fail(RuntimeErrorKind::TypeMismatch, at, "dot: vector length does not match matrix height");
      }
      charge(m.data.size(), at);
      Vector out(m.cols, 0.0);
      for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) {
          out[c] += v[r] * m.at(r, c);
        }
      }
      for (double x : out) {
        finite(x, at);
      }
      return Value(std::move(out));
    }
    fail(RuntimeErrorKind::TypeMismatch, at, "dot expects vectors or a matrix and a vector");
  }

  // ---- statements -----------------------------------------------------------

  static BinaryOp to_binary(AssignOp op)
  {
    switch (op) {
      case AssignOp::Add: return BinaryOp::Add;
      case AssignOp::Sub: return BinaryOp::Sub;
      case AssignOp::Mul: return BinaryOp::Mul;
      case AssignOp::Div: return BinaryOp::Div;
      case AssignOp::Set: break;
    }
    return BinaryOp::Add;
  }

  double combine(AssignOp op, double old, double rhs, Loc at)
  {
    if (op == AssignOp::Set) {
      return rhs;
    }
    return arith(to_binary(op), Value(old), Value(rhs), at).scalar();
  }

  void exec(const Block& block)
  {
    for (const auto& s : block) {
      exec(*s);
    }
  }

  void exec(const Stmt& s)
  {
    const Loc at = loc(s);
    charge(1, at);
    switch (s.kind) {
      case StmtKind::Assign: {
        Value rhs = eval(*s.value);
        Value& slot = slots_[static_cast<std::size_t>(s.slot)];
        if (s.op == AssignOp::Set) {
          slot = std::move(rhs);
        } else {
          if (slot.is_none()) {
            fail(RuntimeErrorKind::UndefinedVariable, at, "variable '" + s.name + "' is not assigned on this path");
          }
          slot = arith(to_binary(s.op), slot, rhs, at);
        }
        return;
      }
      case StmtKind::IndexAssign: index_assign(s);
        return;
      case StmtKind::If:
        for (const auto& b : s.branches) {
          if (truthy(eval(*b.condition), loc(*b.condition))) {
            exec(b.body);
            return;
          }
        }
        if (s.has_else) {
          exec(s.else_body);
        }
        return;
      case StmtKind::For: {
        long long start = 0;
        long long stop = 0;
        long long step = 1;
        std::vector<long long> bounds;
        for (const auto& arg : s.range_args) {
          bounds.push_back(integer(eval(*arg), loc(*arg), "range bound"));
        }
        if (bounds.size() == 1) {
          stop = bounds[0];
        } else {
          start = bounds[0];
          stop = bounds[1];
          if (bounds.size() == 3) {
            step = bounds[2];
          }
        }
        if (step == 0) {
          fail(RuntimeErrorKind::Domain, at, "range step must not be zero");
        }
        Value& var = slots_[static_cast<std::size_t>(s.slot)];
        for (long long i = start; step > 0 ? i < stop : i > stop; i += step) {
          charge(1, at);
          var = Value(static_cast<double>(i));
          exec(s.body);
        }
        return;
      }
    }
  }

  void index_assign(const Stmt& s)
  {
    const Loc at = loc(s);
    std::vector<Value> subs;
    for (const auto& e : s.subscripts) {
      subs.push_back(eval(*e));
    }
    const Value rhs = eval(*s.value);
    Value& target = slots_[static_cast<std::size_t>(s.slot)];
    bool cloned = false;
    switch (target.kind()) {
      case Kind::None:
        fail(RuntimeErrorKind::UndefinedVariable, at, "variable '" + s.name + "' is not assigned on this path");
      case Kind::Vector: {
        if (subs.size() != 1) {
          fail(RuntimeErrorKind::TypeMismatch, at, "vectors take a single subscript");
        }
        const std::size_t i = index(subs[0], target.vector().size(), at);
        const double v = number(rhs, at, "assigned element");
        const double old = target.vector()[i];
        const double updated = finite(combine(s.op, old, v, at), at);
        Vector& vec = target.mutable_vector(&cloned);
        if (cloned) {
          charge(vec.size(), at);
        }
        vec[i] = updated;
        return;
      }
      case Kind::Matrix: {
        const Matrix& m = target.matrix();
        if (subs.size() == 2) {
          const std::size_t r = index(subs[0], m.rows, at);
          const std::size_t c = index(subs[1], m.cols, at);
          const double updated = finite(combine(s.op, m.at(r, c), number(rhs, at, "assigned element"), at), at);
          Matrix& mm = target.mutable_matrix(&cloned);
          if (cloned) {
            charge(mm.data.size(), at);
          }
          mm.at(r, c) = updated;
          return;
        }
        if (s.op != AssignOp::Set || rhs.kind() != Kind::Vector || rhs.vector().size() != m.cols) {
          fail(RuntimeErrorKind::TypeMismatch, at, "matrix rows are replaced by a vector of matching width");
        }
        const std::size_t r = index(subs[0], m.rows, at);
        Matrix& mm = target.mutable_matrix(&cloned);
        if (cloned) {
          charge(mm.data.size(), at);
        }
        charge(mm.cols, at);
        std::copy(rhs.vector().begin(), rhs.vector().end(), mm.data.begin() + static_cast<std::ptrdiff_t>(r * mm.cols));
        return;
      }
      case Kind::Record: {
        if (subs.size() != 1 || subs[0].kind() != Kind::String) {
          fail(RuntimeErrorKind::TypeMismatch, at, "records are indexed by string keys");
        }
        const std::string& key = subs[0].string();
        const double v = number(rhs, at, "record value");
        double old = 0.0;
        if (s.op != AssignOp::Set) {
          auto it = target.record().find(key);
          if (it == target.record().end()) {
            fail(RuntimeErrorKind::MissingKey, at, "record has no key '" + key + "'");
          }
          old = it->second;
        }
        const double updated = finite(combine(s.op, old, v, at), at);
        Record& rec = target.mutable_record(&cloned);
        if (cloned) {
          charge(rec.size(), at);
        }
        rec[key] = updated;
        check_size(rec.size(), at);
        return;
      }
      default:
        fail(RuntimeErrorKind::TypeMismatch, at, "cannot assign into a " + describe(target));
    }
  }

  const ProgramAst& ast_;
  const FieldSource& ctx_;
  const EvalLimits& limits_;
  std::vector<Value> slots_;
  std::uint64_t steps_ = 0;
};

}  // namespace

RewardOutput evaluate(const RewardProgram& program, const FieldSource& context, const EvalLimits& limits)
{
  if (!program.ast) {
    throw RuntimeError(RuntimeErrorKind::TypeMismatch, 0, 0, "program was not parsed");
  }
  if (limits.max_interpreter_steps == 0 || limits.max_collection_length == 0) {
    throw std::invalid_argument("evaluation limits must be positive");
  }
  return Interpreter(*program.ast, context, limits).run();
}

// ---- reward files -------------------------------------------------------------

std::string reward_file_header(std::string_view task_id)
{
  return "#! rsl v1 task=" + std::string(task_id) + "\n";
}

std::optional<std::string> header_task(std::string_view text)
{
  constexpr std::string_view kPrefix = "#! rsl v1 task=";
  if (!text.starts_with(kPrefix)) {
    return std::nullopt;
  }
  text.remove_prefix(kPrefix.size());
  const auto end = text.find_first_of(" \t\r\n");
  return std::string(text.substr(0, end));
}

std::string strip_header(std::string_view text)
{
  if (text.starts_with("#! rsl")) {
    const auto nl = text.find('\n');
    return nl == std::string_view::npos ? std::string() : std::string(text.substr(nl + 1));
  }
  return std::string(text);
}

void write_reward_file(const std::filesystem::path& path, std::string_view task_id, const RewardProgram& program,
                       std::string_view thought, std::optional<double> fitness)
{
  std::string body = reward_file_header(task_id) + strip_header(program.source);
  if (!body.ends_with('\n')) {
    body.push_back('\n');
  }
  write_text_file(path, body);
  Json sidecar{{"thought", thought}, {"content_hash", program.content_hash}};
  sidecar["fitness"] = fitness ? Json(*fitness) : Json(nullptr);
  write_text_file(path.string() + ".json", dump_json(sidecar));
}

RewardFile read_reward_file(const std::filesystem::path& path)
{
  const std::string text = read_text_file(path);
  RewardFile out;
  out.task_id = header_task(text).value_or("");
  out.program = parse(text);
  const std::filesystem::path sidecar = path.string() + ".json";
  if (std::filesystem::exists(sidecar)) {
    const Json j = read_json_file(sidecar);
    out.thought = j.value("thought", "");
    if (j.contains("fitness") && j["fitness"].is_number()) {
      out.fitness = j["fitness"].get<double>();
    }
  }
  return out;
}

}  // namespace rewardevo::rsl
