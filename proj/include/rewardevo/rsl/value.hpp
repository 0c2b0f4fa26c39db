#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace rewardevo::rsl {

using Vector = std::vector<double>;
using Record = std::map<std::string, double, std::less<>>;

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, size rows * cols

  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
};

// Immutable value handle. Aggregates are shared; mutation goes through
// copy-on-write in the interpreter.
class Value {
public:
  enum class Kind { None, Scalar, Bool, Vector, Matrix, Record, String };

  Value() = default;
  Value(double v) : v_(v) {}
  Value(int v) : v_(static_cast<double>(v)) {}
  Value(std::size_t v) : v_(static_cast<double>(v)) {}
  Value(bool v) : v_(v) {}
  Value(Vector v) : v_(std::make_shared<Vector>(std::move(v))) {}
  Value(Matrix m) : v_(std::make_shared<Matrix>(std::move(m))) {}
  Value(Record r) : v_(std::make_shared<Record>(std::move(r))) {}
  explicit Value(std::string s) : v_(std::make_shared<const std::string>(std::move(s))) {}

  Kind kind() const { return static_cast<Kind>(v_.index()); }
  bool is_none() const { return kind() == Kind::None; }
  bool is_numeric() const { return kind() == Kind::Scalar || kind() == Kind::Bool; }

  double scalar() const { return kind() == Kind::Bool ? (std::get<bool>(v_) ? 1.0 : 0.0) : std::get<double>(v_); }
  bool boolean() const { return std::get<bool>(v_); }
  const Vector& vector() const { return *std::get<std::shared_ptr<Vector>>(v_); }
  const Matrix& matrix() const { return *std::get<std::shared_ptr<Matrix>>(v_); }
  const Record& record() const { return *std::get<std::shared_ptr<Record>>(v_); }

  // Copy-on-write access: clones the payload unless this handle is its only owner.
  // `cloned` reports whether a copy was made.
  Vector& mutable_vector(bool* cloned = nullptr) { return unshare<Vector>(cloned); }
  Matrix& mutable_matrix(bool* cloned = nullptr) { return unshare<Matrix>(cloned); }
  Record& mutable_record(bool* cloned = nullptr) { return unshare<Record>(cloned); }
  const std::string& string() const { return *std::get<std::shared_ptr<const std::string>>(v_); }

  // Element count for aggregates, 1 for scalars, 0 for none.
  std::size_t size() const;

  bool operator==(const Value& other) const;

private:
  template <class T>
  T& unshare(bool* cloned)
  {
    auto& ptr = std::get<std::shared_ptr<T>>(v_);
    const bool copy = ptr.use_count() > 1;
    if (copy) {
      ptr = std::make_shared<T>(*ptr);
    }
    if (cloned != nullptr) {
      *cloned = copy;
    }
    return *ptr;
  }

  std::variant<std::monostate, double, bool, std::shared_ptr<Vector>, std::shared_ptr<Matrix>,
               std::shared_ptr<Record>, std::shared_ptr<const std::string>>
      v_;
};

std::string_view kind_name(Value::Kind kind);

}  // namespace rewardevo::rsl
