#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>

#include "rewardevo/rsl/value.hpp"

// Reward Scripting Language: a closed, loop-bounded expression language for
// reward programs. Programs read a task context through `ctx` and end with
// `return total, components`.
namespace rewardevo::rsl {

inline constexpr std::size_t kMaxSourceBytes = 64 * 1024;
inline constexpr int kMaxNestingDepth = 200;

enum class ParseErrorKind {
  Syntax,
  UnknownIdentifier,
  UnknownBuiltin,
  Arity,
  Unsupported,
  SourceTooLarge,
  NestingTooDeep,
};

std::string_view to_string(ParseErrorKind kind);

class ParseError : public std::runtime_error {
public:
  ParseError(ParseErrorKind kind, int line, int column, const std::string& message);
  ParseErrorKind kind() const { return kind_; }
  int line() const { return line_; }
  int column() const { return column_; }
  const std::string& detail() const { return detail_; }

private:
  ParseErrorKind kind_;
  int line_;
  int column_;
  std::string detail_;
};

enum class RuntimeErrorKind {
  StepBudget,
  NonFinite,
  MissingKey,
  TypeMismatch,
  IndexOutOfRange,
  UndefinedVariable,
  CollectionTooLarge,
  Domain,
};

std::string_view to_string(RuntimeErrorKind kind);

class RuntimeError : public std::runtime_error {
public:
  RuntimeError(RuntimeErrorKind kind, int line, int column, const std::string& message);
  RuntimeErrorKind kind() const { return kind_; }
  int line() const { return line_; }
  int column() const { return column_; }

private:
  RuntimeErrorKind kind_;
  int line_;
  int column_;
};

struct EvalLimits {
  std::uint64_t max_interpreter_steps = 1'000'000;
  std::size_t max_collection_length = 100'000;
  bool reject_non_finite = true;
};

struct RewardOutput {
  double total = 0.0;
  Record components;
};

// Read-only view of the reward context. Paths are dotted ("population.cost").
class FieldSource {
public:
  virtual ~FieldSource() = default;
  virtual const Value* find(std::string_view path) const = 0;
};

class MapContext : public FieldSource {
public:
  MapContext() = default;
  MapContext(std::initializer_list<std::pair<const std::string, Value>> init) : fields_(init) {}

  void set(std::string path, Value value) { fields_[std::move(path)] = std::move(value); }
  void erase(std::string_view path);
  const Value* find(std::string_view path) const override;
  const std::map<std::string, Value, std::less<>>& fields() const { return fields_; }

private:
  std::map<std::string, Value, std::less<>> fields_;
};

struct FieldInfo {
  std::string type;  // scalar | integer | boolean | vector | matrix
  std::string description;
  bool optional = false;
};

using FieldDictionary = std::map<std::string, FieldInfo, std::less<>>;

struct ProgramAst;

struct RewardProgram {
  std::string source;
  std::shared_ptr<const ProgramAst> ast;
  std::set<std::string> referenced_fields;
  std::string content_hash;

  // Whitespace- and comment-free normal form; content_hash digests this text.
  std::string canonical_text() const;
};

// Throws ParseError.
RewardProgram parse(std::string_view source);

// Throws RuntimeError. Pure: identical inputs give bit-identical outputs.
RewardOutput evaluate(const RewardProgram& program, const FieldSource& context, const EvalLimits& limits = {});

// Referenced fields missing from the schema; empty means the program is deployable.
std::set<std::string> validate(const RewardProgram& program, const FieldDictionary& schema);

std::string canonical_hash(const RewardProgram& program);

// Builtin names with their accepted argument counts, for prompt reference cards.
const std::map<std::string, std::pair<int, int>, std::less<>>& builtin_arities();

// Reward files: `#! rsl v1 task=<id>` header line, then the program source.
std::string reward_file_header(std::string_view task_id);
std::optional<std::string> header_task(std::string_view text);
std::string strip_header(std::string_view text);

struct RewardFile {
  std::string task_id;
  RewardProgram program;
  std::string thought;
  std::optional<double> fitness;
};

// Writes <path> and <path>.json ({thought, content_hash, fitness}).
void write_reward_file(const std::filesystem::path& path, std::string_view task_id, const RewardProgram& program,
                       std::string_view thought, std::optional<double> fitness);
// Throws ParseError for malformed programs, std::runtime_error for I/O problems.
RewardFile read_reward_file(const std::filesystem::path& path);

}  // namespace rewardevo::rsl
