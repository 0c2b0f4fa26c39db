#pragma once

// Generators for RSL property tests: random well-formed programs over a fixed
// context, and a parse/evaluate fuzzer.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "rewardevo/core/rng.hpp"
#include "rewardevo/rsl/rsl.hpp"

namespace rewardevo::testsupport {


// Random well-formed programs over a fixed context, for round-trip and purity checks.
class ProgramGen {
public:
  explicit ProgramGen(std::uint64_t seed) : rng_(seed) {}

  std::string program()
  {
    std::string out;
    vars_.clear();
    const int n = static_cast<int>(rng_.below(6));
    for (int i = 0; i < n; ++i) {
      statement(out, 0);
    }
    out += "return " + scalar(3) + ", {\"c\": " + scalar(2) + "}\n";
    return out;
  }

private:
  std::string pick(std::initializer_list<const char*> xs)
  {
    return *(xs.begin() + rng_.below(xs.size()));
  }

  std::string number()
  {
    const double v = std::round(rng_.uniform(-20.0, 20.0) * 100.0) / 100.0;
    return std::to_string(v);
  }

  std::string vector(int depth)
  {
    switch (rng_.below(depth > 0 ? 4 : 2)) {
      case 0: return "ctx.costs";
      case 1: return "[" + number() + ", " + number() + ", " + number() + "]";
      case 2: return "(" + vector(depth - 1) + " " + pick({"+", "-", "*"}) + " " + scalar(depth - 1) + ")";
      default: return pick({"abs", "tanh", "sort", "clip"}) == std::string("clip")
                          ? "clip(" + vector(depth - 1) + ", -1, 1)"
                          : "tanh(" + vector(depth - 1) + ")";
    }
  }

  std::string scalar(int depth)
  {
    const std::size_t choices = depth > 0 ? 9 : 3;
    switch (rng_.below(choices)) {
      case 0: return number();
      case 1: return pick({"ctx.x", "ctx.progress"});
      case 2: return vars_.empty() ? number() : vars_[rng_.below(vars_.size())];
      case 3: return "(" + scalar(depth - 1) + " " + pick({"+", "-", "*"}) + " " + scalar(depth - 1) + ")";
      case 4: return pick({"tanh", "abs", "sign"}) + "(" + scalar(depth - 1) + ")";
      case 5: return pick({"mean", "sum", "max", "min", "std", "median"}) + "(" + vector(depth - 1) + ")";
      case 6:
        return "(" + scalar(depth - 1) + " if " + scalar(depth - 1) + " " + pick({"<", ">=", "=="}) + " " +
               scalar(depth - 1) + " else " + scalar(depth - 1) + ")";
      case 7: return "-" + scalar(depth - 1);
      default: return "clip(" + scalar(depth - 1) + ", -5, 5)";
    }
  }

  void statement(std::string& out, int indent)
  {
    const std::string pad(static_cast<std::size_t>(4 * indent), ' ');
    const auto r = rng_.below(indent < 2 ? 4 : 2);
    if (r <= 1) {
      const std::string name = "v" + std::to_string(rng_.below(4));
      out += pad + name + " = " + scalar(3) + "\n";
      if (indent == 0 && std::find(vars_.begin(), vars_.end(), name) == vars_.end()) {
        vars_.push_back(name);
      }
    } else if (r == 2) {
      out += pad + "if " + scalar(2) + " > " + scalar(1) + ":\n";
      out += pad + "    t = " + scalar(2) + "\n";
      out += pad + "else:\n";
      out += pad + "    t = " + scalar(1) + "\n";
    } else {
      out += pad + "for i in range(" + std::to_string(rng_.below(4)) + "):\n";
      out += pad + "    u = " + scalar(2) + "\n";
    }
  }

  Rng rng_;
  std::vector<std::string> vars_;
};

inline rsl::MapContext property_context(Rng& rng)
{
  rsl::MapContext ctx;
  ctx.set("x", rsl::Value(rng.uniform(-3.0, 3.0)));
  ctx.set("progress", rsl::Value(rng.uniform()));
  ctx.set("costs", rsl::Value(rsl::Vector{rng.normal(), rng.normal(), rng.normal()}));
  return ctx;
}


// Mutations of valid programs plus raw token soup, half each. Every outcome
// must be a result or a structured error; anything else escapes to the caller.
// Returns how many sources parsed.
inline int fuzz_parse_evaluate(std::uint64_t seed, int cases)
{
  ProgramGen gen(seed);
  Rng rng(seed + 1);
  const std::vector<std::string> tokens = {
      "ctx.", "x", "(", ")", "[", "]", "{", "}", ",", ":", "=", "+", "-", "*", "/", "**", "//", "%", "if", "else",
      "elif", "for", "in", "range", "return", "and", "or", "not", "\n", "    ", "1.5", "0", "-1e308", "1e308",
      "\"k\"", "ctx.costs", "tanh", "sum", "zeros", "ctx.get(\"x\", 1)", "lambda", "def", "#", "\\", "'", "\"",
      "\t", ";", ".", "1e", "..", "[[", "]]", "outer", "roll",
  };
  const rsl::MapContext ctx = property_context(rng);
  int parsed = 0;
  for (int i = 0; i < cases; ++i) {
    std::string src;
    if (i % 2 == 0) {
      src = gen.program();
      const auto edits = 1 + rng.below(4);
      for (std::size_t e = 0; e < edits && !src.empty(); ++e) {
        const auto pos = rng.below(src.size());
        switch (rng.below(3)) {
          case 0: src.erase(pos, 1 + rng.below(5)); break;
          case 1: src.insert(pos, tokens[rng.below(tokens.size())]); break;
          default: src[pos] = static_cast<char>(rng.below(256)); break;
        }
      }
    } else {
      const auto n = rng.below(40);
      for (std::size_t t = 0; t < n; ++t) {
        src += tokens[rng.below(tokens.size())];
        src += ' ';
      }
    }
    try {
      const auto p = rsl::parse(src);
      ++parsed;
      (void)rsl::evaluate(p, ctx);
    } catch (const rsl::ParseError&) {
    } catch (const rsl::RuntimeError&) {
    }
  }
  return parsed;
}

}  // namespace rewardevo::testsupport
