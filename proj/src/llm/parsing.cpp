#include <spdlog/spdlog.h>

#include "rewardevo/llm/llm.hpp"

namespace rewardevo::llm {

namespace {

struct Fence {
  std::string tag;
  std::string body;
  std::size_t start = 0;  // offset of the opening fence line
};

std::string_view trim(std::string_view s)
{
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) {
    return {};
  }
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

std::string lower(std::string_view s)
{
  std::string out(s);
  for (auto& c : out) {
    if (c >= 'A' && c <= 'Z') {
      c = static_cast<char>(c - 'A' + 'a');
    }
  }
  return out;
}

// Fenced blocks opened by a line starting with ``` (up to three spaces of
// indent). An unterminated block runs to the end of the text.
std::vector<Fence> fences(std::string_view text)
{
  std::vector<Fence> out;
  std::optional<Fence> open;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) {
      end = text.size();
    }
    const auto line = text.substr(pos, end - pos);
    const auto indent = line.find_first_not_of(' ');
    const bool is_fence = indent != std::string_view::npos && indent <= 3 && line.substr(indent).starts_with("```");
    if (is_fence) {
      if (open) {
        out.push_back(std::move(*open));
        open.reset();
      } else {
        Fence f;
        f.tag = lower(trim(line.substr(indent + 3)));
        f.start = pos;
        open = std::move(f);
      }
    } else if (open) {
      open->body.append(line);
      open->body.push_back('\n');
    }
    if (end == text.size()) {
      break;
    }
    pos = end + 1;
  }
  if (open) {
    out.push_back(std::move(*open));
  }
  return out;
}

// Balanced [..] or {..} starting at `from`, skipping brackets inside JSON strings.
std::optional<std::string_view> balanced(std::string_view text, std::size_t from)
{
  const char open = text[from];
  const char close = open == '[' ? ']' : '}';
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = from; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == open) {
      ++depth;
    } else if (c == close && --depth == 0) {
      return text.substr(from, i - from + 1);
    }
  }
  return std::nullopt;
}

std::optional<Json> first_json(std::string_view text, char open, bool (Json::*is_kind)() const noexcept)
{
  for (auto pos = text.find(open); pos != std::string_view::npos; pos = text.find(open, pos + 1)) {
    if (auto span = balanced(text, pos)) {
      auto j = Json::parse(*span, nullptr, false);
      if (!j.is_discarded() && (j.*is_kind)()) {
        return j;
      }
    }
  }
  return std::nullopt;
}

std::string string_field(const Json& o, std::initializer_list<const char*> keys)
{
  for (const char* k : keys) {
    if (auto it = o.find(k); it != o.end() && it->is_string()) {
      return it->get<std::string>();
    }
  }
  return {};
}

}  // namespace

ParsedIndividual parse_individual(std::string_view response)
{
  const auto blocks = fences(response);
  if (blocks.empty()) {
    throw ResponseParseError("response has no fenced code block");
  }
  const Fence* code = nullptr;
  const Fence* thought = nullptr;
  for (const auto& b : blocks) {
    if (b.tag == "thought") {
      thought = thought ? thought : &b;
    } else if (b.tag == "rsl" && (code == nullptr || code->tag != "rsl")) {
      code = &b;
    } else if (code == nullptr) {
      code = &b;
    }
  }
  ParsedIndividual out;
  if (code != nullptr) {
    out.code = std::string(trim(code->body));
  }
  if (out.code.empty()) {
    throw ResponseParseError("response has an empty code block");
  }
  out.thought = thought ? std::string(trim(thought->body)) : std::string(trim(response.substr(0, blocks.front().start)));
  return out;
}

Json KtPathway::to_json() const
{
  return Json{{"source_task", envs::task_key(source)},
              {"target_task", envs::task_key(target)},
              {"rationale", rationale},
              {"transfer_strategy_guidance", guidance}};
}

std::vector<KtPathway> parse_kt_plan(std::string_view response)
{
  const auto array = first_json(response, '[', &Json::is_array);
  if (!array) {
    throw ResponseParseError("response has no JSON array");
  }
  std::vector<KtPathway> out;
  for (const auto& e : *array) {
    if (!e.is_object()) {
      spdlog::warn("transfer plan entry is not an object; dropped");
      continue;
    }
    const auto src = string_field(e, {"source_task", "source_task_Metabbo_algorithm", "source"});
    const auto dst = string_field(e, {"target_task", "target_task_Metabbo_algorithm", "target"});
    const auto s = envs::find_task(trim(src));
    const auto t = envs::find_task(trim(dst));
    if (!s || !t || *s == *t) {
      spdlog::warn("transfer plan entry {} -> {} names an unknown or identical task; dropped", src, dst);
      continue;
    }
    out.push_back({*s, *t, string_field(e, {"rationale", "reflection"}),
                   string_field(e, {"transfer_strategy_guidance", "strategy", "guidance"})});
  }
  return out;
}

std::string parse_summary(std::string_view response)
{
  for (const auto& b : fences(response)) {
    if (b.tag == "summary") {
      return std::string(trim(b.body));
    }
  }
  return std::string(trim(response));
}

envs::Metadata parse_metadata(std::string_view response, std::string_view task_id)
{
  const auto obj = first_json(response, '{', &Json::is_object);
  if (!obj || !obj->contains("c_alg") || !obj->contains("c_code")) {
    throw ResponseParseError("response has no metadata object with c_alg and c_code");
  }
  Json j = *obj;
  j["task_id"] = std::string(task_id);
  try {
    return envs::Metadata::from_json(j);
  } catch (const Json::exception& e) {
    throw ResponseParseError(std::string("malformed metadata: ") + e.what());
  }
}

}  // namespace rewardevo::llm
