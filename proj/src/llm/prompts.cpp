#include <algorithm>
#include <mutex>

#include "rewardevo/core/data.hpp"
#include "rewardevo/llm/llm.hpp"

namespace rewardevo::llm {

namespace {

constexpr std::array<std::string_view, 12> kKeys{"init",       "m1_reflect", "m1_mutate",      "m2",
                                                 "m3_reflect", "m3_mutate",  "c1",             "c2",
                                                 "kt_reflect", "kt_execute", "meta_summarize", "m0_simple"};

bool is_name_char(char c) { return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_'; }

// Calls on_text for literal runs and on_name for each `{{name}}`; a `{{`
// not followed by a well-formed name and `}}` is literal text.
template <typename Text, typename Name>
void scan(std::string_view body, Text on_text, Name on_name)
{
  std::size_t pos = 0;
  while (pos < body.size()) {
    const auto open = body.find("{{", pos);
    if (open == std::string_view::npos) {
      break;
    }
    const auto close = body.find("}}", open + 2);
    if (close == std::string_view::npos) {
      break;
    }
    const auto name = body.substr(open + 2, close - open - 2);
    const bool partial = !name.empty() && name.front() == '>';
    const auto bare = partial ? name.substr(1) : name;
    if (bare.empty() || !std::all_of(bare.begin(), bare.end(), is_name_char)) {
      on_text(body.substr(pos, open + 2 - pos));
      pos = open + 2;
      continue;
    }
    on_text(body.substr(pos, open - pos));
    on_name(name);
    pos = close + 2;
  }
  on_text(body.substr(std::min(pos, body.size())));
}

PromptTemplate load(TemplateId id)
{
  PromptTemplate t;
  t.id = id;
  const auto raw = data::get("prompts/" + std::string(template_key(id)) + ".txt");
  scan(
      raw, [&](std::string_view s) { t.body += s; },
      [&](std::string_view name) {
        if (name.front() == '>') {
          auto part = std::string(data::get("prompts/partials/" + std::string(name.substr(1)) + ".txt"));
          while (!part.empty() && part.back() == '\n') {
            part.pop_back();
          }
          t.body += part;
        } else {
          t.body += "{{" + std::string(name) + "}}";
        }
      });
  scan(
      t.body, [](std::string_view) {},
      [&](std::string_view name) {
        if (name.front() != '>') {
          t.placeholders.emplace_back(name);
        }
      });
  std::sort(t.placeholders.begin(), t.placeholders.end());
  t.placeholders.erase(std::unique(t.placeholders.begin(), t.placeholders.end()), t.placeholders.end());
  return t;
}

}  // namespace

std::string_view template_key(TemplateId id) { return kKeys[static_cast<std::size_t>(id)]; }

std::optional<TemplateId> find_template(std::string_view key)
{
  for (auto id : kAllTemplates) {
    if (template_key(id) == key) {
      return id;
    }
  }
  return std::nullopt;
}

bool is_reflection(TemplateId id)
{
  return id == TemplateId::M1Reflect || id == TemplateId::M3Reflect || id == TemplateId::KtReflect ||
         id == TemplateId::MetaSummarize;
}

const PromptTemplate& prompt_template(TemplateId id)
{
  static std::once_flag once;
  static std::vector<PromptTemplate> cache;
  std::call_once(once, [] {
    for (auto t : kAllTemplates) {
      cache.push_back(load(t));
    }
  });
  return cache[static_cast<std::size_t>(id)];
}

std::string render_prompt(TemplateId id, const Variables& vars)
{
  const auto& t = prompt_template(id);
  std::string missing;
  for (const auto& p : t.placeholders) {
    if (!vars.contains(p)) {
      missing += (missing.empty() ? "" : ", ") + p;
    }
  }
  if (!missing.empty()) {
    throw PromptError("template " + std::string(template_key(id)) + " is missing: " + missing);
  }
  std::string out;
  out.reserve(t.body.size() * 2);
  scan(
      t.body, [&](std::string_view s) { out += s; },
      [&](std::string_view name) { out += vars.find(name)->second; });
  return out;
}

std::string describe_task(const envs::Metadata& metadata)
{
  std::string out = "Task: " + metadata.task_id + "\n\n" + metadata.c_alg;
  while (!out.empty() && out.back() == '\n') {
    out.pop_back();
  }
  out += "\n\nContext fields a reward can read (ctx.<name>):\n";
  for (const auto& [name, info] : metadata.c_code) {
    out += "- " + name + " (" + info.type + (info.optional ? ", may be absent" : "") + "): " + info.description + "\n";
  }
  out.pop_back();
  return out;
}

std::string_view format_reminder(TemplateId id)
{
  switch (id) {
    case TemplateId::KtReflect:
      return "Reminder: reply with a JSON array of objects with the keys source_task, target_task, rationale and "
             "transfer_strategy_guidance, and nothing else.";
    case TemplateId::M3Reflect:
      return "Reminder: put the updated notes inside one fenced block tagged summary.";
    case TemplateId::MetaSummarize:
      return "Reminder: reply with one JSON object holding c_alg and c_code, and nothing else.";
    case TemplateId::M1Reflect:
      return "Reminder: answer in plain prose without code.";
    default:
      return "Reminder: state the idea in a few sentences, then give the complete program in one fenced block tagged "
             "rsl that ends with `return total, components`.";
  }
}

}  // namespace rewardevo::llm
