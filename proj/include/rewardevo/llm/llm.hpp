#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rewardevo/core/json.hpp"
#include "rewardevo/envs/envs.hpp"

namespace rewardevo::llm {

// ---- prompt templates -------------------------------------------------------

enum class TemplateId {
  Init,
  M1Reflect,
  M1Mutate,
  M2,
  M3Reflect,
  M3Mutate,
  C1,
  C2,
  KtReflect,
  KtExecute,
  MetaSummarize,
  M0Simple,
};

inline constexpr std::array<TemplateId, 12> kAllTemplates{
    TemplateId::Init,      TemplateId::M1Reflect, TemplateId::M1Mutate,      TemplateId::M2,
    TemplateId::M3Reflect, TemplateId::M3Mutate,  TemplateId::C1,            TemplateId::C2,
    TemplateId::KtReflect, TemplateId::KtExecute, TemplateId::MetaSummarize, TemplateId::M0Simple};

std::string_view template_key(TemplateId id);
std::optional<TemplateId> find_template(std::string_view key);

// Reflection-style templates produce analysis text; the others produce a reward.
bool is_reflection(TemplateId id);

class PromptError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

struct PromptTemplate {
  TemplateId id;
  std::string body;  // partials already expanded
  std::vector<std::string> placeholders;  // sorted, unique
};

// Bundled template with `{{>partial}}` includes expanded. Placeholders are `{{name}}`.
const PromptTemplate& prompt_template(TemplateId id);

using Variables = std::map<std::string, std::string, std::less<>>;

// Substitutes every placeholder. Throws PromptError naming the missing variables.
// Values are inserted verbatim and never re-expanded.
std::string render_prompt(TemplateId id, const Variables& vars);

// Text block describing a task: method summary plus its context-field dictionary.
std::string describe_task(const envs::Metadata& metadata);

// Appended to a prompt after a response could not be parsed.
std::string_view format_reminder(TemplateId id);

// ---- providers --------------------------------------------------------------

struct ProviderConfig {
  std::string endpoint = "https://api.deepseek.com/v1/chat/completions";
  std::string model = "deepseek-chat";
  double temperature_generation = 1.0;
  double temperature_reflection = 0.3;
  int max_attempts = 3;
  double timeout_seconds = 120.0;
  double requests_per_minute = 0.0;  // 0 disables rate limiting
  double backoff_initial_seconds = 1.0;
  std::string credential_env = "REWARDEVO_API_KEY";

  double temperature_for(TemplateId id) const
  {
    return is_reflection(id) ? temperature_reflection : temperature_generation;
  }

  Json to_json() const;
  // Throws std::invalid_argument when max_attempts < 1 or a field has the wrong type.
  static ProviderConfig from_json(const Json& j);
};

struct ChatExchange {
  std::string template_id;
  std::string task;  // niche the call served; empty for cross-task prompts
  std::string rendered_prompt;
  std::string response_text;
  std::string provider_tag;
  double latency_ms = 0.0;
  std::optional<long> prompt_tokens;
  std::optional<long> completion_tokens;
  int attempt = 1;

  // Log line form: the prompt is stored as its sha256.
  Json to_json() const;
};

enum class ProviderErrorKind { Exhausted, Transport, Http, EmptyCompletion, Configuration };

std::string_view to_string(ProviderErrorKind kind);

class ProviderError : public std::runtime_error {
public:
  ProviderError(ProviderErrorKind kind, const std::string& message);
  ProviderErrorKind kind() const { return kind_; }

private:
  ProviderErrorKind kind_;
};

// Shareable across threads.
class Provider {
public:
  virtual ~Provider() = default;
  // `task` is the key of the niche the call serves, empty for cross-task
  // prompts. Throws ProviderError.
  ChatExchange complete(TemplateId id, std::string_view prompt, std::string_view task = {})
  {
    return do_complete(id, prompt, task);
  }
  virtual std::string tag() const = 0;

protected:
  virtual ChatExchange do_complete(TemplateId id, std::string_view prompt, std::string_view task) = 0;
};

// Scripted responses, consumed first-in first-out per template. An entry
// scoped to a task is served only to calls for that task, and before any
// unscoped entry of the same template.
class ReplayProvider : public Provider {
public:
  ReplayProvider() = default;
  ReplayProvider(ReplayProvider&& other) noexcept : queues_(std::move(other.queues_)) {}
  // JSONL lines {"template_id": ..., "response": ..., "task"?: ...}. Blank
  // lines are skipped. Throws std::invalid_argument on a malformed line,
  // unknown template or unknown task.
  static ReplayProvider from_jsonl(std::string_view text);
  static ReplayProvider from_file(const std::filesystem::path& path);

  void push(TemplateId id, std::string response, std::string_view task = {});
  // Entries a call for (id, task) could still receive.
  std::size_t remaining(TemplateId id, std::string_view task = {}) const;
  // Drops the entry a call for (id, task) would receive; used to fast-forward
  // a script past exchanges already logged by an interrupted run.
  bool discard(TemplateId id, std::string_view task = {});

  std::string tag() const override { return "replay"; }

protected:
  ChatExchange do_complete(TemplateId id, std::string_view prompt, std::string_view task) override;

private:
  std::deque<std::string>* route(TemplateId id, std::string_view task);

  mutable std::mutex mu_;
  std::map<std::pair<TemplateId, std::string>, std::deque<std::string>> queues_;
};

// OpenAI-style chat-completion client with retries and a global rate limit.
class HttpProvider : public Provider {
public:
  // Reads the credential from config.credential_env when set; a missing
  // variable is allowed (local endpoints) and sends no Authorization header.
  explicit HttpProvider(ProviderConfig config);

  std::string tag() const override { return "http:" + config_.model; }

protected:
  ChatExchange do_complete(TemplateId id, std::string_view prompt, std::string_view task) override;

private:
  void wait_for_slot();

  ProviderConfig config_;
  std::string api_key_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;
  std::mutex rate_mu_;
  std::chrono::steady_clock::time_point next_slot_{};
};

// Appends every successful exchange to a JSONL file before returning it.
class RecordingProvider : public Provider {
public:
  RecordingProvider(Provider& inner, std::filesystem::path log_path);

  std::string tag() const override { return inner_.tag(); }

protected:
  ChatExchange do_complete(TemplateId id, std::string_view prompt, std::string_view task) override;

private:
  Provider& inner_;
  std::filesystem::path path_;
  std::mutex mu_;
};

// ---- response parsing -------------------------------------------------------

class ResponseParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct ParsedIndividual {
  std::string thought;
  std::string code;
};

// Thought is the prose before the first fenced block, or the block tagged
// `thought`. Code is the first block tagged `rsl`, else the first untagged or
// differently tagged block. Throws ResponseParseError when there is no code.
ParsedIndividual parse_individual(std::string_view response);

struct KtPathway {
  envs::TaskId source;
  envs::TaskId target;
  std::string rationale;
  std::string guidance;

  Json to_json() const;
};

// First JSON array in the text. Entries naming unknown tasks, or a task onto
// itself, are dropped. Throws ResponseParseError when no array parses.
std::vector<KtPathway> parse_kt_plan(std::string_view response);

// Body of the first block tagged `summary`, else the whole text trimmed.
std::string parse_summary(std::string_view response);

// {"c_alg", "c_code"} object from a metadata response. Throws ResponseParseError.
envs::Metadata parse_metadata(std::string_view response, std::string_view task_id);

}  // namespace rewardevo::llm
