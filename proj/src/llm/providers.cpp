#include <cmath>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "rewardevo/core/digest.hpp"
#include "rewardevo/llm/llm.hpp"

namespace rewardevo::llm {

Json ProviderConfig::to_json() const
{
  return Json{{"endpoint", endpoint},
              {"model", model},
              {"temperature_generation", temperature_generation},
              {"temperature_reflection", temperature_reflection},
              {"max_attempts", max_attempts},
              {"timeout_seconds", timeout_seconds},
              {"requests_per_minute", requests_per_minute},
              {"backoff_initial_seconds", backoff_initial_seconds},
              {"credential_env", credential_env}};
}

ProviderConfig ProviderConfig::from_json(const Json& j)
{
  ProviderConfig c;
  try {
    c.endpoint = j.value("endpoint", c.endpoint);
    c.model = j.value("model", c.model);
    c.temperature_generation = j.value("temperature_generation", c.temperature_generation);
    c.temperature_reflection = j.value("temperature_reflection", c.temperature_reflection);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
    c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
    c.requests_per_minute = j.value("requests_per_minute", c.requests_per_minute);
    c.backoff_initial_seconds = j.value("backoff_initial_seconds", c.backoff_initial_seconds);
    c.credential_env = j.value("credential_env", c.credential_env);
  } catch (const Json::exception& e) {
    throw std::invalid_argument(std::string("provider config: ") + e.what());
  }
  if (c.max_attempts < 1) {
    throw std::invalid_argument("provider config: max_attempts must be at least 1");
  }
  return c;
}

Json ChatExchange::to_json() const
{
  Json j{{"template_id", template_id}, {"prompt_sha256", sha256_hex(rendered_prompt)},
         {"response", response_text},  {"provider", provider_tag},
         {"attempt", attempt},         {"latency_ms", latency_ms}};
  if (!task.empty()) {
    j["task"] = task;
  }
  if (prompt_tokens) {
    j["prompt_tokens"] = *prompt_tokens;
  }
  if (completion_tokens) {
    j["completion_tokens"] = *completion_tokens;
  }
  return j;
}

std::string_view to_string(ProviderErrorKind kind)
{
  switch (kind) {
    case ProviderErrorKind::Exhausted: return "provider-exhausted";
    case ProviderErrorKind::Transport: return "transport";
    case ProviderErrorKind::Http: return "http";
    case ProviderErrorKind::EmptyCompletion: return "empty-completion";
    case ProviderErrorKind::Configuration: return "configuration";
  }
  return "unknown";
}

ProviderError::ProviderError(ProviderErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind)
{
}

// ---- replay -------------------------------------------------------------------

ReplayProvider ReplayProvider::from_jsonl(std::string_view text)
{
  ReplayProvider p;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    const auto j = Json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("template_id") || !j.contains("response") ||
        !j["template_id"].is_string() || !j["response"].is_string()) {
      throw std::invalid_argument("replay line " + std::to_string(lineno) +
                                  ": expected {\"template_id\": ..., \"response\": ...}");
    }
    const auto id = find_template(j["template_id"].get<std::string>());
    if (!id) {
      throw std::invalid_argument("replay line " + std::to_string(lineno) + ": unknown template " +
                                  j["template_id"].get<std::string>());
    }
    std::string task;
    if (j.contains("task")) {
      const auto t = j["task"].is_string() ? envs::find_task(j["task"].get<std::string>()) : std::nullopt;
      if (!t) {
        throw std::invalid_argument("replay line " + std::to_string(lineno) + ": unknown task " + j["task"].dump());
      }
      task = envs::task_key(*t);
    }
    p.push(*id, j["response"].get<std::string>(), task);
  }
  return p;
}

ReplayProvider ReplayProvider::from_file(const std::filesystem::path& path)
{
  return from_jsonl(read_text_file(path));
}

void ReplayProvider::push(TemplateId id, std::string response, std::string_view task)
{
  std::lock_guard lock(mu_);
  queues_[{id, std::string(task)}].push_back(std::move(response));
}

std::size_t ReplayProvider::remaining(TemplateId id, std::string_view task) const
{
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  if (auto it = queues_.find({id, std::string(task)}); it != queues_.end()) {
    n += it->second.size();
  }
  if (!task.empty()) {
    if (auto it = queues_.find({id, std::string()}); it != queues_.end()) {
      n += it->second.size();
    }
  }
  return n;
}

// Caller holds mu_.
std::deque<std::string>* ReplayProvider::route(TemplateId id, std::string_view task)
{
  if (!task.empty()) {
    if (auto it = queues_.find({id, std::string(task)}); it != queues_.end() && !it->second.empty()) {
      return &it->second;
    }
  }
  if (auto it = queues_.find({id, std::string()}); it != queues_.end() && !it->second.empty()) {
    return &it->second;
  }
  return nullptr;
}

bool ReplayProvider::discard(TemplateId id, std::string_view task)
{
  std::lock_guard lock(mu_);
  auto* q = route(id, task);
  if (q == nullptr) {
    return false;
  }
  q->pop_front();
  return true;
}

ChatExchange ReplayProvider::do_complete(TemplateId id, std::string_view prompt, std::string_view task)
{
  ChatExchange ex;
  {
    std::lock_guard lock(mu_);
    auto* q = route(id, task);
    if (q == nullptr) {
      throw ProviderError(ProviderErrorKind::Exhausted, "no scripted response left for template " +
                                                            std::string(template_key(id)) +
                                                            (task.empty() ? "" : " (task " + std::string(task) + ")"));
    }
    ex.response_text = std::move(q->front());
    q->pop_front();
  }
  ex.task = std::string(task);
  ex.template_id = std::string(template_key(id));
  ex.rendered_prompt = std::string(prompt);
  ex.provider_tag = tag();
  return ex;
}

// ---- live HTTP ----------------------------------------------------------------

HttpProvider::HttpProvider(ProviderConfig config) : config_(std::move(config))
{
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(config_.endpoint, m, kUrl)) {
    throw ProviderError(ProviderErrorKind::Configuration, "endpoint is not an http(s) URL: " + config_.endpoint);
  }
  origin_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
  if (!config_.credential_env.empty()) {
    if (const char* key = std::getenv(config_.credential_env.c_str())) {
      api_key_ = key;
    }
  }
}

void HttpProvider::wait_for_slot()
{
  if (config_.requests_per_minute <= 0.0) {
    return;
  }
  const auto interval = std::chrono::duration_cast<std::chrono::steady_clock::duration>(
      std::chrono::duration<double>(60.0 / config_.requests_per_minute));
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(rate_mu_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_slot_);
    next_slot_ = slot + interval;
  }
  std::this_thread::sleep_until(slot);
}

ChatExchange HttpProvider::do_complete(TemplateId id, std::string_view prompt, std::string_view task)
{
  const Json request{{"model", config_.model},
                     {"temperature", config_.temperature_for(id)},
                     {"messages",
                      Json::array({Json{{"role", "system"},
                                        {"content", "You are a careful reward engineer. Follow the requested answer "
                                                    "format exactly."}},
                                   Json{{"role", "user"}, {"content", std::string(prompt)}}})}};
  const std::string body = request.dump();
  httplib::Headers headers;
  if (!api_key_.empty()) {
    headers.emplace("Authorization", "Bearer " + api_key_);
  }

  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    double retry_after = -1.0;
    wait_for_slot();
    const auto t0 = std::chrono::steady_clock::now();
    httplib::Client client(origin_);
    const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    const auto res = client.Post(path_, headers, body, "application/json");
    const double latency = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();

    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
    } else if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      if (res->has_header("Retry-After")) {
        retry_after = std::atof(res->get_header_value("Retry-After").c_str());
      }
    } else if (res->status != 200) {
      throw ProviderError(ProviderErrorKind::Http, "HTTP " + std::to_string(res->status) + ": " + res->body);
    } else {
      const auto j = Json::parse(res->body, nullptr, false);
      std::string content;
      if (!j.is_discarded()) {
        try {
          content = j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const Json::exception&) {
          content.clear();
        }
      }
      if (!content.empty()) {
        ChatExchange ex;
        ex.template_id = std::string(template_key(id));
        ex.task = std::string(task);
        ex.rendered_prompt = std::string(prompt);
        ex.response_text = std::move(content);
        ex.provider_tag = tag();
        ex.latency_ms = latency;
        ex.attempt = attempt;
        if (const auto usage = j.find("usage"); usage != j.end() && usage->is_object()) {
          if (usage->contains("prompt_tokens") && (*usage)["prompt_tokens"].is_number_integer()) {
            ex.prompt_tokens = (*usage)["prompt_tokens"].get<long>();
          }
          if (usage->contains("completion_tokens") && (*usage)["completion_tokens"].is_number_integer()) {
            ex.completion_tokens = (*usage)["completion_tokens"].get<long>();
          }
        }
        return ex;
      }
      last_error = "empty completion";
    }

    if (attempt < config_.max_attempts) {
      double wait = config_.backoff_initial_seconds * std::pow(2.0, attempt - 1);
      if (retry_after >= 0.0) {
        wait = std::min(retry_after, 60.0);
      }
      spdlog::warn("chat completion attempt {} failed ({}); retrying in {:.3f}s", attempt, last_error, wait);
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
    }
  }
  const auto kind = last_error == "empty completion" ? ProviderErrorKind::EmptyCompletion
                    : last_error.starts_with("HTTP")  ? ProviderErrorKind::Http
                                                      : ProviderErrorKind::Transport;
  throw ProviderError(kind, last_error + " after " + std::to_string(config_.max_attempts) + " attempt(s)");
}

// ---- recording ----------------------------------------------------------------

RecordingProvider::RecordingProvider(Provider& inner, std::filesystem::path log_path)
    : inner_(inner), path_(std::move(log_path))
{
}

ChatExchange RecordingProvider::do_complete(TemplateId id, std::string_view prompt, std::string_view task)
{
  auto ex = inner_.complete(id, prompt, task);
  std::lock_guard lock(mu_);
  append_text_file(path_, ex.to_json().dump() + "\n");
  return ex;
}

}  // namespace rewardevo::llm
