#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <regex>
#include <thread>

#include "rewardevo/core/rng.hpp"
#include "rewardevo/llm/llm.hpp"
#include "rewardevo/rsl/rsl.hpp"

using namespace rewardevo;
using namespace rewardevo::llm;

namespace {

const std::filesystem::path kGoldenDir = std::filesystem::path(REWARDEVO_TEST_DATA_DIR) / "prompts";

// Every placeholder bound to a visible marker, so golden files show the layout.
Variables marker_vars(TemplateId id)
{
  Variables v;
  for (const auto& p : prompt_template(id).placeholders) {
    v[p] = "<" + p + ">";
  }
  return v;
}

// Minimal chat-completion endpoint on a loopback port driven by a status script.
class FakeEndpoint {
public:
  explicit FakeEndpoint(std::vector<int> statuses, std::string content = "```rsl\nreturn 0.0, {}\n```")
      : statuses_(std::move(statuses)), content_(std::move(content))
  {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const auto n = calls_++;
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      const int status = n < static_cast<int>(statuses_.size()) ? statuses_[static_cast<std::size_t>(n)] : 200;
      res.status = status;
      if (status == 200) {
        const Json body{{"choices", Json::array({Json{{"message", Json{{"role", "assistant"}, {"content", content_}}}}})},
                        {"usage", Json{{"prompt_tokens", 12}, {"completion_tokens", 7}}}};
        res.set_content(body.dump(), "application/json");
      } else {
        res.set_content(R"({"error": "scripted failure"})", "application/json");
      }
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint()
  {
    server_.stop();
    thread_.join();
  }

  ProviderConfig config() const
  {
    ProviderConfig c;
    c.endpoint = "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions";
    c.model = "test-model";
    c.backoff_initial_seconds = 0.001;
    c.timeout_seconds = 5.0;
    c.credential_env = "REWARDEVO_TEST_KEY";
    return c;
  }
  int calls() const { return calls_; }
  const std::string& last_body() const { return last_body_; }
  const std::string& last_auth() const { return last_auth_; }

private:
  httplib::Server server_;
  std::vector<int> statuses_;
  std::string content_;
  std::atomic<int> calls_{0};
  std::string last_body_;
  std::string last_auth_;
  int port_ = 0;
  std::thread thread_;
};

std::string random_text(Rng& rng)
{
  static const std::vector<std::string> kPieces{"```", "```rsl\n", "```thought\n", "\n", "[", "]", "{", "}", "\"",
                                                "\\", "return 0.0, {}", "é", "\xF0\x9F\x98\x80", "\xFF", "\x00",
                                                "source_task", ":", ",", " ", "DEDQN", "summary"};
  std::string s;
  const auto n = rng.below(40);
  for (std::uint64_t i = 0; i < n; ++i) {
    if (rng.bernoulli(0.2)) {
      s.push_back(static_cast<char>(rng.below(256)));
    } else {
      s += kPieces[rng.below(kPieces.size())];
    }
  }
  return s;
}

}  // namespace

TEST(Prompts, EveryTemplateRendersCompletely)
{
  static const std::regex kLeftover(R"(\{\{>?[a-z0-9_]+\}\})");
  for (auto id : kAllTemplates) {
    const auto& t = prompt_template(id);
    EXPECT_FALSE(t.placeholders.empty()) << template_key(id);
    const auto text = render_prompt(id, marker_vars(id));
    EXPECT_FALSE(std::regex_search(text, kLeftover)) << template_key(id);
    EXPECT_EQ(find_template(template_key(id)), id);
  }
}

TEST(Prompts, MissingVariableIsNamed)
{
  auto vars = marker_vars(TemplateId::M2);
  vars.erase("history_trace");
  try {
    render_prompt(TemplateId::M2, vars);
    FAIL() << "expected PromptError";
  } catch (const PromptError& e) {
    EXPECT_NE(std::string(e.what()).find("history_trace"), std::string::npos);
  }
}

TEST(Prompts, ValuesAreNotReExpanded)
{
  auto vars = marker_vars(TemplateId::M1Mutate);
  vars["reflection"] = "keep {{code}} literally";
  EXPECT_NE(render_prompt(TemplateId::M1Mutate, vars).find("keep {{code}} literally"), std::string::npos);
}

TEST(Prompts, InitCarriesPriorThoughtsAndDiversityRate)
{
  auto vars = marker_vars(TemplateId::Init);
  vars["prior_count"] = "1";
  vars["prior_individuals"] = "1. Reward one on every accepted trial. (fitness 0.31)";
  vars["difference_rate"] = "95";
  const auto text = render_prompt(TemplateId::Init, vars);
  EXPECT_NE(text.find("Reward one on every accepted trial."), std::string::npos);
  EXPECT_NE(text.find("95%"), std::string::npos);
}

TEST(Prompts, LocalReflectionListsEveryFailureCase)
{
  auto vars = marker_vars(TemplateId::M1Reflect);
  vars["failure_characteristics"] = "- Rastrigin: multimodal\n- Schwefel: deceptive\n- Katsuura: rugged";
  const auto text = render_prompt(TemplateId::M1Reflect, vars);
  for (const char* c : {"Rastrigin: multimodal", "Schwefel: deceptive", "Katsuura: rugged"}) {
    EXPECT_NE(text.find(c), std::string::npos) << c;
  }
}

TEST(Prompts, TransferPlanAsksForRequestedPathwayCount)
{
  auto vars = marker_vars(TemplateId::KtReflect);
  vars["n_direction"] = "3";
  EXPECT_NE(render_prompt(TemplateId::KtReflect, vars).find("Pick the 3 most promising transfers"), std::string::npos);
}

TEST(Prompts, LanguageCardCoversEveryBuiltinAndItsExampleParses)
{
  const auto& body = prompt_template(TemplateId::Init).body;
  const auto line_start = body.find("- Builtins:");
  ASSERT_NE(line_start, std::string::npos);
  const auto line = body.substr(line_start, body.find('\n', line_start) - line_start);
  for (const auto& [name, arity] : rsl::builtin_arities()) {
    EXPECT_TRUE(std::regex_search(line, std::regex(" " + name + "[,.]"))) << name;
  }
  const auto fence = body.find("```rsl\n");
  ASSERT_NE(fence, std::string::npos);
  const auto end = body.find("```", fence + 7);
  EXPECT_NO_THROW(rsl::parse(body.substr(fence + 7, end - fence - 7)));
}

TEST(Prompts, TaskDescriptionListsEveryField)
{
  for (auto task : envs::kAllTasks) {
    const auto& meta = envs::load_task_metadata(task);
    const auto text = describe_task(meta);
    for (const auto& [name, info] : meta.c_code) {
      EXPECT_NE(text.find("- " + name + " ("), std::string::npos) << name;
    }
  }
}

// Set REWARDEVO_UPDATE_GOLDEN=1 to rewrite the fixtures after a deliberate template edit.
TEST(Prompts, GoldenFiles)
{
  const bool update = std::getenv("REWARDEVO_UPDATE_GOLDEN") != nullptr;
  for (auto id : kAllTemplates) {
    const auto path = kGoldenDir / (std::string(template_key(id)) + ".txt");
    const auto text = render_prompt(id, marker_vars(id));
    if (update) {
      write_text_file(path, text);
      continue;
    }
    ASSERT_TRUE(std::filesystem::exists(path)) << path << " (run with REWARDEVO_UPDATE_GOLDEN=1)";
    EXPECT_EQ(read_text_file(path), text) << template_key(id);
  }
}

TEST(Replay, PerTemplateFifo)
{
  auto p = ReplayProvider::from_jsonl(
      "{\"template_id\": \"m2\", \"response\": \"r1\"}\n"
      "\n"
      "{\"template_id\": \"c1\", \"response\": \"x\"}\n"
      "{\"template_id\": \"m2\", \"response\": \"r2\"}\n");
  EXPECT_EQ(p.remaining(TemplateId::M2), 2u);
  EXPECT_EQ(p.complete(TemplateId::M2, "prompt").response_text, "r1");
  const auto second = p.complete(TemplateId::M2, "prompt");
  EXPECT_EQ(second.response_text, "r2");
  EXPECT_EQ(second.attempt, 1);
  EXPECT_EQ(second.template_id, "m2");
  try {
    p.complete(TemplateId::M2, "prompt");
    FAIL() << "expected exhaustion";
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.kind(), ProviderErrorKind::Exhausted);
  }
  EXPECT_EQ(p.complete(TemplateId::C1, "prompt").response_text, "x");
}

TEST(Replay, TaskScopedEntriesComeFirst)
{
  auto p = ReplayProvider::from_jsonl(
      "{\"template_id\": \"init\", \"response\": \"shared\"}\n"
      "{\"template_id\": \"init\", \"task\": \"RLEPSO\", \"response\": \"pso\"}\n");
  EXPECT_EQ(p.remaining(TemplateId::Init), 1u);
  EXPECT_EQ(p.remaining(TemplateId::Init, "pso-parameter-control"), 2u);
  EXPECT_EQ(p.complete(TemplateId::Init, "p", "de-operator-selection").response_text, "shared");
  const auto ex = p.complete(TemplateId::Init, "p", "pso-parameter-control");
  EXPECT_EQ(ex.response_text, "pso");
  EXPECT_EQ(ex.to_json()["task"], "pso-parameter-control");
  EXPECT_FALSE(p.discard(TemplateId::Init, "pso-parameter-control"));
  EXPECT_THROW(ReplayProvider::from_jsonl("{\"template_id\": \"init\", \"task\": \"nope\", \"response\": \"r\"}\n"),
               std::invalid_argument);
}

TEST(Replay, MalformedScriptsAreRejected)
{
  EXPECT_THROW(ReplayProvider::from_jsonl("not json\n"), std::invalid_argument);
  EXPECT_THROW(ReplayProvider::from_jsonl("{\"template_id\": \"m9\", \"response\": \"r\"}\n"), std::invalid_argument);
  EXPECT_THROW(ReplayProvider::from_jsonl("{\"template_id\": \"m2\"}\n"), std::invalid_argument);
}

TEST(Recording, AppendsOneLinePerExchange)
{
  const auto path = std::filesystem::temp_directory_path() / "rewardevo_exchanges_test.jsonl";
  std::filesystem::remove(path);
  ReplayProvider inner;
  inner.push(TemplateId::Init, "a");
  inner.push(TemplateId::Init, "b");
  RecordingProvider rec(inner, path);
  rec.complete(TemplateId::Init, "p1");
  rec.complete(TemplateId::Init, "p2");
  const auto text = read_text_file(path);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  const auto first = Json::parse(text.substr(0, text.find('\n')));
  EXPECT_EQ(first["template_id"], "init");
  EXPECT_EQ(first["response"], "a");
  EXPECT_EQ(first["prompt_sha256"].get<std::string>().size(), 64u);
  std::filesystem::remove(path);
}

TEST(Http, RateLimitedThenSucceedsOnSecondAttempt)
{
  FakeEndpoint server({429});
  ::setenv("REWARDEVO_TEST_KEY", "sk-test", 1);
  HttpProvider provider(server.config());
  const auto ex = provider.complete(TemplateId::M1Reflect, "analyse this");
  ::unsetenv("REWARDEVO_TEST_KEY");
  EXPECT_EQ(ex.attempt, 2);
  EXPECT_EQ(server.calls(), 2);
  EXPECT_EQ(ex.prompt_tokens, 12);
  EXPECT_EQ(ex.completion_tokens, 7);
  EXPECT_NE(ex.response_text.find("```rsl"), std::string::npos);
  EXPECT_EQ(server.last_auth(), "Bearer sk-test");

  const auto sent = Json::parse(server.last_body());
  EXPECT_EQ(sent["model"], "test-model");
  EXPECT_DOUBLE_EQ(sent["temperature"].get<double>(), 0.3);
  EXPECT_EQ(sent["messages"].back()["role"], "user");
  EXPECT_EQ(sent["messages"].back()["content"], "analyse this");
}

TEST(Http, ClientErrorIsNotRetried)
{
  FakeEndpoint server({400});
  HttpProvider provider(server.config());
  try {
    provider.complete(TemplateId::Init, "p");
    FAIL() << "expected an HTTP error";
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.kind(), ProviderErrorKind::Http);
  }
  EXPECT_EQ(server.calls(), 1);
}

TEST(Http, RetriesAreBoundedByMaxAttempts)
{
  FakeEndpoint server({503, 503, 503, 503});
  auto cfg = server.config();
  cfg.max_attempts = 3;
  HttpProvider provider(cfg);
  EXPECT_THROW(provider.complete(TemplateId::Init, "p"), ProviderError);
  EXPECT_EQ(server.calls(), 3);
}

TEST(Http, EmptyCompletionIsAnError)
{
  FakeEndpoint server({}, "");
  auto cfg = server.config();
  cfg.max_attempts = 2;
  HttpProvider provider(cfg);
  try {
    provider.complete(TemplateId::C2, "p");
    FAIL() << "expected empty-completion error";
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.kind(), ProviderErrorKind::EmptyCompletion);
  }
  EXPECT_EQ(server.calls(), 2);
}

TEST(Http, UnreachableEndpointIsATransportError)
{
  ProviderConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1/v1/chat/completions";
  cfg.max_attempts = 1;
  cfg.timeout_seconds = 1.0;
  HttpProvider provider(cfg);
  try {
    provider.complete(TemplateId::Init, "p");
    FAIL() << "expected a transport error";
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.kind(), ProviderErrorKind::Transport);
  }
  cfg.endpoint = "ftp://example.org";
  EXPECT_THROW(HttpProvider{cfg}, ProviderError);
}

TEST(Http, RateLimitSpacesRequests)
{
  FakeEndpoint server({});
  auto cfg = server.config();
  cfg.requests_per_minute = 600.0;  // one request every 100 ms
  HttpProvider provider(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 3; ++i) {
    provider.complete(TemplateId::Init, "p");
  }
  EXPECT_GE(std::chrono::steady_clock::now() - t0, std::chrono::milliseconds(195));
}

TEST(ProviderConfigTest, Validation)
{
  EXPECT_THROW(ProviderConfig::from_json(Json{{"max_attempts", 0}}), std::invalid_argument);
  EXPECT_THROW(ProviderConfig::from_json(Json{{"model", 3}}), std::invalid_argument);
  const auto c = ProviderConfig::from_json(Json{{"model", "m"}, {"requests_per_minute", 30}});
  EXPECT_EQ(c.model, "m");
  EXPECT_EQ(ProviderConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_DOUBLE_EQ(c.temperature_for(TemplateId::Init), 1.0);
  EXPECT_DOUBLE_EQ(c.temperature_for(TemplateId::KtReflect), 0.3);
}

TEST(ParseIndividual, ProseThenRslBlock)
{
  const auto p = parse_individual("idea text\n```rsl\nreturn 0.0, {}\n```");
  EXPECT_EQ(p.thought, "idea text");
  EXPECT_EQ(p.code, "return 0.0, {}");
}

TEST(ParseIndividual, FirstRslTaggedBlockWins)
{
  const auto p = parse_individual("x\n```rsl\nreturn 1.0, {}\n```\nmore\n```rsl\nreturn 2.0, {}\n```\n");
  EXPECT_EQ(p.code, "return 1.0, {}");
  const auto q = parse_individual("x\n```python\nprint(1)\n```\n```rsl\nreturn 3.0, {}\n```\n");
  EXPECT_EQ(q.code, "return 3.0, {}");
  const auto r = parse_individual("```\nreturn 4.0, {}\n```\n");
  EXPECT_EQ(r.code, "return 4.0, {}");
  EXPECT_EQ(r.thought, "");
}

TEST(ParseIndividual, FencedThoughtBlock)
{
  const auto p = parse_individual("```thought\nreward the gap\n```\n```rsl\nreturn 0.5, {}\n```");
  EXPECT_EQ(p.thought, "reward the gap");
  EXPECT_EQ(p.code, "return 0.5, {}");
}

TEST(ParseIndividual, RejectsProseOnlyAndEmptyCode)
{
  EXPECT_THROW(parse_individual("just an idea, no code"), ResponseParseError);
  EXPECT_THROW(parse_individual("idea\n```rsl\n   \n```"), ResponseParseError);
  EXPECT_THROW(parse_individual("```thought\nonly a thought\n```"), ResponseParseError);
}

TEST(ParseIndividual, UnterminatedBlockRunsToEnd)
{
  EXPECT_EQ(parse_individual("idea\n```rsl\nreturn 0.0, {}\n").code, "return 0.0, {}");
}

TEST(ParseIndividual, NeverCrashesOnArbitraryInput)
{
  Rng rng(99);
  int parsed = 0;
  for (int i = 0; i < 10000; ++i) {
    const auto text = random_text(rng);
    try {
      parse_individual(text);
      ++parsed;
    } catch (const ResponseParseError&) {
    }
    try {
      parse_kt_plan(text);
    } catch (const ResponseParseError&) {
    }
    parse_summary(text);
  }
  EXPECT_GT(parsed, 0);
}

TEST(ParseKtPlan, WellFormedArray)
{
  const auto plan = parse_kt_plan(R"([
    {"source_task": "de-operator-selection", "target_task": "algorithm-selection",
     "rationale": "both pick DE operators", "transfer_strategy_guidance": "map accepted to improvement"},
    {"source_task": "RLEPSO", "target_task": "DEDQN", "rationale": "r", "transfer_strategy_guidance": "g"}
  ])");
  ASSERT_EQ(plan.size(), 2u);
  EXPECT_EQ(plan[0].source, envs::TaskId::DeOperatorSelection);
  EXPECT_EQ(plan[0].target, envs::TaskId::AlgorithmSelection);
  EXPECT_EQ(plan[0].guidance, "map accepted to improvement");
  EXPECT_EQ(plan[1].source, envs::TaskId::PsoParameterControl);
  EXPECT_EQ(plan[1].target, envs::TaskId::DeOperatorSelection);
}

TEST(ParseKtPlan, FencedArrayAndLongKeyNames)
{
  const auto plan = parse_kt_plan(
      "Here is my plan [draft]:\n```json\n[{\"source_task_Metabbo_algorithm\": \"RLDAS\", "
      "\"target_task_Metabbo_algorithm\": \"RLEPSO\", \"rationale\": \"r [x]\", "
      "\"transfer_strategy_guidance\": \"g\"}]\n```");
  ASSERT_EQ(plan.size(), 1u);
  EXPECT_EQ(plan[0].source, envs::TaskId::AlgorithmSelection);
  EXPECT_EQ(plan[0].rationale, "r [x]");
}

TEST(ParseKtPlan, UnknownAndSelfTransfersDropped)
{
  const auto plan = parse_kt_plan(R"([
    {"source_task": "GLEET", "target_task": "DEDQN", "rationale": "", "transfer_strategy_guidance": ""},
    {"source_task": "DEDQN", "target_task": "DEDQN", "rationale": "", "transfer_strategy_guidance": ""},
    {"source_task": "DEDQN", "target_task": "RLDAS", "rationale": "", "transfer_strategy_guidance": ""}
  ])");
  ASSERT_EQ(plan.size(), 1u);
  EXPECT_EQ(plan[0].target, envs::TaskId::AlgorithmSelection);
  EXPECT_THROW(parse_kt_plan("no plan today"), ResponseParseError);
}

TEST(ParseSummary, TaggedBlockOrWholeText)
{
  EXPECT_EQ(parse_summary("notes\n```summary\nclip totals\n```\n"), "clip totals");
  EXPECT_EQ(parse_summary("  plain notes \n"), "plain notes");
}

TEST(ParseMetadata, ObjectWithFieldDictionary)
{
  const auto m = parse_metadata(
      "```json\n{\"c_alg\": \"DE with a learned operator choice\", \"c_code\": {\"progress\": {\"type\": \"scalar\", "
      "\"description\": \"FEs over budget\"}}}\n```",
      "de-operator-selection");
  EXPECT_EQ(m.task_id, "de-operator-selection");
  EXPECT_EQ(m.c_code.at("progress").type, "scalar");
  EXPECT_THROW(parse_metadata("{\"c_alg\": \"x\"}", "t"), ResponseParseError);
  EXPECT_THROW(parse_metadata("{\"c_alg\": \"x\", \"c_code\": {\"a\": 1}}", "t"), ResponseParseError);
}
