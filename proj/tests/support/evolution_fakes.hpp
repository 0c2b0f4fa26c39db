#pragma once

// Test doubles for the search loop: a stateless scripted provider whose
// answers depend only on the prompt text, and a synthetic fitness that reads
// an optional `# fitness <x>` tag from the program source.

#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include <spdlog/fmt/fmt.h>

#include "rewardevo/core/rng.hpp"
#include "rewardevo/envs/envs.hpp"
#include "rewardevo/eval/eval.hpp"
#include "rewardevo/evolution/evolution.hpp"
#include "rewardevo/llm/llm.hpp"

namespace rewardevo::testsupport {

inline constexpr double kAnchorFitness = 0.5;

// Valid reward for `task`. Four program families per task; `scale` keeps
// variants distinct.
inline std::string reward_source(envs::TaskId task, int family, double scale, std::optional<double> fitness = {})
{
  std::string body;
  const auto s = fmt::format("{:.4f}", scale);
  switch (task) {
    case envs::TaskId::DeOperatorSelection: {
      const char* forms[] = {
          "r = {s} * ctx.accepted",
          "r = {s} * clip(ctx.delta_cost / max(abs(ctx.parent_cost), 1e-12), -1.0, 1.0)",
          "r = {s} * clip(ctx.gbest_improve / max(ctx.std_cost, 1e-12), 0.0, 1.0)",
          "r = {s} * (ctx.accepted + ctx.progress * ctx.accepted)",
      };
      body = fmt::format(fmt::runtime(forms[family % 4]), fmt::arg("s", s));
      break;
    }
    case envs::TaskId::PsoParameterControl: {
      const char* forms[] = {
          "r = {s} * (1.0 if ctx.gbest_val < ctx.pre_gbest else 0.0)",
          "r = {s} * clip((ctx.pre_gbest - ctx.gbest_val) / max(abs(ctx.pre_gbest), 1e-12), 0.0, 1.0)",
          "r = {s} * clip(ctx.gbest_improve / max(ctx.std_cost, 1e-12), 0.0, 1.0)",
          "r = {s} * ctx.progress * (1.0 if ctx.gbest_val < ctx.pre_gbest else 0.0)",
      };
      body = fmt::format(fmt::runtime(forms[family % 4]), fmt::arg("s", s));
      break;
    }
    case envs::TaskId::AlgorithmSelection: {
      const char* forms[] = {
          "r = {s} * (ctx.last_cost - ctx.current_gbest) / ctx.cost_scale_factor",
          "r = {s} * (1.0 if ctx.current_gbest < ctx.last_cost else 0.0)",
          "r = {s} * log1p(max(ctx.last_cost - ctx.current_gbest, 0.0) / ctx.cost_scale_factor)",
          "r = {s} * (ctx.last_cost - ctx.current_gbest) / ctx.cost_scale_factor * ctx.FEs / ctx.MaxFEs",
      };
      body = fmt::format(fmt::runtime(forms[family % 4]), fmt::arg("s", s));
      break;
    }
  }
  std::string out = fitness ? fmt::format("# fitness {}\n", *fitness) : std::string();
  return out + body + "\nreturn r, {\"r\": r}";
}

inline std::string individual_response(const std::string& source, std::string_view idea = "A scripted idea.")
{
  return std::string(idea) + "\n\n```rsl\n" + source + "\n```\n";
}

// Answers derived from a hash of the prompt, so identical search states get
// identical answers no matter how often the provider is rebuilt.
class ScriptedProvider : public llm::Provider {
public:
  // Fitness tag for a generation answer; empty means hash-derived fitness.
  std::function<std::optional<double>(llm::TemplateId, envs::TaskId)> fitness_tag;
  // Served first, whatever the template.
  std::deque<std::string> front;
  // Templates that always get an unusable answer.
  std::set<llm::TemplateId> broken;
  // Throw a transport error once this many calls were served.
  long fail_after = -1;

  std::string tag() const override { return "scripted"; }

  long calls() const { return calls_; }
  long calls_for(llm::TemplateId id) const
  {
    std::lock_guard lock(mu_);
    long n = 0;
    for (const auto& [t, _] : prompts_) {
      n += t == id ? 1 : 0;
    }
    return n;
  }
  std::vector<std::string> prompts_for(llm::TemplateId id) const
  {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [t, p] : prompts_) {
      if (t == id) {
        out.push_back(p);
      }
    }
    return out;
  }

protected:
  llm::ChatExchange do_complete(llm::TemplateId id, std::string_view prompt, std::string_view task) override
  {
    std::lock_guard lock(mu_);
    if (fail_after >= 0 && calls_ >= fail_after) {
      throw llm::ProviderError(llm::ProviderErrorKind::Transport, "scripted outage");
    }
    ++calls_;
    prompts_.emplace_back(id, std::string(prompt));
    llm::ChatExchange ex;
    ex.template_id = std::string(llm::template_key(id));
    ex.task = std::string(task);
    ex.rendered_prompt = std::string(prompt);
    ex.provider_tag = tag();
    ex.response_text = answer(id, prompt, task);
    return ex;
  }

private:
  std::string answer(llm::TemplateId id, std::string_view prompt, std::string_view task)
  {
    if (!front.empty()) {
      auto r = std::move(front.front());
      front.pop_front();
      return r;
    }
    if (broken.contains(id)) {
      return id == llm::TemplateId::KtExecute ? individual_response("return ctx.not_a_field, {}")
                                              : "I would rather not answer.";
    }
    const auto h = fnv1a64(prompt);
    switch (id) {
      case llm::TemplateId::M1Reflect:
        return "The reward stalls on rugged landscapes; reward late improvements more strongly.";
      case llm::TemplateId::M3Reflect:
        return fmt::format("```summary\nScaled improvements beat binary signals ({:x}).\n```", h & 0xffff);
      case llm::TemplateId::MetaSummarize: {
        const auto meta = envs::load_task_metadata(envs::task_from_key(task));
        return fmt::format("{{\"c_alg\": \"Scripted summary of {}.\", \"c_code\": {}}}", task,
                           meta.to_json()["c_code"].dump());
      }
      case llm::TemplateId::KtReflect: return kt_plan(prompt);
      default: break;
    }
    const auto t = envs::task_from_key(task);
    const int family = static_cast<int>(h % 4);
    const double scale = 0.5 + static_cast<double>((h >> 8) % 1000) / 1000.0;
    const auto fitness = fitness_tag ? fitness_tag(id, t) : std::nullopt;
    return individual_response(reward_source(t, family, scale, fitness),
                               fmt::format("Scripted idea {:x} for {}.", h & 0xffffff, task));
  }

  // Ring over the task names listed in the prompt: t0 -> t1 -> ... -> t0.
  static std::string kt_plan(std::string_view prompt)
  {
    const std::string marker = "Valid task names: ";
    const auto b = prompt.find(marker);
    const auto e = prompt.find(".\n", b);
    std::vector<std::string> names;
    std::stringstream ss{std::string(prompt.substr(b + marker.size(), e - b - marker.size()))};
    std::string name;
    while (std::getline(ss, name, ',')) {
      names.push_back(name.substr(name.find_first_not_of(' ')));
    }
    auto plan = Json::array();
    for (std::size_t i = 0; i < names.size() && names.size() > 1; ++i) {
      plan.push_back(Json{{"source_task", names[i]},
                          {"target_task", names[(i + 1) % names.size()]},
                          {"rationale", "Both reward improvement of the best cost."},
                          {"transfer_strategy_guidance", "Map the best-cost fields one to one."}});
    }
    return "```json\n" + plan.dump(2) + "\n```";
  }

  mutable std::mutex mu_;
  long calls_ = 0;
  std::vector<std::pair<llm::TemplateId, std::string>> prompts_;
};

// `# fitness <x>` tag when present, 0.5 for the expert anchors, otherwise a
// value in [0.1, 0.9] derived from the program hash. `# invalid` fails.
inline eval::FitnessReport synthetic_report(envs::TaskId task, const rsl::RewardProgram& program, std::size_t n_test)
{
  eval::FitnessReport r;
  if (program.source.find("# invalid") != std::string::npos) {
    r.invalid = true;
    r.failure_reason = "scripted failure";
    return r;
  }
  const auto tag = program.source.find("# fitness ");
  std::vector<double> medians(n_test);
  if (tag != std::string::npos) {
    const double f = std::stod(program.source.substr(tag + 10));
    std::fill(medians.begin(), medians.end(), f);
  } else if (program.content_hash == envs::handcrafted_reward(task).content_hash) {
    std::fill(medians.begin(), medians.end(), kAnchorFitness);
  } else {
    for (std::size_t i = 0; i < n_test; ++i) {
      medians[i] = 0.1 + 0.8 * static_cast<double>(fnv1a64(program.content_hash + std::to_string(i)) % 10007) / 10007.0;
    }
  }
  r.score_matrix.assign(n_test, std::vector<double>{});
  for (std::size_t i = 0; i < n_test; ++i) {
    r.score_matrix[i] = {medians[i]};
  }
  r.fitness = eval::aggregate_scores(r.score_matrix, &r.per_instance_medians);
  r.policy_digest = program.content_hash.substr(0, 16);
  r.budget_used = 1;
  return r;
}

inline evolution::FunctionFitness synthetic_fitness(int dimension = 2)
{
  auto suite = problems::make_suite(dimension, 0);
  const auto n = suite.test_instances.size();
  return evolution::FunctionFitness(std::move(suite), [n](envs::TaskId t, const rsl::RewardProgram& p) {
    return synthetic_report(t, p, n);
  });
}

}  // namespace rewardevo::testsupport
