#include <algorithm>

#include "rewardevo/evolution/evolution.hpp"

namespace rewardevo::evolution {

namespace {

constexpr std::array<std::string_view, 9> kOperatorKeys{"init", "expert", "m1", "m2", "m3",
                                                        "c1",   "c2",     "kt", "m0_simple"};

const std::set<std::string, std::less<>>& known_keys()
{
  static const std::set<std::string, std::less<>> keys{
      "tasks",          "dimension",        "suite_seed",       "niche_size",        "generations",
      "history_length", "failure_cases",    "archive_cap",      "archive_prompt_entries", "kt_pathways",
      "init_max_attempts", "difference_rate", "format_attempts", "online_metadata",   "gamma_search",
      "gamma_final",    "fe_budget",        "training_episodes", "profile",          "provider",
      "replay",         "workers",          "seed",             "replace_ops",       "disable_kt"};
  return keys;
}

template <typename T>
void read(const Json& j, const char* key, T& out)
{
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const Json::exception&) {
      throw ConfigError(std::string("config field '") + key + "' has the wrong type");
    }
  }
}

void require(bool ok, const std::string& message)
{
  if (!ok) {
    throw ConfigError(message);
  }
}

}  // namespace

std::string_view operator_key(OperatorTag tag) { return kOperatorKeys[static_cast<std::size_t>(tag)]; }

OperatorTag operator_from_key(std::string_view key)
{
  for (std::size_t i = 0; i < kOperatorKeys.size(); ++i) {
    if (kOperatorKeys[i] == key) {
      return static_cast<OperatorTag>(i);
    }
  }
  if (key == "m0") {
    return OperatorTag::M0Simple;
  }
  throw std::invalid_argument("unknown operator: " + std::string(key));
}

eval::EvalBudget RunConfig::budget() const
{
  eval::EvalBudget b;
  b.gamma = profile == "final" ? gamma_final : gamma_search;
  b.fe_budget = fe_budget;
  b.training_episodes = training_episodes;
  return b;
}

void RunConfig::validate() const
{
  require(!tasks.empty(), "tasks: at least one task is required");
  std::set<envs::TaskId> seen(tasks.begin(), tasks.end());
  require(seen.size() == tasks.size(), "tasks: a task is listed twice");
  require(dimension >= 2, "dimension must be at least 2");
  require(niche_size >= 1, "niche_size must be at least 1");
  require(generations >= 1, "generations must be at least 1");
  require(history_length >= 0, "history_length must be non-negative");
  require(failure_cases >= 1, "failure_cases must be at least 1");
  require(archive_cap >= 1, "archive_cap must be at least 1");
  require(archive_prompt_entries >= 1, "archive_prompt_entries must be at least 1");
  require(kt_pathways >= 0, "kt_pathways must be non-negative");
  require(init_max_attempts == 0 || init_max_attempts >= niche_size - 1,
          "init_max_attempts must be 0 (default) or at least niche_size - 1");
  require(difference_rate >= 0 && difference_rate <= 100, "difference_rate must lie in [0, 100]");
  require(format_attempts >= 1, "format_attempts must be at least 1");
  require(gamma_search >= 1 && gamma_final >= 1, "gamma_search and gamma_final must be at least 1");
  require(training_episodes >= 1, "training_episodes must be at least 1");
  require(profile == "search" || profile == "final", "profile must be 'search' or 'final'");
  require(workers >= 0, "workers must be non-negative");
  require(provider.max_attempts >= 1, "provider.max_attempts must be at least 1");
  for (auto t : tasks) {
    const auto task = envs::make_task(t);
    require(fe_budget >= 2L * task.optimizer.population_size && fe_budget <= task.optimizer.max_fes,
            "fe_budget must lie in [" + std::to_string(2L * task.optimizer.population_size) + ", " +
                std::to_string(task.optimizer.max_fes) + "] for " + std::string(envs::task_key(t)));
  }
  for (auto op : replaced_by_m0) {
    require(std::find(kOffspringOperators.begin(), kOffspringOperators.end(), op) != kOffspringOperators.end(),
            "replace_ops: only m1, m2, m3, c1 and c2 can be replaced");
  }
}

Json RunConfig::to_json() const
{
  Json task_keys = Json::array();
  for (auto t : tasks) {
    task_keys.push_back(envs::task_key(t));
  }
  Json replace = Json::object();
  for (auto op : replaced_by_m0) {
    replace[std::string(operator_key(op))] = "m0";
  }
  return Json{{"tasks", task_keys},
              {"dimension", dimension},
              {"suite_seed", suite_seed},
              {"niche_size", niche_size},
              {"generations", generations},
              {"history_length", history_length},
              {"failure_cases", failure_cases},
              {"archive_cap", archive_cap},
              {"archive_prompt_entries", archive_prompt_entries},
              {"kt_pathways", kt_pathways},
              {"init_max_attempts", init_max_attempts},
              {"difference_rate", difference_rate},
              {"format_attempts", format_attempts},
              {"online_metadata", online_metadata},
              {"gamma_search", gamma_search},
              {"gamma_final", gamma_final},
              {"fe_budget", fe_budget},
              {"training_episodes", training_episodes},
              {"profile", profile},
              {"provider", provider.to_json()},
              {"replay", replay ? Json(*replay) : Json(nullptr)},
              {"workers", workers},
              {"seed", seed},
              {"replace_ops", replace},
              {"disable_kt", disable_kt}};
}

RunConfig RunConfig::from_json(const Json& j)
{
  require(j.is_object(), "config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    require(known_keys().contains(key), "unknown config field '" + key + "'");
  }
  RunConfig c;
  if (auto it = j.find("tasks"); it != j.end()) {
    require(it->is_array(), "tasks must be an array of task names");
    c.tasks.clear();
    for (const auto& t : *it) {
      const auto id = t.is_string() ? envs::find_task(t.get<std::string>()) : std::nullopt;
      require(id.has_value(), "tasks: unknown task " + t.dump());
      c.tasks.push_back(*id);
    }
  }
  read(j, "dimension", c.dimension);
  read(j, "suite_seed", c.suite_seed);
  read(j, "niche_size", c.niche_size);
  read(j, "generations", c.generations);
  read(j, "history_length", c.history_length);
  read(j, "failure_cases", c.failure_cases);
  read(j, "archive_cap", c.archive_cap);
  read(j, "archive_prompt_entries", c.archive_prompt_entries);
  read(j, "kt_pathways", c.kt_pathways);
  read(j, "init_max_attempts", c.init_max_attempts);
  read(j, "difference_rate", c.difference_rate);
  read(j, "format_attempts", c.format_attempts);
  read(j, "online_metadata", c.online_metadata);
  read(j, "gamma_search", c.gamma_search);
  read(j, "gamma_final", c.gamma_final);
  read(j, "fe_budget", c.fe_budget);
  read(j, "training_episodes", c.training_episodes);
  read(j, "profile", c.profile);
  read(j, "workers", c.workers);
  read(j, "seed", c.seed);
  read(j, "disable_kt", c.disable_kt);
  if (auto it = j.find("provider"); it != j.end()) {
    try {
      c.provider = llm::ProviderConfig::from_json(*it);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  if (auto it = j.find("replay"); it != j.end() && !it->is_null()) {
    require(it->is_string(), "replay must be a file path");
    c.replay = it->get<std::string>();
  }
  if (auto it = j.find("replace_ops"); it != j.end()) {
    require(it->is_object(), "replace_ops must map operator names to \"m0\"");
    for (const auto& [op, with] : it->items()) {
      require(with == "m0" || with == "m0_simple", "replace_ops: " + op + " can only be replaced by m0");
      try {
        c.replaced_by_m0.insert(operator_from_key(op));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("replace_ops: ") + e.what());
      }
    }
  }
  c.validate();
  return c;
}

}  // namespace rewardevo::evolution
