#include <algorithm>
#include <cctype>
#include <cmath>
#include <mutex>
#include <stdexcept>

#include "environment.hpp"
#include "rewardevo/core/data.hpp"

namespace rewardevo::envs {

namespace {

struct TaskNames {
  TaskId id;
  std::string_view key;
  std::string_view alias;
};

constexpr std::array<TaskNames, 3> kNames{{
    {TaskId::DeOperatorSelection, "de-operator-selection", "DEDQN"},
    {TaskId::PsoParameterControl, "pso-parameter-control", "RLEPSO"},
    {TaskId::AlgorithmSelection, "algorithm-selection", "RLDAS"},
}};

const TaskNames& names(TaskId id)
{
  return kNames[static_cast<std::size_t>(id)];
}

bool iequals(std::string_view a, std::string_view b)
{
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

std::string_view task_key(TaskId id) { return names(id).key; }
std::string_view task_alias(TaskId id) { return names(id).alias; }

std::optional<TaskId> find_task(std::string_view name)
{
  for (const auto& n : kNames) {
    if (name == n.key || iequals(name, n.alias)) {
      return n.id;
    }
  }
  return std::nullopt;
}

TaskId task_from_key(std::string_view name)
{
  if (auto id = find_task(name)) {
    return *id;
  }
  throw std::invalid_argument("unknown task: " + std::string(name));
}

std::string_view learner_key(LearnerKind kind)
{
  switch (kind) {
    case LearnerKind::QTable: return "q-table";
    case LearnerKind::LinearEs: return "linear-es";
    case LearnerKind::Random: return "random";
  }
  return "random";
}

LearnerKind learner_from_key(std::string_view key)
{
  for (auto kind : {LearnerKind::QTable, LearnerKind::LinearEs, LearnerKind::Random}) {
    if (learner_key(kind) == key) {
      return kind;
    }
  }
  throw std::invalid_argument("unknown learner: " + std::string(key));
}

MetaTask make_task(TaskId id)
{
  MetaTask t;
  t.id = id;
  t.metadata_path = "metadata/" + std::string(task_key(id)) + ".json";
  switch (id) {
    case TaskId::DeOperatorSelection:
      // One decision per trial vector and each trial is judged on its own.
      t.policy.gamma = 0.0;
      t.policy.epsilon = 0.5;
      break;
    case TaskId::PsoParameterControl:
      t.optimizer.population_size = 100;
      t.optimizer.groups = 5;
      t.optimizer.decision_interval = 100;
      t.policy.learner = LearnerKind::LinearEs;
      t.policy.gamma = 1.0;
      break;
    case TaskId::AlgorithmSelection:
      t.optimizer.decision_interval = 250;
      break;
  }
  return t;
}

int action_count(TaskId id) { return id == TaskId::PsoParameterControl ? 0 : 3; }
int action_length(TaskId id) { return id == TaskId::PsoParameterControl ? 35 : 1; }

Json Metadata::to_json() const
{
  Json fields = Json::object();
  for (const auto& [name, info] : c_code) {
    Json f{{"type", info.type}, {"description", info.description}};
    if (info.optional) {
      f["optional"] = true;
    }
    fields[name] = std::move(f);
  }
  return Json{{"task_id", task_id}, {"c_alg", c_alg}, {"c_code", std::move(fields)}};
}

Metadata Metadata::from_json(const Json& j)
{
  Metadata m;
  m.task_id = j.at("task_id").get<std::string>();
  m.c_alg = j.at("c_alg").get<std::string>();
  for (const auto& [name, f] : j.at("c_code").items()) {
    rsl::FieldInfo info;
    info.type = f.at("type").get<std::string>();
    info.description = f.at("description").get<std::string>();
    info.optional = f.value("optional", false);
    m.c_code.emplace(name, std::move(info));
  }
  return m;
}

const Metadata& load_task_metadata(TaskId id)
{
  static std::once_flag once;
  static std::array<Metadata, 3> cache;
  std::call_once(once, [] {
    for (auto t : kAllTasks) {
      const auto text = data::get(make_task(t).metadata_path);
      cache[static_cast<std::size_t>(t)] = Metadata::from_json(Json::parse(text));
    }
  });
  return cache[static_cast<std::size_t>(id)];
}

const rsl::FieldDictionary& task_schema(TaskId id) { return load_task_metadata(id).c_code; }

namespace {

const rsl::RewardProgram& bundled_reward(TaskId id, std::string_view dir)
{
  static std::mutex mu;
  static std::map<std::string, rsl::RewardProgram, std::less<>> cache;
  const std::string path = "rewards/" + std::string(dir) + "/" + std::string(task_key(id)) + ".rsl";
  std::lock_guard lock(mu);
  if (auto it = cache.find(path); it != cache.end()) {
    return it->second;
  }
  const auto text = data::get(path);
  return cache.emplace(path, rsl::parse(rsl::strip_header(text))).first->second;
}

}  // namespace

const rsl::RewardProgram& handcrafted_reward(TaskId id) { return bundled_reward(id, "handcrafted"); }
const rsl::RewardProgram& discovered_reward(TaskId id) { return bundled_reward(id, "discovered"); }

void RewardContext::set(std::string_view key, rsl::Value value)
{
  fields_.insert_or_assign(std::string(key), std::move(value));
}

const rsl::Value* RewardContext::find(std::string_view path) const
{
  if (auto it = fields_.find(path); it != fields_.end()) {
    return &it->second;
  }
  return nullptr;
}

namespace {

Json value_to_json(const rsl::Value& v)
{
  using K = rsl::Value::Kind;
  switch (v.kind()) {
    case K::Scalar:
    case K::Bool: return v.scalar();
    case K::Vector: return v.vector();
    case K::Matrix: {
      Json rows = Json::array();
      const auto& m = v.matrix();
      for (std::size_t r = 0; r < m.rows; ++r) {
        rows.push_back(std::vector<double>(m.data.begin() + static_cast<std::ptrdiff_t>(r * m.cols),
                                           m.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * m.cols)));
      }
      return rows;
    }
    case K::Record: {
      Json o = Json::object();
      for (const auto& [k, x] : v.record()) {
        o[k] = x;
      }
      return o;
    }
    case K::String: return v.string();
    case K::None: break;
  }
  return nullptr;
}

}  // namespace

Json RewardContext::to_json() const
{
  Json out = Json::object();
  for (const auto& [k, v] : fields_) {
    out[k] = value_to_json(v);
  }
  return out;
}

Json PolicyState::to_json() const
{
  return Json{{"kind", learner_key(kind)},
              {"task", task_key(task)},
              {"q", q},
              {"visits", visits},
              {"weights", weights},
              {"epsilon", epsilon},
              {"learning_rate", learning_rate},
              {"gamma", gamma},
              {"pool_strength", pool_strength},
              {"training_step", training_step},
              {"training_progress", training_progress}};
}

PolicyState PolicyState::from_json(const Json& j)
{
  PolicyState p;
  p.kind = learner_from_key(j.at("kind").get<std::string>());
  p.task = task_from_key(j.at("task").get<std::string>());
  p.q = j.at("q").get<std::vector<double>>();
  p.visits = j.value("visits", std::vector<double>(p.q.size(), 0.0));
  p.weights = j.at("weights").get<std::vector<double>>();
  p.epsilon = j.at("epsilon").get<double>();
  p.learning_rate = j.at("learning_rate").get<double>();
  p.gamma = j.at("gamma").get<double>();
  p.pool_strength = j.value("pool_strength", 0.0);
  p.training_step = j.at("training_step").get<long>();
  p.training_progress = j.at("training_progress").get<double>();
  return p;
}

Json EpisodeLog::to_json() const
{
  Json steps_json = Json::array();
  for (const auto& s : steps) {
    Json r{{"step", s.step}, {"action", s.action}, {"gbest", s.gbest}};
    r["reward"] = s.reward ? Json(*s.reward) : Json(nullptr);
    steps_json.push_back(std::move(r));
  }
  Json out{{"instance_id", instance_id}, {"seed", seed},           {"steps", std::move(steps_json)},
           {"y_initial", y_initial},     {"y_final", y_final},     {"fe_used", fe_used},
           {"invalid_reward", invalid_reward}};
  if (!error.empty()) {
    out["error"] = error;
  }
  return out;
}

namespace detail {

std::unique_ptr<Environment> make_environment(const MetaTask& task)
{
  switch (task.id) {
    case TaskId::DeOperatorSelection: return make_de_environment(task);
    case TaskId::PsoParameterControl: return make_pso_environment(task);
    case TaskId::AlgorithmSelection: return make_as_environment(task);
  }
  throw std::invalid_argument("unknown task id");
}

double mean_of(std::span<const double> xs)
{
  if (xs.empty()) {
    return 0.0;
  }
  double s = 0.0;
  for (double x : xs) {
    s += x;
  }
  return s / static_cast<double>(xs.size());
}

double std_of(std::span<const double> xs)
{
  if (xs.empty()) {
    return 0.0;
  }
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) {
    s += (x - m) * (x - m);
  }
  return std::sqrt(s / static_cast<double>(xs.size()));
}

double median_of(std::span<const double> xs)
{
  if (xs.empty()) {
    return 0.0;
  }
  std::vector<double> v(xs.begin(), xs.end());
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double position_diversity(std::span<const double> pop, int np, int dim)
{
  if (np == 0 || dim == 0) {
    return 0.0;
  }
  double total = 0.0;
  for (int d = 0; d < dim; ++d) {
    double m = 0.0;
    for (int i = 0; i < np; ++i) {
      m += pop[static_cast<std::size_t>(i * dim + d)];
    }
    m /= np;
    double s = 0.0;
    for (int i = 0; i < np; ++i) {
      const double e = pop[static_cast<std::size_t>(i * dim + d)] - m;
      s += e * e;
    }
    total += std::sqrt(s / np);
  }
  return total / dim;
}

rsl::Matrix to_matrix(std::span<const double> data, int rows, int cols)
{
  rsl::Matrix m;
  m.rows = static_cast<std::size_t>(rows);
  m.cols = static_cast<std::size_t>(cols);
  m.data.assign(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(rows * cols));
  return m;
}

}  // namespace detail

}  // namespace rewardevo::envs
