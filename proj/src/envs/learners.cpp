#include <algorithm>
#include <cmath>
#include <deque>
#include <numbers>

#include "environment.hpp"

namespace rewardevo::envs {

namespace {

using detail::Environment;
using detail::Observation;

constexpr std::size_t kRecentRewards = 10;

int q_state(const Observation& o)
{
  const int pbin = std::min(4, static_cast<int>(std::floor(o.progress * 5.0)));
  const int dbin = o.diversity_ratio < 0.1 ? 0 : (o.diversity_ratio < 0.5 ? 1 : 2);
  return pbin * 6 + (o.improved ? 3 : 0) + dbin;
}

std::array<double, kPolicyFeatures> es_features(const Observation& o)
{
  return {1.0, o.progress, o.improved ? 1.0 : 0.0, std::clamp(o.diversity_ratio, 0.0, 2.0), o.stagnation,
          o.improved_fraction};
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Extra per-episode information only the trainer knows.
struct EsEpisodeInfo {
  double log_density = 0.0;  // mean per-weight log-density of the perturbation
  double entropy = 0.0;      // per-weight entropy of the perturbation distribution
};

// Decision-time quantities the agent-side context fields are derived from.
struct Decision {
  std::vector<double> action;
  int state = 0;
  Observation obs;
};

class Agent {
public:
  Agent(PolicyState& policy, Mode mode, std::uint64_t seed, const EsEpisodeInfo& es)
      : p_(policy), mode_(mode), rng_(seed), es_(es)
  {
  }

  Decision decide(const Observation& o)
  {
    Decision d;
    d.obs = o;
    switch (p_.kind) {
      case LearnerKind::QTable: {
        d.state = q_state(o);
        int a = greedy(d.state);
        if (mode_ == Mode::Learning && rng_.bernoulli(p_.epsilon)) {
          a = static_cast<int>(rng_.below(static_cast<std::uint64_t>(actions())));
        }
        d.action = {static_cast<double>(a)};
        break;
      }
      case LearnerKind::LinearEs: {
        const auto f = es_features(o);
        const std::size_t n = p_.weights.size() / kPolicyFeatures;
        d.action.resize(n);
        for (std::size_t k = 0; k < n; ++k) {
          double z = 0.0;
          for (int j = 0; j < kPolicyFeatures; ++j) {
            z += p_.weights[k * kPolicyFeatures + static_cast<std::size_t>(j)] * f[static_cast<std::size_t>(j)];
          }
          d.action[k] = sigmoid(z);
        }
        break;
      }
      case LearnerKind::Random:
        if (action_count(p_.task) > 0) {
          d.action = {static_cast<double>(rng_.below(static_cast<std::uint64_t>(action_count(p_.task))))};
        } else {
          d.action.resize(static_cast<std::size_t>(action_length(p_.task)));
          for (auto& a : d.action) {
            a = rng_.uniform();
          }
        }
        break;
    }
    return d;
  }

  // Agent-side context fields describing the decision that produced the step.
  void fill_context(const Decision& d, RewardContext& ctx) const
  {
    auto put = [&](std::string_view key, auto make) {
      if (ctx.wants(key)) {
        ctx.set(key, rsl::Value(make()));
      }
    };
    switch (p_.task) {
      case TaskId::DeOperatorSelection:
        put("training_step", [&] { return static_cast<double>(p_.training_step); });
        if (p_.kind == LearnerKind::QTable) {
          const auto row = action_values(d.state);
          put("q_values", [&] { return row; });
          put("greedy_action", [&] { return static_cast<double>(greedy(d.state)); });
          put("q_span", [&] { return *std::max_element(row.begin(), row.end()) - *std::min_element(row.begin(), row.end()); });
          put("q_entropy", [&] { return softmax_entropy(row); });
        }
        if (!recent_.empty()) {
          put("recent_reward_mean", [&] { return detail::mean_of(std::vector<double>(recent_.begin(), recent_.end())); });
          put("recent_reward_max", [&] { return *std::max_element(recent_.begin(), recent_.end()); });
        }
        break;
      case TaskId::AlgorithmSelection:
        put("agent_state", [&] {
          return rsl::Vector{d.obs.progress, d.obs.improved ? 1.0 : 0.0, d.obs.diversity_ratio};
        });
        if (p_.kind == LearnerKind::QTable) {
          const int a = static_cast<int>(d.action[0]);
          const auto probs = action_probabilities(d.state);
          put("policy_entropy", [&] {
            double h = 0.0;
            for (double q : probs) {
              h -= q > 0.0 ? q * std::log(q) : 0.0;
            }
            return h;
          });
          put("value_estimation", [&] {
            const auto row = action_values(d.state);
            return *std::max_element(row.begin(), row.end());
          });
          put("log_probability", [&] { return std::log(probs[static_cast<std::size_t>(a)]); });
          put("gamma", [&] { return p_.gamma; });
          put("learning_rate", [&] { return p_.learning_rate; });
        } else if (p_.kind == LearnerKind::Random) {
          put("policy_entropy", [] { return std::log(3.0); });
          put("log_probability", [] { return -std::log(3.0); });
        }
        break;
      case TaskId::PsoParameterControl: {
        const bool es = p_.kind == LearnerKind::LinearEs;
        const bool exploring = es && mode_ == Mode::Learning;
        put("log_prob", [&] { return exploring ? es_.log_density : 0.0; });
        put("entropy", [&] { return exploring ? es_.entropy : 0.0; });
        put("training_step", [&] { return es ? static_cast<double>(p_.training_step) : 0.0; });
        put("training_progress", [&] { return es ? p_.training_progress : 0.0; });
        if (es) {
          put("learning_rate", [&] { return p_.learning_rate; });
          put("gamma", [&] { return p_.gamma; });
        }
        break;
      }
    }
  }

  // Online update after the reward of decision `d` is known.
  void learn(const Decision& d, double reward, const std::optional<Observation>& next)
  {
    recent_.push_back(reward);
    if (recent_.size() > kRecentRewards) {
      recent_.pop_front();
    }
    if (mode_ != Mode::Learning || p_.kind != LearnerKind::QTable) {
      return;
    }
    double target = reward;
    if (next) {
      const auto row = action_values(q_state(*next));
      target += p_.gamma * *std::max_element(row.begin(), row.end());
    }
    const auto k = static_cast<std::size_t>(d.state * actions()) + static_cast<std::size_t>(d.action[0]);
    // Harmonic step size: learning_rate on the first visit, then ~1/n, so each
    // entry tends to the sample mean of its targets.
    const double n = ++p_.visits[k];
    const double alpha = p_.learning_rate / (1.0 + p_.learning_rate * (n - 1.0));
    p_.q[k] += alpha * (target - p_.q[k]);
    ++p_.training_step;
  }

private:
  int actions() const { return action_count(p_.task); }

  // Q row of state s shrunk toward each action's visit-weighted mean over all
  // states. pool_strength acts as a pseudo-count, so sparsely visited states
  // borrow the pooled estimate and well-visited ones keep their own.
  std::vector<double> action_values(int s) const
  {
    const auto n = static_cast<std::size_t>(actions());
    const auto base = static_cast<std::size_t>(s) * n;
    std::vector<double> row(p_.q.begin() + static_cast<std::ptrdiff_t>(base),
                            p_.q.begin() + static_cast<std::ptrdiff_t>(base + n));
    if (p_.pool_strength <= 0.0) {
      return row;
    }
    for (std::size_t a = 0; a < n; ++a) {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t t = a; t < p_.q.size(); t += n) {
        num += p_.visits[t] * p_.q[t];
        den += p_.visits[t];
      }
      const double pooled = den > 0.0 ? num / den : 0.0;
      const double own = p_.visits[base + a];
      row[a] = (own * row[a] + p_.pool_strength * pooled) / (own + p_.pool_strength);
    }
    return row;
  }

  // Ties go to the lowest index.
  int greedy(int s) const
  {
    const auto row = action_values(s);
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }

  std::vector<double> action_probabilities(int s) const
  {
    const int n = actions();
    const double eps = mode_ == Mode::Learning ? p_.epsilon : 0.0;
    std::vector<double> probs(static_cast<std::size_t>(n), eps / n);
    probs[static_cast<std::size_t>(greedy(s))] += 1.0 - eps;
    return probs;
  }

  static double softmax_entropy(const std::vector<double>& row)
  {
    const double top = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double q : row) {
      z += std::exp(q - top);
    }
    double h = 0.0;
    for (double q : row) {
      const double p = std::exp(q - top) / z;
      h -= p > 0.0 ? p * std::log(p) : 0.0;
    }
    return h;
  }

  PolicyState& p_;
  Mode mode_;
  Rng rng_;
  EsEpisodeInfo es_;
  std::deque<double> recent_;
};

void check_budget(const MetaTask& task, long fe_budget)
{
  if (fe_budget > task.optimizer.max_fes) {
    throw problems::ContractViolation("fe_budget exceeds the task's MaxFEs");
  }
  if (fe_budget < 2L * task.optimizer.population_size) {
    throw problems::ContractViolation("fe_budget must cover at least two generations");
  }
}

EpisodeLog run_episode_impl(const MetaTask& task, PolicyState& policy, const rsl::RewardProgram* reward,
                            const problems::ProblemInstance& instance, std::uint64_t seed, long fe_budget,
                            const EpisodeOptions& options, const EsEpisodeInfo& es, double* episode_return)
{
  check_budget(task, fe_budget);
  if (policy.task != task.id) {
    throw problems::ContractViolation("policy belongs to a different task");
  }
  auto env = detail::make_environment(task);
  env->reset(instance, derive_seed(seed, "optimizer"), fe_budget);
  Agent agent(policy, options.mode, derive_seed(seed, "policy"), es);

  EpisodeLog log;
  log.instance_id = instance.name();
  log.seed = seed;
  log.y_initial = env->y_initial();

  const bool full_context = static_cast<bool>(options.on_context);
  const std::set<std::string>* filter = full_context || reward == nullptr ? nullptr : &reward->referenced_fields;
  const bool build_context = full_context || reward != nullptr;
  bool rewards_live = reward != nullptr;
  double total = 0.0;

  for (long step = 0; !env->done(); ++step) {
    const Decision d = agent.decide(env->observe());
    env->step(d.action);
    std::optional<double> r;
    if (build_context) {
      RewardContext ctx(filter);
      env->fill_context(ctx);
      agent.fill_context(d, ctx);
      if (full_context) {
        options.on_context(ctx);
      }
      if (rewards_live) {
        try {
          r = rsl::evaluate(*reward, ctx, options.limits).total;
        } catch (const rsl::RuntimeError& e) {
          // Rewards stop for the rest of the episode; the optimizer keeps its FE accounting.
          log.invalid_reward = true;
          log.error = e.what();
          rewards_live = false;
        }
      }
    }
    env->commit();
    if (r) {
      total += *r;
      std::optional<Observation> next;
      if (!env->done()) {
        next = env->observe();
      }
      agent.learn(d, *r, next);
    }
    if (options.record_steps) {
      log.steps.push_back({step, d.action, r, env->gbest()});
    }
  }
  log.y_final = env->gbest();
  log.fe_used = env->fes();
  if (episode_return != nullptr) {
    *episode_return = total;
  }
  return log;
}

}  // namespace

PolicyState initial_policy(const MetaTask& task)
{
  PolicyState p;
  p.kind = task.policy.learner;
  p.task = task.id;
  switch (p.kind) {
    case LearnerKind::QTable:
      p.q.assign(static_cast<std::size_t>(kQStates * action_count(task.id)), 0.0);
      p.visits = p.q;
      p.pool_strength = task.policy.pool_strength;
      p.epsilon = task.policy.epsilon;
      p.learning_rate = task.policy.learning_rate;
      p.gamma = task.policy.gamma;
      break;
    case LearnerKind::LinearEs:
      p.weights.assign(static_cast<std::size_t>(action_length(task.id) * kPolicyFeatures), 0.0);
      p.learning_rate = task.policy.es_sigma;
      p.gamma = 1.0;
      break;
    case LearnerKind::Random:
      break;
  }
  return p;
}

PolicyState random_policy(TaskId id)
{
  PolicyState p;
  p.kind = LearnerKind::Random;
  p.task = id;
  return p;
}

EpisodeLog run_episode(const MetaTask& task, PolicyState& policy, const rsl::RewardProgram* reward,
                       const problems::ProblemInstance& instance, std::uint64_t seed, long fe_budget,
                       const EpisodeOptions& options)
{
  return run_episode_impl(task, policy, reward, instance, seed, fe_budget, options, {}, nullptr);
}

TrainingOutcome train_policy(const MetaTask& task, const rsl::RewardProgram& reward,
                             std::span<const problems::ProblemInstance> train, TrainingBudget budget,
                             std::uint64_t seed, const rsl::EvalLimits& limits)
{
  if (train.empty()) {
    throw problems::ContractViolation("training needs at least one instance");
  }
  check_budget(task, budget.fe_budget);
  TrainingOutcome out;
  out.policy = initial_policy(task);
  EpisodeOptions opts;
  opts.mode = Mode::Learning;
  opts.record_steps = false;
  opts.limits = limits;
  const int episodes = std::max(0, budget.episodes);

  auto fail = [&](const EpisodeLog& log) {
    out.invalid_reward = true;
    out.error = log.error;
  };

  switch (out.policy.kind) {
    case LearnerKind::Random:
      break;
    case LearnerKind::QTable:
      for (int e = 0; e < episodes; ++e) {
        const auto& inst = train[static_cast<std::size_t>(e) % train.size()];
        const auto log = run_episode_impl(task, out.policy, &reward, inst, derive_seed(seed, static_cast<std::uint64_t>(e)),
                                          budget.fe_budget, opts, {}, nullptr);
        ++out.episodes_run;
        out.fe_used += log.fe_used;
        out.policy.training_progress = static_cast<double>(e + 1) / episodes;
        if (log.invalid_reward) {
          fail(log);
          break;
        }
      }
      break;
    case LearnerKind::LinearEs: {
      // (1 + lambda)-ES: each generation scores the parent and lambda Gaussian
      // perturbations on one instance and seed; the best offspring replaces the
      // parent when its return is no worse.
      const int lambda = std::max(1, task.policy.es_offspring);
      const double sigma = task.policy.es_sigma;
      const int generations = std::max(1, episodes / (lambda + 1));
      const double log_norm = -std::log(sigma * std::sqrt(2.0 * std::numbers::pi));
      const double entropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * sigma * sigma);
      Rng rng(derive_seed(seed, "es"));
      const int total_episodes = generations * (lambda + 1);

      auto score = [&](PolicyState& p, const problems::ProblemInstance& inst, std::uint64_t s,
                       const EsEpisodeInfo& info, double& ret) {
        const auto log = run_episode_impl(task, p, &reward, inst, s, budget.fe_budget, opts, info, &ret);
        ++out.episodes_run;
        out.fe_used += log.fe_used;
        ++out.policy.training_step;
        out.policy.training_progress = static_cast<double>(out.episodes_run) / total_episodes;
        p.training_step = out.policy.training_step;
        p.training_progress = out.policy.training_progress;
        if (log.invalid_reward) {
          fail(log);
        }
        return !log.invalid_reward;
      };

      for (int g = 0; g < generations && !out.invalid_reward; ++g) {
        const auto& inst = train[static_cast<std::size_t>(g) % train.size()];
        const std::uint64_t s = derive_seed(seed, static_cast<std::uint64_t>(g));
        double parent_return = 0.0;
        if (!score(out.policy, inst, s, {log_norm, entropy}, parent_return)) {
          break;
        }
        std::optional<PolicyState> best;
        double best_return = parent_return;
        for (int k = 0; k < lambda; ++k) {
          PolicyState child = out.policy;
          double sq = 0.0;
          for (auto& w : child.weights) {
            const double delta = rng.normal(0.0, sigma);
            w += delta;
            sq += delta * delta;
          }
          const double density = log_norm - 0.5 * sq / (sigma * sigma) / static_cast<double>(child.weights.size());
          double ret = 0.0;
          if (!score(child, inst, s, {density, entropy}, ret)) {
            break;
          }
          if (ret >= best_return) {
            best_return = ret;
            best = std::move(child);
          }
        }
        if (best && !out.invalid_reward) {
          out.policy.weights = std::move(best->weights);
        }
      }
      break;
    }
  }
  return out;
}

}  // namespace rewardevo::envs
