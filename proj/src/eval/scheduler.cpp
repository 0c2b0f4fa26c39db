#include <cstdlib>
#include <deque>
#include <fstream>
#include <thread>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "rewardevo/eval/eval.hpp"

namespace rewardevo::eval {

FitnessCache::FitnessCache(std::filesystem::path dir) : dir_(std::move(dir))
{
  std::filesystem::create_directories(*dir_);
}

std::optional<FitnessReport> FitnessCache::get(const std::string& key) const
{
  {
    std::shared_lock lock(mu_);
    if (auto it = entries_.find(key); it != entries_.end()) {
      ++hits_;
      return it->second;
    }
  }
  if (dir_) {
    const auto path = *dir_ / (key + ".json");
    if (std::filesystem::exists(path)) {
      auto report = FitnessReport::from_json(read_json_file(path));
      std::unique_lock lock(mu_);
      ++hits_;
      return entries_.try_emplace(key, std::move(report)).first->second;
    }
  }
  ++misses_;
  return std::nullopt;
}

void FitnessCache::put(const std::string& key, const FitnessReport& report)
{
  std::unique_lock lock(mu_);
  if (!entries_.try_emplace(key, report).second) {
    return;
  }
  if (dir_) {
    // Write-then-rename so a reader never sees a partial file.
    const auto path = *dir_ / (key + ".json");
    const auto tmp = *dir_ / (key + ".json.tmp");
    write_text_file(tmp, dump_json(report.to_json()));
    std::filesystem::rename(tmp, path);
  }
}

std::size_t FitnessCache::size() const
{
  std::shared_lock lock(mu_);
  return entries_.size();
}

long FitnessCache::hits() const { return hits_; }
long FitnessCache::misses() const { return misses_; }

FitnessReport evaluate_job(const EvalJob& job)
{
  if (!job.suite) {
    throw std::invalid_argument("evaluation job without a suite");
  }
  return evaluate_fitness(job.reward, job.task, *job.suite, job.budget, job.seed);
}

int resolve_worker_count(int requested)
{
  if (const char* env = std::getenv("REWARDEVO_WORKERS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) {
      return static_cast<int>(n);
    }
  }
  if (requested > 0) {
    return requested;
  }
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

Scheduler::Scheduler(int workers, FitnessCache* cache, Evaluator evaluator)
    : workers_(std::max(1, workers)), cache_(cache), evaluator_(std::move(evaluator))
{
}

std::vector<FitnessReport> Scheduler::run(const std::vector<EvalJob>& jobs)
{
  // Each distinct key is resolved once; every request then copies its key's report.
  std::vector<std::string> keys;
  keys.reserve(jobs.size());
  std::unordered_map<std::string, std::size_t> slot_of;
  std::vector<std::size_t> first_job;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& j = jobs[i];
    if (!j.suite) {
      throw std::invalid_argument("evaluation job without a suite");
    }
    keys.push_back(cache_key(j.reward, j.task, *j.suite, j.budget, j.seed));
    if (slot_of.try_emplace(keys.back(), first_job.size()).second) {
      first_job.push_back(i);
    }
  }

  std::vector<std::optional<FitnessReport>> results(first_job.size());
  struct Pending {
    std::size_t slot;
    int attempt;
  };
  std::deque<Pending> queue;
  for (std::size_t s = 0; s < first_job.size(); ++s) {
    if (cache_ != nullptr) {
      results[s] = cache_->get(keys[first_job[s]]);
    }
    if (!results[s]) {
      queue.push_back({s, 0});
    }
  }

  std::mutex mu;
  std::atomic<long> executed{0};
  auto worker = [&] {
    for (;;) {
      Pending p;
      {
        std::lock_guard lock(mu);
        if (queue.empty()) {
          return;
        }
        p = queue.front();
        queue.pop_front();
      }
      const auto& job = jobs[first_job[p.slot]];
      FitnessReport report;
      ++executed;
      try {
        report = evaluator_(job);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        if (p.attempt == 0) {
          spdlog::warn("evaluation of {} failed ({}), retrying", keys[first_job[p.slot]].substr(0, 12), e.what());
          queue.push_back({p.slot, 1});
        } else {
          FitnessReport failed;
          failed.invalid = true;
          failed.infrastructure_failure = true;
          failed.failure_reason = std::string("evaluation failed twice: ") + e.what();
          results[p.slot] = std::move(failed);
        }
        continue;
      }
      if (cache_ != nullptr) {
        cache_->put(keys[first_job[p.slot]], report);
      }
      std::lock_guard lock(mu);
      results[p.slot] = std::move(report);
    }
  };

  // A retry is queued only while its failing worker is still running, so no
  // job can be stranded after every thread has exited.
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(workers_), queue.size());
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back(worker);
    }
  }
  executed_ += executed;

  std::vector<FitnessReport> out;
  out.reserve(jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    out.push_back(*results[slot_of.at(keys[i])]);
  }
  return out;
}

}  // namespace rewardevo::eval
