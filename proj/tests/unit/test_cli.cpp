// End-to-end checks of the command-line driver. Each test shells out to the
// built binary and inspects exit codes and output files.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "rewardevo/core/json.hpp"
#include "rewardevo/envs/envs.hpp"
#include "rewardevo/rsl/rsl.hpp"

namespace fs = std::filesystem;
using namespace rewardevo;

namespace {

const fs::path kFixtures = REWARDEVO_TEST_DATA_DIR;
const fs::path kReplay = kFixtures / "replay" / "small.jsonl";
const fs::path kConfig = kFixtures / "replay" / "small_config.json";

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch(const std::string& name)
{
  const auto dir = fs::temp_directory_path() / ("rewardevo_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

Outcome cli(const std::string& args)
{
  static int counter = 0;
  const auto base = fs::temp_directory_path() / ("rewardevo_cli_io_" + std::to_string(::getpid()) + "_" +
                                                 std::to_string(counter++));
  const auto cmd = std::string(REWARDEVO_CLI_PATH) + " -q " + args + " > " + base.string() + ".out 2> " +
                   base.string() + ".err";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  o.out = read_text_file(base.string() + ".out");
  o.err = read_text_file(base.string() + ".err");
  fs::remove(base.string() + ".out");
  fs::remove(base.string() + ".err");
  return o;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::map<std::string, std::string> tree(const fs::path& root)
{
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      out[fs::relative(e.path(), root).string()] = read_text_file(e.path());
    }
  }
  return out;
}

std::vector<std::string> lines_of(const std::string& text)
{
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) {
    out.push_back(l);
  }
  return out;
}

// Budget small enough for a quick evaluation.
fs::path small_budget_config()
{
  const auto path = fs::temp_directory_path() / "rewardevo_cli_budget.json";
  write_text_file(path, R"({"dimension": 5, "fe_budget": 1000, "training_episodes": 5, "gamma_search": 1})");
  return path;
}

void expect_structured_error(const Outcome& o, int code, const std::string& kind)
{
  EXPECT_EQ(o.code, code) << o.err;
  const auto err = lines_of(o.err);
  ASSERT_FALSE(err.empty());
  const auto j = Json::parse(err.back());
  EXPECT_EQ(j.at("error"), kind);
  EXPECT_EQ(j.at("exit_code"), code);
}

}  // namespace

TEST(Cli, DiscoverTwiceGivesIdenticalRuns)
{
  const auto a = scratch("disc_a");
  const auto b = scratch("disc_b");
  const auto args = "discover --config " + q(kConfig) + " --replay " + q(kReplay) + " --seed 1 --out ";
  const auto ra = cli(args + q(a));
  ASSERT_EQ(ra.code, 0) << ra.err;
  const auto rb = cli(args + q(b));
  ASSERT_EQ(rb.code, 0) << rb.err;
  EXPECT_EQ(read_text_file(a / "report.csv"), read_text_file(b / "report.csv"));
  EXPECT_EQ(tree(a), tree(b));
  // One line per niche per generation, generations 0 to 2.
  EXPECT_EQ(lines_of(ra.out).size(), 9u + 3u + 1u);
  EXPECT_NE(ra.out.find("gen  2  algorithm-selection"), std::string::npos);
  EXPECT_EQ(lines_of(read_text_file(a / "report.csv")).size(), 10u);
  EXPECT_EQ(lines_of(read_text_file(a / "transfers.jsonl")).size(), 6u);
}

TEST(Cli, ConfigErrorsExitWithCodeTwo)
{
  expect_structured_error(cli("discover --gmax 0 --replay " + q(kReplay) + " --out " + q(scratch("gmax0"))), 2,
                          "config");
  EXPECT_FALSE(fs::exists(scratch("gmax0") / "config.json"));
  expect_structured_error(cli("discover --replace-op m1=m2 --out " + q(scratch("badop"))), 2, "config");
  expect_structured_error(cli("discover --tasks XYZ --out " + q(scratch("badtask"))), 2, "config");
  expect_structured_error(cli("discover --replay /no/such/file.jsonl --out " + q(scratch("noreplay"))), 2,
                          "config");
  expect_structured_error(cli("discover --config /no/such/config.json --out " + q(scratch("nocfg"))), 2, "config");
  expect_structured_error(cli("discover --frobnicate"), 2, "usage");
  // A finished run directory is never overwritten.
  const auto used = scratch("used");
  fs::create_directories(used);
  write_text_file(used / "keep.txt", "x");
  expect_structured_error(cli("discover --replay " + q(kReplay) + " --out " + q(used)), 2, "config");
  EXPECT_EQ(read_text_file(used / "keep.txt"), "x");
}

TEST(Cli, ExhaustedReplayIsAProviderErrorAndResumeFinishesTheRun)
{
  const auto full = scratch("res_full");
  const auto cut = scratch("res_cut");
  const auto short_script = scratch("res_script.jsonl");
  // Drop every kt_execute answer: the run stops at the first transfer.
  std::string text;
  for (const auto& l : lines_of(read_text_file(kReplay))) {
    if (l.find("\"kt_execute\"") == std::string::npos) {
      text += l + "\n";
    }
  }
  write_text_file(short_script, text);

  ASSERT_EQ(cli("discover --config " + q(kConfig) + " --replay " + q(kReplay) + " --out " + q(full)).code, 0);
  expect_structured_error(cli("discover --config " + q(kConfig) + " --replay " + q(short_script) + " --out " + q(cut)),
                          3, "provider");
  EXPECT_TRUE(fs::exists(cut / "snapshots" / "gen-0.json"));
  EXPECT_FALSE(fs::exists(cut / "snapshots" / "gen-1.json"));
  expect_structured_error(cli("discover --resume " + q(cut) + " --gmax 3"), 2, "config");
  const auto resumed = cli("discover --resume " + q(cut) + " --replay " + q(kReplay));
  ASSERT_EQ(resumed.code, 0) << resumed.err;

  auto a = tree(full);
  auto b = tree(cut);
  // The echoed config records which script was used; everything else must match.
  a.erase("config.json");
  b.erase("config.json");
  EXPECT_EQ(a, b);
}

TEST(Cli, OperatorAblationShowsSimpleMutationInLineage)
{
  const auto run = scratch("ablate");
  const auto script = scratch("ablate_script.jsonl");
  std::string text;
  for (auto l : lines_of(read_text_file(kReplay))) {
    const auto pos = l.find("\"m1_mutate\"");
    if (pos != std::string::npos) {
      l.replace(pos, 11, "\"m0_simple\"");
    }
    text += l + "\n";
  }
  write_text_file(script, text);
  const auto r = cli("discover --config " + q(kConfig) + " --gmax 1 --replace-op m1=m0 --replay " + q(script) +
                     " --out " + q(run));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_json_file(run / "config.json").at("replace_ops"), (Json{{"m1", "m0"}}));
  int m0 = 0;
  for (const auto& e : fs::recursive_directory_iterator(run / "niches")) {
    if (e.is_regular_file()) {
      const auto op = read_json_file(e.path()).at("lineage").at("operator").get<std::string>();
      EXPECT_NE(op, "m1");
      m0 += op == "m0_simple" ? 1 : 0;
    }
  }
  EXPECT_EQ(m0, 6);  // N = 2 parents in each of 3 niches
}

TEST(Cli, EvalRewardOnTheBundledDiscoveredReward)
{
  const auto r = cli("eval-reward --bundled discovered --task DEDQN --config " + q(small_budget_config()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = Json::parse(r.out);
  EXPECT_FALSE(j.at("invalid").get<bool>());
  EXPECT_TRUE(j.at("fitness").is_number());
  EXPECT_EQ(j.at("task"), "de-operator-selection");
  EXPECT_EQ(j.at("score_matrix").size(), 16u);
  EXPECT_EQ(j.at("score_matrix")[0].size(), 1u);
}

TEST(Cli, EvalRewardFinalProfileRunsFiftyOneTimes)
{
  const auto file = scratch("anchor.rsl");
  write_text_file(file, envs::handcrafted_reward(envs::TaskId::AlgorithmSelection).source);
  const auto r = cli("eval-reward " + q(file) + " --task RLDAS --profile final --config " + q(small_budget_config()));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = Json::parse(r.out);
  ASSERT_EQ(j.at("score_matrix").size(), 16u);
  for (const auto& row : j.at("score_matrix")) {
    EXPECT_EQ(row.size(), 51u);
  }
}

TEST(Cli, EvalRewardRejectsBadFiles)
{
  const auto bad = scratch("bad.rsl");
  write_text_file(bad, "r = (1 +\n");
  expect_structured_error(cli("eval-reward " + q(bad) + " --task DEDQN"), 2, "config");
  const auto foreign = scratch("foreign.rsl");
  write_text_file(foreign, "return ctx.gbest_val, {}\n");
  const auto r = cli("eval-reward " + q(foreign) + " --task DEDQN");
  expect_structured_error(r, 2, "config");
  EXPECT_NE(r.err.find("gbest_val"), std::string::npos);
  expect_structured_error(cli("eval-reward /no/such.rsl --task DEDQN"), 2, "config");
}

TEST(Cli, EvalRewardFailingAtRuntimeIsAnEvaluationFailure)
{
  const auto file = scratch("div.rsl");
  write_text_file(file, "x = [1.0, 2.0]\nreturn x[5], {}\n");
  const auto r = cli("eval-reward " + q(file) + " --task DEDQN --config " + q(small_budget_config()));
  expect_structured_error(r, 4, "evaluation");
  EXPECT_TRUE(Json::parse(r.out).at("invalid").get<bool>());
}

TEST(Cli, TransferWritesAValidatedAdaptation)
{
  const auto out = scratch("transfer");
  const auto script = scratch("transfer.jsonl");
  const Json answer{{"template_id", "kt_execute"},
                    {"task", "RLEPSO"},
                    {"response", "Acceptance maps to a global-best improvement.\n\n```rsl\n"
                                 "hit = 1.0 if ctx.gbest_val < ctx.pre_gbest else 0.0\nreturn hit, {\"hit\": hit}\n```"}};
  write_text_file(script, answer.dump() + "\n");
  const auto source = scratch("source.rsl");
  write_text_file(source, envs::handcrafted_reward(envs::TaskId::DeOperatorSelection).source);

  const auto r = cli("transfer " + q(source) + " --from DEDQN --to RLEPSO --replay " + q(script) + " --config " +
                     q(small_budget_config()) + " --out " + q(out));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto adapted = rsl::parse(read_text_file(out / "adapted.rsl"));
  EXPECT_TRUE(rsl::validate(adapted, envs::task_schema(envs::TaskId::PsoParameterControl)).empty());
  const auto summary = read_json_file(out / "transfer.json");
  EXPECT_TRUE(summary.at("anchor").at("fitness").is_number());
  EXPECT_TRUE(summary.at("adapted").at("fitness").is_number());
  // The scripted adaptation is the PSO anchor itself.
  EXPECT_EQ(summary.at("anchor").at("fitness"), summary.at("adapted").at("fitness"));
  EXPECT_NE(r.out.find("anchor"), std::string::npos);
  EXPECT_NE(r.out.find("adapted"), std::string::npos);
}

TEST(Cli, TransferWithoutUsableAdaptationWritesNothing)
{
  const auto out = scratch("transfer_fail");
  const auto script = scratch("transfer_fail.jsonl");
  std::string text;
  for (int i = 0; i < 3; ++i) {
    text += Json{{"template_id", "kt_execute"}, {"response", "```rsl\nreturn ctx.accepted, {}\n```"}}.dump() + "\n";
  }
  write_text_file(script, text);
  const auto source = scratch("source2.rsl");
  write_text_file(source, envs::handcrafted_reward(envs::TaskId::DeOperatorSelection).source);
  const auto r = cli("transfer " + q(source) + " --from DEDQN --to RLEPSO --replay " + q(script) + " --out " + q(out));
  expect_structured_error(r, 3, "provider");
  EXPECT_FALSE(fs::exists(out));
  expect_structured_error(cli("transfer " + q(source) + " --from DEDQN --to DEDQN --out " + q(out)), 2, "config");
}

TEST(Cli, ReportTables)
{
  const auto run = scratch("report_run");
  ASSERT_EQ(cli("discover --config " + q(kConfig) + " --replay " + q(kReplay) + " --out " + q(run)).code, 0);
  const auto r = cli("report " + q(run) + " --compare " + q(run));
  ASSERT_EQ(r.code, 0) << r.err;

  const auto trajectory = lines_of(read_text_file(run / "trajectory.csv"));
  ASSERT_EQ(trajectory.size(), 1u + 2u * 3u);
  EXPECT_EQ(trajectory[0], "generation,task,best_so_far");
  const auto operators = lines_of(read_text_file(run / "operators.csv"));
  ASSERT_EQ(operators.size(), 6u);
  long offspring = 0;
  for (std::size_t i = 1; i < operators.size(); ++i) {
    std::istringstream row(operators[i]);
    std::string op, made;
    std::getline(row, op, ',');
    std::getline(row, made, ',');
    offspring += std::stol(made);
  }
  EXPECT_EQ(offspring, 2 * 3 * 10);
  for (const auto& line : lines_of(read_text_file(run / "sne.csv"))) {
    if (line.starts_with("baseline_run")) {
      continue;
    }
    EXPECT_TRUE(line.ends_with(",1")) << line;
  }
  expect_structured_error(cli("report " + q(scratch("missing_run"))), 2, "config");
}
