// SPDX-License-Identifier: Apache-2.0
// Drives the built `sumer` binary end to end on the offline fixtures.
#include <doctest.h>

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <regex>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "support.hpp"
#include "sumer/search.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr
};

Run run(const std::string& args) {
  const std::string cmd = std::string(SUMER_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.output.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::vector<json> read_jsonl(const fs::path& p) {
  std::vector<json> out;
  std::ifstream f(p);
  for (std::string line; std::getline(f, line);) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

/// Workspace with ingested and hashing-embedded banks, shared by the cases below.
struct Workspace {
  fs::path root = testing::scratch_dir("cli");
  fs::path banks = root / "banks";
  std::string dataset = q(testing::fixture("locomo_mini.json"));

  Workspace() {
    const auto ingest = run("ingest --dataset " + dataset + " --bank-dir " + q(banks));
    REQUIRE_MESSAGE(ingest.code == 0, ingest.output);
    const auto embed = run("embed --bank-dir " + q(banks) + " --embed-url hashing --embed-dim 64");
    REQUIRE_MESSAGE(embed.code == 0, embed.output);
  }

  std::string common() const {
    return "--dataset " + dataset + " --bank-dir " + q(banks) + " --embed-url hashing --embed-dim 64" +
           " --policy-url script:" + q(testing::fixture("policy_script.json")) +
           " --judge-url replay:" + q(testing::fixture("judge_replay.json"));
  }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("ingest writes banks and prints dataset statistics") {
  const auto dir = testing::scratch_dir("cli_ingest");
  const auto r = run("ingest --dataset " + q(testing::fixture("locomo_mini.json")) + " --bank-dir " + q(dir));
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.find("2 conversations, 12 questions (10 evaluated)") != std::string::npos);
  CHECK(std::regex_search(r.output, std::regex(R"(conv-nj\s+3\s+14\s+7\s+6)")));
  CHECK(fs::exists(dir / "conv-nj" / "manifest.json"));
  CHECK(fs::exists(dir / "conv-ab" / "records.jsonl"));
  CHECK(fs::exists(dir / "dataset.jsonl"));
  CHECK(json::parse(sumer::read_file(dir / "stats.json")).contains("dataset_sha256"));
}

TEST_CASE("embed fills missing vectors once and refuses a changed dimension") {
  const auto dir = testing::scratch_dir("cli_embed");
  REQUIRE(run("ingest --dataset " + q(testing::fixture("locomo_mini.json")) + " --bank-dir " + q(dir)).code == 0);
  auto r = run("embed --bank-dir " + q(dir) + " --embed-url hashing --embed-dim 64");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.find("conv-ab: dimension 64, embedded 8/8 (8 new)") != std::string::npos);
  CHECK(r.output.find("conv-nj: dimension 64, embedded 14/14 (14 new)") != std::string::npos);
  r = run("embed --bank-dir " + q(dir) + " --embed-url hashing --embed-dim 64");
  CHECK(r.output.find("conv-nj: dimension 64, embedded 14/14 (0 new)") != std::string::npos);
  r = run("embed --bank-dir " + q(dir) + " --embed-url hashing:32");
  CHECK(r.code == 1);
  CHECK(r.output.find("64-dimensional embeddings but the endpoint produces 32") != std::string::npos);

  // Re-ingesting keeps the stored vectors.
  REQUIRE(run("ingest --dataset " + q(testing::fixture("locomo_mini.json")) + " --bank-dir " + q(dir)).code == 0);
  CHECK(sumer::load_bank(dir / "conv-nj").embedded_count() == 14);
}

TEST_CASE("search prints tool-response text") {
  Workspace w;
  auto r = run("search --bank-dir " + q(w.banks) +
               " --conversation conv-nj --mode keyword --keywords tournament --speaker Nate --max-turns 18");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(r.output == testing::golden("tool_response_keyword.txt") + "\n");

  r = run("search --bank-dir " + q(w.banks) + " --conversation conv-nj --mode keyword --keywords zebra");
  CHECK(r.output.rfind("Found 0 relevant memories using keyword_search:", 0) == 0);

  r = run("search --bank-dir " + q(w.banks) +
          " --conversation conv-nj --mode semantic --query 'tournament win' --top-k 3 --embed-url hashing --embed-dim 64");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.rfind("Found 3 relevant memories using semantic_search:", 0) == 0);

  // Exhaustive oracle over the stored bank.
  const auto bank = sumer::load_bank(w.banks / "conv-nj");
  sumer::HashingEmbedder e(64);
  const sumer::Embedding query = e.embed({"tournament win"}).row(0).transpose();
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t p = 0; p < bank.size(); ++p) {
    const sumer::Embedding row = bank.embedding(p).transpose();
    scored.emplace_back(-static_cast<double>(row.cast<double>().dot(query.cast<double>()) /
                                             (row.cast<double>().norm() * query.cast<double>().norm())),
                        p);
  }
  std::sort(scored.begin(), scored.end());
  for (int i = 0; i < 3; ++i) {
    const auto expected = fmt::format("  Memory {}: {:.6f} ({})", i + 1, -scored[i].first,
                                      bank.record(scored[i].second).record_id);
    CHECK_MESSAGE(r.output.find(expected) != std::string::npos, expected);
  }

  r = run("search --bank-dir " + q(w.banks) + " --conversation conv-zz --mode keyword --keywords x");
  CHECK(r.code == 1);
}

TEST_CASE("episode prints a trajectory and its reward") {
  Workspace w;
  const auto r = run("episode " + w.common() + " --question 'conv-nj#1'");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  const auto j = json::parse(r.output);
  CHECK(j["terminal"] == "Submitted");
  CHECK(j["final_answer"] == "Street Fighter");
  CHECK(j["n_turns"] == 2);
  CHECK(j["reward"]["reward"] == 1.0);
  CHECK(run("episode " + w.common() + " --question 'conv-nj#99'").code == 1);
}

TEST_CASE("train runs three GRPO steps, resumes and validates") {
  Workspace w;
  const auto out = w.root / "train";
  const std::string args = "train " + w.common() + " --out " + q(out) + " --g 4 --batch-size 8 --validate-every 2";
  const auto start = std::chrono::steady_clock::now();
  auto r = run(args + " --steps 2");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.find("step 1 | trajectories 8 | mean_reward 0.2000") != std::string::npos);
  CHECK(r.output.find("validation @ step 2 | J 66.67 | F1 55.00") != std::string::npos);

  r = run(args + " --steps 3");
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.find("resuming after step 2") != std::string::npos);
  CHECK(r.output.find("step 3 | trajectories 8") != std::string::npos);
  CHECK(r.output.find("step 1 |") == std::string::npos);
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 60.0);

  const auto metrics = read_jsonl(out / "metrics.jsonl");
  REQUIRE(metrics.size() == 3);
  const auto run_json = json::parse(sumer::read_file(out / "run.json"));
  for (int s = 0; s < 3; ++s) {
    const auto& m = metrics[static_cast<std::size_t>(s)];
    CHECK(m["step"] == s + 1);
    CHECK(m["config_hash"] == run_json["config_hash"]);
    CHECK(m["trajectories"] == 8);
    CHECK(m["groups"] == 2);
    CHECK(m["mean_reward"].get<double>() == doctest::Approx(0.2));
    CHECK(m["reward_std"].get<double>() == doctest::Approx(std::sqrt(0.62)));
    CHECK(m["mean_abs_advantage"].get<double>() == doctest::Approx(0.7 / (std::sqrt(0.62) + 1e-6)));
    CHECK(m["mean_turns"].get<double>() == doctest::Approx(1.75));
    CHECK(m["clip_fraction"] == 0.0);
    CHECK(m["terminal_histogram"]["Submitted"] == 6);
    CHECK(m["terminal_histogram"]["NoToolCall"] == 2);
    CHECK(m["policy_version"] == fmt::format("dry-run-{}-step-{}", run_json["config_hash"].get<std::string>(), s + 1));
  }
  CHECK(read_jsonl(out / "trajectories.jsonl").size() == 24);
  const auto val = read_jsonl(out / "validation.jsonl");
  REQUIRE(val.size() == 1);
  CHECK(val[0]["judge"].get<double>() == doctest::Approx(400.0 / 6.0));

  // A different config may not write into the same directory.
  r = run("train " + w.common() + " --out " + q(out) + " --g 2 --batch-size 8 --steps 1");
  CHECK(r.code == 1);
  CHECK(r.output.find("refusing to mix") != std::string::npos);
}

TEST_CASE("train refuses a policy that cannot score before step 1") {
  Workspace w;
  auto script = json::parse(sumer::read_file(testing::fixture("policy_script.json")));
  script["capabilities"] = {{"logprobs", true}, {"score", false}};
  const auto path = w.root / "no_score.json";
  sumer::write_file_atomic(path, script.dump());
  const auto out = w.root / "refused";
  const auto r = run("train --dataset " + w.dataset + " --bank-dir " + q(w.banks) +
                     " --embed-url hashing --embed-dim 64 --policy-url script:" + q(path) + " --judge-url replay:" +
                     q(testing::fixture("judge_replay.json")) + " --out " + q(out) + " --g 4 --batch-size 8 --steps 1");
  CHECK(r.code == 1);
  CHECK(r.output.find("support scoring") != std::string::npos);
  CHECK_FALSE(fs::exists(out / "metrics.jsonl"));
}

TEST_CASE("eval writes a complete per-category report and report compares runs") {
  Workspace w;
  auto r = run("eval " + w.common() + " --out " + q(w.root / "eval0"));
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.find("Single Hop") != std::string::npos);
  CHECK(r.output.find("INCOMPLETE") == std::string::npos);
  const auto report = json::parse(sumer::read_file(w.root / "eval0" / "report.json"));
  CHECK(report["incomplete"] == false);
  CHECK(report["overall"]["count"] == 6);
  CHECK(report["overall"]["judge"].get<double>() == doctest::Approx(400.0 / 6.0));
  CHECK(report["overall"]["f1"].get<double>() == doctest::Approx(55.0));
  for (const auto* c : {"SingleHop", "MultiHop", "Temporal", "OpenDomain"}) CHECK(report["per_category"].contains(c));
  CHECK(read_jsonl(w.root / "eval0" / "records.jsonl").size() == 6);
  CHECK(fs::exists(w.root / "eval0" / "report.txt"));

  REQUIRE(run("eval " + w.common() + " --out " + q(w.root / "eval1") + " --step 3").code == 0);
  r = run("report " + q(w.root / "eval0") + " " + q(w.root / "eval1" / "report.json") + " --label trained --out " +
          q(w.root / "delta.json"));
  REQUIRE_MESSAGE(r.code == 0, r.output);
  CHECK(r.output.find("trained") != std::string::npos);
  CHECK(r.output.find("+0.00") != std::string::npos);
  CHECK(json::parse(sumer::read_file(w.root / "delta.json")).size() == 3);

  REQUIRE(run("eval " + w.common() + " --out " + q(w.root / "eval2") + " --max-turns 5").code == 0);
  r = run("report " + q(w.root / "eval0") + " " + q(w.root / "eval2"));
  CHECK(r.code == 1);
  CHECK(r.output.find("--allow-mixed") != std::string::npos);
  CHECK(run("report " + q(w.root / "eval0") + " " + q(w.root / "eval2") + " --allow-mixed").code == 0);
}

TEST_CASE("missing inputs fail with the offending path") {
  const auto r = run("ingest --dataset /nonexistent/locomo10.json --bank-dir " + q(testing::scratch_dir("cli_missing")));
  CHECK(r.code != 0);
  CHECK(r.output.find("/nonexistent/locomo10.json") != std::string::npos);
  CHECK(run("").code != 0);
  CHECK(run("search --bank-dir /nonexistent --conversation c --mode keyword --keywords x").output.find("/nonexistent") !=
        std::string::npos);
}

}  // TEST_SUITE
