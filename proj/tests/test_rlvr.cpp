// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <chrono>
#include <random>

#include "oracles.hpp"
#include "support.hpp"
#include "sumer/rlvr.hpp"

using namespace sumer;
using namespace oracles;

namespace {

Trajectory submitted(const std::string& answer) {
  Trajectory t;
  t.terminal = Terminal::Submitted;
  t.final_answer = answer;
  return t;
}

QAItem qa_with_gold(const std::string& gold) {
  QAItem q;
  q.question_id = "q#1";
  q.question = "What?";
  q.gold_answer = gold;
  return q;
}

}  // namespace

TEST_SUITE("rlvr") {

TEST_CASE("token F1") {
  CHECK(token_f1("Street Fighter", "street fighter") == 1.0);
  CHECK(token_f1("Street Fighter!", "Street Fighter") == 1.0);
  CHECK(token_f1("old bicycle", "old blue bicycle") == doctest::Approx(0.8));
  CHECK(token_f1("no idea", "grey tabby kitten") == 0.0);
  CHECK(token_f1("", "x") == 0.0);
  CHECK(token_f1("the the cat", "the cat") == 1.0);  // set-based
}

TEST_CASE("reward contract") {
  FixedJudge wrong(Verdict::Wrong), right(Verdict::Correct);
  Trajectory none;
  none.terminal = Terminal::NoToolCall;
  CHECK(compute_reward(none, qa_with_gold("x"), right).reward == -1.0);
  for (auto t : {Terminal::TurnCapExceeded, Terminal::ContextExceeded}) {
    none.terminal = t;
    CHECK(compute_reward(none, qa_with_gold("x"), right).reward == -1.0);
  }
  CHECK(right.calls == 0);

  CHECK(compute_reward(submitted("grey tabby kitten"), qa_with_gold("grey tabby kitten"), wrong).reward == 0.0);
  CHECK(compute_reward(submitted("old bicycle"), qa_with_gold("old blue bicycle"), right).reward ==
        doctest::Approx(0.8).epsilon(1e-15));
  // The judge is consulted even when lexical overlap is zero.
  CHECK(compute_reward(submitted("two"), qa_with_gold("2"), right).reward == 0.0);
  CHECK(right.calls == 2);

  const auto failed = make_reward(true, Verdict::Wrong, 0.5, true);
  CHECK(failed.reward == 0.0);
  CHECK(failed.judge_failure);
}

TEST_CASE("rewards lie in {-1} or [0, 1]") {
  std::mt19937_64 rng(17);
  const std::vector<std::string> words = {"a", "kitten", "grey", "bowl", "Coast", "to", "the", "blue", "!", "2"};
  auto phrase = [&] {
    std::string s;
    for (int n = static_cast<int>(rng() % 5); n > 0; --n) s += words[rng() % words.size()] + " ";
    return s;
  };
  for (int i = 0; i < 5000; ++i) {
    FixedJudge judge(rng() % 2 ? Verdict::Correct : Verdict::Wrong, rng() % 7 == 0);
    Trajectory t = submitted(phrase());
    if (rng() % 3 == 0) {
      t.terminal = static_cast<Terminal>(1 + rng() % 3);
      t.final_answer.reset();
    }
    const auto r = compute_reward(t, qa_with_gold(phrase()), judge).reward;
    CHECK((r == -1.0 || (r >= 0.0 && r <= 1.0)));
  }
}

TEST_CASE("group advantages") {
  ArrayX<double> r(8);
  r << 1, 0, 0, 0, 1, 1, 0, 1;
  const auto a = group_advantages<double>(r, 1e-6);
  const double expected = 0.5 / (0.5 + 1e-6);
  for (int i = 0; i < 8; ++i) CHECK(std::abs(a(i) - (r(i) == 1 ? expected : -expected)) <= 1e-12);

  for (double v : {0.0, -1.0, 0.8, 1.0}) {
    const auto z = group_advantages<double>(ArrayX<double>::Constant(5, v));
    CHECK((z == 0.0).all());
  }
  CHECK((group_advantages<double>(ArrayX<double>::Constant(1, 0.3)) == 0.0).all());
  CHECK_THROWS_AS(group_advantages<double>(ArrayX<double>()), ValidationError);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n;
  for (int trial = 0; trial < 100; ++trial) {
    ArrayX<double> x(8);
    for (int i = 0; i < 8; ++i) x(i) = n(rng);
    const auto base = group_advantages<double>(x, 0.0);
    CHECK(std::abs(base.sum()) < 1e-12);
    CHECK(std::abs(std::sqrt(base.square().mean()) - 1.0) < 1e-12);
    const auto moved = group_advantages<double>(x * 3.0 + 7.0, 0.0);
    CHECK(((moved - base).abs() < 1e-9).all());
  }
}

TEST_CASE("clip hand cases") {
  const auto up = grpo_objective(single_token(1.5, 1.0));
  CHECK(up.objective == 1.28);
  CHECK(up.grad_new_logprobs[0](0) == 0.0);
  CHECK(up.clipped_tokens == 1);

  const auto down = grpo_objective(single_token(0.5, -1.0));
  CHECK(down.objective == -0.8);
  CHECK(down.grad_new_logprobs[0](0) == 0.0);

  // Inside the trust region the unclipped branch is active: gradient is rho * A / G.
  const auto inside = grpo_objective(single_token(1.1, 2.0));
  CHECK(inside.objective == doctest::Approx(2.2));
  CHECK(inside.grad_new_logprobs[0](0) == doctest::Approx(2.2));
  CHECK(inside.clipped_tokens == 0);

  // Pessimistic side is never clipped: rho = 1.5 with A < 0 keeps the gradient.
  const auto pess = grpo_objective(single_token(1.5, -1.0));
  CHECK(pess.objective == doctest::Approx(-1.5));
  CHECK(pess.grad_new_logprobs[0](0) == doctest::Approx(-1.5));
}

TEST_CASE("objective equals the naive double loop on 1000 random batches") {
  std::mt19937_64 rng(2024);
  const auto start = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const auto b = random_batch<double>(rng);
    const auto res = grpo_objective(b);
    CHECK(std::abs(res.objective - naive_objective(b)) <= 1e-12);
    double token_sum = 0.0;
    for (const auto& l : res.per_token_loss) token_sum += l.sum();
    CHECK(std::abs(token_sum - res.loss) <= 1e-12);
  }
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 10.0);
}

TEST_CASE("analytic gradient matches central finite differences") {
  using LD = long double;
  std::mt19937_64 rng(77);
  const LD h = 1e-6L;
  std::size_t checked = 0;
  const auto start = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 200; ++trial) {
    const auto b = cast_batch<LD>(random_batch<double>(rng));
    const auto res = grpo_objective(b);
    const LD lo = 1 - b.clip_low, hi = 1 + b.clip_high;
    for (std::size_t i = 0; i < b.rollouts.size(); ++i) {
      const auto& r = b.rollouts[i];
      for (Eigen::Index t = 0; t < r.loss_mask.size(); ++t) {
        const LD rho = std::exp(r.new_logprobs(t) - r.old_logprobs(t));
        if (std::abs(rho - lo) < 1e-3L || std::abs(rho - hi) < 1e-3L) continue;
        auto plus = b, minus = b;
        plus.rollouts[i].new_logprobs(t) += h;
        minus.rollouts[i].new_logprobs(t) -= h;
        const LD fd = (grpo_objective(plus).objective - grpo_objective(minus).objective) / (2 * h);
        const LD an = res.grad_new_logprobs[i](t);
        const LD scale = std::max(std::abs(fd), std::abs(an));
        if (scale < 1e-12L) continue;  // both zero
        CHECK(static_cast<double>(std::abs(fd - an) / scale) <= 1e-5);
        ++checked;
      }
    }
  }
  CHECK(checked > 1000);
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 30.0);
}

TEST_CASE("masked positions cannot change the objective") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = random_batch<double>(rng);
    auto perturbed = b;
    for (auto& r : perturbed.rollouts) {
      for (Eigen::Index t = 0; t < r.loss_mask.size(); ++t) {
        if (r.loss_mask(t) != 0.0) continue;
        r.new_logprobs(t) = std::min(0.0, r.new_logprobs(t) + noise(rng));
        r.old_logprobs(t) = std::min(0.0, r.old_logprobs(t) + noise(rng));
      }
    }
    const auto a = grpo_objective(b), p = grpo_objective(perturbed);
    CHECK(a.objective == p.objective);
    for (std::size_t i = 0; i < b.rollouts.size(); ++i) {
      CHECK(((b.rollouts[i].loss_mask == 0.0).select(p.grad_new_logprobs[i], 0.0) == 0.0).all());
    }
  }
}

TEST_CASE("batch validation") {
  auto b = single_token(1.0, 1.0);
  b.rollouts[0].new_logprobs(0) = 0.1;
  CHECK_THROWS_AS(grpo_objective(b), ValidationError);
  b = single_token(1.0, 1.0);
  b.rollouts[0].loss_mask(0) = 0.5;
  CHECK_THROWS_AS(grpo_objective(b), ValidationError);
  b = single_token(1.0, std::nan(""));
  CHECK_THROWS_AS(grpo_objective(b), ValidationError);
  b = single_token(1.0, 1.0);
  b.rollouts[0].old_logprobs = ArrayX<double>::Zero(2);
  CHECK_THROWS_AS(grpo_objective(b), ValidationError);
  CHECK_THROWS_AS(grpo_objective(GRPOBatch<double>{}), ValidationError);
}

TEST_CASE("per-token mean divides by each rollout's learned tokens") {
  GRPOBatch<double> b;
  RolloutTokens<double> r;
  r.loss_mask = ArrayX<double>::Ones(4);
  r.old_logprobs = ArrayX<double>::Constant(4, -1.0);
  r.new_logprobs = r.old_logprobs;
  r.advantage = 2.0;
  b.rollouts = {r, r};
  CHECK(grpo_objective(b).objective == doctest::Approx(8.0));
  b.per_token_mean = true;
  CHECK(grpo_objective(b).objective == doctest::Approx(2.0));
}

TEST_CASE("rollout groups drop judge failures") {
  auto rollout = [](double reward, bool failure = false) {
    Rollout r;
    r.reward = make_reward(true, Verdict::Correct, reward, failure);
    return r;
  };
  auto g = make_rollout_group("q", {rollout(1.0), rollout(0.0, true), rollout(0.0)}, 1e-6);
  REQUIRE(g);
  CHECK(g->rollouts.size() == 2);
  CHECK(g->dropped_rollouts == 1);
  CHECK(g->advantages[0] == doctest::Approx(1.0 / (1.0 + 2e-6)));
  CHECK_FALSE(make_rollout_group("q", {rollout(1.0), rollout(0.0, true)}, 1e-6));
}

TEST_CASE("training step from scripted rollouts") {
  const auto ds = testing::mini_dataset();
  const auto& ab = testing::entry(ds, "conv-ab");
  testing::ConstantEmbedder e(4);
  const auto bank = testing::embedded_bank(ab.conversation, e);
  auto policy = ScriptedPolicy::from_file(testing::fixture("policy_script.json"));
  auto judge_transport = ReplayTransport::from_file(testing::fixture("judge_replay.json"));
  JudgeClient judge(*judge_transport, {"judge"});
  EpisodeConfig ec;

  std::vector<Rollout> rollouts;
  for (int i = 0; i < 4; ++i) {
    Rollout r;
    r.trajectory = run_episode(bank, ab.qa[0], *policy, ec, &e, {1, i});
    r.reward = compute_reward(r.trajectory, ab.qa[0], judge);
    rollouts.push_back(std::move(r));
  }
  CHECK(rollouts[0].reward.reward == 1.0);
  CHECK(rollouts[1].reward.reward == doctest::Approx(0.8));
  CHECK(rollouts[2].reward.reward == -1.0);
  CHECK(rollouts[3].reward.reward == 0.0);

  const auto group = make_rollout_group(ab.qa[0].question_id, rollouts, 1e-6);
  REQUIRE(group);
  GrpoConfig cfg;
  const auto step = assemble_training_step({*group}, *policy, cfg, 3);
  REQUIRE(step.batches.size() == 1);
  const auto& s = step.summary;
  CHECK(s.step == 3);
  CHECK(s.trajectories == 4);
  CHECK(s.mean_reward == doctest::Approx(0.2));
  CHECK(s.reward_std == doctest::Approx(std::sqrt(0.62)));
  CHECK(s.mean_abs_advantage == doctest::Approx(0.7 / (std::sqrt(0.62) + 1e-6)));
  CHECK(s.mean_turns == doctest::Approx(1.75));
  CHECK(s.clip_fraction == 0.0);
  CHECK(s.terminal_histogram.at("Submitted") == 3);
  CHECK(s.terminal_histogram.at("NoToolCall") == 1);

  // Scoring reproduces the behaviour log-probabilities, so every ratio is 1 and
  // J = (1/G) sum_i A_i * (learned tokens of i).
  double expected = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    expected += group->advantages[i] * static_cast<double>(rollouts[i].trajectory.assistant_token_count()) / 4.0;
    const auto& r = step.batches[0].rollouts[i];
    CHECK((r.loss_mask > 0).select(r.new_logprobs - r.old_logprobs, 0.0).abs().maxCoeff() == 0.0);
  }
  CHECK(s.objective == doctest::Approx(expected).epsilon(1e-12));

  const auto j = to_json(step.batches[0]);
  CHECK(j["rollouts"].size() == 4);
  CHECK(j["clip_high"] == 0.28);

  auto blind = ScriptedPolicy::from_json(json::parse(R"({"scripts":{"*":[[{"content":"x"}]]},
      "capabilities":{"logprobs":true,"score":false}})"));
  CHECK_THROWS_AS(assemble_training_step({*group}, *blind, cfg), CapabilityError);
  auto no_lp = *group;
  no_lp.rollouts[0].trajectory.logprobs_available = false;
  CHECK_THROWS_AS(assemble_training_step({no_lp}, *policy, cfg), CapabilityError);
}

TEST_CASE("GRPO config JSON round trip") {
  GrpoConfig c;
  c.group_size = 4;
  c.clip_high = 0.3;
  c.per_token_mean = true;
  CHECK(to_json(grpo_config_from_json(to_json(c))) == to_json(c));
}

}  // TEST_SUITE
