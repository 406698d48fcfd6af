// SPDX-License-Identifier: Apache-2.0
#include "sumer/rlvr.hpp"

#include <algorithm>
#include <set>

#include "sumer/util.hpp"

namespace sumer {

using nlohmann::json;

double token_f1(std::string_view predicted, std::string_view gold) {
  const auto p = normalize_answer_tokens(predicted);
  const auto g = normalize_answer_tokens(gold);
  const std::set<std::string> ps(p.begin(), p.end());
  const std::set<std::string> gs(g.begin(), g.end());
  if (ps.empty() || gs.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : ps) common += gs.count(t);
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(ps.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gs.size());
  return 2.0 * precision * recall / (precision + recall);
}

RewardBreakdown make_reward(bool submitted, Verdict verdict, double f1, bool judge_failure) {
  RewardBreakdown r;
  r.submitted = submitted;
  r.verdict = verdict;
  r.f1 = f1;
  r.judge_failure = judge_failure;
  r.reward = submitted ? static_cast<double>(static_cast<int>(verdict)) * f1 : -1.0;
  return r;
}

RewardBreakdown compute_reward(const Trajectory& trajectory, const QAItem& qa, Judge& judge) {
  if (trajectory.terminal != Terminal::Submitted || !trajectory.final_answer) {
    return make_reward(false, Verdict::Wrong, 0.0);
  }
  const auto& answer = *trajectory.final_answer;
  const double f1 = token_f1(answer, qa.gold_answer);
  const auto verdict = judge.judge(qa.question, qa.gold_answer, answer);
  return make_reward(true, verdict.verdict, f1, verdict.judge_failure);
}

json to_json(const GrpoConfig& c) {
  return {{"group_size", c.group_size},         {"clip_low", c.clip_low},
          {"clip_high", c.clip_high},           {"epsilon_std", c.epsilon_std},
          {"batch_size", c.batch_size},         {"per_token_mean", c.per_token_mean},
          {"min_group_size", c.min_group_size}};
}

GrpoConfig grpo_config_from_json(const json& j) {
  GrpoConfig c;
  c.group_size = j.value("group_size", c.group_size);
  c.clip_low = j.value("clip_low", c.clip_low);
  c.clip_high = j.value("clip_high", c.clip_high);
  c.epsilon_std = j.value("epsilon_std", c.epsilon_std);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.per_token_mean = j.value("per_token_mean", c.per_token_mean);
  c.min_group_size = j.value("min_group_size", c.min_group_size);
  return c;
}

std::optional<RolloutGroup> make_rollout_group(std::string question_id, std::vector<Rollout> rollouts,
                                               double epsilon_std, int min_group_size) {
  RolloutGroup g;
  g.question_id = std::move(question_id);
  g.epsilon_std = epsilon_std;
  for (auto& r : rollouts) {
    if (r.reward.judge_failure) {
      ++g.dropped_rollouts;
      continue;
    }
    g.rollouts.push_back(std::move(r));
  }
  if (static_cast<int>(g.rollouts.size()) < std::max(1, min_group_size)) return std::nullopt;
  ArrayX<double> rewards(static_cast<Eigen::Index>(g.rollouts.size()));
  for (std::size_t i = 0; i < g.rollouts.size(); ++i) rewards(static_cast<Eigen::Index>(i)) = g.rollouts[i].reward.reward;
  const auto adv = group_advantages<double>(rewards, epsilon_std);
  g.advantages.assign(adv.data(), adv.data() + adv.size());
  return g;
}

json to_json(const StepSummary& s) {
  return {{"step", s.step},
          {"groups", s.groups},
          {"trajectories", s.trajectories},
          {"dropped_rollouts", s.dropped_rollouts},
          {"mean_reward", s.mean_reward},
          {"reward_std", s.reward_std},
          {"mean_abs_advantage", s.mean_abs_advantage},
          {"clip_fraction", s.clip_fraction},
          {"mean_turns", s.mean_turns},
          {"objective", s.objective},
          {"terminal_histogram", s.terminal_histogram}};
}

namespace {

ArrayX<double> to_array(const std::vector<double>& v) {
  return Eigen::Map<const ArrayX<double>>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

TrainingStep assemble_training_step(const std::vector<RolloutGroup>& groups, PolicyBackend& policy,
                                    const GrpoConfig& config, int step) {
  if (!policy.capabilities().score) {
    throw CapabilityError("policy backend '" + policy.model_id() + "' cannot score token streams");
  }
  TrainingStep out;
  out.summary.step = step;
  std::vector<double> rewards;
  double abs_adv = 0.0;
  double turns = 0.0;
  std::size_t learned = 0, clipped = 0;

  for (const auto& g : groups) {
    if (g.rollouts.size() != g.advantages.size()) {
      throw ValidationError("rollout group " + g.question_id + ": advantages do not match rollouts");
    }
    GRPOBatch<double> batch;
    batch.clip_low = config.clip_low;
    batch.clip_high = config.clip_high;
    batch.per_token_mean = config.per_token_mean;
    for (std::size_t i = 0; i < g.rollouts.size(); ++i) {
      const auto& traj = g.rollouts[i].trajectory;
      if (!traj.logprobs_available) {
        throw CapabilityError("trajectory for " + traj.question_id + " has no generation-time log-probabilities");
      }
      auto flat = flatten_with_mask(traj);
      const auto fresh = policy.score(flat.token_stream);
      if (fresh.size() != flat.token_stream.size()) {
        throw InfrastructureError("policy score returned " + std::to_string(fresh.size()) + " log-probabilities for " +
                                  std::to_string(flat.token_stream.size()) + " tokens");
      }
      RolloutTokens<double> r;
      r.loss_mask = ArrayX<double>(static_cast<Eigen::Index>(flat.loss_mask.size()));
      for (std::size_t t = 0; t < flat.loss_mask.size(); ++t) r.loss_mask(static_cast<Eigen::Index>(t)) = flat.loss_mask[t];
      r.old_logprobs = to_array(flat.old_logprobs);
      r.new_logprobs = to_array(fresh);
      // Masked positions never enter the objective; keep them inside the validated domain.
      r.new_logprobs = (r.loss_mask > 0.0).select(r.new_logprobs, 0.0);
      r.advantage = g.advantages[i];
      r.token_stream = std::move(flat.token_stream);
      batch.rollouts.push_back(std::move(r));

      rewards.push_back(g.rollouts[i].reward.reward);
      abs_adv += std::abs(g.advantages[i]);
      turns += static_cast<double>(traj.turns.size());
      ++out.summary.terminal_histogram[std::string(terminal_name(traj.terminal))];
    }
    const auto result = grpo_objective(batch);
    out.summary.objective += result.objective;
    learned += result.learned_tokens;
    clipped += result.clipped_tokens;
    out.summary.dropped_rollouts += g.dropped_rollouts;
    out.batches.push_back(std::move(batch));
  }

  out.summary.groups = out.batches.size();
  out.summary.trajectories = rewards.size();
  if (!rewards.empty()) {
    const auto r = to_array(rewards);
    const double n = static_cast<double>(r.size());
    out.summary.mean_reward = r.mean();
    out.summary.reward_std = std::sqrt((r - r.mean()).square().sum() / n);
    out.summary.mean_abs_advantage = abs_adv / n;
    out.summary.mean_turns = turns / n;
  }
  if (!out.batches.empty()) out.summary.objective /= static_cast<double>(out.batches.size());
  out.summary.clip_fraction = learned ? static_cast<double>(clipped) / static_cast<double>(learned) : 0.0;
  return out;
}

json to_json(const GRPOBatch<double>& batch) {
  json rollouts = json::array();
  for (const auto& r : batch.rollouts) {
    rollouts.push_back({{"token_ids", r.token_stream},
                        {"loss_mask", std::vector<double>(r.loss_mask.data(), r.loss_mask.data() + r.loss_mask.size())},
                        {"old_logprobs",
                         std::vector<double>(r.old_logprobs.data(), r.old_logprobs.data() + r.old_logprobs.size())},
                        {"advantage", r.advantage}});
  }
  return {{"clip_low", batch.clip_low},
          {"clip_high", batch.clip_high},
          {"per_token_mean", batch.per_token_mean},
          {"rollouts", std::move(rollouts)}};
}

}  // namespace sumer
