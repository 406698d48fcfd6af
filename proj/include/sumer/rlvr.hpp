// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "sumer/backends.hpp"
#include "sumer/corpus.hpp"
#include "sumer/episode.hpp"
#include "sumer/errors.hpp"

namespace sumer {

template <class Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Rewards

/// Set-based token F1 over normalize_answer_tokens(); 0 if either side is empty.
double token_f1(std::string_view predicted, std::string_view gold);

struct RewardBreakdown {
  bool submitted = false;
  Verdict verdict = Verdict::Wrong;
  double f1 = 0.0;
  double reward = -1.0;
  bool judge_failure = false;
};

/// judge x F1 when an answer was submitted, otherwise -1.
RewardBreakdown make_reward(bool submitted, Verdict verdict, double f1, bool judge_failure = false);

/// Calls the judge only for submitted trajectories (even when F1 is 0).
/// InfrastructureError from the judge propagates.
RewardBreakdown compute_reward(const Trajectory& trajectory, const QAItem& qa, Judge& judge);

// ---------------------------------------------------------------------------
// Group-relative advantages

/// (r_i - mean) / (population_std + eps). All-equal rewards give exact zeros.
template <class Scalar>
ArrayX<Scalar> group_advantages(const ArrayX<Scalar>& rewards, Scalar epsilon_std = Scalar(1e-6)) {
  if (rewards.size() < 1) throw ValidationError("group_advantages: empty group");
  if ((rewards == rewards(0)).all()) return ArrayX<Scalar>::Zero(rewards.size());
  const Scalar g = static_cast<Scalar>(rewards.size());
  const Scalar mean = rewards.sum() / g;
  const Scalar sigma = std::sqrt((rewards - mean).square().sum() / g);
  return (rewards - mean) / (sigma + epsilon_std);
}

// ---------------------------------------------------------------------------
// Clipped surrogate objective

/// Per-token arrays of one rollout, all of equal length.
template <class Scalar>
struct RolloutTokens {
  std::vector<std::int32_t> token_stream;
  ArrayX<Scalar> loss_mask;     // 0/1
  ArrayX<Scalar> old_logprobs;  // behaviour policy
  ArrayX<Scalar> new_logprobs;  // current policy
  Scalar advantage = 0;
};

template <class Scalar>
struct GRPOBatch {
  std::vector<RolloutTokens<Scalar>> rollouts;
  Scalar clip_low = Scalar(0.2);
  Scalar clip_high = Scalar(0.28);
  /// Divide each rollout's token sum by its learned-token count. Off by default.
  bool per_token_mean = false;

  void validate() const {
    if (rollouts.empty()) throw ValidationError("GRPO batch has no rollouts");
    for (std::size_t i = 0; i < rollouts.size(); ++i) {
      const auto& r = rollouts[i];
      const auto n = r.loss_mask.size();
      if (r.old_logprobs.size() != n || r.new_logprobs.size() != n ||
          (!r.token_stream.empty() && static_cast<Eigen::Index>(r.token_stream.size()) != n)) {
        throw ValidationError("GRPO batch rollout " + std::to_string(i) + ": per-token arrays differ in length");
      }
      if (!((r.loss_mask == Scalar(0)) || (r.loss_mask == Scalar(1))).all()) {
        throw ValidationError("GRPO batch rollout " + std::to_string(i) + ": loss mask must be 0/1");
      }
      if (!r.old_logprobs.isFinite().all() || !r.new_logprobs.isFinite().all() || (r.old_logprobs > Scalar(0)).any() ||
          (r.new_logprobs > Scalar(0)).any()) {
        throw ValidationError("GRPO batch rollout " + std::to_string(i) + ": log-probabilities must be finite and <= 0");
      }
      if (!std::isfinite(r.advantage)) throw ValidationError("GRPO batch: non-finite advantage");
    }
  }
};

template <class Scalar>
struct GRPOResult {
  Scalar objective = 0;  // J
  Scalar loss = 0;       // -J
  std::vector<ArrayX<Scalar>> per_token_loss;  // sums to `loss`
  std::vector<ArrayX<Scalar>> grad_new_logprobs;  // dJ / d new_logprob
  std::size_t learned_tokens = 0;  // mask == 1
  std::size_t clipped_tokens = 0;  // mask == 1, advantage != 0, clipped branch strictly smaller
};

/// J = (1/G) sum_i sum_t min(rho*A_hat, clip(rho, 1-clip_low, 1+clip_high)*A_hat)
/// with rho = exp(new - old) and A_hat = mask * A_i. Masked tokens contribute
/// exactly 0 to J and its gradient. No KL or entropy term.
template <class Scalar>
GRPOResult<Scalar> grpo_objective(const GRPOBatch<Scalar>& batch) {
  batch.validate();
  GRPOResult<Scalar> out;
  const Scalar g = static_cast<Scalar>(batch.rollouts.size());
  const Scalar lo = Scalar(1) - batch.clip_low;
  const Scalar hi = Scalar(1) + batch.clip_high;
  for (const auto& r : batch.rollouts) {
    const Scalar learned = r.loss_mask.sum();
    Scalar weight = Scalar(1) / g;
    if (batch.per_token_mean && learned > Scalar(0)) weight /= learned;

    const ArrayX<Scalar> ratio = (r.new_logprobs - r.old_logprobs).exp();
    const ArrayX<Scalar> adv_hat = r.loss_mask * r.advantage;
    const ArrayX<Scalar> unclipped = ratio * adv_hat;
    const ArrayX<Scalar> clipped = ratio.max(lo).min(hi) * adv_hat;
    const auto active = (r.loss_mask > Scalar(0));
    const auto unclipped_branch = (unclipped <= clipped);

    const ArrayX<Scalar> contribution = active.select(unclipped.min(clipped), Scalar(0));
    const ArrayX<Scalar> grad = (active && unclipped_branch).select(weight * unclipped, Scalar(0));

    out.objective += weight * contribution.sum();
    out.per_token_loss.push_back(-weight * contribution);
    out.grad_new_logprobs.push_back(grad);
    out.learned_tokens += static_cast<std::size_t>(active.count());
    if (r.advantage != Scalar(0)) {
      out.clipped_tokens += static_cast<std::size_t>((active && (clipped < unclipped)).count());
    }
  }
  out.loss = -out.objective;
  return out;
}

// ---------------------------------------------------------------------------
// Rollout groups and training steps

struct GrpoConfig {
  int group_size = 8;  // G
  double clip_low = 0.2;
  double clip_high = 0.28;
  double epsilon_std = 1e-6;
  int batch_size = 32;  // trajectories per step
  bool per_token_mean = false;
  int min_group_size = 2;
};

nlohmann::json to_json(const GrpoConfig& c);
GrpoConfig grpo_config_from_json(const nlohmann::json& j);

struct Rollout {
  Trajectory trajectory;
  RewardBreakdown reward;
};

struct RolloutGroup {
  std::string question_id;
  std::vector<Rollout> rollouts;
  std::vector<double> advantages;
  double epsilon_std = 1e-6;
  std::size_t dropped_rollouts = 0;
};

/// Drops rollouts whose judge failed, then standardizes the remaining rewards.
/// Returns nullopt when fewer than `min_group_size` rollouts remain.
std::optional<RolloutGroup> make_rollout_group(std::string question_id, std::vector<Rollout> rollouts,
                                               double epsilon_std, int min_group_size = 2);

struct StepSummary {
  int step = 0;
  std::size_t groups = 0;
  std::size_t trajectories = 0;
  std::size_t dropped_rollouts = 0;
  double mean_reward = 0.0;
  double reward_std = 0.0;  // population
  double mean_abs_advantage = 0.0;
  double clip_fraction = 0.0;
  double mean_turns = 0.0;
  double objective = 0.0;  // mean J over groups
  std::map<std::string, std::size_t> terminal_histogram;
};

nlohmann::json to_json(const StepSummary& s);

struct TrainingStep {
  std::vector<GRPOBatch<double>> batches;  // one per rollout group
  StepSummary summary;
};

/// Builds one GRPO batch per group: mask and old log-probabilities from the
/// trajectories, new log-probabilities from `policy.score`. Throws
/// CapabilityError if a trajectory lacks log-probabilities or the policy cannot score.
TrainingStep assemble_training_step(const std::vector<RolloutGroup>& groups, PolicyBackend& policy,
                                    const GrpoConfig& config, int step = 0);

nlohmann::json to_json(const GRPOBatch<double>& batch);

}  // namespace sumer
