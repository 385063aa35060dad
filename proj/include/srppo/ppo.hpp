// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srppo/coherent_reward.hpp"
#include "srppo/policy.hpp"
#include "srppo/token_world.hpp"
#include "srppo/trajectory.hpp"

namespace srppo {

struct PpoConfig {
  double clip_epsilon = 0.2;
  double gamma = 1.0;
  double gae_lambda = 0.95;
  double kl_coefficient = 0.2;
  KlReference kl_reference = KlReference::sft;
  int rollout_buffer_size = 256;
  int train_batch_size = 64;
  double actor_lr = 0.5;
  double critic_lr = 0.5;
  int critic_warmup_buffers = 5;
  int inner_epochs = 1;
  int episodes = 2;       // passes over the prompt set
  int iterations = 0;     // explicit iteration count; 0 derives it from episodes
  bool advantage_normalization = true;
  double max_grad_norm = 0.0;  // 0 disables actor gradient clipping
  std::uint64_t seed = 0;

  friend bool operator==(const PpoConfig&, const PpoConfig&) = default;
};

void validate(const PpoConfig& config);

// Number of actor iterations run for a prompt set of the given size.
int planned_iterations(const PpoConfig& config, std::size_t num_prompts);

// Fills trajectory.raw_rewards (and any per-token log-probs it relies on).
class RewardFunction {
 public:
  virtual ~RewardFunction() = default;
  virtual void score(Trajectory& trajectory) const = 0;
  virtual std::string name() const = 0;
};

class CoherentRewardFunction final : public RewardFunction {
 public:
  explicit CoherentRewardFunction(RewardSpec spec);
  void score(Trajectory& trajectory) const override;
  std::string name() const override { return "coherent_" + to_string(spec_.granularity); }
  const RewardSpec& spec() const { return spec_; }

 private:
  RewardSpec spec_;
};

struct RolloutBatch {
  std::vector<Trajectory> trajectories;
  std::uint64_t actor_snapshot = 0;
  double mean_reward = 0.0;  // mean summed raw reward per trajectory
  double mean_len = 0.0;
  double kl_to_ref = 0.0;    // mean summed log(pi_old / p_ref) per trajectory
};

// Recomputes the aggregate statistics from the trajectories.
void refresh_statistics(RolloutBatch& batch);

// Samples config.rollout_buffer_size episodes from the actor, prompts drawn
// uniformly; episode i uses the stream derive_seed(stream_seed, i). Rewards
// carry the per-step penalty kl_coefficient * (log pi_old - log p_ref).
// Values are filled from `critic` when given.
RolloutBatch collect_rollouts(const Policy& actor, const RewardFunction& reward, const PromptSet& prompts,
                              const PpoConfig& config, const Policy& reference, const ValueHead* critic,
                              std::uint64_t stream_seed, std::uint64_t snapshot_id = 0);

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

// Backward recursion A_t = delta_t + gamma*lambda*A_{t+1}, with the value
// after the final step taken as 0; R_t is the discounted reward-to-go.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                      double lambda);
void compute_gae(Trajectory& trajectory, double gamma, double lambda);

// Whitens advantages over every step of the batch. Skipped when the
// standard deviation is below 1e-8. Returns whether it was applied.
bool normalize_advantages(RolloutBatch& batch);

// Mean over steps of (V(s_t) - R_t)^2; adds its gradient to `grad` if given.
double critic_loss(const ValueHead& head, std::span<const Trajectory> batch, std::vector<double>* grad = nullptr);

// One gradient step on critic_loss. Returns the pre-step loss.
double critic_update(ValueHead& head, std::span<const Trajectory> batch, double critic_lr);

struct ActorDiagnostics {
  double loss = 0.0;
  double clip_fraction = 0.0;
  double mean_ratio = 0.0;
  std::size_t steps = 0;
};

// Mean over steps of -min(ratio * A, clip(ratio, 1-eps, 1+eps) * A), ratio
// formed in log space against logp_old. Adds its gradient to `grad` if given.
ActorDiagnostics actor_loss(const Policy& actor, std::span<const Trajectory> batch, double clip_epsilon,
                            std::vector<double>* grad = nullptr);

// inner_epochs passes of minibatched gradient steps on actor_loss.
ActorDiagnostics actor_update(Policy& actor, const RolloutBatch& batch, const PpoConfig& config,
                              std::uint64_t minibatch_seed);

struct PpoMetrics {
  int iter = 0;
  std::string phase;  // "warmup" or "ppo"
  double mean_reward = 0.0;
  double mean_len = 0.0;
  double kl_to_ref = 0.0;
  std::optional<double> clip_frac;
  std::optional<double> actor_loss;
  double critic_loss = 0.0;
  std::map<std::string, double> extra;
};

struct PpoResult {
  Policy actor;
  ValueHead critic;
  std::vector<PpoMetrics> log;
};

// Called after each actor iteration with the updated actor; may add entries
// to metrics.extra.
using PpoObserver = std::function<void(const Policy& actor, PpoMetrics& metrics)>;

// Critic warmup for critic_warmup_buffers buffers with the actor frozen, then
// collect -> GAE -> critic_update -> actor_update per iteration. The critic
// is initialized from the SFT trunk; the KL reference defaults to the SFT
// policy itself.
PpoResult run_ppo(const Policy& sft_policy, const RewardFunction& reward, const PromptSet& prompts,
                  const PpoConfig& config, FrozenPolicy reference = nullptr, const PpoObserver& observer = {});

void write_ppo_metrics(std::ostream& out, const std::vector<PpoMetrics>& log);

}  // namespace srppo
