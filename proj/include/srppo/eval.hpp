// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "srppo/coherent_reward.hpp"
#include "srppo/policy.hpp"
#include "srppo/ppo.hpp"
#include "srppo/token_world.hpp"

namespace srppo {

struct KlEstimate {
  double value = 0.0;
  double std_error = 0.0;  // 0 when exact
  bool exact = true;
};

// Mean over prompts of KL(p_expert(.|x) || p_policy(.|x)) on the response
// space. Falls back to a Monte-Carlo estimate with `fallback_samples` expert
// draws when the space exceeds the world's enumeration cap.
KlEstimate exact_kl_to_expert(const Policy& policy, const TokenWorld& world, const PromptSet& prompts,
                              std::size_t fallback_samples = 10000, std::uint64_t seed = 0);

// Prompts drawn uniformly from the set, responses from the expert; the
// estimate averages log p_expert(y|x) - log p_policy(y|x).
KlEstimate monte_carlo_kl_to_expert(const Policy& policy, const TokenWorld& world, const PromptSet& prompts,
                                    std::size_t samples, std::uint64_t seed);

// Probability vectors aligned with `space` (see response_space).
std::vector<double> policy_distribution(const Policy& policy, const std::vector<Tokens>& space, TokenSpan x);
std::vector<double> expert_distribution(const TokenWorld& world, const std::vector<Tokens>& space, TokenSpan x);

double total_variation(std::span<const double> p, std::span<const double> q);

// Mean over prompts of the total variation between the policy's response
// distribution and the KL-regularized optimum of the coherent reward.
double tv_to_closed_form_optimum(const Policy& policy, const RewardSpec& spec, const TokenWorld& world,
                                 const PromptSet& prompts, double kl_coefficient,
                                 KlReference reference = KlReference::sft);

// Mean over prompts of the total variation between two policies.
double mean_tv(const Policy& a, const Policy& b, const TokenWorld& world, const PromptSet& prompts);

// Sequence-level log p_expert(y|x), placed on the terminal step.
class ExpertLogLikelihoodReward final : public RewardFunction {
 public:
  explicit ExpertLogLikelihoodReward(const TokenWorld& world) : world_(&world) {}
  void score(Trajectory& trajectory) const override;
  std::string name() const override { return "expert_log_likelihood"; }

 private:
  const TokenWorld* world_;
};

class ZeroReward final : public RewardFunction {
 public:
  void score(Trajectory& trajectory) const override { trajectory.raw_rewards.assign(trajectory.size(), 0.0); }
  std::string name() const override { return "zero"; }
};

struct EvalConfig {
  int samples = 2000;         // policy samples for the length statistics
  int heldout_demos = 200;    // fresh expert pairs when no demos are reserved
  double top_p = 0.9;         // success predicate: response inside the expert's top-p set
  bool track_ppo_kl = true;   // log exact unseen-prompt KL after every PPO iteration

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

struct EvalReport {
  std::string method;
  KlEstimate kl_to_expert;  // over every prompt of the world
  KlEstimate kl_seen;       // prompts with SFT demonstrations
  KlEstimate kl_unseen;     // all other prompts
  std::optional<double> heldout_nll;
  double mean_response_length = 0.0;
  std::vector<std::size_t> length_histogram;  // index = response length, 0 unused
  std::optional<double> task_success_rate;
  std::size_t samples = 0;
};

// Synthetic success: probability mass the policy puts on the smallest set of
// responses holding at least `top_p` of the expert's mass, averaged over
// prompts. Empty when the response space is not enumerable.
std::optional<double> task_success_rate(const Policy& policy, const TokenWorld& world, const PromptSet& prompts,
                                        double top_p);

EvalReport evaluate_policy(const std::string& method, const Policy& policy, const TokenWorld& world,
                           const PromptSet& seen, const PromptSet& unseen, const DemonstrationSet* heldout,
                           const EvalConfig& config, std::uint64_t seed);

void write_eval_reports(std::ostream& out, const std::vector<EvalReport>& reports);
// method rows, metric columns
void write_summary_csv(std::ostream& out, const std::vector<EvalReport>& reports);

}  // namespace srppo
