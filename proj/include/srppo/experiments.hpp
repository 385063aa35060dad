// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "srppo/pipeline.hpp"

namespace srppo {

// Expected response length of `policy` under uniform prompts from the set,
// computed exactly over the response space.
double expected_length(const Policy& policy, const PromptSet& prompts, std::uint64_t cap = std::uint64_t{1} << 20);

// PPO from the SFT policy with the expert's sequence log-likelihood as
// reward, under the same optimizer settings as the coherent-reward run.
PpoResult oracle_reward_baseline(const Policy& sft_policy, const TokenWorld& world, const PromptSet& prompts,
                                 const PpoConfig& config, FrozenPolicy reference = nullptr,
                                 const PpoObserver& observer = {});

struct LengthStudyResult {
  std::vector<PpoMetrics> token_wise;       // extra["expected_len"] per iteration
  std::vector<PpoMetrics> sequence_at_eos;
  double initial_length = 0.0;              // expected length of the SFT policy
  double token_wise_final = 0.0;
  double sequence_final = 0.0;
};

// Paired PPO runs, token-wise and EOS-level coherent reward, same seeds.
LengthStudyResult length_degeneration_study(const Policy& pretrained, const Policy& sft_policy,
                                            const PromptSet& prompts, const PpoConfig& config,
                                            FrozenPolicy reference = nullptr);

struct OverlapResult {
  Overlap setup = Overlap::minimum;
  PipelineState state;
  double kl_unseen_sft = 0.0;
  double kl_unseen_srppo = 0.0;
  double kl_unseen_sft_extended = 0.0;
};

// Runs pretrain, sft, sft_extended, ppo and eval with the data split forced
// to `setup`.
OverlapResult overlap_experiment(Overlap setup, const ExperimentConfig& config);

}  // namespace srppo
