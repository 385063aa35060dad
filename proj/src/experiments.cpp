// SPDX-License-Identifier: Apache-2.0
#include "srppo/experiments.hpp"

#include <cmath>

#include "srppo/errors.hpp"

namespace srppo {

double expected_length(const Policy& policy, const PromptSet& prompts, std::uint64_t cap) {
  if (prompts.prompts.empty()) throw ConfigError("expected_length: empty prompt set");
  const Vocabulary vocab = policy.vocab();
  const int m = policy.arch().max_len;
  double total = 0.0;
  for (const auto& x : prompts.prompts) {
    double len = 0.0;
    enumerate_sequences(
        vocab, m, cap, x,
        [&](TokenSpan xs, TokenSpan prefix, std::span<double> out) { policy.next_log_probs(xs, prefix, out); },
        [&](TokenSpan y, double logp) { len += std::exp(logp) * static_cast<double>(y.size()); });
    total += len;
  }
  return total / static_cast<double>(prompts.prompts.size());
}

PpoResult oracle_reward_baseline(const Policy& sft_policy, const TokenWorld& world, const PromptSet& prompts,
                                 const PpoConfig& config, FrozenPolicy reference, const PpoObserver& observer) {
  ExpertLogLikelihoodReward reward(world);
  return run_ppo(sft_policy, reward, prompts, config, std::move(reference), observer);
}

LengthStudyResult length_degeneration_study(const Policy& pretrained, const Policy& sft_policy,
                                            const PromptSet& prompts, const PpoConfig& config,
                                            FrozenPolicy reference) {
  const auto pt = clone_frozen(pretrained, Role::pretrained);
  const auto sf = clone_frozen(sft_policy, Role::sft);
  PpoObserver track = [&prompts](const Policy& actor, PpoMetrics& m) {
    m.extra["expected_len"] = expected_length(actor, prompts);
  };

  LengthStudyResult out;
  out.initial_length = expected_length(sft_policy, prompts);
  {
    CoherentRewardFunction reward(RewardSpec{sf, pt, Granularity::token_wise, std::nullopt});
    auto r = run_ppo(sft_policy, reward, prompts, config, reference, track);
    out.token_wise_final = expected_length(r.actor, prompts);
    out.token_wise = std::move(r.log);
  }
  {
    CoherentRewardFunction reward(RewardSpec{sf, pt, Granularity::sequence_at_eos, std::nullopt});
    auto r = run_ppo(sft_policy, reward, prompts, config, reference, track);
    out.sequence_final = expected_length(r.actor, prompts);
    out.sequence_at_eos = std::move(r.log);
  }
  return out;
}

OverlapResult overlap_experiment(Overlap setup, const ExperimentConfig& config) {
  ExperimentConfig c = config;
  c.data.overlap = setup;
  c.stages = {"pretrain", "sft", "sft_extended", "ppo", "eval"};
  OverlapResult out;
  out.setup = setup;
  out.state = run_pipeline(c);
  for (const auto& r : out.state.reports) {
    if (r.method == "sft") out.kl_unseen_sft = r.kl_unseen.value;
    if (r.method == "srppo") out.kl_unseen_srppo = r.kl_unseen.value;
    if (r.method == "sft_extended") out.kl_unseen_sft_extended = r.kl_unseen.value;
  }
  return out;
}

}  // namespace srppo
