// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "srppo/policy.hpp"
#include "srppo/token_world.hpp"
#include "srppo/trajectory.hpp"

namespace srppo {

enum class Granularity { sequence_at_eos, token_wise };
enum class KlReference { sft, pretrained };

std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& s);
std::string to_string(KlReference r);
KlReference kl_reference_from_string(const std::string& s);

// Log-ratio reward between a frozen SFT snapshot and a frozen pretrained
// snapshot.
struct RewardSpec {
  FrozenPolicy sft_snapshot;
  FrozenPolicy pretrained_snapshot;
  Granularity granularity = Granularity::sequence_at_eos;
  std::optional<double> reward_clip;  // symmetric bound; off for all oracle checks
};

// Throws ConfigError when snapshots are missing or disagree on vocabulary.
void validate(const RewardSpec& spec);

// log p_SFT(y|x) - log p_PT(y|x), unclipped.
double sequence_reward(const RewardSpec& spec, TokenSpan x, TokenSpan y);

// log p_SFT(next | x, prefix) - log p_PT(next | x, prefix), unclipped.
double token_reward(const RewardSpec& spec, TokenSpan x, TokenSpan prefix, Token next);

// Per-step rewards of a complete trajectory. sequence_at_eos puts the whole
// log-ratio on the final step (EOS, or step m when truncated) and zero
// elsewhere; token_wise gives each step its own log-ratio. Uses the stored
// logp_sft / logp_pt arrays when present.
std::vector<double> assign_rewards(const RewardSpec& spec, const Trajectory& trajectory);

// Maximizer of E[r] - kl * KL(p || p_ref) over the enumerable response space
// with r the coherent reward: p*(y|x) proportional to p_ref(y|x) exp(r(x,y)/kl).
// Returned in the enumeration order of `response_space`.
std::vector<ScoredResponse> closed_form_optimum(const RewardSpec& spec, const TokenWorld& world, TokenSpan x,
                                                double kl_coefficient,
                                                KlReference reference = KlReference::sft);

// Every response of length <= max_len in depth-first token order.
std::vector<Tokens> response_space(const Vocabulary& vocab, int max_len, std::uint64_t cap);

}  // namespace srppo
