// SPDX-License-Identifier: Apache-2.0
#include "srppo/coherent_reward.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "srppo/errors.hpp"

namespace srppo {

namespace {

double checked_ratio(double lsft, double lpt) {
  if (!std::isfinite(lsft) || !std::isfinite(lpt)) {
    throw NonFiniteReward("zero probability under a reward snapshot");
  }
  return lsft - lpt;
}

double clip(const RewardSpec& spec, double r) {
  if (!spec.reward_clip) return r;
  return std::clamp(r, -*spec.reward_clip, *spec.reward_clip);
}

}  // namespace

std::string to_string(Granularity g) { return g == Granularity::token_wise ? "token_wise" : "sequence_at_eos"; }

Granularity granularity_from_string(const std::string& s) {
  if (s == "sequence_at_eos") return Granularity::sequence_at_eos;
  if (s == "token_wise") return Granularity::token_wise;
  throw ConfigError("reward granularity must be sequence_at_eos or token_wise, got \"" + s + "\"");
}

std::string to_string(KlReference r) { return r == KlReference::sft ? "sft" : "pretrained"; }

KlReference kl_reference_from_string(const std::string& s) {
  if (s == "sft") return KlReference::sft;
  if (s == "pretrained") return KlReference::pretrained;
  throw ConfigError("KL reference must be sft or pretrained, got \"" + s + "\"");
}

void validate(const RewardSpec& spec) {
  if (!spec.sft_snapshot || !spec.pretrained_snapshot) throw ConfigError("reward spec needs both snapshots");
  if (spec.sft_snapshot->vocab() != spec.pretrained_snapshot->vocab()) {
    throw ConfigError("reward snapshots use different vocabularies");
  }
  if (spec.reward_clip && !(*spec.reward_clip > 0.0)) throw ConfigError("reward.clip: must be > 0");
}

double sequence_reward(const RewardSpec& spec, TokenSpan x, TokenSpan y) {
  validate(spec);
  return checked_ratio(spec.sft_snapshot->log_prob(x, y), spec.pretrained_snapshot->log_prob(x, y));
}

double token_reward(const RewardSpec& spec, TokenSpan x, TokenSpan prefix, Token next) {
  validate(spec);
  const Vocabulary vocab = spec.sft_snapshot->vocab();
  if (!vocab.valid(next)) throw InputError("token " + std::to_string(next) + " out of range");
  std::vector<double> a(static_cast<std::size_t>(vocab.alphabet()));
  std::vector<double> b(a.size());
  spec.sft_snapshot->next_log_probs(x, prefix, a);
  spec.pretrained_snapshot->next_log_probs(x, prefix, b);
  return checked_ratio(a[static_cast<std::size_t>(next)], b[static_cast<std::size_t>(next)]);
}

std::vector<double> assign_rewards(const RewardSpec& spec, const Trajectory& trajectory) {
  validate(spec);
  const std::size_t n = trajectory.size();
  if (!trajectory.complete()) {
    throw InvariantViolation("assign_rewards on an incomplete trajectory of length " + std::to_string(n));
  }
  std::vector<double> lsft = trajectory.logp_sft;
  std::vector<double> lpt = trajectory.logp_pt;
  if (lsft.size() != n) lsft = spec.sft_snapshot->token_log_probs(trajectory.prompt, trajectory.tokens);
  if (lpt.size() != n) lpt = spec.pretrained_snapshot->token_log_probs(trajectory.prompt, trajectory.tokens);

  std::vector<double> rewards(n, 0.0);
  if (spec.granularity == Granularity::token_wise) {
    for (std::size_t j = 0; j < n; ++j) rewards[j] = clip(spec, checked_ratio(lsft[j], lpt[j]));
  } else {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += checked_ratio(lsft[j], lpt[j]);
    rewards[n - 1] = clip(spec, total);
  }
  return rewards;
}

std::vector<Tokens> response_space(const Vocabulary& vocab, int max_len, std::uint64_t cap) {
  std::vector<Tokens> out;
  enumerate_sequences(
      vocab, max_len, cap, TokenSpan{}, [](TokenSpan, TokenSpan, std::span<double> lp) {
        std::fill(lp.begin(), lp.end(), 0.0);
      },
      [&](TokenSpan y, double) { out.emplace_back(y.begin(), y.end()); });
  return out;
}

std::vector<ScoredResponse> closed_form_optimum(const RewardSpec& spec, const TokenWorld& world, TokenSpan x,
                                                double kl_coefficient, KlReference reference) {
  validate(spec);
  if (!(kl_coefficient > 0.0)) throw ConfigError("kl_coefficient must be > 0");
  world.check_prompt(x);
  const auto space = response_space(world.vocab(), world.max_response_length(), world.spec().enumeration_cap);
  std::vector<ScoredResponse> out;
  out.reserve(space.size());
  std::vector<double> logw;
  logw.reserve(space.size());
  for (const auto& y : space) {
    const double lsft = spec.sft_snapshot->log_prob(x, y);
    const double lpt = spec.pretrained_snapshot->log_prob(x, y);
    const double lref = reference == KlReference::sft ? lsft : lpt;
    // Outside the reference support the optimum has zero mass.
    if (lref == -std::numeric_limits<double>::infinity()) {
      logw.push_back(lref);
    } else {
      logw.push_back(lref + checked_ratio(lsft, lpt) / kl_coefficient);
    }
    out.push_back({y, 0.0});
  }
  const double mx = *std::max_element(logw.begin(), logw.end());
  double z = 0.0;
  for (double l : logw) z += std::exp(l - mx);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].prob = std::exp(logw[i] - mx) / z;
  return out;
}

}  // namespace srppo
