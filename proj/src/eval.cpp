// SPDX-License-Identifier: Apache-2.0
#include "srppo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include "json.hpp"
#include <numeric>
#include <ostream>

#include "srppo/errors.hpp"
#include "srppo/sft.hpp"

namespace srppo {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::ordered_json kl_json(const KlEstimate& k) {
  nlohmann::ordered_json j;
  j["value"] = std::isnan(k.value) ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(k.value);
  j["std_error"] = k.std_error;
  j["exact"] = k.exact;
  return j;
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

KlEstimate monte_carlo_kl_to_expert(const Policy& policy, const TokenWorld& world, const PromptSet& prompts,
                                    std::size_t samples, std::uint64_t seed) {
  if (prompts.prompts.empty()) throw ConfigError("KL over an empty prompt set");
  if (samples < 2) throw ConfigError("Monte-Carlo KL needs at least 2 samples");
  Rng rng(seed);
  double sum = 0.0, sum2 = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    const Tokens& x = prompts.prompts[rng.below(prompts.prompts.size())];
    const Tokens y = world.sample_expert(x, rng);
    const double d = world.expert_log_prob(x, y) - policy.log_prob(x, y);
    sum += d;
    sum2 += d * d;
  }
  const auto n = static_cast<double>(samples);
  const double mean = sum / n;
  const double var = std::max(0.0, (sum2 - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n), false};
}

KlEstimate exact_kl_to_expert(const Policy& policy, const TokenWorld& world, const PromptSet& prompts,
                              std::size_t fallback_samples, std::uint64_t seed) {
  if (prompts.prompts.empty()) throw ConfigError("KL over an empty prompt set");
  try {
    double total = 0.0;
    for (const auto& x : prompts.prompts) {
      double kl = 0.0;
      for (const auto& r : enumerate_responses(world, x)) {
        if (r.prob <= 0.0) continue;
        kl += r.prob * (std::log(r.prob) - policy.log_prob(x, r.y));
      }
      total += std::max(0.0, kl);
    }
    return {total / static_cast<double>(prompts.prompts.size()), 0.0, true};
  } catch (const OracleUnavailable&) {
    return monte_carlo_kl_to_expert(policy, world, prompts, fallback_samples, seed);
  }
}

std::vector<double> policy_distribution(const Policy& policy, const std::vector<Tokens>& space, TokenSpan x) {
  std::vector<double> out;
  out.reserve(space.size());
  for (const auto& y : space) out.push_back(std::exp(policy.log_prob(x, y)));
  return out;
}

std::vector<double> expert_distribution(const TokenWorld& world, const std::vector<Tokens>& space, TokenSpan x) {
  std::vector<double> out;
  out.reserve(space.size());
  for (const auto& y : space) out.push_back(std::exp(world.expert_log_prob(x, y)));
  return out;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InvariantViolation("total_variation: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

double tv_to_closed_form_optimum(const Policy& policy, const RewardSpec& spec, const TokenWorld& world,
                                 const PromptSet& prompts, double kl_coefficient, KlReference reference) {
  if (prompts.prompts.empty()) throw ConfigError("TV over an empty prompt set");
  const auto space = response_space(world.vocab(), world.max_response_length(), world.spec().enumeration_cap);
  double total = 0.0;
  for (const auto& x : prompts.prompts) {
    const auto opt = closed_form_optimum(spec, world, x, kl_coefficient, reference);
    std::vector<double> target;
    target.reserve(opt.size());
    for (const auto& r : opt) target.push_back(r.prob);
    total += total_variation(policy_distribution(policy, space, x), target);
  }
  return total / static_cast<double>(prompts.prompts.size());
}

double mean_tv(const Policy& a, const Policy& b, const TokenWorld& world, const PromptSet& prompts) {
  if (prompts.prompts.empty()) throw ConfigError("TV over an empty prompt set");
  const auto space = response_space(world.vocab(), world.max_response_length(), world.spec().enumeration_cap);
  double total = 0.0;
  for (const auto& x : prompts.prompts) {
    total += total_variation(policy_distribution(a, space, x), policy_distribution(b, space, x));
  }
  return total / static_cast<double>(prompts.prompts.size());
}

void ExpertLogLikelihoodReward::score(Trajectory& t) const {
  if (!t.complete()) throw InvariantViolation("expert reward on an incomplete trajectory");
  t.raw_rewards.assign(t.size(), 0.0);
  const double r = world_->expert_log_prob(t.prompt, t.tokens);
  if (!std::isfinite(r)) throw NonFiniteReward("expert assigns zero probability to a sampled response");
  t.raw_rewards.back() = r;
}

std::optional<double> task_success_rate(const Policy& policy, const TokenWorld& world, const PromptSet& prompts,
                                        double top_p) {
  if (prompts.prompts.empty()) return std::nullopt;
  try {
    double total = 0.0;
    for (const auto& x : prompts.prompts) {
      auto support = enumerate_responses(world, x);
      std::stable_sort(support.begin(), support.end(),
                       [](const ScoredResponse& a, const ScoredResponse& b) { return a.prob > b.prob; });
      double mass = 0.0;
      double hit = 0.0;
      for (const auto& r : support) {
        if (mass >= top_p) break;
        mass += r.prob;
        hit += std::exp(policy.log_prob(x, r.y));
      }
      total += hit;
    }
    return total / static_cast<double>(prompts.prompts.size());
  } catch (const OracleUnavailable&) {
    return std::nullopt;
  }
}

EvalReport evaluate_policy(const std::string& method, const Policy& policy, const TokenWorld& world,
                           const PromptSet& seen, const PromptSet& unseen, const DemonstrationSet* heldout,
                           const EvalConfig& config, std::uint64_t seed) {
  EvalReport r;
  r.method = method;
  const auto all = world.all_prompts();
  r.kl_to_expert = exact_kl_to_expert(policy, world, all, 10000, derive_seed(seed, 1));
  r.kl_seen = seen.prompts.empty() ? KlEstimate{kNaN, 0.0, true}
                                   : exact_kl_to_expert(policy, world, seen, 10000, derive_seed(seed, 2));
  r.kl_unseen = unseen.prompts.empty() ? KlEstimate{kNaN, 0.0, true}
                                       : exact_kl_to_expert(policy, world, unseen, 10000, derive_seed(seed, 3));
  if (heldout && !heldout->pairs.empty()) r.heldout_nll = mean_nll(policy, *heldout);
  r.task_success_rate = task_success_rate(policy, world, all, config.top_p);

  const int m = world.max_response_length();
  r.length_histogram.assign(static_cast<std::size_t>(m) + 1, 0);
  Rng rng(derive_seed(seed, 4));
  double len = 0.0;
  for (int i = 0; i < config.samples; ++i) {
    const Tokens x = world.sample_prompt(rng);
    const auto s = policy.sample(x, m, rng);
    ++r.length_histogram[s.tokens.size()];
    len += static_cast<double>(s.tokens.size());
  }
  r.samples = static_cast<std::size_t>(config.samples);
  r.mean_response_length = config.samples > 0 ? len / config.samples : 0.0;
  return r;
}

void write_eval_reports(std::ostream& out, const std::vector<EvalReport>& reports) {
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["method"] = r.method;
    j["kl_to_expert"] = kl_json(r.kl_to_expert);
    j["kl_seen"] = kl_json(r.kl_seen);
    j["kl_unseen"] = kl_json(r.kl_unseen);
    j["heldout_nll"] = r.heldout_nll ? nlohmann::ordered_json(*r.heldout_nll) : nlohmann::ordered_json(nullptr);
    j["mean_response_length"] = r.mean_response_length;
    j["length_histogram"] = r.length_histogram;
    j["task_success_rate"] =
        r.task_success_rate ? nlohmann::ordered_json(*r.task_success_rate) : nlohmann::ordered_json(nullptr);
    j["samples"] = r.samples;
    out << j.dump() << '\n';
  }
}

void write_summary_csv(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << "method,kl_to_expert,kl_seen,kl_unseen,heldout_nll,mean_response_length,task_success_rate\n";
  for (const auto& r : reports) {
    out << r.method << ',' << fmt(r.kl_to_expert.value) << ',' << fmt(r.kl_seen.value) << ','
        << fmt(r.kl_unseen.value) << ',' << fmt(r.heldout_nll.value_or(kNaN)) << ',' << fmt(r.mean_response_length)
        << ',' << fmt(r.task_success_rate.value_or(kNaN)) << '\n';
  }
}

}  // namespace srppo
