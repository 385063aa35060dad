// SPDX-License-Identifier: Apache-2.0
#include "srppo/ppo.hpp"

#include <algorithm>
#include <cmath>
#include "json.hpp"
#include <ostream>

#include "srppo/errors.hpp"

namespace srppo {

namespace {

// Calls fn(minibatch) for consecutive slices of a seeded permutation.
template <class Fn>
void for_each_minibatch(const std::vector<Trajectory>& all, int batch_size, std::uint64_t seed, Fn&& fn) {
  Rng rng(seed);
  const auto order = rng.permutation(all.size());
  std::vector<Trajectory> mb;
  const auto bs = static_cast<std::size_t>(batch_size);
  for (std::size_t start = 0; start < all.size(); start += bs) {
    mb.clear();
    for (std::size_t i = start; i < std::min(all.size(), start + bs); ++i) mb.push_back(all[order[i]]);
    fn(std::span<const Trajectory>(mb));
  }
}

void apply_step(std::span<double> params, const std::vector<double>& grad, double lr, double max_norm) {
  double scale = lr;
  if (max_norm > 0.0) {
    double n2 = 0.0;
    for (double g : grad) n2 += g * g;
    const double n = std::sqrt(n2);
    if (n > max_norm) scale *= max_norm / n;
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= scale * grad[i];
}

std::size_t total_steps(std::span<const Trajectory> batch) {
  std::size_t n = 0;
  for (const auto& t : batch) n += t.size();
  return n;
}

}  // namespace

void validate(const PpoConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("ppo." + field + ": " + why); };
  if (!(c.clip_epsilon > 0.0 && c.clip_epsilon < 1.0)) fail("clip_epsilon", "must lie in (0, 1)");
  if (!(c.gae_lambda >= 0.0 && c.gae_lambda <= 1.0)) fail("gae_lambda", "must lie in [0, 1]");
  if (!(c.gamma > 0.0 && c.gamma <= 1.0)) fail("gamma", "must lie in (0, 1]");
  if (!(c.kl_coefficient >= 0.0)) fail("kl_coefficient", "must be >= 0");
  if (c.rollout_buffer_size < 1) fail("rollout_buffer_size", "must be >= 1");
  if (c.train_batch_size < 1) fail("train_batch_size", "must be >= 1");
  if (c.rollout_buffer_size % c.train_batch_size != 0) {
    fail("rollout_buffer_size", "must be divisible by train_batch_size");
  }
  if (!(c.actor_lr > 0.0)) fail("actor_lr", "must be > 0");
  if (!(c.critic_lr > 0.0)) fail("critic_lr", "must be > 0");
  if (c.critic_warmup_buffers < 0) fail("critic_warmup_buffers", "must be >= 0");
  if (c.inner_epochs < 1 || c.inner_epochs > 4) fail("inner_epochs", "must lie in [1, 4]");
  if (c.episodes < 0) fail("episodes", "must be >= 0");
  if (c.iterations < 0) fail("iterations", "must be >= 0");
  if (!(c.max_grad_norm >= 0.0)) fail("max_grad_norm", "must be >= 0");
}

int planned_iterations(const PpoConfig& config, std::size_t num_prompts) {
  if (config.iterations > 0) return config.iterations;
  const double passes = config.episodes * static_cast<double>(num_prompts);
  return static_cast<int>(std::ceil(passes / static_cast<double>(config.rollout_buffer_size) - 1e-12));
}

CoherentRewardFunction::CoherentRewardFunction(RewardSpec spec) : spec_(std::move(spec)) { validate(spec_); }

void CoherentRewardFunction::score(Trajectory& t) const {
  if (t.logp_sft.size() != t.size()) t.logp_sft = spec_.sft_snapshot->token_log_probs(t.prompt, t.tokens);
  if (t.logp_pt.size() != t.size()) t.logp_pt = spec_.pretrained_snapshot->token_log_probs(t.prompt, t.tokens);
  t.raw_rewards = assign_rewards(spec_, t);
}

void refresh_statistics(RolloutBatch& batch) {
  const auto n = static_cast<double>(batch.trajectories.size());
  double reward = 0.0, len = 0.0, kl = 0.0;
  for (const auto& t : batch.trajectories) {
    for (double r : t.raw_rewards) reward += r;
    len += static_cast<double>(t.size());
    for (std::size_t j = 0; j < t.size() && j < t.logp_ref.size(); ++j) kl += t.logp_old[j] - t.logp_ref[j];
  }
  batch.mean_reward = n > 0 ? reward / n : 0.0;
  batch.mean_len = n > 0 ? len / n : 0.0;
  batch.kl_to_ref = n > 0 ? kl / n : 0.0;
}

RolloutBatch collect_rollouts(const Policy& actor, const RewardFunction& reward, const PromptSet& prompts,
                              const PpoConfig& config, const Policy& reference, const ValueHead* critic,
                              std::uint64_t stream_seed, std::uint64_t snapshot_id) {
  if (prompts.prompts.empty()) throw ConfigError("ppo: prompt set is empty");
  RolloutBatch batch;
  batch.actor_snapshot = snapshot_id;
  batch.trajectories.reserve(static_cast<std::size_t>(config.rollout_buffer_size));
  const int m = actor.arch().max_len;
  for (int i = 0; i < config.rollout_buffer_size; ++i) {
    Rng rng(derive_seed(stream_seed, static_cast<std::uint64_t>(i)));
    Trajectory t;
    t.prompt = prompts.prompts[rng.below(prompts.prompts.size())];
    auto s = actor.sample(t.prompt, m, rng);
    t.tokens = std::move(s.tokens);
    t.logp_old = std::move(s.log_probs);
    t.eos = s.eos;
    t.max_len = m;
    t.logp_ref = reference.token_log_probs(t.prompt, t.tokens);
    reward.score(t);
    if (t.raw_rewards.size() != t.size()) throw InvariantViolation("reward function returned a misaligned vector");
    t.rewards.resize(t.size());
    for (std::size_t j = 0; j < t.size(); ++j) {
      t.rewards[j] = t.raw_rewards[j] - config.kl_coefficient * (t.logp_old[j] - t.logp_ref[j]);
    }
    t.values.assign(t.size(), 0.0);
    if (critic) {
      for (std::size_t j = 0; j < t.size(); ++j) t.values[j] = critic->value(t.prompt, TokenSpan(t.tokens).first(j));
    }
    batch.trajectories.push_back(std::move(t));
  }
  refresh_statistics(batch);
  return batch;
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda) {
  if (rewards.size() != values.size()) throw InvariantViolation("compute_gae: rewards and values differ in length");
  const std::size_t n = rewards.size();
  GaeResult out{std::vector<double>(n), std::vector<double>(n)};
  double next_adv = 0.0;
  double next_ret = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double next_value = k + 1 < n ? values[k + 1] : 0.0;
    const double delta = rewards[k] + gamma * next_value - values[k];
    next_adv = delta + gamma * lambda * next_adv;
    next_ret = rewards[k] + gamma * next_ret;
    out.advantages[k] = next_adv;
    out.returns[k] = next_ret;
  }
  return out;
}

void compute_gae(Trajectory& t, double gamma, double lambda) {
  auto r = compute_gae(t.rewards, t.values, gamma, lambda);
  t.advantages = std::move(r.advantages);
  t.returns = std::move(r.returns);
}

bool normalize_advantages(RolloutBatch& batch) {
  double sum = 0.0, sum2 = 0.0;
  std::size_t n = 0;
  for (const auto& t : batch.trajectories) {
    for (double a : t.advantages) {
      sum += a;
      sum2 += a * a;
      ++n;
    }
  }
  if (n == 0) return false;
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sum2 / static_cast<double>(n) - mean * mean);
  const double sd = std::sqrt(var);
  if (sd < 1e-8) return false;
  for (auto& t : batch.trajectories) {
    for (double& a : t.advantages) a = (a - mean) / sd;
  }
  return true;
}

double critic_loss(const ValueHead& head, std::span<const Trajectory> batch, std::vector<double>* grad) {
  const std::size_t n = total_steps(batch);
  if (n == 0) return 0.0;
  const double inv = 1.0 / static_cast<double>(n);
  double loss = 0.0;
  for (const auto& t : batch) {
    if (t.returns.size() != t.size()) throw InvariantViolation("critic_loss: returns not computed");
    for (std::size_t j = 0; j < t.size(); ++j) {
      const TokenSpan prefix = TokenSpan(t.tokens).first(j);
      const double err = head.value(t.prompt, prefix) - t.returns[j];
      loss += inv * err * err;
      if (grad) head.backward(t.prompt, prefix, 2.0 * inv * err, *grad);
    }
  }
  return loss;
}

double critic_update(ValueHead& head, std::span<const Trajectory> batch, double critic_lr) {
  std::vector<double> grad(head.num_params(), 0.0);
  const double loss = critic_loss(head, batch, &grad);
  if (!std::isfinite(loss)) throw TrainingError("non-finite critic loss", 0);
  apply_step(head.params(), grad, critic_lr, 0.0);
  return loss;
}

ActorDiagnostics actor_loss(const Policy& actor, std::span<const Trajectory> batch, double clip_epsilon,
                            std::vector<double>* grad) {
  ActorDiagnostics d;
  const std::size_t n = total_steps(batch);
  if (n == 0) return d;
  const double inv = 1.0 / static_cast<double>(n);
  std::vector<double> lp(static_cast<std::size_t>(actor.vocab().alphabet()));
  std::size_t clipped = 0;
  std::size_t index = 0;
  for (const auto& t : batch) {
    if (t.advantages.size() != t.size() || t.logp_old.size() != t.size()) {
      throw InvariantViolation("actor_loss: advantages or old log-probs missing");
    }
    for (std::size_t j = 0; j < t.size(); ++j, ++index) {
      const TokenSpan prefix = TokenSpan(t.tokens).first(j);
      actor.next_log_probs(t.prompt, prefix, lp);
      const double ratio = std::exp(lp[static_cast<std::size_t>(t.tokens[j])] - t.logp_old[j]);
      if (!std::isfinite(ratio)) throw TrainingError("non-finite probability ratio", static_cast<long>(index));
      const double adv = t.advantages[j];
      const double unclipped = ratio * adv;
      const double clipped_term = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon) * adv;
      d.mean_ratio += inv * ratio;
      if (unclipped <= clipped_term) {
        d.loss -= inv * unclipped;
        if (grad) actor.accumulate_log_prob_grad(t.prompt, prefix, t.tokens[j], -inv * unclipped, *grad);
      } else {
        d.loss -= inv * clipped_term;
        ++clipped;
      }
    }
  }
  d.steps = n;
  d.clip_fraction = static_cast<double>(clipped) * inv;
  return d;
}

ActorDiagnostics actor_update(Policy& actor, const RolloutBatch& batch, const PpoConfig& config,
                              std::uint64_t minibatch_seed) {
  ActorDiagnostics total;
  double weight = 0.0;
  for (int epoch = 0; epoch < config.inner_epochs; ++epoch) {
    for_each_minibatch(batch.trajectories, config.train_batch_size,
                       derive_seed(minibatch_seed, static_cast<std::uint64_t>(epoch)),
                       [&](std::span<const Trajectory> mb) {
                         std::vector<double> grad(actor.num_params(), 0.0);
                         const auto d = actor_loss(actor, mb, config.clip_epsilon, &grad);
                         if (!std::isfinite(d.loss)) throw TrainingError("non-finite actor loss", 0);
                         apply_step(actor.params(), grad, config.actor_lr, config.max_grad_norm);
                         const auto w = static_cast<double>(d.steps);
                         total.loss += w * d.loss;
                         total.clip_fraction += w * d.clip_fraction;
                         total.mean_ratio += w * d.mean_ratio;
                         total.steps += d.steps;
                         weight += w;
                       });
  }
  if (weight > 0.0) {
    total.loss /= weight;
    total.clip_fraction /= weight;
    total.mean_ratio /= weight;
  }
  return total;
}

PpoResult run_ppo(const Policy& sft_policy, const RewardFunction& reward, const PromptSet& prompts,
                  const PpoConfig& config, FrozenPolicy reference, const PpoObserver& observer) {
  validate(config);
  if (prompts.prompts.empty()) throw ConfigError("ppo: prompt set is empty");
  PpoResult out{sft_policy, ValueHead::from_policy(sft_policy), {}};
  out.actor.set_role(Role::actor);
  out.actor.set_lineage(sft_policy.lineage() + "/ppo");
  if (!reference) reference = clone_frozen(sft_policy, Role::reference);

  const int iterations = planned_iterations(config, prompts.prompts.size());
  if (iterations == 0) return out;

  std::uint64_t buffer = 0;
  auto stage_error = [](const std::string& phase, int iter, const std::exception& e) {
    return TrainingError(phase + " iteration " + std::to_string(iter) + ": " + e.what(), iter);
  };

  for (int w = 1; w <= config.critic_warmup_buffers; ++w) {
    try {
      auto batch = collect_rollouts(out.actor, reward, prompts, config, *reference, &out.critic,
                                    derive_seed(config.seed, Stream::ppo_rollout, buffer), buffer);
      for (auto& t : batch.trajectories) compute_gae(t, config.gamma, config.gae_lambda);
      PpoMetrics m;
      m.iter = w;
      m.phase = "warmup";
      m.mean_reward = batch.mean_reward;
      m.mean_len = batch.mean_len;
      m.kl_to_ref = batch.kl_to_ref;
      double loss = 0.0;
      int count = 0;
      for (int epoch = 0; epoch < config.inner_epochs; ++epoch) {
        for_each_minibatch(batch.trajectories, config.train_batch_size,
                           derive_seed(derive_seed(config.seed, Stream::ppo_minibatch, buffer), 1000 + epoch),
                           [&](std::span<const Trajectory> mb) {
                             loss += critic_update(out.critic, mb, config.critic_lr);
                             ++count;
                           });
      }
      m.critic_loss = loss / count;
      out.log.push_back(std::move(m));
      ++buffer;
    } catch (const TrainingError& e) {
      throw stage_error("warmup", w, e);
    }
  }

  for (int it = 1; it <= iterations; ++it) {
    try {
      auto batch = collect_rollouts(out.actor, reward, prompts, config, *reference, &out.critic,
                                    derive_seed(config.seed, Stream::ppo_rollout, buffer), buffer);
      for (auto& t : batch.trajectories) compute_gae(t, config.gamma, config.gae_lambda);
      if (config.advantage_normalization) normalize_advantages(batch);

      PpoMetrics m;
      m.iter = it;
      m.phase = "ppo";
      m.mean_reward = batch.mean_reward;
      m.mean_len = batch.mean_len;
      m.kl_to_ref = batch.kl_to_ref;

      const std::uint64_t mb_seed = derive_seed(config.seed, Stream::ppo_minibatch, buffer);
      double loss = 0.0;
      int count = 0;
      for (int epoch = 0; epoch < config.inner_epochs; ++epoch) {
        for_each_minibatch(batch.trajectories, config.train_batch_size, derive_seed(mb_seed, 1000 + epoch),
                           [&](std::span<const Trajectory> mb) {
                             loss += critic_update(out.critic, mb, config.critic_lr);
                             ++count;
                           });
      }
      m.critic_loss = loss / count;
      const auto d = actor_update(out.actor, batch, config, mb_seed);
      m.clip_frac = d.clip_fraction;
      m.actor_loss = d.loss;
      if (observer) observer(out.actor, m);
      out.log.push_back(std::move(m));
      ++buffer;
    } catch (const TrainingError& e) {
      throw stage_error("ppo", it, e);
    } catch (const NonFiniteReward& e) {
      throw stage_error("ppo", it, e);
    }
  }
  return out;
}

void write_ppo_metrics(std::ostream& out, const std::vector<PpoMetrics>& log) {
  for (const auto& m : log) {
    nlohmann::ordered_json j;
    j["iter"] = m.iter;
    j["phase"] = m.phase;
    j["mean_reward"] = m.mean_reward;
    j["mean_len"] = m.mean_len;
    j["kl_to_ref"] = m.kl_to_ref;
    j["clip_frac"] = m.clip_frac ? nlohmann::ordered_json(*m.clip_frac) : nlohmann::ordered_json(nullptr);
    j["actor_loss"] = m.actor_loss ? nlohmann::ordered_json(*m.actor_loss) : nlohmann::ordered_json(nullptr);
    j["critic_loss"] = m.critic_loss;
    for (const auto& [k, v] : m.extra) j[k] = v;
    out << j.dump() << '\n';
  }
}

}  // namespace srppo
