// SPDX-License-Identifier: Apache-2.0
#include "srppo/sft.hpp"

#include <cmath>
#include "json.hpp"
#include <ostream>

#include "srppo/errors.hpp"

namespace srppo {

namespace {

struct LoopState {
  long step = 0;
};

// Runs `epochs` epochs of mini-batch ascent on `policy`, appending to `log`.
// Epoch e uses the permutation seeded by (shuffle_seed, epoch_offset + e).
void train_mle(Policy& policy, const std::vector<Demonstration>& pairs, const SftConfig& config, int epochs,
               int epoch_offset, const HeldoutEvaluator& heldout, std::vector<SftLogRecord>& log) {
  const DemonstrationSet as_set{pairs, {}};
  auto record = [&](long step, int epoch) {
    SftLogRecord r;
    r.step = step;
    r.epoch = epoch;
    r.train_nll = mean_nll(policy, as_set);
    if (heldout) r.heldout_kl = heldout(policy);
    log.push_back(r);
  };
  if (log.empty()) record(0, epoch_offset);

  long step = log.back().step;
  const std::size_t n = pairs.size();
  const auto bs = static_cast<std::size_t>(config.batch_size);
  std::vector<Demonstration> batch;
  for (int e = 1; e <= epochs; ++e) {
    const int epoch = epoch_offset + e;
    Rng rng(derive_seed(config.shuffle_seed, static_cast<std::uint64_t>(epoch)));
    const auto order = rng.permutation(n);
    for (std::size_t start = 0; start < n; start += bs) {
      batch.clear();
      for (std::size_t i = start; i < std::min(n, start + bs); ++i) batch.push_back(pairs[order[i]]);
      GradientRecord g = mean_log_likelihood_grad(policy, batch);
      ++step;
      if (!std::isfinite(g.value)) throw TrainingError("non-finite SFT loss", step);
      double scale = config.learning_rate;
      if (config.grad_clip > 0.0) {
        double norm2 = 0.0;
        for (double v : g.gradient) norm2 += v * v;
        const double norm = std::sqrt(norm2);
        if (norm > config.grad_clip) scale *= config.grad_clip / norm;
      }
      auto params = policy.params();
      for (std::size_t i = 0; i < params.size(); ++i) params[i] += scale * g.gradient[i];
      if (config.eval_every > 0 && step % config.eval_every == 0 && start + bs < n) record(step, epoch);
    }
    record(step, epoch);
    if (!std::isfinite(log.back().train_nll)) throw TrainingError("non-finite SFT loss", step);
  }
}

}  // namespace

void validate(const SftConfig& config) {
  if (!(config.learning_rate > 0.0)) throw ConfigError("sft.learning_rate: must be > 0");
  if (config.batch_size < 1) throw ConfigError("sft.batch_size: must be >= 1");
  if (config.epochs < 1) throw ConfigError("sft.epochs: must be >= 1");
  if (config.eval_every < 0) throw ConfigError("sft.eval_every: must be >= 0");
  if (!(config.grad_clip >= 0.0)) throw ConfigError("sft.grad_clip: must be >= 0");
}

double mean_nll(const Policy& policy, const DemonstrationSet& demos) {
  if (demos.pairs.empty()) throw InputError("mean_nll of an empty demonstration set");
  double s = 0.0;
  for (const auto& d : demos.pairs) s -= policy.log_prob(d.x, d.y);
  return s / static_cast<double>(demos.pairs.size());
}

GradientRecord mean_log_likelihood_grad(const Policy& policy, std::span<const Demonstration> pairs) {
  GradientRecord out;
  out.gradient.assign(policy.num_params(), 0.0);
  const double w = 1.0 / static_cast<double>(pairs.size());
  for (const auto& d : pairs) {
    const auto lps = policy.token_log_probs(d.x, d.y);
    for (std::size_t j = 0; j < d.y.size(); ++j) {
      out.value += w * lps[j];
      policy.accumulate_log_prob_grad(d.x, TokenSpan(d.y).first(j), d.y[j], w, out.gradient);
    }
  }
  return out;
}

TrainResult pretrain(Policy policy, const TokenWorld& world, const PretrainConfig& config) {
  validate(config.optimizer);
  if (config.samples < 1) throw ConfigError("pretrain.samples: must be >= 1");
  if (policy.vocab() != world.vocab()) throw ConfigError("pretrain: policy and world vocabularies differ");
  Rng rng(config.data_seed);
  std::vector<Demonstration> data;
  data.reserve(config.samples);
  for (std::size_t i = 0; i < config.samples; ++i) {
    Tokens x = world.sample_prompt(rng);
    Tokens y = world.sample_pretrain(x, rng);
    data.push_back({std::move(x), std::move(y)});
  }
  TrainResult out;
  train_mle(policy, data, config.optimizer, config.optimizer.epochs, 0, {}, out.log);
  policy.set_role(Role::pretrained);
  policy.set_lineage("world=" + std::to_string(world.seed()) + "/pretrain");
  out.policy = clone_frozen(policy);
  return out;
}

TrainResult sft(const Policy& pretrained, const DemonstrationSet& demos, const SftConfig& config,
                const HeldoutEvaluator& heldout) {
  validate(config);
  if (demos.pairs.empty()) throw InputError("sft: demonstration set is empty");
  Policy policy = pretrained;
  TrainResult out;
  train_mle(policy, demos.pairs, config, config.epochs, 0, heldout, out.log);
  policy.set_role(Role::sft);
  policy.set_lineage(pretrained.lineage() + "/sft");
  out.policy = clone_frozen(policy);
  return out;
}

TrainResult sft_extended(const Policy& sft_policy, const DemonstrationSet& demos, int extra_epochs,
                         const SftConfig& config, const HeldoutEvaluator& heldout) {
  if (extra_epochs < 0) throw ConfigError("sft_extended.extra_epochs: must be >= 0");
  SftConfig c = config;
  c.epochs = std::max(1, c.epochs);
  validate(c);
  if (demos.pairs.empty()) throw InputError("sft_extended: demonstration set is empty");
  Policy policy = sft_policy;
  TrainResult out;
  train_mle(policy, demos.pairs, c, extra_epochs, 0, heldout, out.log);
  policy.set_role(Role::sft);
  policy.set_lineage(sft_policy.lineage() + "/extended");
  out.policy = clone_frozen(policy);
  return out;
}

void write_sft_log(std::ostream& out, const std::vector<SftLogRecord>& log) {
  for (const auto& r : log) {
    nlohmann::ordered_json j;
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["train_nll"] = r.train_nll;
    if (r.heldout_kl) j["heldout_kl"] = *r.heldout_kl;
    out << j.dump() << '\n';
  }
}

}  // namespace srppo
