// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include "srppo/policy.hpp"
#include "srppo/token_world.hpp"

namespace srppo {

struct SftConfig {
  double learning_rate = 0.5;
  int batch_size = 16;
  int epochs = 10;
  std::uint64_t shuffle_seed = 0;
  int eval_every = 0;      // steps between log records; 0 logs at epoch ends only
  double grad_clip = 0.0;  // max global gradient norm, 0 disables

  friend bool operator==(const SftConfig&, const SftConfig&) = default;
};

void validate(const SftConfig& config);

struct PretrainConfig {
  SftConfig optimizer;
  std::size_t samples = 4096;
  std::uint64_t data_seed = 0;

  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

struct SftLogRecord {
  long step = 0;
  int epoch = 0;
  double train_nll = 0.0;
  std::optional<double> heldout_kl;
};

// Called on log records to attach a held-out KL(expert || policy).
using HeldoutEvaluator = std::function<double(const Policy&)>;

struct TrainResult {
  FrozenPolicy policy;
  std::vector<SftLogRecord> log;
};

// Mean over pairs of -log p(y | x).
double mean_nll(const Policy& policy, const DemonstrationSet& demos);

// Mean gradient of log p(y|x) over `pairs`, plus the mean log-likelihood.
GradientRecord mean_log_likelihood_grad(const Policy& policy, std::span<const Demonstration> pairs);

// Maximum-likelihood fit of a fresh policy to samples of the world's
// pretrain distribution.
TrainResult pretrain(Policy policy, const TokenWorld& world, const PretrainConfig& config);

// Mini-batch gradient ascent on the mean log-likelihood of the demonstrations.
TrainResult sft(const Policy& pretrained, const DemonstrationSet& demos, const SftConfig& config,
                const HeldoutEvaluator& heldout = {});

// Same mechanics as sft, continued from an SFT checkpoint for extra epochs.
TrainResult sft_extended(const Policy& sft_policy, const DemonstrationSet& demos, int extra_epochs,
                         const SftConfig& config, const HeldoutEvaluator& heldout = {});

void write_sft_log(std::ostream& out, const std::vector<SftLogRecord>& log);

}  // namespace srppo
