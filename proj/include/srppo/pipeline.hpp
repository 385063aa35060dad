// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "srppo/coherent_reward.hpp"
#include "srppo/eval.hpp"
#include "srppo/policy.hpp"
#include "srppo/ppo.hpp"
#include "srppo/sft.hpp"
#include "srppo/token_world.hpp"

namespace srppo {

// How the world's prompts are split between SFT and PPO.
//   pool A: the first `sft_prompts` prompts of a seeded permutation, used for demonstrations;
//   pool B: the next `ppo_prompts`, the PPO prompt set;
//   medium / diminished add expert demos on the first `overlap_prompts` of pool B,
//   diminished also adds `diminished_demos` more pool-A demos.
struct DataConfig {
  Overlap overlap = Overlap::minimum;
  int sft_prompts = 4;
  int ppo_prompts = 8;
  int sft_demos = 32;
  int overlap_prompts = 4;
  int overlap_demos = 16;
  int diminished_demos = 96;
  double heldout_fraction = 0.2;
  int heldout_threshold = 50;  // reserve held-out demo prompts only above this many demos
  std::string demos_file;        // optional JSONL demonstrations replacing the pool-A sample
  std::string ppo_prompts_file;  // optional JSONL prompts replacing pool B

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::uint64_t world_seed = 1;
  std::string output_dir = "runs/srppo";
  WorldSpec world;
  Architecture policy;  // max_len follows world.max_response_length
  DataConfig data;
  std::vector<std::string> stages = {"pretrain", "sft", "ppo", "eval"};
  PretrainConfig pretrain;
  SftConfig sft;
  int sft_extended_epochs = 20;
  Granularity granularity = Granularity::sequence_at_eos;
  std::optional<double> reward_clip;
  PpoConfig ppo;
  EvalConfig eval;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Canonical stage order; each stage lists the stages it requires.
const std::vector<std::string>& known_stages();
std::vector<std::string> stage_dependencies(const std::string& stage);

// Full configuration with every default materialized. Per-stage random
// seeds are not stored: they derive from `seed`.
nlohmann::ordered_json to_json(const ExperimentConfig& config);
// Strict: unknown keys and wrong types raise ConfigError naming the field.
ExperimentConfig config_from_json(const nlohmann::json& j);
void validate(const ExperimentConfig& config);

// Per-stage settings with derived seeds filled in.
PretrainConfig resolved_pretrain(const ExperimentConfig& config);
SftConfig resolved_sft(const ExperimentConfig& config, std::uint64_t phase);
PpoConfig resolved_ppo(const ExperimentConfig& config);

struct PipelineState {
  std::optional<TokenWorld> world;
  PromptSet sft_prompts;
  PromptSet ppo_prompts;
  PromptSet seen_prompts;
  PromptSet unseen_prompts;
  PromptSet heldout_prompts;
  DemonstrationSet sft_demos;  // all SFT phases
  DemonstrationSet phase1_demos;
  DemonstrationSet phase2_demos;
  DemonstrationSet heldout_demos;

  FrozenPolicy pretrained;
  FrozenPolicy sft;
  FrozenPolicy sft_extended;
  FrozenPolicy srppo;
  std::optional<ValueHead> critic;
  FrozenPolicy baseline;

  std::vector<SftLogRecord> pretrain_log;
  std::vector<SftLogRecord> sft_log;
  std::vector<SftLogRecord> sft_extended_log;
  std::vector<PpoMetrics> ppo_log;
  std::vector<PpoMetrics> baseline_log;
  std::vector<PpoMetrics> length_token_wise_log;
  std::vector<PpoMetrics> length_sequence_log;
  std::vector<EvalReport> reports;
};

// Called after the "data" step and after every completed stage.
using StageHook = std::function<void(const std::string& stage, const PipelineState& state)>;

// Runs the configured stages in canonical order. A stage failure propagates
// after the hook has seen every earlier stage.
PipelineState run_pipeline(const ExperimentConfig& config, const StageHook& on_complete = {});

}  // namespace srppo
