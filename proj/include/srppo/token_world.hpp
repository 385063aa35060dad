// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srppo/errors.hpp"
#include "srppo/rng.hpp"
#include "srppo/vocab.hpp"

namespace srppo {

// Parameters of a synthetic task. The expert is an order-k Markov table over
// the concatenated prompt and response; the pretrain table mixes the expert
// with a uniform-smoothed random perturbation.
struct WorldSpec {
  int vocab_size = 4;
  int prompt_length = 2;
  int max_response_length = 4;
  int markov_order = 1;
  int num_prompts = 16;

  double expert_sharpness = 2.0;   // std-dev of the expert logits
  double expert_eos_logit = 0.0;   // added to the EOS logit of every expert context
  bool deterministic_expert = false;

  double pretrain_mix = 0.5;       // weight of the perturbation in the pretrain table
  double perturb_sharpness = 1.0;  // std-dev of the perturbation logits (0 = uniform)
  double perturb_smoothing = 0.5;  // share of the uniform distribution inside the perturbation
  double perturb_eos_logit = 0.0;
  bool identity = false;           // pretrain table == expert table

  std::uint64_t enumeration_cap = std::uint64_t{1} << 20;

  friend bool operator==(const WorldSpec&, const WorldSpec&) = default;
};

// Throws ConfigError naming the offending field.
void validate(const WorldSpec& spec);

// Number of distinct responses: EOS-terminated of length 1..m plus length m without EOS.
std::uint64_t response_space_size(const Vocabulary& vocab, int max_len);

enum class Overlap { minimum, medium, diminished };

std::string to_string(Overlap o);
Overlap overlap_from_string(const std::string& s);

struct PromptSet {
  std::vector<Tokens> prompts;
  std::optional<Overlap> overlap_tag;
};

struct Demonstration {
  Tokens x;
  Tokens y;
};

struct DemonstrationSet {
  std::vector<Demonstration> pairs;
  std::string provenance;
};

struct ScoredResponse {
  Tokens y;
  double prob = 0.0;
};

class TokenWorld {
 public:
  static TokenWorld build(const WorldSpec& spec, std::uint64_t seed);

  // Tables are row-major [context][alphabet]; prompts define a uniform rho.
  static TokenWorld from_tables(const WorldSpec& spec, std::vector<Tokens> prompts,
                                std::vector<double> expert, std::vector<double> pretrain);

  const WorldSpec& spec() const { return spec_; }
  Vocabulary vocab() const { return Vocabulary{spec_.vocab_size}; }
  int prompt_length() const { return spec_.prompt_length; }
  int max_response_length() const { return spec_.max_response_length; }
  std::uint64_t seed() const { return seed_; }

  const std::vector<Tokens>& prompts() const { return prompts_; }
  std::span<const double> prompt_probs() const { return prompt_probs_; }
  PromptSet all_prompts() const { return PromptSet{prompts_, std::nullopt}; }

  std::size_t num_contexts() const { return num_contexts_; }
  std::size_t context_index(TokenSpan x, TokenSpan prefix) const;

  std::span<const double> expert_next(TokenSpan x, TokenSpan prefix) const;
  std::span<const double> pretrain_next(TokenSpan x, TokenSpan prefix) const;
  std::span<const double> expert_table() const { return expert_; }
  std::span<const double> pretrain_table() const { return pretrain_; }

  double expert_log_prob(TokenSpan x, TokenSpan y) const;

  Tokens sample_expert(TokenSpan x, Rng& rng) const;
  Tokens sample_pretrain(TokenSpan x, Rng& rng) const;
  Tokens sample_prompt(Rng& rng) const;

  void check_prompt(TokenSpan x) const;
  void check_response(TokenSpan y) const;

 private:
  TokenWorld() = default;
  void finalize();
  Tokens sample_from(std::span<const double> table, TokenSpan x, Rng& rng) const;

  WorldSpec spec_;
  std::uint64_t seed_ = 0;
  std::size_t num_contexts_ = 0;
  std::vector<Tokens> prompts_;
  std::vector<double> prompt_probs_;
  std::vector<double> expert_;
  std::vector<double> pretrain_;
};

DemonstrationSet sample_demonstrations(const TokenWorld& world, const PromptSet& prompt_subset,
                                       std::size_t count, std::uint64_t seed);

// Exact support of the expert for prompt x. Throws OracleUnavailable when the
// response space exceeds the world's enumeration cap.
std::vector<ScoredResponse> enumerate_responses(const TokenWorld& world, TokenSpan x);

// Depth-first walk over the response space of length <= max_len. `next` fills
// natural-log next-token probabilities for (x, prefix); `visit` receives each
// complete response and its log-probability. Branches with -inf log-probability
// are pruned.
template <class NextLogProbs, class Visit>
void enumerate_sequences(const Vocabulary& vocab, int max_len, std::uint64_t cap, TokenSpan x,
                         NextLogProbs&& next, Visit&& visit) {
  const std::uint64_t size = response_space_size(vocab, max_len);
  if (size > cap) {
    throw OracleUnavailable("response space of " + std::to_string(size) +
                            " sequences exceeds enumeration cap " + std::to_string(cap));
  }
  const int a = vocab.alphabet();
  Tokens prefix;
  prefix.reserve(static_cast<std::size_t>(max_len));
  std::vector<std::vector<double>> scratch(static_cast<std::size_t>(max_len),
                                           std::vector<double>(static_cast<std::size_t>(a)));
  auto recurse = [&](auto&& self, double logp) -> void {
    const std::size_t depth = prefix.size();
    auto& lp = scratch[depth];
    next(x, TokenSpan(prefix), std::span<double>(lp));
    for (Token t = 0; t < a; ++t) {
      const double l = lp[static_cast<std::size_t>(t)];
      if (l == -std::numeric_limits<double>::infinity()) continue;
      prefix.push_back(t);
      if (t == vocab.eos_id() || static_cast<int>(prefix.size()) == max_len) {
        visit(TokenSpan(prefix), logp + l);
      } else {
        self(self, logp + l);
      }
      prefix.pop_back();
    }
  };
  recurse(recurse, 0.0);
}

// Records are one JSON object per line: {"x": [...], "y": [...]} / {"x": [...]}.
void write_demonstrations(std::ostream& out, const DemonstrationSet& demos);
DemonstrationSet read_demonstrations(std::istream& in);
void write_prompts(std::ostream& out, const PromptSet& prompts);
PromptSet read_prompts(std::istream& in);

// Checks the structural invariants of a demonstration set against a world.
void validate(const DemonstrationSet& demos, const TokenWorld& world);

// Tag implied by the intersection of PPO prompts with the SFT demonstration
// prompts: empty -> minimum; overlapping demos make up at least a quarter of
// the SFT data -> medium; otherwise diminished.
Overlap classify_overlap(const PromptSet& ppo_prompts, const DemonstrationSet& sft_demos);
bool overlap_consistent(const PromptSet& ppo_prompts, const DemonstrationSet& sft_demos);

}  // namespace srppo
