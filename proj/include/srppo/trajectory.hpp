// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "srppo/vocab.hpp"

namespace srppo {

// One prompt-response episode. Step t is the state (prompt, tokens[0..t))
// taking action tokens[t]. Per-step arrays are either empty or share the
// response length.
struct Trajectory {
  Tokens prompt;
  Tokens tokens;
  int max_len = 0;
  bool eos = false;  // false: truncated at max_len

  std::vector<double> logp_old;  // actor that sampled the episode
  std::vector<double> logp_sft;
  std::vector<double> logp_pt;
  std::vector<double> logp_ref;  // KL reference

  std::vector<double> raw_rewards;  // task reward before the KL penalty
  std::vector<double> rewards;      // r_t seen by GAE
  std::vector<double> values;       // V(s_t)
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return tokens.size(); }
  bool complete() const {
    return !tokens.empty() && (eos || static_cast<int>(tokens.size()) == max_len) &&
           static_cast<int>(tokens.size()) <= max_len;
  }
};

}  // namespace srppo
