// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "srppo/policy.hpp"
#include "srppo/rng.hpp"
#include "srppo/token_world.hpp"

namespace srppo::test {

inline Policy random_tabular(Vocabulary v, int order, int max_len, std::uint64_t seed, double scale = 1.0) {
  Policy p = Policy::tabular(v, order, max_len);
  Rng rng(seed);
  for (double& w : p.params()) w = scale * rng.normal();
  return p;
}

inline Policy random_mlp(Vocabulary v, int window, int hidden, int max_len, std::uint64_t seed, double scale = 0.5) {
  Policy p = Policy::mlp(v, window, hidden, max_len, seed);
  Rng rng(derive_seed(seed, 99));
  for (double& w : p.params()) w = scale * rng.normal();
  return p;
}

inline Tokens random_prompt(Vocabulary v, int n, Rng& rng) {
  Tokens x(static_cast<std::size_t>(n));
  for (auto& t : x) t = static_cast<Token>(rng.below(static_cast<std::size_t>(v.size)));
  return x;
}

// Complete response: EOS-terminated, or exactly max_len ordinary tokens.
inline Tokens random_response(Vocabulary v, int max_len, Rng& rng) {
  const int len = 1 + static_cast<int>(rng.below(static_cast<std::size_t>(max_len)));
  Tokens y;
  for (int j = 0; j < len - 1; ++j) y.push_back(static_cast<Token>(rng.below(static_cast<std::size_t>(v.size))));
  const bool eos = len < max_len || rng.uniform() < 0.5;
  y.push_back(eos ? v.eos_id() : static_cast<Token>(rng.below(static_cast<std::size_t>(v.size))));
  return y;
}

// Central differences of f over params (restored afterwards).
inline std::vector<double> finite_difference(std::span<double> params, const std::function<double()>& f,
                                             double h = 1e-5) {
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    const double up = f();
    params[i] = keep - h;
    const double down = f();
    params[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Largest per-coordinate relative error, denominators floored at 1e-6.
inline double max_relative_error(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
    worst = std::max(worst, std::abs(a[i] - b[i]) / d);
  }
  return worst;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Order-1 tabular policy reproducing an order-1 world's expert table.
inline Policy expert_policy(const TokenWorld& w) {
  const int m = w.max_response_length();
  const int a = w.vocab().alphabet();
  Policy p = Policy::tabular(w.vocab(), 1, m);
  for (int j = 0; j < m; ++j) {
    for (int c = 0; c < a; ++c) {
      const auto row = w.expert_next(Tokens{}, Tokens{static_cast<Token>(c)});
      for (int t = 0; t < a; ++t)
        p.params()[static_cast<std::size_t>((j * a + c) * a + t)] = std::log(row[static_cast<std::size_t>(t)]);
    }
  }
  return p;
}

// One-prompt world with a single-token response space (m = 1).
inline TokenWorld single_token_world(std::vector<double> expert_row, std::vector<double> pretrain_row) {
  WorldSpec s;
  s.vocab_size = static_cast<int>(expert_row.size()) - 1;
  s.prompt_length = 1;
  s.max_response_length = 1;
  s.markov_order = 0;
  s.num_prompts = 1;
  return TokenWorld::from_tables(s, {Tokens{0}}, std::move(expert_row), std::move(pretrain_row));
}

}  // namespace srppo::test
