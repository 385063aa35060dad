// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "srppo/errors.hpp"
#include "srppo/eval.hpp"
#include "srppo/experiments.hpp"

using namespace srppo;

namespace {

WorldSpec small_spec() {
  WorldSpec s;
  s.vocab_size = 3;
  s.max_response_length = 3;
  s.num_prompts = 6;
  return s;
}

}  // namespace

TEST_CASE("KL of the expert against itself is zero") {
  const auto w = TokenWorld::build(small_spec(), 4);
  const auto k = exact_kl_to_expert(test::expert_policy(w), w, w.all_prompts());
  CHECK(k.exact);
  CHECK(std::abs(k.value) < 1e-10);
}

TEST_CASE("KL from a deterministic expert to a uniform single-token policy is ln 3") {
  const auto w = test::single_token_world({1.0, 0.0, 0.0}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  const Policy uniform = Policy::tabular(w.vocab(), 0, 1);
  CHECK(exact_kl_to_expert(uniform, w, w.all_prompts()).value == doctest::Approx(1.0986).epsilon(1e-4));
  CHECK(exact_kl_to_expert(uniform, w, w.all_prompts()).value == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("KL is nonnegative and zero only at equality") {
  const auto w = TokenWorld::build(small_spec(), 4);
  Policy p = test::expert_policy(w);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Policy q = test::random_tabular(w.vocab(), 1, 3, seed);
    CHECK(exact_kl_to_expert(q, w, w.all_prompts()).value > 1e-6);
  }
  // Position-0 rows are reached by every prompt.
  for (std::size_t i = 0; i < 16; i += 5) p.params()[i] += 0.5;
  CHECK(exact_kl_to_expert(p, w, w.all_prompts()).value > 1e-6);
}

TEST_CASE("Monte-Carlo KL agrees with the exact value within 3 standard errors") {
  const auto w = TokenWorld::build(small_spec(), 4);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const Policy q = test::random_tabular(w.vocab(), 1, 3, seed, 0.7);
    const auto exact = exact_kl_to_expert(q, w, w.all_prompts());
    const auto mc = monte_carlo_kl_to_expert(q, w, w.all_prompts(), 10000, seed);
    CHECK_FALSE(mc.exact);
    CHECK(mc.std_error > 0.0);
    CHECK(std::abs(mc.value - exact.value) < 3.0 * mc.std_error);
  }
}

TEST_CASE("KL falls back to Monte-Carlo beyond the enumeration cap") {
  auto s = small_spec();
  s.enumeration_cap = 5;
  const auto w = TokenWorld::build(s, 4);
  const auto k = exact_kl_to_expert(Policy::tabular(w.vocab(), 1, 3), w, w.all_prompts(), 2000, 1);
  CHECK_FALSE(k.exact);
  CHECK(k.std_error > 0.0);
  CHECK_FALSE(task_success_rate(Policy::tabular(w.vocab(), 1, 3), w, w.all_prompts(), 0.9).has_value());
  CHECK_THROWS_AS(exact_kl_to_expert(Policy::tabular(w.vocab(), 1, 3), w, PromptSet{}), ConfigError);
}

TEST_CASE("distributions and total variation") {
  const auto w = TokenWorld::build(small_spec(), 4);
  const auto space = response_space(w.vocab(), 3, w.spec().enumeration_cap);
  for (const auto& x : w.prompts()) {
    const auto e = expert_distribution(w, space, x);
    const auto p = policy_distribution(test::expert_policy(w), space, x);
    CHECK(std::accumulate(e.begin(), e.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(total_variation(e, p) < 1e-12);
  }
  CHECK(total_variation(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 1.0);
  CHECK_THROWS_AS(total_variation(std::vector<double>{1}, std::vector<double>{0.5, 0.5}), InvariantViolation);
}

TEST_CASE("task success rate") {
  const auto w = TokenWorld::build(small_spec(), 4);
  const auto expert = task_success_rate(test::expert_policy(w), w, w.all_prompts(), 0.9);
  REQUIRE(expert.has_value());
  CHECK(*expert >= 0.9 - 1e-12);
  CHECK(*expert <= 1.0 + 1e-12);
  const auto uniform = task_success_rate(Policy::tabular(w.vocab(), 1, 3), w, w.all_prompts(), 0.9);
  CHECK(*uniform >= 0.0);
  CHECK(*uniform < *expert);
}

TEST_CASE("expected length of a uniform policy") {
  const Policy uniform = Policy::tabular(Vocabulary{2}, 1, 3);
  // P(len 1) = 1/3, P(len 2) = 2/9, P(len 3) = 4/9
  CHECK(expected_length(uniform, PromptSet{{{0, 1}}, std::nullopt}) == doctest::Approx(19.0 / 9.0).epsilon(1e-12));
}

TEST_CASE("evaluate_policy report invariants") {
  const auto w = TokenWorld::build(small_spec(), 4);
  const Policy q = test::random_tabular(w.vocab(), 1, 3, 2, 0.5);
  PromptSet seen{{w.prompts().begin(), w.prompts().begin() + 2}, std::nullopt};
  PromptSet unseen{{w.prompts().begin() + 2, w.prompts().end()}, std::nullopt};
  const auto demos = sample_demonstrations(w, unseen, 50, 3);
  EvalConfig c;
  c.samples = 500;
  const auto r = evaluate_policy("q", q, w, seen, unseen, &demos, c, 7);
  CHECK(r.kl_to_expert.value >= 0.0);
  CHECK(r.kl_seen.value >= 0.0);
  CHECK(r.kl_unseen.value >= 0.0);
  CHECK(std::accumulate(r.length_histogram.begin(), r.length_histogram.end(), std::size_t{0}) == r.samples);
  CHECK(r.length_histogram[0] == 0u);
  CHECK(r.samples == 500u);
  CHECK(r.heldout_nll.has_value());
  REQUIRE(r.task_success_rate.has_value());
  CHECK(*r.task_success_rate >= 0.0);
  CHECK(*r.task_success_rate <= 1.0);
  // Whole-world KL is the prompt-weighted mix of the two halves.
  CHECK(r.kl_to_expert.value == doctest::Approx((2 * r.kl_seen.value + 4 * r.kl_unseen.value) / 6).epsilon(1e-12));

  const auto again = evaluate_policy("q", q, w, seen, unseen, &demos, c, 7);
  CHECK(again.mean_response_length == r.mean_response_length);
  CHECK(again.length_histogram == r.length_histogram);
}

TEST_CASE("identical seen and unseen sets give equal breakdown columns") {
  const auto w = TokenWorld::build(small_spec(), 4);
  const Policy q = test::random_tabular(w.vocab(), 1, 3, 2, 0.5);
  EvalConfig c;
  c.samples = 100;
  const auto r = evaluate_policy("q", q, w, w.all_prompts(), w.all_prompts(), nullptr, c, 1);
  CHECK(r.kl_seen.value == r.kl_unseen.value);
  CHECK(r.kl_seen.value == r.kl_to_expert.value);
  CHECK_FALSE(r.heldout_nll.has_value());
}

TEST_CASE("report serialization") {
  const auto w = TokenWorld::build(small_spec(), 4);
  EvalConfig c;
  c.samples = 10;
  const auto r = evaluate_policy("sft", Policy::tabular(w.vocab(), 1, 3), w, w.all_prompts(), PromptSet{},
                                 nullptr, c, 1);
  std::stringstream jl;
  write_eval_reports(jl, {r});
  const auto j = nlohmann::json::parse(jl.str());
  CHECK(j["method"] == "sft");
  CHECK(j["kl_unseen"]["value"].is_null());
  CHECK(j["heldout_nll"].is_null());
  CHECK(j["length_histogram"].size() == 4u);

  std::stringstream csv;
  write_summary_csv(csv, {r});
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  CHECK(header == "method,kl_to_expert,kl_seen,kl_unseen,heldout_nll,mean_response_length,task_success_rate");
  CHECK(row.rfind("sft,", 0) == 0);
  CHECK(std::count(row.begin(), row.end(), ',') == 6);
}

TEST_CASE("expert-reward PPO moves the policy toward the expert") {
  const auto w = TokenWorld::build(small_spec(), 4);
  // An under-trained SFT policy: the regularized optimum sft * expert is closer to the expert.
  const auto demos = sample_demonstrations(w, w.all_prompts(), 24, 3);
  SftConfig sc;
  sc.epochs = 5;
  const auto sft = srppo::sft(Policy::tabular(w.vocab(), 1, 3), demos, sc);
  PpoConfig c;
  c.kl_coefficient = 1.0;
  c.iterations = 30;
  c.seed = 2;
  const auto r = oracle_reward_baseline(*sft.policy, w, w.all_prompts(), c);
  const double before = exact_kl_to_expert(*sft.policy, w, w.all_prompts()).value;
  const double after = exact_kl_to_expert(r.actor, w, w.all_prompts()).value;
  CHECK(after < before);
  const auto again = oracle_reward_baseline(*sft.policy, w, w.all_prompts(), c);
  CHECK(again.actor == r.actor);
}

TEST_CASE("zero-reward PPO stays within 0.02 total variation of SFT") {
  const auto w = TokenWorld::build(small_spec(), 4);
  const Policy sft = test::random_tabular(w.vocab(), 1, 3, 6, 0.5);
  PpoConfig c;
  c.iterations = 10;
  c.seed = 5;
  const auto r = run_ppo(sft, ZeroReward{}, w.all_prompts(), c);
  CHECK(mean_tv(r.actor, sft, w, w.all_prompts()) < 0.02);
}

TEST_CASE("length study with identical snapshots keeps the length stable") {
  const auto w = TokenWorld::build(small_spec(), 4);
  const Policy sft = test::random_tabular(w.vocab(), 1, 3, 6, 0.5);
  PpoConfig c;
  c.iterations = 10;
  c.seed = 5;
  const auto r = length_degeneration_study(sft, sft, w.all_prompts(), c);
  CHECK(r.token_wise.size() == r.sequence_at_eos.size());
  CHECK(std::abs(r.token_wise_final / r.initial_length - 1.0) < 0.1);
  CHECK(std::abs(r.sequence_final / r.initial_length - 1.0) < 0.1);
  CHECK(r.token_wise.back().extra.count("expected_len") == 1u);
}
