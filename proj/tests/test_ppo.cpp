// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "json.hpp"
#include "srppo/errors.hpp"
#include "srppo/eval.hpp"
#include "srppo/ppo.hpp"

using namespace srppo;

namespace {

WorldSpec small_spec() {
  WorldSpec s;
  s.vocab_size = 3;
  s.max_response_length = 3;
  s.num_prompts = 4;
  return s;
}

// Direct nested-sum evaluation of the advantage and return definitions.
GaeResult nested_sum_gae(const std::vector<double>& r, const std::vector<double>& v, double gamma, double lambda) {
  const std::size_t n = r.size();
  GaeResult out{std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
  auto delta = [&](std::size_t t) { return r[t] + gamma * (t + 1 < n ? v[t + 1] : 0.0) - v[t]; };
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t l = 0; t + l < n; ++l) {
      out.advantages[t] += std::pow(gamma * lambda, static_cast<double>(l)) * delta(t + l);
      out.returns[t] += std::pow(gamma, static_cast<double>(l)) * r[t + l];
    }
  }
  return out;
}

// Trajectories sampled from `p` with random advantages and logp_old set so
// that the ratio is exp(shift) at every step.
std::vector<Trajectory> sampled_batch(const Policy& p, int count, std::uint64_t seed, double shift = 0.0,
                                      double adv_scale = 1.0) {
  Rng rng(seed);
  std::vector<Trajectory> out;
  for (int i = 0; i < count; ++i) {
    Trajectory t;
    t.prompt = test::random_prompt(p.vocab(), 2, rng);
    auto s = p.sample(t.prompt, p.arch().max_len, rng);
    t.tokens = s.tokens;
    t.eos = s.eos;
    t.max_len = p.arch().max_len;
    for (double lp : s.log_probs) t.logp_old.push_back(lp - shift);
    for (std::size_t j = 0; j < t.size(); ++j) {
      t.advantages.push_back(adv_scale * rng.normal());
      t.returns.push_back(rng.normal());
    }
    out.push_back(std::move(t));
  }
  return out;
}

RewardSpec world_reward(const TokenWorld& w, std::uint64_t seed, Granularity g = Granularity::sequence_at_eos) {
  const Vocabulary v = w.vocab();
  const int m = w.max_response_length();
  return RewardSpec{clone_frozen(test::random_tabular(v, 1, m, seed, 0.5), Role::sft),
                    clone_frozen(test::random_tabular(v, 1, m, seed + 1, 0.5), Role::pretrained), g, std::nullopt};
}

}  // namespace

TEST_CASE("gae: single step") {
  const auto r = compute_gae(std::vector<double>{1.0}, std::vector<double>{0.5}, 1.0, 0.95);
  CHECK(r.advantages == std::vector<double>{0.5});
  CHECK(r.returns == std::vector<double>{1.0});
}

TEST_CASE("gae: two steps") {
  const auto r = compute_gae(std::vector<double>{0.0, 2.0}, std::vector<double>{1.0, 0.5}, 1.0, 0.95);
  CHECK(r.advantages[0] == doctest::Approx(0.925).epsilon(1e-12));
  CHECK(r.advantages[1] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(r.returns == std::vector<double>{2.0, 2.0});
}

TEST_CASE("gae: lambda zero gives one-step TD errors") {
  const std::vector<double> rw{0.3, -1.0, 2.0, 0.5}, v{1.0, 0.2, -0.4, 0.9};
  const auto r = compute_gae(rw, v, 0.9, 0.0);
  for (std::size_t t = 0; t < rw.size(); ++t) {
    const double next = t + 1 < rw.size() ? v[t + 1] : 0.0;
    CHECK(r.advantages[t] == rw[t] + 0.9 * next - v[t]);
  }
}

TEST_CASE("gae matches the nested sum on random instances") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(32);
    std::vector<double> r(n), v(n);
    for (auto& x : r) x = rng.normal();
    for (auto& x : v) x = rng.normal();
    const double gamma = 0.5 + 0.5 * rng.uniform();
    const double lambda = rng.uniform();
    const auto a = compute_gae(r, v, gamma, lambda);
    const auto b = nested_sum_gae(r, v, gamma, lambda);
    for (std::size_t t = 0; t < n; ++t) {
      CHECK(std::abs(a.advantages[t] - b.advantages[t]) < 1e-10);
      CHECK(std::abs(a.returns[t] - b.returns[t]) < 1e-10);
    }
  }
}

TEST_CASE("gae: terminal-only reward with gamma one returns the sequence reward at every step") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    std::vector<double> r(n, 0.0), v(n);
    r.back() = rng.normal();
    for (auto& x : v) x = rng.normal();
    const auto g = compute_gae(r, v, 1.0, 0.95);
    for (double ret : g.returns) CHECK(ret == r.back());
  }
  CHECK_THROWS_AS(compute_gae(std::vector<double>{1.0}, std::vector<double>{}, 1.0, 1.0), InvariantViolation);
}

TEST_CASE("advantage normalization preserves order and skips flat batches") {
  RolloutBatch b;
  Rng rng(3);
  for (int i = 0; i < 5; ++i) {
    Trajectory t;
    for (int j = 0; j < 3; ++j) t.advantages.push_back(rng.normal() * 3 + 1);
    b.trajectories.push_back(t);
  }
  std::vector<double> before;
  for (const auto& t : b.trajectories) before.insert(before.end(), t.advantages.begin(), t.advantages.end());
  CHECK(normalize_advantages(b));
  std::vector<double> after;
  for (const auto& t : b.trajectories) after.insert(after.end(), t.advantages.begin(), t.advantages.end());
  double mean = 0.0, var = 0.0;
  for (double a : after) mean += a / static_cast<double>(after.size());
  for (double a : after) var += (a - mean) * (a - mean) / static_cast<double>(after.size());
  CHECK(std::abs(mean) < 1e-12);
  CHECK(std::abs(var - 1.0) < 1e-12);
  for (std::size_t i = 0; i < before.size(); ++i)
    for (std::size_t k = 0; k < before.size(); ++k) CHECK((before[i] < before[k]) == (after[i] < after[k]));

  RolloutBatch flat;
  Trajectory t;
  t.advantages = {2.0, 2.0, 2.0};
  flat.trajectories.push_back(t);
  CHECK_FALSE(normalize_advantages(flat));
  CHECK(flat.trajectories[0].advantages == std::vector<double>{2.0, 2.0, 2.0});
}

TEST_CASE("critic loss: zero head against constant returns") {
  const Policy p = test::random_tabular(Vocabulary{3}, 1, 3, 1);
  const ValueHead head = ValueHead::from_policy(p);
  auto batch = sampled_batch(p, 20, 2);
  for (auto& t : batch) t.returns.assign(t.size(), 1.7);
  CHECK(critic_loss(head, batch) == doctest::Approx(1.7 * 1.7).epsilon(1e-12));
}

TEST_CASE("critic loss: exact fit has zero loss and zero gradient") {
  const Policy p = test::random_tabular(Vocabulary{3}, 1, 3, 1);
  ValueHead head = ValueHead::from_policy(p);
  Rng rng(4);
  for (double& w : head.params()) w = rng.normal();
  auto batch = sampled_batch(p, 20, 2);
  for (auto& t : batch)
    for (std::size_t j = 0; j < t.size(); ++j) t.returns[j] = head.value(t.prompt, TokenSpan(t.tokens).first(j));
  std::vector<double> grad(head.num_params(), 0.0);
  CHECK(critic_loss(head, batch, &grad) == 0.0);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("critic loss gradient matches finite differences") {
  for (bool mlp : {false, true}) {
    const Policy p = mlp ? test::random_mlp(Vocabulary{3}, 1, 4, 3, 7) : test::random_tabular(Vocabulary{3}, 1, 3, 7);
    ValueHead head = ValueHead::from_policy(p);
    Rng rng(9);
    for (double& w : head.params()) w = 0.5 * rng.normal();
    const auto batch = sampled_batch(p, 10, 3);
    std::vector<double> grad(head.num_params(), 0.0);
    critic_loss(head, batch, &grad);
    const auto fd = test::finite_difference(head.params(), [&] { return critic_loss(head, batch); });
    CHECK(test::max_relative_error(grad, fd) < 1e-4);
  }
}

TEST_CASE("critic update reports the pre-step loss and reduces it") {
  const Policy p = test::random_tabular(Vocabulary{3}, 1, 3, 1);
  ValueHead head = ValueHead::from_policy(p);
  const auto batch = sampled_batch(p, 30, 5);
  const double before = critic_loss(head, batch);
  CHECK(critic_update(head, batch, 0.1) == before);
  CHECK(critic_loss(head, batch) < before);
}

TEST_CASE("actor loss at ratio one is the vanilla policy gradient") {
  const Policy p = test::random_tabular(Vocabulary{3}, 1, 3, 12);
  auto batch = sampled_batch(p, 25, 6);
  for (auto& t : batch) t.advantages.assign(t.size(), 2.0);
  std::vector<double> grad(p.num_params(), 0.0);
  const auto d = actor_loss(p, batch, 0.2, &grad);
  CHECK(d.loss == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(d.clip_fraction == 0.0);
  CHECK(d.mean_ratio == doctest::Approx(1.0).epsilon(1e-12));

  // REINFORCE with the advantage as weight, averaged over steps.
  std::vector<double> reinforce(p.num_params(), 0.0);
  std::size_t n = 0;
  for (const auto& t : batch) n += t.size();
  for (const auto& t : batch)
    for (std::size_t j = 0; j < t.size(); ++j)
      p.accumulate_log_prob_grad(t.prompt, TokenSpan(t.tokens).first(j), t.tokens[j],
                                 -t.advantages[j] / static_cast<double>(n), reinforce);
  for (std::size_t i = 0; i < grad.size(); ++i) CHECK(std::abs(grad[i] - reinforce[i]) < 1e-10);
}

TEST_CASE("actor update at ratio one takes a vanilla policy-gradient step") {
  Policy p = test::random_tabular(Vocabulary{3}, 1, 3, 12);
  RolloutBatch b;
  b.trajectories = sampled_batch(p, 16, 6);
  PpoConfig c;
  c.rollout_buffer_size = 16;
  c.train_batch_size = 16;
  c.actor_lr = 0.3;
  std::vector<double> reinforce(p.num_params(), 0.0);
  std::size_t n = 0;
  for (const auto& t : b.trajectories) n += t.size();
  for (const auto& t : b.trajectories)
    for (std::size_t j = 0; j < t.size(); ++j)
      p.accumulate_log_prob_grad(t.prompt, TokenSpan(t.tokens).first(j), t.tokens[j],
                                 t.advantages[j] / static_cast<double>(n), reinforce);
  const std::vector<double> before(p.params().begin(), p.params().end());
  actor_update(p, b, c, 1);
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(std::abs(p.params()[i] - (before[i] + 0.3 * reinforce[i])) < 1e-10);
}

TEST_CASE("actor loss: positive advantage above the clip range") {
  const Policy p = test::random_tabular(Vocabulary{3}, 1, 3, 13);
  auto batch = sampled_batch(p, 10, 7, std::log(2.0));
  for (auto& t : batch) t.advantages.assign(t.size(), 1.0);
  std::vector<double> grad(p.num_params(), 0.0);
  const auto d = actor_loss(p, batch, 0.2, &grad);
  CHECK(d.loss == doctest::Approx(-1.2).epsilon(1e-12));
  CHECK(d.clip_fraction == 1.0);
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("actor loss: negative advantage below the clip range") {
  const Policy p = test::random_tabular(Vocabulary{3}, 1, 3, 13);
  auto batch = sampled_batch(p, 10, 7, -std::log(2.0));
  for (auto& t : batch) t.advantages.assign(t.size(), -1.0);
  std::vector<double> grad(p.num_params(), 0.0);
  const auto d = actor_loss(p, batch, 0.2, &grad);
  CHECK(d.loss == doctest::Approx(0.8).epsilon(1e-12));
  for (double g : grad) CHECK(g == 0.0);
}

TEST_CASE("actor loss: clipped branch inactive keeps the gradient") {
  // ratio 2 with negative advantage: the unclipped term is the minimum.
  const Policy p = test::random_tabular(Vocabulary{3}, 1, 3, 13);
  auto batch = sampled_batch(p, 10, 7, std::log(2.0));
  for (auto& t : batch) t.advantages.assign(t.size(), -1.0);
  std::vector<double> grad(p.num_params(), 0.0);
  const auto d = actor_loss(p, batch, 0.2, &grad);
  CHECK(d.loss == doctest::Approx(2.0).epsilon(1e-12));
  double norm = 0.0;
  for (double g : grad) norm += g * g;
  CHECK(norm > 0.0);
}

TEST_CASE("actor loss gradient matches finite differences away from the clip boundary") {
  for (bool mlp : {false, true}) {
    Policy p = mlp ? test::random_mlp(Vocabulary{3}, 1, 4, 3, 17) : test::random_tabular(Vocabulary{3}, 1, 3, 17);
    Rng rng(31);
    auto batch = sampled_batch(p, 12, 19);
    for (auto& t : batch) {
      for (std::size_t j = 0; j < t.size(); ++j) {
        const double lp = p.token_log_probs(t.prompt, t.tokens)[j];
        // Ratios well inside or well outside [0.8, 1.2].
        double log_ratio = 0.0;
        do {
          log_ratio = 0.6 * rng.normal();
        } while (std::abs(std::exp(log_ratio) - 0.8) < 0.02 || std::abs(std::exp(log_ratio) - 1.2) < 0.02);
        t.logp_old[j] = lp - log_ratio;
      }
    }
    std::vector<double> grad(p.num_params(), 0.0);
    actor_loss(p, batch, 0.2, &grad);
    const auto fd = test::finite_difference(p.params(), [&] { return actor_loss(p, batch, 0.2).loss; });
    CHECK(test::max_relative_error(grad, fd) < 1e-4);
  }
}

TEST_CASE("actor loss rejects missing advantages and non-finite ratios") {
  const Policy p = test::random_tabular(Vocabulary{3}, 1, 3, 13);
  auto batch = sampled_batch(p, 2, 7);
  batch[0].advantages.clear();
  CHECK_THROWS_AS(actor_loss(p, batch, 0.2), InvariantViolation);
  batch = sampled_batch(p, 2, 7);
  batch[1].logp_old[0] = -std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(actor_loss(p, batch, 0.2), TrainingError);
}

TEST_CASE("ppo config validation") {
  auto bad = [](auto mutate) {
    PpoConfig c;
    mutate(c);
    CHECK_THROWS_AS(validate(c), ConfigError);
  };
  bad([](PpoConfig& c) { c.clip_epsilon = 0.0; });
  bad([](PpoConfig& c) { c.clip_epsilon = 1.0; });
  bad([](PpoConfig& c) { c.gae_lambda = 1.5; });
  bad([](PpoConfig& c) { c.gamma = 0.0; });
  bad([](PpoConfig& c) { c.rollout_buffer_size = 100; });
  bad([](PpoConfig& c) { c.inner_epochs = 5; });
  bad([](PpoConfig& c) { c.episodes = -1; });
  bad([](PpoConfig& c) { c.actor_lr = 0.0; });
  CHECK_NOTHROW(validate(PpoConfig{}));
}

TEST_CASE("planned iterations count passes over the prompt set") {
  PpoConfig c;
  c.rollout_buffer_size = 64;
  c.train_batch_size = 16;
  c.episodes = 2;
  CHECK(planned_iterations(c, 64) == 2);
  CHECK(planned_iterations(c, 40) == 2);
  CHECK(planned_iterations(c, 16) == 1);
  c.episodes = 0;
  CHECK(planned_iterations(c, 64) == 0);
  c.iterations = 7;
  CHECK(planned_iterations(c, 64) == 7);
}

TEST_CASE("rollouts from the reference policy have zero KL statistic") {
  const auto w = TokenWorld::build(small_spec(), 2);
  const auto spec = world_reward(w, 3);
  CoherentRewardFunction rf(spec);
  PpoConfig c;
  c.kl_coefficient = 0.0;
  const auto b = collect_rollouts(*spec.sft_snapshot, rf, w.all_prompts(), c, *spec.sft_snapshot, nullptr, 11);
  CHECK(b.kl_to_ref == 0.0);
  CHECK(b.trajectories.size() == 256u);
  for (const auto& t : b.trajectories) {
    CHECK(t.complete());
    CHECK(t.rewards == t.raw_rewards);
    CHECK(t.logp_old == t.logp_sft);
  }
}

TEST_CASE("rollouts are deterministic for a fixed seed") {
  const auto w = TokenWorld::build(small_spec(), 2);
  const auto spec = world_reward(w, 3);
  CoherentRewardFunction rf(spec);
  PpoConfig c;
  const Policy actor = test::random_tabular(w.vocab(), 1, 3, 44);
  const auto a = collect_rollouts(actor, rf, w.all_prompts(), c, *spec.sft_snapshot, nullptr, 5);
  const auto b = collect_rollouts(actor, rf, w.all_prompts(), c, *spec.sft_snapshot, nullptr, 5);
  REQUIRE(a.trajectories.size() == b.trajectories.size());
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
    CHECK(a.trajectories[i].tokens == b.trajectories[i].tokens);
    CHECK(a.trajectories[i].rewards == b.trajectories[i].rewards);
  }
  CHECK(a.mean_reward == b.mean_reward);
}

TEST_CASE("rollouts: KL penalty is subtracted per step") {
  const auto w = TokenWorld::build(small_spec(), 2);
  const auto spec = world_reward(w, 3);
  CoherentRewardFunction rf(spec);
  PpoConfig c;
  c.kl_coefficient = 0.5;
  c.rollout_buffer_size = 32;
  c.train_batch_size = 32;
  const Policy actor = test::random_tabular(w.vocab(), 1, 3, 44);
  const auto b = collect_rollouts(actor, rf, w.all_prompts(), c, *spec.sft_snapshot, nullptr, 5);
  for (const auto& t : b.trajectories)
    for (std::size_t j = 0; j < t.size(); ++j)
      CHECK(t.rewards[j] == t.raw_rewards[j] - 0.5 * (t.logp_old[j] - t.logp_ref[j]));
  RolloutBatch copy = b;
  refresh_statistics(copy);
  CHECK(copy.mean_reward == b.mean_reward);
  CHECK(copy.kl_to_ref == b.kl_to_ref);
}

TEST_CASE("mean rollout reward matches the enumerated expectation") {
  const auto w = TokenWorld::build(small_spec(), 2);
  const auto spec = world_reward(w, 3);
  CoherentRewardFunction rf(spec);
  PpoConfig c;
  c.kl_coefficient = 0.0;
  c.rollout_buffer_size = 10000;
  c.train_batch_size = 10000;
  const auto b = collect_rollouts(*spec.sft_snapshot, rf, w.all_prompts(), c, *spec.sft_snapshot, nullptr, 21);
  std::vector<double> terminal;
  for (const auto& t : b.trajectories) terminal.push_back(t.raw_rewards.back());
  double mean = 0.0, var = 0.0;
  for (double r : terminal) mean += r / static_cast<double>(terminal.size());
  for (double r : terminal) var += (r - mean) * (r - mean) / static_cast<double>(terminal.size() - 1);
  const double se = std::sqrt(var / static_cast<double>(terminal.size()));

  const auto space = response_space(w.vocab(), 3, w.spec().enumeration_cap);
  double exact = 0.0;
  for (const auto& x : w.prompts()) {
    const auto p = policy_distribution(*spec.sft_snapshot, space, x);
    for (std::size_t i = 0; i < space.size(); ++i) exact += p[i] * sequence_reward(spec, x, space[i]) / w.prompts().size();
  }
  CHECK(std::abs(mean - exact) < 3.0 * se);
  CHECK(b.mean_reward == doctest::Approx(mean).epsilon(1e-9));
}

TEST_CASE("run_ppo with zero episodes returns the SFT parameters") {
  const auto w = TokenWorld::build(small_spec(), 2);
  const auto spec = world_reward(w, 3);
  CoherentRewardFunction rf(spec);
  PpoConfig c;
  c.episodes = 0;
  const auto r = run_ppo(*spec.sft_snapshot, rf, w.all_prompts(), c);
  CHECK(std::equal(r.actor.params().begin(), r.actor.params().end(), spec.sft_snapshot->params().begin()));
  CHECK(r.actor.role() == Role::actor);
  CHECK(r.log.empty());
}

TEST_CASE("run_ppo with identical snapshots stays near the SFT policy") {
  const auto w = TokenWorld::build(small_spec(), 2);
  const auto sft = clone_frozen(test::random_tabular(w.vocab(), 1, 3, 5, 0.5), Role::sft);
  CoherentRewardFunction rf(RewardSpec{sft, sft, Granularity::sequence_at_eos, std::nullopt});
  PpoConfig c;
  c.seed = 3;
  const auto r = run_ppo(*sft, rf, w.all_prompts(), c);
  CHECK(mean_tv(r.actor, *sft, w, w.all_prompts()) < 0.02);
}

TEST_CASE("run_ppo logs warmup then ppo iterations and is deterministic") {
  const auto w = TokenWorld::build(small_spec(), 2);
  const auto spec = world_reward(w, 3);
  CoherentRewardFunction rf(spec);
  PpoConfig c;
  c.iterations = 3;
  c.critic_warmup_buffers = 2;
  c.rollout_buffer_size = 64;
  c.train_batch_size = 16;
  c.seed = 9;
  int observed = 0;
  const auto a = run_ppo(*spec.sft_snapshot, rf, w.all_prompts(), c, nullptr, [&](const Policy&, PpoMetrics& m) {
    ++observed;
    m.extra["probe"] = m.iter;
  });
  const auto b = run_ppo(*spec.sft_snapshot, rf, w.all_prompts(), c);
  CHECK(observed == 3);
  REQUIRE(a.log.size() == 5u);
  CHECK(a.log[0].phase == "warmup");
  CHECK_FALSE(a.log[0].clip_frac.has_value());
  CHECK(a.log[2].phase == "ppo");
  CHECK(a.log[2].iter == 1);
  CHECK(a.actor == b.actor);
  CHECK(a.critic == b.critic);

  std::stringstream ss;
  write_ppo_metrics(ss, a.log);
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(ss, line)) rows.push_back(nlohmann::json::parse(line));
  REQUIRE(rows.size() == 5u);
  for (const char* key : {"iter", "mean_reward", "mean_len", "kl_to_ref", "clip_frac", "actor_loss", "critic_loss"})
    CHECK(rows[4].contains(key));
  CHECK(rows[0]["clip_frac"].is_null());
  CHECK(rows[4]["probe"] == 3.0);
}

TEST_CASE("frozen reward snapshots are constant across PPO updates") {
  const auto w = TokenWorld::build(small_spec(), 2);
  const auto spec = world_reward(w, 3);
  CoherentRewardFunction rf(spec);
  const Tokens x = w.prompts()[0], y{0, 1, 3};
  const double before = sequence_reward(spec, x, y);
  PpoConfig c;
  c.iterations = 10;
  c.critic_warmup_buffers = 0;
  c.rollout_buffer_size = 64;
  c.train_batch_size = 16;
  const auto r = run_ppo(*spec.sft_snapshot, rf, w.all_prompts(), c);
  CHECK(!(r.actor == *spec.sft_snapshot));
  CHECK(sequence_reward(spec, x, y) == before);
}

TEST_CASE("trained critic matches the Monte-Carlo return of the start state") {
  const auto w = TokenWorld::build(small_spec(), 2);
  const auto spec = world_reward(w, 3);
  CoherentRewardFunction rf(spec);
  const Policy& actor = *spec.sft_snapshot;
  PromptSet one{{w.prompts()[0]}, std::nullopt};
  PpoConfig c;
  c.kl_coefficient = 0.0;
  c.rollout_buffer_size = 256;
  c.train_batch_size = 64;
  ValueHead head = ValueHead::from_policy(actor);
  for (std::uint64_t buffer = 0; buffer < 60; ++buffer) {
    auto b = collect_rollouts(actor, rf, one, c, actor, &head, derive_seed(1, buffer));
    for (auto& t : b.trajectories) compute_gae(t, 1.0, 0.95);
    for (std::size_t s = 0; s < b.trajectories.size(); s += 64)
      critic_update(head, std::span<const Trajectory>(b.trajectories).subspan(s, 64), 0.5);
  }
  PpoConfig mc = c;
  mc.rollout_buffer_size = 10000;
  mc.train_batch_size = 10000;
  const auto b = collect_rollouts(actor, rf, one, mc, actor, nullptr, 999);
  double mean = 0.0;
  for (const auto& t : b.trajectories) mean += t.raw_rewards.back() / 10000.0;
  CHECK(std::abs(head.value(one.prompts[0], TokenSpan{}) - mean) < 0.1);
}

TEST_CASE("run_ppo rejects an empty prompt set") {
  const auto w = TokenWorld::build(small_spec(), 2);
  const auto spec = world_reward(w, 3);
  CoherentRewardFunction rf(spec);
  CHECK_THROWS_AS(run_ppo(*spec.sft_snapshot, rf, PromptSet{}, PpoConfig{}), ConfigError);
}
