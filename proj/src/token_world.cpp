// SPDX-License-Identifier: Apache-2.0
#include "srppo/token_world.hpp"

#include <algorithm>
#include <istream>
#include <map>
#include "json.hpp"
#include <ostream>
#include <set>

namespace srppo {

namespace {

using nlohmann::json;

void normalize_row(std::span<double> row) {
  double sum = 0.0;
  for (double p : row) sum += p;
  for (double& p : row) p /= sum;
}

void softmax_row(std::span<double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  for (double& v : row) v = std::exp(v - mx);
  normalize_row(row);
}

Tokens tokens_from_json(const json& j, const char* field) {
  if (!j.contains(field) || !j[field].is_array()) {
    throw InputError(std::string("record is missing array field \"") + field + "\"");
  }
  Tokens out;
  for (const auto& v : j[field]) {
    if (!v.is_number_integer()) throw InputError(std::string("non-integer token in \"") + field + "\"");
    out.push_back(v.get<int>());
  }
  return out;
}

}  // namespace

void validate(const WorldSpec& spec) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ConfigError("world." + field + ": " + why);
  };
  if (spec.vocab_size < 2) fail("vocab_size", "must be >= 2");
  if (spec.prompt_length < 1) fail("prompt_length", "must be >= 1");
  if (spec.max_response_length < 1) fail("max_response_length", "must be >= 1");
  if (spec.markov_order < 0) fail("markov_order", "must be >= 0");
  if (spec.markov_order > 8) fail("markov_order", "must be <= 8");
  if (spec.num_prompts < 1) fail("num_prompts", "must be >= 1");
  const double space = std::pow(static_cast<double>(spec.vocab_size), spec.prompt_length);
  if (static_cast<double>(spec.num_prompts) > space) {
    fail("num_prompts", "exceeds the number of distinct prompts vocab_size^prompt_length");
  }
  if (!(spec.expert_sharpness >= 0.0)) fail("expert_sharpness", "must be >= 0");
  if (!(spec.perturb_sharpness >= 0.0)) fail("perturb_sharpness", "must be >= 0");
  if (!(spec.pretrain_mix >= 0.0 && spec.pretrain_mix <= 1.0)) fail("pretrain_mix", "must lie in [0, 1]");
  if (!(spec.perturb_smoothing >= 0.0 && spec.perturb_smoothing <= 1.0)) {
    fail("perturb_smoothing", "must lie in [0, 1]");
  }
  if (!spec.identity && spec.pretrain_mix == 0.0) {
    fail("pretrain_mix", "must be > 0 unless identity is requested");
  }
  if (!std::isfinite(spec.expert_eos_logit) || !std::isfinite(spec.perturb_eos_logit)) {
    fail("eos_logit", "must be finite");
  }
  if (spec.enumeration_cap < 1) fail("enumeration_cap", "must be >= 1");
}

std::uint64_t response_space_size(const Vocabulary& vocab, int max_len) {
  const auto v = static_cast<long double>(vocab.size);
  long double total = 0.0L;
  long double power = 1.0L;
  for (int j = 0; j < max_len; ++j) {
    total += power;  // j ordinary tokens followed by EOS
    power *= v;
  }
  total += power;  // max_len ordinary tokens, truncated
  if (total > 1.8e19L) return std::numeric_limits<std::uint64_t>::max();
  return static_cast<std::uint64_t>(total);
}

std::string to_string(Overlap o) {
  switch (o) {
    case Overlap::minimum:
      return "minimum";
    case Overlap::medium:
      return "medium";
    case Overlap::diminished:
      return "diminished";
  }
  return "minimum";
}

Overlap overlap_from_string(const std::string& s) {
  if (s == "minimum") return Overlap::minimum;
  if (s == "medium") return Overlap::medium;
  if (s == "diminished") return Overlap::diminished;
  throw ConfigError("overlap setup must be one of minimum|medium|diminished, got \"" + s + "\"");
}

TokenWorld TokenWorld::build(const WorldSpec& spec, std::uint64_t seed) {
  validate(spec);
  if (spec.max_response_length < 2) throw ConfigError("world.max_response_length: must be >= 2");
  TokenWorld w;
  w.spec_ = spec;
  w.seed_ = seed;
  const Vocabulary vocab = w.vocab();
  const auto a = static_cast<std::size_t>(vocab.alphabet());
  w.num_contexts_ = int_pow(a, spec.markov_order);

  Rng prompt_rng(derive_seed(seed, Stream::prompts));
  const std::size_t space = int_pow(static_cast<std::size_t>(spec.vocab_size), spec.prompt_length);
  std::set<std::size_t> chosen;
  while (chosen.size() < static_cast<std::size_t>(spec.num_prompts)) {
    const std::size_t code = prompt_rng.below(space);
    if (!chosen.insert(code).second) continue;
    Tokens x(static_cast<std::size_t>(spec.prompt_length));
    std::size_t c = code;
    for (int i = spec.prompt_length - 1; i >= 0; --i) {
      x[static_cast<std::size_t>(i)] = static_cast<Token>(c % static_cast<std::size_t>(spec.vocab_size));
      c /= static_cast<std::size_t>(spec.vocab_size);
    }
    w.prompts_.push_back(std::move(x));
  }

  Rng table_rng(derive_seed(seed, Stream::world));
  w.expert_.assign(w.num_contexts_ * a, 0.0);
  w.pretrain_.assign(w.num_contexts_ * a, 0.0);
  std::vector<double> noise(a);
  for (std::size_t c = 0; c < w.num_contexts_; ++c) {
    std::span<double> row(w.expert_.data() + c * a, a);
    for (std::size_t t = 0; t < a; ++t) row[t] = spec.expert_sharpness * table_rng.normal();
    row[a - 1] += spec.expert_eos_logit;
    if (spec.deterministic_expert) {
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      std::fill(row.begin(), row.end(), 0.0);
      row[best] = 1.0;
    } else {
      softmax_row(row);
    }

    for (std::size_t t = 0; t < a; ++t) noise[t] = spec.perturb_sharpness * table_rng.normal();
    noise[a - 1] += spec.perturb_eos_logit;
    softmax_row(noise);
    std::span<double> pt(w.pretrain_.data() + c * a, a);
    for (std::size_t t = 0; t < a; ++t) {
      if (spec.identity) {
        pt[t] = row[t];
      } else {
        const double perturbed = spec.perturb_smoothing / static_cast<double>(a) +
                                 (1.0 - spec.perturb_smoothing) * noise[t];
        pt[t] = (1.0 - spec.pretrain_mix) * row[t] + spec.pretrain_mix * perturbed;
      }
    }
    if (!spec.identity) normalize_row(pt);
  }
  w.finalize();
  return w;
}

TokenWorld TokenWorld::from_tables(const WorldSpec& spec, std::vector<Tokens> prompts,
                                   std::vector<double> expert, std::vector<double> pretrain) {
  validate(spec);
  TokenWorld w;
  w.spec_ = spec;
  w.spec_.num_prompts = static_cast<int>(prompts.size());
  const auto a = static_cast<std::size_t>(w.vocab().alphabet());
  w.num_contexts_ = int_pow(a, spec.markov_order);
  if (expert.size() != w.num_contexts_ * a || pretrain.size() != w.num_contexts_ * a) {
    throw ConfigError("tables must have (vocab_size+1)^(markov_order+1) entries");
  }
  w.prompts_ = std::move(prompts);
  w.expert_ = std::move(expert);
  w.pretrain_ = std::move(pretrain);
  for (const auto& x : w.prompts_) w.check_prompt(x);
  for (std::size_t c = 0; c < w.num_contexts_; ++c) {
    for (auto* table : {&w.expert_, &w.pretrain_}) {
      double sum = 0.0;
      for (std::size_t t = 0; t < a; ++t) {
        const double p = (*table)[c * a + t];
        if (!(p >= 0.0)) throw ConfigError("table entries must be nonnegative");
        sum += p;
      }
      if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("table rows must sum to 1 within 1e-12");
    }
  }
  w.finalize();
  return w;
}

void TokenWorld::finalize() {
  prompt_probs_.assign(prompts_.size(), 1.0 / static_cast<double>(prompts_.size()));
}

std::size_t TokenWorld::context_index(TokenSpan x, TokenSpan prefix) const {
  return ngram_context(x, prefix, spec_.markov_order, vocab().alphabet());
}

std::span<const double> TokenWorld::expert_next(TokenSpan x, TokenSpan prefix) const {
  const auto a = static_cast<std::size_t>(vocab().alphabet());
  return {expert_.data() + context_index(x, prefix) * a, a};
}

std::span<const double> TokenWorld::pretrain_next(TokenSpan x, TokenSpan prefix) const {
  const auto a = static_cast<std::size_t>(vocab().alphabet());
  return {pretrain_.data() + context_index(x, prefix) * a, a};
}

void TokenWorld::check_prompt(TokenSpan x) const {
  if (static_cast<int>(x.size()) != spec_.prompt_length) {
    throw InputError("prompt length " + std::to_string(x.size()) + " != " + std::to_string(spec_.prompt_length));
  }
  for (Token t : x) {
    if (!vocab().ordinary(t)) throw InputError("prompt token " + std::to_string(t) + " out of range");
  }
}

void TokenWorld::check_response(TokenSpan y) const {
  if (y.empty()) throw InputError("empty response");
  if (static_cast<int>(y.size()) > spec_.max_response_length) throw InputError("response longer than m");
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (!vocab().valid(y[j])) throw InputError("response token " + std::to_string(y[j]) + " out of range");
    if (y[j] == vocab().eos_id() && j + 1 != y.size()) throw InputError("EOS before the end of a response");
  }
  if (y.back() != vocab().eos_id() && static_cast<int>(y.size()) != spec_.max_response_length) {
    throw InputError("response neither ends with EOS nor has length m");
  }
}

double TokenWorld::expert_log_prob(TokenSpan x, TokenSpan y) const {
  double lp = 0.0;
  for (std::size_t j = 0; j < y.size(); ++j) {
    lp += std::log(expert_next(x, y.first(j))[static_cast<std::size_t>(y[j])]);
  }
  return lp;
}

Tokens TokenWorld::sample_from(std::span<const double> table, TokenSpan x, Rng& rng) const {
  const auto a = static_cast<std::size_t>(vocab().alphabet());
  Tokens y;
  while (static_cast<int>(y.size()) < spec_.max_response_length) {
    const std::size_t c = context_index(x, y);
    const Token t = rng.categorical(table.subspan(c * a, a));
    y.push_back(t);
    if (t == vocab().eos_id()) break;
  }
  return y;
}

Tokens TokenWorld::sample_expert(TokenSpan x, Rng& rng) const { return sample_from(expert_, x, rng); }
Tokens TokenWorld::sample_pretrain(TokenSpan x, Rng& rng) const { return sample_from(pretrain_, x, rng); }

Tokens TokenWorld::sample_prompt(Rng& rng) const { return prompts_[rng.categorical(prompt_probs_)]; }

DemonstrationSet sample_demonstrations(const TokenWorld& world, const PromptSet& prompt_subset,
                                       std::size_t count, std::uint64_t seed) {
  if (count < 1) throw ConfigError("demonstration count must be >= 1");
  if (prompt_subset.prompts.empty()) throw ConfigError("prompt subset is empty");
  for (const auto& x : prompt_subset.prompts) world.check_prompt(x);
  Rng rng(seed);
  DemonstrationSet out;
  out.provenance = prompt_subset.overlap_tag ? to_string(*prompt_subset.overlap_tag) : "prompt-subset";
  out.pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Tokens& x = prompt_subset.prompts[rng.below(prompt_subset.prompts.size())];
    out.pairs.push_back({x, world.sample_expert(x, rng)});
  }
  return out;
}

std::vector<ScoredResponse> enumerate_responses(const TokenWorld& world, TokenSpan x) {
  world.check_prompt(x);
  std::vector<ScoredResponse> out;
  enumerate_sequences(
      world.vocab(), world.max_response_length(), world.spec().enumeration_cap, x,
      [&](TokenSpan xs, TokenSpan prefix, std::span<double> lp) {
        const auto p = world.expert_next(xs, prefix);
        for (std::size_t t = 0; t < p.size(); ++t) {
          lp[t] = p[t] > 0.0 ? std::log(p[t]) : -std::numeric_limits<double>::infinity();
        }
      },
      [&](TokenSpan y, double logp) { out.push_back({Tokens(y.begin(), y.end()), std::exp(logp)}); });
  return out;
}

void write_demonstrations(std::ostream& out, const DemonstrationSet& demos) {
  for (const auto& d : demos.pairs) out << json{{"x", d.x}, {"y", d.y}}.dump() << '\n';
}

DemonstrationSet read_demonstrations(std::istream& in) {
  DemonstrationSet out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError("demonstrations line " + std::to_string(lineno) + ": " + e.what());
    }
    out.pairs.push_back({tokens_from_json(j, "x"), tokens_from_json(j, "y")});
  }
  return out;
}

void write_prompts(std::ostream& out, const PromptSet& prompts) {
  for (const auto& x : prompts.prompts) out << json{{"x", x}}.dump() << '\n';
}

PromptSet read_prompts(std::istream& in) {
  PromptSet out;
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw InputError("prompts line " + std::to_string(lineno) + ": " + e.what());
    }
    out.prompts.push_back(tokens_from_json(j, "x"));
  }
  return out;
}

void validate(const DemonstrationSet& demos, const TokenWorld& world) {
  if (demos.pairs.empty()) throw InputError("demonstration set is empty");
  for (const auto& d : demos.pairs) {
    world.check_prompt(d.x);
    world.check_response(d.y);
  }
}

Overlap classify_overlap(const PromptSet& ppo_prompts, const DemonstrationSet& sft_demos) {
  const std::set<Tokens> ppo(ppo_prompts.prompts.begin(), ppo_prompts.prompts.end());
  std::size_t shared = 0;
  for (const auto& d : sft_demos.pairs) shared += ppo.count(d.x);
  if (shared == 0) return Overlap::minimum;
  return 4 * shared >= sft_demos.pairs.size() ? Overlap::medium : Overlap::diminished;
}

bool overlap_consistent(const PromptSet& ppo_prompts, const DemonstrationSet& sft_demos) {
  return !ppo_prompts.overlap_tag || *ppo_prompts.overlap_tag == classify_overlap(ppo_prompts, sft_demos);
}

}  // namespace srppo
