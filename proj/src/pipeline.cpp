// SPDX-License-Identifier: Apache-2.0
#include "srppo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <fstream>
#include <set>

#include "srppo/errors.hpp"
#include "srppo/experiments.hpp"

namespace srppo {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Strict object reader: every key must be consumed, every value must have
// the expected type.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where("") + "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  void get(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) throw ConfigError(where(key) + "expected an integer");
      const auto x = v->get<long long>();
      if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
        throw ConfigError(where(key) + "out of range");
      out = static_cast<int>(x);
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (v->is_number_unsigned()) {
        out = v->get<std::uint64_t>();
      } else if (v->is_number_integer()) {
        throw ConfigError(where(key) + "must be non-negative");
      } else {
        throw ConfigError(where(key) + "expected a non-negative integer");
      }
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) throw ConfigError(where(key) + "expected a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(where(key) + "expected true or false");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) throw ConfigError(where(key) + "expected a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::optional<double>& out) {
    if (const json* v = take(key)) {
      if (v->is_null()) {
        out.reset();
      } else if (v->is_number()) {
        out = v->get<double>();
      } else {
        throw ConfigError(where(key) + "expected a number or null");
      }
    }
  }
  void get(const char* key, std::vector<std::string>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw ConfigError(where(key) + "expected an array of strings");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_string()) throw ConfigError(where(key) + "expected an array of strings");
        out.push_back(e.get<std::string>());
      }
    }
  }
  template <class E, class Parse>
  void get_enum(const char* key, E& out, Parse parse) {
    std::string s;
    if (!has(key)) return;
    get(key, s);
    try {
      out = parse(s);
    } catch (const std::exception& e) {
      throw ConfigError(where(key) + e.what());
    }
  }
  // Nested object, or nullptr when absent.
  const json* object(const char* key) {
    const json* v = take(key);
    if (v && !v->is_object()) throw ConfigError(where(key) + "expected an object");
    return v;
  }
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(where(k) + "unknown field");
    }
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  std::string where(const std::string& key) const {
    const std::string p = key.empty() ? path_ : child(key.c_str());
    return (p.empty() ? std::string("config") : p) + ": ";
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ordered_json optional_json(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

void read_sft_optimizer(Fields& f, SftConfig& c) {
  f.get("learning_rate", c.learning_rate);
  f.get("batch_size", c.batch_size);
  f.get("epochs", c.epochs);
  f.get("eval_every", c.eval_every);
  f.get("grad_clip", c.grad_clip);
}

ordered_json sft_optimizer_json(const SftConfig& c) {
  ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["eval_every"] = c.eval_every;
  j["grad_clip"] = c.grad_clip;
  return j;
}

bool selected(const ExperimentConfig& c, const std::string& stage) {
  return std::find(c.stages.begin(), c.stages.end(), stage) != c.stages.end();
}

PromptSet prompts_of(const std::vector<Tokens>& v, std::optional<Overlap> tag = std::nullopt) {
  return PromptSet{v, tag};
}

std::vector<Tokens> distinct_prompts(const DemonstrationSet& d) {
  std::vector<Tokens> out;
  std::set<Tokens> seen;
  for (const auto& p : d.pairs) {
    if (seen.insert(p.x).second) out.push_back(p.x);
  }
  return out;
}

void append(DemonstrationSet& to, const DemonstrationSet& from) {
  to.pairs.insert(to.pairs.end(), from.pairs.begin(), from.pairs.end());
}

std::ifstream open_input(const std::string& path, const std::string& field) {
  std::ifstream in(path);
  if (!in) throw ConfigError(field + ": cannot open '" + path + "'");
  return in;
}

void build_data(const ExperimentConfig& c, PipelineState& s) {
  s.world = TokenWorld::build(c.world, c.world_seed);
  const TokenWorld& world = *s.world;
  const auto& all = world.prompts();
  const DataConfig& d = c.data;

  auto perm = Rng(derive_seed(c.seed, Stream::prompts)).permutation(all.size());
  std::vector<Tokens> pool_a, pool_b;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (static_cast<int>(i) < d.sft_prompts) {
      pool_a.push_back(all[perm[i]]);
    } else if (static_cast<int>(i) < d.sft_prompts + d.ppo_prompts) {
      pool_b.push_back(all[perm[i]]);
    }
  }

  if (!d.demos_file.empty()) {
    auto in = open_input(d.demos_file, "data.demos_file");
    s.phase1_demos = read_demonstrations(in);
    validate(s.phase1_demos, world);
    s.phase1_demos.provenance = "file:" + d.demos_file;
    pool_a = distinct_prompts(s.phase1_demos);
  } else {
    s.phase1_demos = sample_demonstrations(world, prompts_of(pool_a), static_cast<std::size_t>(d.sft_demos),
                                           derive_seed(c.seed, Stream::demos));
  }
  if (!d.ppo_prompts_file.empty()) {
    auto in = open_input(d.ppo_prompts_file, "data.ppo_prompts_file");
    auto loaded = read_prompts(in);
    for (const auto& x : loaded.prompts) world.check_prompt(x);
    pool_b = loaded.prompts;
  }

  // Held-out prompts: reserved from the demonstrations when there are enough
  // of them, otherwise the prompts SFT never sees.
  bool reserved = false;
  if (static_cast<int>(s.phase1_demos.pairs.size()) > d.heldout_threshold) {
    const auto distinct = distinct_prompts(s.phase1_demos);
    const auto k = static_cast<std::size_t>(std::ceil(d.heldout_fraction * static_cast<double>(distinct.size())));
    if (k >= 1 && k < distinct.size()) {
      const std::set<Tokens> held(distinct.end() - static_cast<std::ptrdiff_t>(k), distinct.end());
      DemonstrationSet kept{{}, s.phase1_demos.provenance};
      s.heldout_demos.provenance = "reserved";
      for (const auto& p : s.phase1_demos.pairs) (held.count(p.x) ? s.heldout_demos : kept).pairs.push_back(p);
      s.phase1_demos = std::move(kept);
      s.heldout_prompts = prompts_of({held.begin(), held.end()});
      reserved = true;
    }
  }

  if (d.overlap != Overlap::minimum) {
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(d.overlap_prompts), pool_b.size());
    const std::vector<Tokens> shared(pool_b.begin(), pool_b.begin() + static_cast<std::ptrdiff_t>(n));
    s.phase2_demos = sample_demonstrations(world, prompts_of(shared), static_cast<std::size_t>(d.overlap_demos),
                                           derive_seed(c.seed, Stream::extra_demos, 1));
    if (d.overlap == Overlap::diminished) {
      const auto a_train = distinct_prompts(s.phase1_demos);
      append(s.phase2_demos, sample_demonstrations(world, prompts_of(a_train),
                                                   static_cast<std::size_t>(d.diminished_demos),
                                                   derive_seed(c.seed, Stream::extra_demos, 2)));
    }
    s.phase2_demos.provenance = "expert:" + to_string(d.overlap);
  }

  s.sft_demos = s.phase1_demos;
  append(s.sft_demos, s.phase2_demos);
  s.sft_prompts = prompts_of(distinct_prompts(s.phase1_demos));
  s.ppo_prompts = prompts_of(pool_b, d.overlap);

  const auto seen = distinct_prompts(s.sft_demos);
  const std::set<Tokens> seen_set(seen.begin(), seen.end());
  s.seen_prompts = prompts_of(seen);
  for (const auto& x : all) {
    if (!seen_set.count(x)) s.unseen_prompts.prompts.push_back(x);
  }

  if (!reserved) {
    s.heldout_prompts = s.unseen_prompts.prompts.empty() ? s.seen_prompts : s.unseen_prompts;
    s.heldout_demos = sample_demonstrations(world, s.heldout_prompts,
                                            static_cast<std::size_t>(c.eval.heldout_demos),
                                            derive_seed(c.seed, Stream::heldout));
    s.heldout_demos.provenance = "expert:heldout";
  }

  if (s.ppo_prompts.prompts.empty() && (selected(c, "ppo") || selected(c, "baseline") || selected(c, "length_study")))
    throw ConfigError("data.ppo_prompts: PPO prompt set is empty");
  if (!s.ppo_prompts.prompts.empty()) {
    const Overlap implied = classify_overlap(s.ppo_prompts, s.sft_demos);
    if (implied != d.overlap) {
      throw ConfigError("data.overlap: tag '" + to_string(d.overlap) + "' disagrees with the data, which implies '" +
                        to_string(implied) + "'");
    }
  }
}

HeldoutEvaluator heldout_kl(const PipelineState& s) {
  const TokenWorld* world = &*s.world;
  const PromptSet prompts = s.heldout_prompts;
  if (prompts.prompts.empty()) return {};
  return [world, prompts](const Policy& p) { return exact_kl_to_expert(p, *world, prompts).value; };
}

}  // namespace

const std::vector<std::string>& known_stages() {
  static const std::vector<std::string> stages = {"pretrain", "sft",          "sft_extended", "ppo",
                                                  "baseline", "length_study", "eval"};
  return stages;
}

std::vector<std::string> stage_dependencies(const std::string& stage) {
  if (stage == "pretrain") return {};
  if (stage == "sft") return {"pretrain"};
  if (stage == "eval") return {"pretrain"};
  if (stage == "sft_extended" || stage == "ppo" || stage == "baseline" || stage == "length_study") return {"sft"};
  throw ConfigError("stages: unknown stage '" + stage + "'");
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["seed"] = c.seed;
  j["world_seed"] = c.world_seed;
  j["output_dir"] = c.output_dir;

  const WorldSpec& w = c.world;
  ordered_json wj;
  wj["vocab_size"] = w.vocab_size;
  wj["prompt_length"] = w.prompt_length;
  wj["max_response_length"] = w.max_response_length;
  wj["markov_order"] = w.markov_order;
  wj["num_prompts"] = w.num_prompts;
  wj["expert_sharpness"] = w.expert_sharpness;
  wj["expert_eos_logit"] = w.expert_eos_logit;
  wj["deterministic_expert"] = w.deterministic_expert;
  wj["pretrain_mix"] = w.pretrain_mix;
  wj["perturb_sharpness"] = w.perturb_sharpness;
  wj["perturb_smoothing"] = w.perturb_smoothing;
  wj["perturb_eos_logit"] = w.perturb_eos_logit;
  wj["identity"] = w.identity;
  wj["enumeration_cap"] = w.enumeration_cap;
  j["world"] = wj;

  ordered_json pj;
  pj["architecture"] = to_string(c.policy.kind);
  pj["order"] = c.policy.order;
  pj["hidden"] = c.policy.hidden;
  j["policy"] = pj;

  const DataConfig& d = c.data;
  ordered_json dj;
  dj["overlap"] = to_string(d.overlap);
  dj["sft_prompts"] = d.sft_prompts;
  dj["ppo_prompts"] = d.ppo_prompts;
  dj["sft_demos"] = d.sft_demos;
  dj["overlap_prompts"] = d.overlap_prompts;
  dj["overlap_demos"] = d.overlap_demos;
  dj["diminished_demos"] = d.diminished_demos;
  dj["heldout_fraction"] = d.heldout_fraction;
  dj["heldout_threshold"] = d.heldout_threshold;
  dj["demos_file"] = d.demos_file;
  dj["ppo_prompts_file"] = d.ppo_prompts_file;
  j["data"] = dj;

  j["stages"] = c.stages;

  ordered_json prj = sft_optimizer_json(c.pretrain.optimizer);
  prj["samples"] = c.pretrain.samples;
  j["pretrain"] = prj;
  j["sft"] = sft_optimizer_json(c.sft);
  j["sft_extended"] = ordered_json{{"extra_epochs", c.sft_extended_epochs}};
  j["reward"] = ordered_json{{"granularity", to_string(c.granularity)}, {"clip", optional_json(c.reward_clip)}};

  const PpoConfig& p = c.ppo;
  ordered_json ppj;
  ppj["clip_epsilon"] = p.clip_epsilon;
  ppj["gamma"] = p.gamma;
  ppj["gae_lambda"] = p.gae_lambda;
  ppj["kl_coefficient"] = p.kl_coefficient;
  ppj["kl_reference"] = to_string(p.kl_reference);
  ppj["rollout_buffer_size"] = p.rollout_buffer_size;
  ppj["train_batch_size"] = p.train_batch_size;
  ppj["actor_lr"] = p.actor_lr;
  ppj["critic_lr"] = p.critic_lr;
  ppj["critic_warmup_buffers"] = p.critic_warmup_buffers;
  ppj["inner_epochs"] = p.inner_epochs;
  ppj["episodes"] = p.episodes;
  ppj["iterations"] = p.iterations;
  ppj["advantage_normalization"] = p.advantage_normalization;
  ppj["max_grad_norm"] = p.max_grad_norm;
  j["ppo"] = ppj;

  ordered_json ej;
  ej["samples"] = c.eval.samples;
  ej["heldout_demos"] = c.eval.heldout_demos;
  ej["top_p"] = c.eval.top_p;
  ej["track_ppo_kl"] = c.eval.track_ppo_kl;
  j["eval"] = ej;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Fields f(j, "");
  f.get("seed", c.seed);
  f.get("world_seed", c.world_seed);
  f.get("output_dir", c.output_dir);

  if (const json* wj = f.object("world")) {
    Fields w(*wj, "world");
    WorldSpec& s = c.world;
    w.get("vocab_size", s.vocab_size);
    w.get("prompt_length", s.prompt_length);
    w.get("max_response_length", s.max_response_length);
    w.get("markov_order", s.markov_order);
    w.get("num_prompts", s.num_prompts);
    w.get("expert_sharpness", s.expert_sharpness);
    w.get("expert_eos_logit", s.expert_eos_logit);
    w.get("deterministic_expert", s.deterministic_expert);
    w.get("pretrain_mix", s.pretrain_mix);
    w.get("perturb_sharpness", s.perturb_sharpness);
    w.get("perturb_smoothing", s.perturb_smoothing);
    w.get("perturb_eos_logit", s.perturb_eos_logit);
    w.get("identity", s.identity);
    w.get("enumeration_cap", s.enumeration_cap);
    w.finish();
  }
  if (const json* pj = f.object("policy")) {
    Fields p(*pj, "policy");
    p.get_enum("architecture", c.policy.kind, arch_kind_from_string);
    p.get("order", c.policy.order);
    p.get("hidden", c.policy.hidden);
    p.finish();
  }
  if (const json* dj = f.object("data")) {
    Fields d(*dj, "data");
    DataConfig& s = c.data;
    d.get_enum("overlap", s.overlap, overlap_from_string);
    d.get("sft_prompts", s.sft_prompts);
    d.get("ppo_prompts", s.ppo_prompts);
    d.get("sft_demos", s.sft_demos);
    d.get("overlap_prompts", s.overlap_prompts);
    d.get("overlap_demos", s.overlap_demos);
    d.get("diminished_demos", s.diminished_demos);
    d.get("heldout_fraction", s.heldout_fraction);
    d.get("heldout_threshold", s.heldout_threshold);
    d.get("demos_file", s.demos_file);
    d.get("ppo_prompts_file", s.ppo_prompts_file);
    d.finish();
  }
  f.get("stages", c.stages);
  if (const json* pj = f.object("pretrain")) {
    Fields p(*pj, "pretrain");
    read_sft_optimizer(p, c.pretrain.optimizer);
    p.get("samples", c.pretrain.samples);
    p.finish();
  }
  if (const json* sj = f.object("sft")) {
    Fields s(*sj, "sft");
    read_sft_optimizer(s, c.sft);
    s.finish();
  }
  if (const json* ej = f.object("sft_extended")) {
    Fields e(*ej, "sft_extended");
    e.get("extra_epochs", c.sft_extended_epochs);
    e.finish();
  }
  if (const json* rj = f.object("reward")) {
    Fields r(*rj, "reward");
    r.get_enum("granularity", c.granularity, granularity_from_string);
    r.get("clip", c.reward_clip);
    r.finish();
  }
  if (const json* pj = f.object("ppo")) {
    Fields p(*pj, "ppo");
    PpoConfig& s = c.ppo;
    p.get("clip_epsilon", s.clip_epsilon);
    p.get("gamma", s.gamma);
    p.get("gae_lambda", s.gae_lambda);
    p.get("kl_coefficient", s.kl_coefficient);
    p.get_enum("kl_reference", s.kl_reference, kl_reference_from_string);
    p.get("rollout_buffer_size", s.rollout_buffer_size);
    p.get("train_batch_size", s.train_batch_size);
    p.get("actor_lr", s.actor_lr);
    p.get("critic_lr", s.critic_lr);
    p.get("critic_warmup_buffers", s.critic_warmup_buffers);
    p.get("inner_epochs", s.inner_epochs);
    p.get("episodes", s.episodes);
    p.get("iterations", s.iterations);
    p.get("advantage_normalization", s.advantage_normalization);
    p.get("max_grad_norm", s.max_grad_norm);
    p.finish();
  }
  if (const json* ej = f.object("eval")) {
    Fields e(*ej, "eval");
    e.get("samples", c.eval.samples);
    e.get("heldout_demos", c.eval.heldout_demos);
    e.get("top_p", c.eval.top_p);
    e.get("track_ppo_kl", c.eval.track_ppo_kl);
    e.finish();
  }
  f.finish();
  c.policy.max_len = c.world.max_response_length;
  return c;
}

void validate(const ExperimentConfig& c) {
  validate(c.world);
  if (c.policy.order < 1) throw ConfigError("policy.order: must be >= 1");
  if (c.policy.kind == ArchKind::mlp && c.policy.hidden < 1) throw ConfigError("policy.hidden: must be >= 1");
  if (c.policy.max_len != c.world.max_response_length)
    throw ConfigError("policy.max_len: must equal world.max_response_length");

  const DataConfig& d = c.data;
  if (d.sft_prompts < 0 || d.ppo_prompts < 0) throw ConfigError("data: prompt counts must be >= 0");
  if (d.sft_prompts + d.ppo_prompts > c.world.num_prompts)
    throw ConfigError("data.sft_prompts: sft_prompts + ppo_prompts exceeds world.num_prompts");
  if (d.demos_file.empty() && (d.sft_prompts < 1 || d.sft_demos < 1))
    throw ConfigError("data.sft_demos: SFT needs at least one prompt and one demonstration");
  if (d.overlap != Overlap::minimum && (d.overlap_prompts < 1 || d.overlap_demos < 1))
    throw ConfigError("data.overlap_demos: medium and diminished overlap need shared demonstrations");
  if (d.overlap == Overlap::diminished && d.diminished_demos < 1)
    throw ConfigError("data.diminished_demos: must be >= 1 for diminished overlap");
  if (!(d.heldout_fraction > 0.0 && d.heldout_fraction < 1.0))
    throw ConfigError("data.heldout_fraction: must be in (0, 1)");
  if (!d.demos_file.empty() && !std::filesystem::exists(d.demos_file))
    throw ConfigError("data.demos_file: '" + d.demos_file + "' does not exist");
  if (!d.ppo_prompts_file.empty() && !std::filesystem::exists(d.ppo_prompts_file))
    throw ConfigError("data.ppo_prompts_file: '" + d.ppo_prompts_file + "' does not exist");

  std::set<std::string> chosen;
  for (const auto& s : c.stages) {
    stage_dependencies(s);
    if (!chosen.insert(s).second) throw ConfigError("stages: '" + s + "' listed twice");
  }
  for (const auto& s : c.stages) {
    for (const auto& dep : stage_dependencies(s)) {
      if (!chosen.count(dep)) throw ConfigError("stages: " + s + " requires " + dep);
    }
  }

  validate(c.pretrain.optimizer);
  if (c.pretrain.samples < 1) throw ConfigError("pretrain.samples: must be >= 1");
  validate(c.sft);
  if (c.sft_extended_epochs < 0) throw ConfigError("sft_extended.extra_epochs: must be >= 0");
  if (c.reward_clip && !(*c.reward_clip > 0.0)) throw ConfigError("reward.clip: must be > 0 or null");
  validate(c.ppo);
  if (c.eval.samples < 0) throw ConfigError("eval.samples: must be >= 0");
  if (c.eval.heldout_demos < 1) throw ConfigError("eval.heldout_demos: must be >= 1");
  if (!(c.eval.top_p > 0.0 && c.eval.top_p <= 1.0)) throw ConfigError("eval.top_p: must be in (0, 1]");
}

PretrainConfig resolved_pretrain(const ExperimentConfig& c) {
  PretrainConfig p = c.pretrain;
  p.data_seed = derive_seed(c.seed, Stream::pretrain_data);
  p.optimizer.shuffle_seed = derive_seed(c.seed, Stream::pretrain_shuffle);
  return p;
}

SftConfig resolved_sft(const ExperimentConfig& c, std::uint64_t phase) {
  SftConfig s = c.sft;
  s.shuffle_seed = phase == 0 ? derive_seed(c.seed, Stream::sft_extended_shuffle)
                              : derive_seed(c.seed, Stream::sft_shuffle, phase);
  return s;
}

PpoConfig resolved_ppo(const ExperimentConfig& c) {
  PpoConfig p = c.ppo;
  p.seed = derive_seed(c.seed, Stream::ppo_rollout);
  return p;
}

PipelineState run_pipeline(const ExperimentConfig& config, const StageHook& on_complete) {
  ExperimentConfig c = config;
  c.policy.max_len = c.world.max_response_length;
  validate(c);

  PipelineState s;
  auto done = [&](const std::string& stage) {
    if (on_complete) on_complete(stage, s);
  };

  build_data(c, s);
  done("data");
  const TokenWorld& world = *s.world;

  if (selected(c, "pretrain")) {
    Policy fresh = Policy::create(world.vocab(), c.policy, derive_seed(c.seed, Stream::policy_init));
    auto r = pretrain(std::move(fresh), world, resolved_pretrain(c));
    s.pretrained = r.policy;
    s.pretrain_log = std::move(r.log);
    done("pretrain");
  }

  if (selected(c, "sft")) {
    const auto eval = heldout_kl(s);
    auto r = sft(*s.pretrained, s.phase1_demos, resolved_sft(c, 1), eval);
    s.sft_log = std::move(r.log);
    FrozenPolicy current = r.policy;
    if (!s.phase2_demos.pairs.empty()) {
      auto r2 = sft(*current, s.phase2_demos, resolved_sft(c, 2), eval);
      const long step0 = s.sft_log.empty() ? 0 : s.sft_log.back().step;
      const int epoch0 = s.sft_log.empty() ? 0 : s.sft_log.back().epoch;
      for (auto rec : r2.log) {
        if (rec.step == 0) continue;
        rec.step += step0;
        rec.epoch += epoch0;
        s.sft_log.push_back(rec);
      }
      Policy p = *r2.policy;
      p.set_lineage(current->lineage() + "+" + to_string(c.data.overlap));
      current = clone_frozen(p);
    }
    s.sft = current;
    done("sft");
  }

  if (selected(c, "sft_extended")) {
    auto r = sft_extended(*s.sft, s.sft_demos, c.sft_extended_epochs, resolved_sft(c, 0), heldout_kl(s));
    s.sft_extended = r.policy;
    s.sft_extended_log = std::move(r.log);
    done("sft_extended");
  }

  const PpoConfig ppo_cfg = resolved_ppo(c);
  auto reference_for = [&]() {
    return c.ppo.kl_reference == KlReference::sft ? clone_frozen(*s.sft, Role::reference)
                                                  : clone_frozen(*s.pretrained, Role::reference);
  };
  PpoObserver tracker;
  if (c.eval.track_ppo_kl) {
    const TokenWorld* wp = &world;
    const PromptSet seen = s.seen_prompts;
    const PromptSet unseen = s.unseen_prompts;
    tracker = [wp, seen, unseen](const Policy& actor, PpoMetrics& m) {
      try {
        if (!unseen.prompts.empty()) m.extra["kl_unseen"] = exact_kl_to_expert(actor, *wp, unseen).value;
        if (!seen.prompts.empty()) m.extra["kl_seen"] = exact_kl_to_expert(actor, *wp, seen).value;
      } catch (const OracleUnavailable&) {
      }
    };
  }

  if (selected(c, "ppo")) {
    CoherentRewardFunction reward(RewardSpec{s.sft, s.pretrained, c.granularity, c.reward_clip});
    auto r = run_ppo(*s.sft, reward, s.ppo_prompts, ppo_cfg, reference_for(), tracker);
    s.srppo = clone_frozen(r.actor, Role::actor);
    s.critic = std::move(r.critic);
    s.ppo_log = std::move(r.log);
    done("ppo");
  }

  if (selected(c, "baseline")) {
    auto r = oracle_reward_baseline(*s.sft, world, s.ppo_prompts, ppo_cfg, reference_for(), tracker);
    s.baseline = clone_frozen(r.actor, Role::actor);
    s.baseline_log = std::move(r.log);
    done("baseline");
  }

  if (selected(c, "length_study")) {
    auto r = length_degeneration_study(*s.pretrained, *s.sft, s.ppo_prompts, ppo_cfg, reference_for());
    s.length_token_wise_log = std::move(r.token_wise);
    s.length_sequence_log = std::move(r.sequence_at_eos);
    done("length_study");
  }

  if (selected(c, "eval")) {
    const std::uint64_t es = derive_seed(c.seed, Stream::eval);
    auto add = [&](const std::string& name, const FrozenPolicy& p) {
      if (p)
        s.reports.push_back(evaluate_policy(name, *p, world, s.seen_prompts, s.unseen_prompts, &s.heldout_demos,
                                            c.eval, es));
    };
    add("pretrained", s.pretrained);
    add("sft", s.sft);
    add("sft_extended", s.sft_extended);
    add("srppo", s.srppo);
    add("ppo_expert_reward", s.baseline);
    done("eval");
  }
  return s;
}

}  // namespace srppo
