// SPDX-License-Identifier: Apache-2.0
#include "srppo/policy.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include "json.hpp"

#include "srppo/errors.hpp"

namespace srppo {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::array<char, 8> kPolicyMagic = {'S', 'R', 'P', 'P', 'O', 'P', 'L', '1'};
constexpr std::array<char, 8> kValueMagic = {'S', 'R', 'P', 'P', 'O', 'V', 'H', '1'};

// Shared context encoding of policies and value heads.
struct Encoding {
  Vocabulary vocab;
  Architecture arch;

  std::size_t alphabet() const { return static_cast<std::size_t>(vocab.alphabet()); }
  std::size_t ngram_rows() const { return int_pow(alphabet(), arch.order); }
  std::size_t tabular_rows() const { return ngram_rows() * static_cast<std::size_t>(arch.max_len); }
  std::size_t input_dim() const {
    return static_cast<std::size_t>(arch.order) * alphabet() + static_cast<std::size_t>(arch.max_len);
  }
  std::size_t hidden() const { return static_cast<std::size_t>(arch.hidden); }
  std::size_t trunk_params() const { return hidden() * input_dim() + hidden(); }

  void check(TokenSpan x, TokenSpan prefix) const {
    if (static_cast<int>(prefix.size()) >= arch.max_len) {
      throw InputError("state with " + std::to_string(prefix.size()) + " response tokens exceeds max_len " +
                       std::to_string(arch.max_len));
    }
    for (Token t : x) {
      if (!vocab.ordinary(t)) throw InputError("prompt token " + std::to_string(t) + " out of range");
    }
    for (Token t : prefix) {
      if (!vocab.ordinary(t)) throw InputError("prefix token " + std::to_string(t) + " out of range");
    }
  }

  std::size_t row(TokenSpan x, TokenSpan prefix) const {
    return prefix.size() * ngram_rows() + ngram_context(x, prefix, arch.order, vocab.alphabet());
  }

  // Indices of the (order + 1) inputs that are hot.
  void active_inputs(TokenSpan x, TokenSpan prefix, std::vector<std::size_t>& out) const {
    out.clear();
    const std::size_t a = alphabet();
    const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(x.size() + prefix.size());
    std::size_t slot = 0;
    for (std::ptrdiff_t i = total - arch.order; i < total; ++i, ++slot) {
      Token t = vocab.eos_id();
      if (i >= 0) {
        t = i < static_cast<std::ptrdiff_t>(x.size()) ? x[static_cast<std::size_t>(i)]
                                                       : prefix[static_cast<std::size_t>(i) - x.size()];
      }
      out.push_back(slot * a + static_cast<std::size_t>(t));
    }
    out.push_back(static_cast<std::size_t>(arch.order) * a + prefix.size());
  }

  // h = tanh(b1 + sum of active W1 columns); W1 is row-major [hidden][input].
  void hidden_layer(std::span<const double> params, const std::vector<std::size_t>& active,
                    std::span<double> h) const {
    const std::size_t d = input_dim();
    const double* w1 = params.data();
    const double* b1 = params.data() + hidden() * d;
    for (std::size_t k = 0; k < hidden(); ++k) {
      double z = b1[k];
      for (std::size_t i : active) z += w1[k * d + i];
      h[k] = std::tanh(z);
    }
  }

  void hidden_backward(const std::vector<std::size_t>& active, std::span<const double> h,
                       std::span<const double> dh, std::span<double> grad) const {
    const std::size_t d = input_dim();
    double* gw1 = grad.data();
    double* gb1 = grad.data() + hidden() * d;
    for (std::size_t k = 0; k < hidden(); ++k) {
      const double dz = dh[k] * (1.0 - h[k] * h[k]);
      gb1[k] += dz;
      for (std::size_t i : active) gw1[k * d + i] += dz;
    }
  }
};

void validate_arch(const Vocabulary& vocab, const Architecture& arch) {
  if (vocab.size < 1) throw ConfigError("policy vocabulary must contain at least one ordinary token");
  if (arch.order < 0 || arch.order > 8) throw ConfigError("policy.order must lie in [0, 8]");
  if (arch.max_len < 1) throw ConfigError("policy.max_len must be >= 1");
  if (arch.kind == ArchKind::mlp && arch.hidden < 1) throw ConfigError("policy.hidden must be >= 1");
}

template <class T>
void write_le(std::ostream& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.write(buf, sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
  char buf[sizeof(T)];
  if (!in.read(buf, sizeof(T))) throw InputError("truncated checkpoint");
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

nlohmann::ordered_json arch_header(const Vocabulary& vocab, const Architecture& arch) {
  nlohmann::ordered_json h;
  h["architecture"] = to_string(arch.kind);
  h["order"] = arch.order;
  h["hidden"] = arch.hidden;
  h["max_len"] = arch.max_len;
  h["vocab_size"] = vocab.size;
  return h;
}

void write_blob(std::ostream& out, const std::array<char, 8>& magic, const nlohmann::ordered_json& header,
                std::span<const double> params) {
  const std::string text = header.dump();
  out.write(magic.data(), magic.size());
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_le<std::uint64_t>(out, params.size());
  for (double p : params) write_le<double>(out, p);
  if (!out) throw InputError("failed to write checkpoint");
}

nlohmann::json read_blob(std::istream& in, const std::array<char, 8>& magic, std::vector<double>& params) {
  std::array<char, 8> got{};
  if (!in.read(got.data(), got.size()) || got != magic) throw InputError("not a checkpoint of the expected kind");
  const auto len = read_le<std::uint32_t>(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw InputError("truncated checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("bad checkpoint header: ") + e.what());
  }
  const auto n = read_le<std::uint64_t>(in);
  params.resize(n);
  for (auto& p : params) p = read_le<double>(in);
  return header;
}

std::pair<Vocabulary, Architecture> arch_from_header(const nlohmann::json& h) {
  try {
    Architecture arch;
    arch.kind = arch_kind_from_string(h.at("architecture").get<std::string>());
    arch.order = h.at("order").get<int>();
    arch.hidden = h.at("hidden").get<int>();
    arch.max_len = h.at("max_len").get<int>();
    return {Vocabulary{h.at("vocab_size").get<int>()}, arch};
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad checkpoint header: ") + e.what());
  }
}

}  // namespace

std::string to_string(ArchKind k) { return k == ArchKind::tabular ? "tabular" : "mlp"; }

std::string to_string(Role r) {
  switch (r) {
    case Role::pretrained:
      return "pretrained";
    case Role::sft:
      return "sft";
    case Role::actor:
      return "actor";
    case Role::reference:
      return "reference";
  }
  return "actor";
}

ArchKind arch_kind_from_string(const std::string& s) {
  if (s == "tabular") return ArchKind::tabular;
  if (s == "mlp") return ArchKind::mlp;
  throw ConfigError("architecture must be tabular or mlp, got \"" + s + "\"");
}

Role role_from_string(const std::string& s) {
  if (s == "pretrained") return Role::pretrained;
  if (s == "sft") return Role::sft;
  if (s == "actor") return Role::actor;
  if (s == "reference") return Role::reference;
  throw ConfigError("unknown role \"" + s + "\"");
}

void log_softmax(std::span<double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : logits) v -= lse;
}

Policy::Policy(Vocabulary vocab, Architecture arch) : vocab_(vocab), arch_(arch) {
  validate_arch(vocab, arch);
  const Encoding enc{vocab, arch};
  if (arch.kind == ArchKind::tabular) {
    params_.assign(enc.tabular_rows() * enc.alphabet(), 0.0);
  } else {
    params_.assign(enc.trunk_params() + enc.alphabet() * enc.hidden() + enc.alphabet(), 0.0);
  }
}

Policy Policy::tabular(Vocabulary vocab, int order, int max_len) {
  return Policy(vocab, Architecture{ArchKind::tabular, order, 0, max_len});
}

Policy Policy::mlp(Vocabulary vocab, int window, int hidden, int max_len, std::uint64_t seed, double init_scale) {
  Policy p(vocab, Architecture{ArchKind::mlp, window, hidden, max_len});
  const Encoding enc{vocab, p.arch_};
  Rng rng(seed);
  // Output layer starts at zero so a fresh MLP is uniform, like a fresh table.
  for (std::size_t i = 0; i < enc.hidden() * enc.input_dim(); ++i) p.params_[i] = init_scale * rng.normal();
  return p;
}

Policy Policy::create(Vocabulary vocab, const Architecture& arch, std::uint64_t seed) {
  if (arch.kind == ArchKind::tabular) return tabular(vocab, arch.order, arch.max_len);
  return mlp(vocab, arch.order, arch.hidden, arch.max_len, seed);
}

std::size_t Policy::num_contexts() const { return Encoding{vocab_, arch_}.tabular_rows(); }

void Policy::next_log_probs(TokenSpan x, TokenSpan prefix, std::span<double> out) const {
  const Encoding enc{vocab_, arch_};
  enc.check(x, prefix);
  const std::size_t a = enc.alphabet();
  if (arch_.kind == ArchKind::tabular) {
    const double* row = params_.data() + enc.row(x, prefix) * a;
    std::copy(row, row + a, out.begin());
  } else {
    std::vector<std::size_t> active;
    enc.active_inputs(x, prefix, active);
    std::vector<double> h(enc.hidden());
    enc.hidden_layer(params_, active, h);
    const double* w2 = params_.data() + enc.trunk_params();
    const double* b2 = w2 + a * enc.hidden();
    for (std::size_t t = 0; t < a; ++t) {
      double z = b2[t];
      for (std::size_t k = 0; k < enc.hidden(); ++k) z += w2[t * enc.hidden() + k] * h[k];
      out[t] = z;
    }
  }
  log_softmax(out.first(a));
}

void Policy::backward(TokenSpan x, TokenSpan prefix, std::span<const double> dlogits, std::span<double> grad) const {
  const Encoding enc{vocab_, arch_};
  enc.check(x, prefix);
  const std::size_t a = enc.alphabet();
  if (arch_.kind == ArchKind::tabular) {
    double* row = grad.data() + enc.row(x, prefix) * a;
    for (std::size_t t = 0; t < a; ++t) row[t] += dlogits[t];
    return;
  }
  std::vector<std::size_t> active;
  enc.active_inputs(x, prefix, active);
  std::vector<double> h(enc.hidden());
  enc.hidden_layer(params_, active, h);
  const double* w2 = params_.data() + enc.trunk_params();
  double* gw2 = grad.data() + enc.trunk_params();
  double* gb2 = gw2 + a * enc.hidden();
  std::vector<double> dh(enc.hidden(), 0.0);
  for (std::size_t t = 0; t < a; ++t) {
    gb2[t] += dlogits[t];
    for (std::size_t k = 0; k < enc.hidden(); ++k) {
      gw2[t * enc.hidden() + k] += dlogits[t] * h[k];
      dh[k] += dlogits[t] * w2[t * enc.hidden() + k];
    }
  }
  enc.hidden_backward(active, h, dh, grad);
}

void Policy::accumulate_log_prob_grad(TokenSpan x, TokenSpan prefix, Token action, double weight,
                                      std::span<double> grad) const {
  const std::size_t a = static_cast<std::size_t>(vocab_.alphabet());
  std::vector<double> d(a);
  next_log_probs(x, prefix, d);
  // d log softmax_a / d logits = onehot(a) - softmax
  for (std::size_t t = 0; t < a; ++t) d[t] = -weight * std::exp(d[t]);
  d[static_cast<std::size_t>(action)] += weight;
  backward(x, prefix, d, grad);
}

std::vector<double> Policy::token_log_probs(TokenSpan x, TokenSpan y) const {
  if (y.empty()) throw InputError("empty response");
  std::vector<double> out(y.size());
  std::vector<double> lp(static_cast<std::size_t>(vocab_.alphabet()));
  for (std::size_t j = 0; j < y.size(); ++j) {
    if (!vocab_.valid(y[j])) throw InputError("response token " + std::to_string(y[j]) + " out of range");
    next_log_probs(x, y.first(j), lp);
    out[j] = lp[static_cast<std::size_t>(y[j])];
  }
  return out;
}

double Policy::log_prob(TokenSpan x, TokenSpan y) const {
  double s = 0.0;
  for (double v : token_log_probs(x, y)) s += v;
  return s;
}

GradientRecord Policy::grad_log_prob(TokenSpan x, TokenSpan y) const {
  GradientRecord rec;
  rec.value = log_prob(x, y);
  rec.gradient.assign(params_.size(), 0.0);
  for (std::size_t j = 0; j < y.size(); ++j) accumulate_log_prob_grad(x, y.first(j), y[j], 1.0, rec.gradient);
  return rec;
}

SampledResponse Policy::sample(TokenSpan x, int max_len, Rng& rng, double temperature) const {
  if (!(temperature > 0.0)) throw ConfigError("sampling temperature must be > 0");
  if (max_len < 1 || max_len > arch_.max_len) throw ConfigError("sampling max_len outside the policy's range");
  const std::size_t a = static_cast<std::size_t>(vocab_.alphabet());
  SampledResponse out;
  std::vector<double> lp(a);
  std::vector<double> probs(a);
  while (static_cast<int>(out.tokens.size()) < max_len) {
    next_log_probs(x, out.tokens, lp);
    if (temperature == 1.0) {
      for (std::size_t t = 0; t < a; ++t) probs[t] = std::exp(lp[t]);
    } else {
      for (std::size_t t = 0; t < a; ++t) probs[t] = lp[t] / temperature;
      log_softmax(probs);
      for (double& p : probs) p = std::exp(p);
    }
    const Token t = rng.categorical(probs);
    out.tokens.push_back(t);
    out.log_probs.push_back(lp[static_cast<std::size_t>(t)]);
    if (t == vocab_.eos_id()) {
      out.eos = true;
      break;
    }
  }
  return out;
}

FrozenPolicy clone_frozen(const Policy& policy) { return std::make_shared<const Policy>(policy); }

FrozenPolicy clone_frozen(const Policy& policy, Role role) {
  Policy copy = policy;
  copy.set_role(role);
  return std::make_shared<const Policy>(std::move(copy));
}

ValueHead ValueHead::from_policy(const Policy& trunk) {
  ValueHead head(trunk.vocab(), trunk.arch());
  const Encoding enc{head.vocab_, head.arch_};
  if (head.arch_.kind == ArchKind::tabular) {
    head.params_.assign(enc.tabular_rows(), 0.0);
  } else {
    const auto src = trunk.params();
    head.params_.assign(src.begin(), src.begin() + static_cast<std::ptrdiff_t>(enc.trunk_params()));
    head.params_.resize(enc.trunk_params() + enc.hidden() + 1, 0.0);
  }
  return head;
}

bool ValueHead::absorbing(TokenSpan prefix) const {
  return (!prefix.empty() && prefix.back() == vocab_.eos_id()) || static_cast<int>(prefix.size()) >= arch_.max_len;
}

double ValueHead::value(TokenSpan x, TokenSpan prefix) const {
  if (absorbing(prefix)) return 0.0;
  const Encoding enc{vocab_, arch_};
  enc.check(x, prefix);
  if (arch_.kind == ArchKind::tabular) return params_[enc.row(x, prefix)];
  std::vector<std::size_t> active;
  enc.active_inputs(x, prefix, active);
  std::vector<double> h(enc.hidden());
  enc.hidden_layer(params_, active, h);
  const double* wv = params_.data() + enc.trunk_params();
  double v = wv[enc.hidden()];
  for (std::size_t k = 0; k < enc.hidden(); ++k) v += wv[k] * h[k];
  return v;
}

void ValueHead::backward(TokenSpan x, TokenSpan prefix, double dvalue, std::span<double> grad) const {
  if (absorbing(prefix)) return;
  const Encoding enc{vocab_, arch_};
  enc.check(x, prefix);
  if (arch_.kind == ArchKind::tabular) {
    grad[enc.row(x, prefix)] += dvalue;
    return;
  }
  std::vector<std::size_t> active;
  enc.active_inputs(x, prefix, active);
  std::vector<double> h(enc.hidden());
  enc.hidden_layer(params_, active, h);
  const double* wv = params_.data() + enc.trunk_params();
  double* gwv = grad.data() + enc.trunk_params();
  std::vector<double> dh(enc.hidden());
  for (std::size_t k = 0; k < enc.hidden(); ++k) {
    gwv[k] += dvalue * h[k];
    dh[k] = dvalue * wv[k];
  }
  gwv[enc.hidden()] += dvalue;
  enc.hidden_backward(active, h, dh, grad);
}

void write_checkpoint(std::ostream& out, const Policy& policy) {
  auto h = arch_header(policy.vocab(), policy.arch());
  h["role"] = to_string(policy.role());
  h["lineage"] = policy.lineage();
  write_blob(out, kPolicyMagic, h, policy.params());
}

Policy read_checkpoint(std::istream& in) {
  std::vector<double> params;
  const auto header = read_blob(in, kPolicyMagic, params);
  const auto [vocab, arch] = arch_from_header(header);
  Policy p(vocab, arch);
  if (params.size() != p.params_.size()) throw InputError("checkpoint parameter count does not match architecture");
  p.params_ = std::move(params);
  p.role_ = role_from_string(header.value("role", std::string("actor")));
  p.lineage_ = header.value("lineage", std::string());
  return p;
}

void write_checkpoint(std::ostream& out, const ValueHead& head) {
  auto h = arch_header(head.vocab(), head.arch());
  h["role"] = "critic";
  write_blob(out, kValueMagic, h, head.params());
}

ValueHead read_value_checkpoint(std::istream& in) {
  std::vector<double> params;
  const auto header = read_blob(in, kValueMagic, params);
  const auto [vocab, arch] = arch_from_header(header);
  validate_arch(vocab, arch);
  ValueHead head(vocab, arch);
  const Encoding enc{vocab, arch};
  const std::size_t expected =
      arch.kind == ArchKind::tabular ? enc.tabular_rows() : enc.trunk_params() + enc.hidden() + 1;
  if (params.size() != expected) throw InputError("value checkpoint parameter count does not match architecture");
  head.params_ = std::move(params);
  return head;
}

void save_checkpoint(const std::string& path, const Policy& policy) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path + " for writing");
  write_checkpoint(out, policy);
}

Policy load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace srppo
