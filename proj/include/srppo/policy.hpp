// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "srppo/rng.hpp"
#include "srppo/vocab.hpp"

namespace srppo {

enum class ArchKind { tabular, mlp };
enum class Role { pretrained, sft, actor, reference };

std::string to_string(ArchKind k);
std::string to_string(Role r);
ArchKind arch_kind_from_string(const std::string& s);
Role role_from_string(const std::string& s);

// Tabular: one logit row per (position, last `order` tokens).
// MLP: one-hot of the last `order` tokens and of the position, one tanh
// layer of width `hidden`, linear logits.
struct Architecture {
  ArchKind kind = ArchKind::tabular;
  int order = 1;
  int hidden = 16;
  int max_len = 4;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

struct GradientRecord {
  double value = 0.0;
  std::vector<double> gradient;
};

struct SampledResponse {
  Tokens tokens;
  std::vector<double> log_probs;  // log p(y_j | x, y_<j) at temperature 1
  bool eos = false;
};

class Policy {
 public:
  static Policy tabular(Vocabulary vocab, int order, int max_len);
  static Policy mlp(Vocabulary vocab, int window, int hidden, int max_len, std::uint64_t seed,
                    double init_scale = 0.3);
  static Policy create(Vocabulary vocab, const Architecture& arch, std::uint64_t seed);

  const Architecture& arch() const { return arch_; }
  Vocabulary vocab() const { return vocab_; }
  Role role() const { return role_; }
  void set_role(Role r) { role_ = r; }
  const std::string& lineage() const { return lineage_; }
  void set_lineage(std::string l) { lineage_ = std::move(l); }

  std::size_t num_params() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  // Natural-log next-token distribution at the state (x, prefix).
  void next_log_probs(TokenSpan x, TokenSpan prefix, std::span<double> out) const;

  // grad += d(loss)/d(params), given d(loss)/d(logits) at (x, prefix).
  void backward(TokenSpan x, TokenSpan prefix, std::span<const double> dlogits,
                std::span<double> grad) const;

  // grad += weight * d log p(action | x, prefix) / d(params).
  void accumulate_log_prob_grad(TokenSpan x, TokenSpan prefix, Token action, double weight,
                                std::span<double> grad) const;

  double log_prob(TokenSpan x, TokenSpan y) const;
  std::vector<double> token_log_probs(TokenSpan x, TokenSpan y) const;
  GradientRecord grad_log_prob(TokenSpan x, TokenSpan y) const;

  SampledResponse sample(TokenSpan x, int max_len, Rng& rng, double temperature = 1.0) const;

  std::size_t num_contexts() const;  // tabular only

  friend bool operator==(const Policy&, const Policy&) = default;

 private:
  Policy(Vocabulary vocab, Architecture arch);

  friend Policy read_checkpoint(std::istream& in);

  Vocabulary vocab_;
  Architecture arch_;
  Role role_ = Role::actor;
  std::string lineage_;
  std::vector<double> params_;
};

using FrozenPolicy = std::shared_ptr<const Policy>;

// Deep, immutable copy; later updates to `policy` never reach it.
FrozenPolicy clone_frozen(const Policy& policy);
FrozenPolicy clone_frozen(const Policy& policy, Role role);

// Scalar state-value function sharing the policy's context encoding.
// States that already contain EOS, or that reached the length cap, are
// absorbing and evaluate to 0.
class ValueHead {
 public:
  // Tabular: one zero value per policy row. MLP: copies the trunk of `trunk`
  // and attaches a zero-initialized scalar output.
  static ValueHead from_policy(const Policy& trunk);

  const Architecture& arch() const { return arch_; }
  Vocabulary vocab() const { return vocab_; }
  bool absorbing(TokenSpan prefix) const;

  double value(TokenSpan x, TokenSpan prefix) const;
  // grad += dvalue * dV(x, prefix)/d(params); no-op on absorbing states.
  void backward(TokenSpan x, TokenSpan prefix, double dvalue, std::span<double> grad) const;

  std::size_t num_params() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }

  friend bool operator==(const ValueHead&, const ValueHead&) = default;

 private:
  ValueHead(Vocabulary vocab, Architecture arch) : vocab_(vocab), arch_(arch) {}
  friend ValueHead read_value_checkpoint(std::istream& in);

  Vocabulary vocab_;
  Architecture arch_;
  std::vector<double> params_;
};

// Stable log-softmax in place.
void log_softmax(std::span<double> logits);

// Binary checkpoint: 8-byte magic, u32 header length, JSON header
// (architecture, vocab size, role, lineage), u64 parameter count, then the
// parameters as little-endian IEEE-754 doubles.
void write_checkpoint(std::ostream& out, const Policy& policy);
Policy read_checkpoint(std::istream& in);
void write_checkpoint(std::ostream& out, const ValueHead& head);
ValueHead read_value_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const Policy& policy);
Policy load_checkpoint(const std::string& path);

}  // namespace srppo
