// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace srppo {

using Token = int;
using Tokens = std::vector<Token>;
using TokenSpan = std::span<const Token>;

// Ordinary tokens are 0..size-1; EOS is the last index, `size`.
struct Vocabulary {
  int size = 4;

  constexpr Token eos_id() const { return size; }
  constexpr int alphabet() const { return size + 1; }
  constexpr bool valid(Token t) const { return t >= 0 && t <= size; }
  constexpr bool ordinary(Token t) const { return t >= 0 && t < size; }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

// Index of the order-k context formed by the last k tokens of x ++ prefix.
// Missing positions on the left are padded with the EOS index, which can
// never appear inside a live context, so the base is the full alphabet.
inline std::size_t ngram_context(TokenSpan x, TokenSpan prefix, int order, int alphabet) {
  std::size_t index = 0;
  const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(x.size() + prefix.size());
  for (std::ptrdiff_t i = total - order; i < total; ++i) {
    Token t = alphabet - 1;
    if (i >= 0) {
      t = i < static_cast<std::ptrdiff_t>(x.size()) ? x[static_cast<std::size_t>(i)]
                                                     : prefix[static_cast<std::size_t>(i) - x.size()];
    }
    index = index * static_cast<std::size_t>(alphabet) + static_cast<std::size_t>(t);
  }
  return index;
}

inline std::size_t int_pow(std::size_t base, int exp) {
  std::size_t r = 1;
  for (int i = 0; i < exp; ++i) r *= base;
  return r;
}

}  // namespace srppo
