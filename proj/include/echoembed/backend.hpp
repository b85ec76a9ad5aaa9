#pragma once

#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "echoembed/error.hpp"

namespace echoembed {

enum class AttentionMode { causal, bidirectional };

constexpr std::string_view to_string(AttentionMode m) noexcept {
  return m == AttentionMode::causal ? "causal" : "bidirectional";
}

inline AttentionMode parse_attention(std::string_view name) {
  if (name == "causal") return AttentionMode::causal;
  if (name == "bidirectional") return AttentionMode::bidirectional;
  throw Error(Errc::invalid_config, "unknown attention mode '" + std::string(name) + "'");
}

using ByteRange = std::pair<std::size_t, std::size_t>;

struct Tokenization {
  std::vector<std::uint32_t> token_ids;
  std::vector<ByteRange> offsets;

  std::size_t size() const noexcept { return token_ids.size(); }
};

/// Final-layer activations, one row per token position.
struct HiddenStates {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> data;
  std::optional<AttentionMode> attention;

  HiddenStates() = default;
  HiddenStates(std::size_t r, std::size_t d) : rows(r), dim(d), data(r * d, 0.0) {}

  std::span<double> row(std::size_t i) { return {data.data() + i * dim, dim}; }
  std::span<const double> row(std::size_t i) const { return {data.data() + i * dim, dim}; }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Whitespace tokenizer that lowercases ASCII and hashes each word (FNV-1a,
/// 64-bit) into vocab_size - 1 buckets. The top id is reserved for the
/// trainable end-of-sequence token.
class ToyTokenizer {
 public:
  explicit ToyTokenizer(std::size_t vocab_size) : vocab_size_(vocab_size) {
    if (vocab_size < 2) throw Error(Errc::invalid_config, "toy vocabulary needs at least 2 ids");
  }

  std::size_t vocab_size() const noexcept { return vocab_size_; }
  std::uint32_t eos_id() const noexcept { return static_cast<std::uint32_t>(vocab_size_ - 1); }

  std::uint32_t word_id(std::string_view word) const noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : word) {
      h ^= static_cast<std::uint64_t>(std::tolower(c));
      h *= 0x100000001b3ULL;
    }
    return static_cast<std::uint32_t>(h % (vocab_size_ - 1));
  }

  Tokenization tokenize(std::string_view text) const {
    Tokenization tok;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      if (i == text.size()) break;
      const auto begin = i;
      while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      tok.token_ids.push_back(word_id(text.substr(begin, i - begin)));
      tok.offsets.emplace_back(begin, i);
    }
    return tok;
  }

 private:
  std::size_t vocab_size_;
};

/// Anything that turns text into per-token final-layer states.
class Backend {
 public:
  virtual ~Backend() = default;

  struct Output {
    Tokenization tokens;
    HiddenStates states;
  };

  virtual Output encode(std::string_view text) = 0;
  virtual std::size_t dim() const = 0;
  virtual std::size_t max_seq_len() const = 0;

  /// Cheap token count, when the backend can tokenize locally.
  virtual std::optional<std::size_t> token_count(std::string_view) const { return std::nullopt; }
};

}  // namespace echoembed
