#pragma once

// End-to-end embedding construction:
//   render -> (truncate) -> backend -> align spans -> choose rows -> pool.
//
// Classical templates pool the first (only) occurrence of the input, echo
// templates pool the second occurrence, and summarization templates always
// take the final row of the whole sequence.

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "echoembed/backend.hpp"
#include "echoembed/error.hpp"
#include "echoembed/pooling.hpp"
#include "echoembed/templating.hpp"
#include "echoembed/toy_model.hpp"

namespace echoembed {

struct EmbedOptions {
  /// Append the reserved trainable end token; it joins the pooled occurrence.
  bool append_eos = false;
  /// Raw text glued to the end of the rendered prompt, outside every
  /// occurrence (used by the noise-token ablation).
  std::string trailing;
};

/// A rendered prompt that fits the backend, plus what was kept of the input.
struct FittedRender {
  RenderedInput rendered;
  std::string input;
};

constexpr SegmentLabel pooled_occurrence(Strategy s) noexcept {
  return s == Strategy::echo ? SegmentLabel::second_occurrence : SegmentLabel::first_occurrence;
}

namespace detail {

inline std::string drop_last_word(std::string_view s) {
  auto end = s.size();
  while (end > 0 && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  while (end > 0 && !std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  while (end > 0 && std::isspace(static_cast<unsigned char>(s[end - 1]))) --end;
  return std::string(s.substr(0, end));
}

inline RenderedInput render_with_trailing(const Template& tmpl, std::string_view input, std::string_view trailing) {
  auto r = render(tmpl, input);
  if (!trailing.empty()) {
    const auto begin = r.text.size();
    r.text.append(trailing);
    if (!r.segments.empty() && r.segments.back().label == SegmentLabel::scaffold) {
      r.segments.back().end = r.text.size();
    } else {
      r.segments.push_back({SegmentLabel::scaffold, begin, r.text.size()});
    }
  }
  return r;
}

}  // namespace detail

/// Renders `input`, dropping trailing words of the input (every occurrence
/// alike) until the token count plus `extra_tokens` fits `max_len`. Scaffold
/// text is never cut. Without a counter the render is returned as is.
inline FittedRender render_fitting(const Template& tmpl, std::string_view input,
                                   const std::function<std::optional<std::size_t>(std::string_view)>& count_tokens,
                                   std::size_t max_len, std::size_t extra_tokens = 0,
                                   std::string_view trailing = {}) {
  FittedRender fit{detail::render_with_trailing(tmpl, input, trailing), std::string(input)};
  if (!count_tokens) return fit;
  for (;;) {
    const auto n = count_tokens(fit.rendered.text);
    if (!n || *n + extra_tokens <= max_len) return fit;
    fit.input = detail::drop_last_word(fit.input);
    if (detail::is_blank(fit.input)) {
      throw Error(Errc::render_too_long, "scaffold alone exceeds max_seq_len " + std::to_string(max_len));
    }
    fit.rendered = detail::render_with_trailing(tmpl, fit.input, trailing);
  }
}

/// Aligns tokens to segments. A trailing end token (zero-width, at the end of
/// the text) is assigned to `eos_owner`.
inline SpanIndexSet align_tokens(const RenderedInput& rendered, const Tokenization& tokens, bool has_eos,
                                 SegmentLabel eos_owner) {
  auto offsets = tokens.offsets;
  if (has_eos) offsets.pop_back();
  auto spans = align_spans(rendered, offsets);
  if (has_eos) {
    spans[eos_owner].push_back(tokens.size() - 1);
    spans.token_count = tokens.size();
  }
  return spans;
}

/// Rows pooled for a whole-occurrence embedding.
inline std::vector<std::size_t> select_rows(const SpanIndexSet& spans, Strategy strategy, Pooling pooling) {
  if (strategy == Strategy::summarization || pooling == Pooling::sequence_last) {
    if (spans.token_count == 0) throw Error(Errc::empty_sequence, "nothing to pool");
    return {spans.token_count - 1};
  }
  const auto& occ = spans[pooled_occurrence(strategy)];
  if (occ.empty()) throw Error(Errc::empty_selection, "no tokens in the pooled occurrence");
  if (pooling == Pooling::last) return {occ.back()};
  return occ;
}

namespace detail {

inline std::function<std::optional<std::size_t>(std::string_view)> counter_for(const Backend& backend) {
  return [&backend](std::string_view text) { return backend.token_count(text); };
}

inline Backend::Output encode(Backend& backend, std::string_view text, bool append_eos) {
  if (!append_eos) return backend.encode(text);
  auto* toy = dynamic_cast<ToyBackend*>(&backend);
  if (!toy) throw Error(Errc::invalid_config, "this backend has no trainable end token");
  return toy->encode_with_eos(text);
}

inline PooledEmbedding pool_rows(const HiddenStates& states, const std::vector<std::size_t>& rows, Pooling pooling) {
  auto pooled = mean_pool(states, rows);
  pooled.pooling = pooling;
  return pooled;
}

}  // namespace detail

/// Runs the backend on the rendered prompt and returns states plus span
/// bookkeeping, without pooling.
struct Encoded {
  FittedRender fitted;
  Tokenization tokens;
  HiddenStates states;
  SpanIndexSet spans;
};

inline Encoded encode_prompt(std::string_view text, const Template& tmpl, Backend& backend,
                             const EmbedOptions& options = {}) {
  Encoded e;
  e.fitted = render_fitting(tmpl, text, detail::counter_for(backend), backend.max_seq_len(),
                            options.append_eos ? 1 : 0, options.trailing);
  auto out = detail::encode(backend, e.fitted.rendered.text, options.append_eos);
  if (out.states.rows != out.tokens.size()) {
    throw Error(Errc::dimension_mismatch, "backend returned " + std::to_string(out.states.rows) + " rows for " +
                                              std::to_string(out.tokens.size()) + " tokens");
  }
  e.tokens = std::move(out.tokens);
  e.states = std::move(out.states);
  e.spans = align_tokens(e.fitted.rendered, e.tokens, options.append_eos, pooled_occurrence(tmpl.strategy));
  return e;
}

inline PooledEmbedding embed(std::string_view text, const Template& tmpl, Pooling pooling, Backend& backend,
                             const EmbedOptions& options = {}) {
  const auto e = encode_prompt(text, tmpl, backend, options);
  const auto effective = tmpl.strategy == Strategy::summarization ? Pooling::sequence_last : pooling;
  return detail::pool_rows(e.states, select_rows(e.spans, tmpl.strategy, effective), effective);
}

/// Rows of the pooled occurrence whose bytes intersect `range`, where `range`
/// is relative to the start of the input text. An end token counts as part of
/// the range when the range reaches the end of the occurrence.
inline std::vector<std::size_t> select_span_rows(const Encoded& e, Strategy strategy, ByteRange range,
                                                 bool has_eos) {
  const auto label = pooled_occurrence(strategy);
  const auto occ = e.fitted.rendered.find(label);
  if (!occ) throw Error(Errc::empty_selection, "rendered prompt has no pooled occurrence");
  const auto lo = occ->begin + range.first;
  const auto hi = occ->begin + std::min(range.second, occ->size());
  std::vector<std::size_t> rows;
  for (auto idx : e.spans[label]) {
    if (has_eos && idx + 1 == e.tokens.size()) {
      if (range.second >= occ->size() && range.first < occ->size()) rows.push_back(idx);
      continue;
    }
    const auto [b, en] = e.tokens.offsets[idx];
    if (b < hi && en > lo) rows.push_back(idx);
  }
  if (rows.empty()) throw Error(Errc::empty_selection, "no tokens of the occurrence fall inside the range");
  return rows;
}

inline PooledEmbedding embed_span(std::string_view text, const Template& tmpl, Pooling pooling, Backend& backend,
                                  ByteRange range, const EmbedOptions& options = {}) {
  if (tmpl.strategy == Strategy::summarization || pooling == Pooling::sequence_last) {
    throw Error(Errc::invalid_config, "span pooling needs an occurrence (classical or echo, mean or last)");
  }
  const auto e = encode_prompt(text, tmpl, backend, options);
  auto rows = select_span_rows(e, tmpl.strategy, range, options.append_eos);
  if (pooling == Pooling::last) rows = {rows.back()};
  return detail::pool_rows(e.states, rows, pooling);
}

}  // namespace echoembed
