#pragma once

// Prompt templates for classical, echo and summarization embeddings, with
// byte-exact bookkeeping of where the input landed in the rendered prompt.
//
// A Template carries a literal pattern in which "{S}" marks an input slot and
// "{instruction}" marks the task instruction. Everything else in the pattern
// is copied verbatim, so separators may contain newlines, runs of spaces or
// braces. Offsets are byte offsets into UTF-8 text.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "echoembed/error.hpp"
#include "echoembed/random.hpp"

namespace echoembed {

enum class Strategy { classical, echo, summarization };
enum class TemplateRole { query_or_symmetric, document };
enum class SegmentLabel { instruction, scaffold, first_occurrence, second_occurrence, eos };

inline constexpr std::size_t kSegmentLabelCount = 5;
inline constexpr std::string_view kInputPlaceholder = "{S}";
inline constexpr std::string_view kInstructionPlaceholder = "{instruction}";

constexpr std::string_view to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::classical: return "classical";
    case Strategy::echo: return "echo";
    case Strategy::summarization: return "summarization";
  }
  return "?";
}

constexpr std::string_view to_string(SegmentLabel l) noexcept {
  switch (l) {
    case SegmentLabel::instruction: return "instruction";
    case SegmentLabel::scaffold: return "scaffold";
    case SegmentLabel::first_occurrence: return "first_occurrence";
    case SegmentLabel::second_occurrence: return "second_occurrence";
    case SegmentLabel::eos: return "eos";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view name) {
  if (name == "classical") return Strategy::classical;
  if (name == "echo") return Strategy::echo;
  if (name == "summarization") return Strategy::summarization;
  throw Error(Errc::invalid_config, "unknown strategy '" + std::string(name) + "'");
}

/// Number of input slots a strategy's pattern must contain.
constexpr std::size_t expected_placeholders(Strategy s) noexcept {
  return s == Strategy::echo ? 2 : 1;
}

struct Template {
  Strategy strategy = Strategy::classical;
  TemplateRole role = TemplateRole::query_or_symmetric;
  std::string instruction_verb;
  std::string wording;
  std::string separator;
  std::string prefix_first;
  std::string prefix_second;  // echo only
  std::string suffix;         // summarization only
  std::optional<std::string> task_instruction;
  std::string pattern;

  friend bool operator==(const Template&, const Template&) = default;
};

struct Segment {
  SegmentLabel label;
  std::size_t begin;  // byte offset, inclusive
  std::size_t end;    // byte offset, exclusive

  std::size_t size() const noexcept { return end - begin; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct RenderedInput {
  std::string text;
  std::vector<Segment> segments;

  /// First segment with the given label, if any.
  std::optional<Segment> find(SegmentLabel label) const {
    for (const auto& seg : segments)
      if (seg.label == label) return seg;
    return std::nullopt;
  }

  std::string_view substring(const Segment& seg) const {
    return std::string_view(text).substr(seg.begin, seg.size());
  }

  std::size_t count(SegmentLabel label) const {
    return static_cast<std::size_t>(
        std::count_if(segments.begin(), segments.end(), [&](const Segment& s) { return s.label == label; }));
  }
};

/// Token indices grouped by the segment each token was assigned to.
struct SpanIndexSet {
  std::array<std::vector<std::size_t>, kSegmentLabelCount> indices;
  std::size_t token_count = 0;

  const std::vector<std::size_t>& operator[](SegmentLabel l) const {
    return indices[static_cast<std::size_t>(l)];
  }
  std::vector<std::size_t>& operator[](SegmentLabel l) { return indices[static_cast<std::size_t>(l)]; }
};

namespace detail {

inline std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size()))
    ++n;
  return n;
}

inline bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

inline void push_segment(std::vector<Segment>& out, SegmentLabel label, std::size_t begin, std::size_t end) {
  if (begin == end) return;
  if (!out.empty() && out.back().label == SegmentLabel::scaffold && label == SegmentLabel::scaffold &&
      out.back().end == begin) {
    out.back().end = end;
    return;
  }
  out.push_back({label, begin, end});
}

}  // namespace detail

/// Throws PlaceholderMismatch if the pattern's slots disagree with the
/// strategy or with the presence of a task instruction.
inline void validate(const Template& t) {
  const auto inputs = detail::count_occurrences(t.pattern, kInputPlaceholder);
  if (inputs != expected_placeholders(t.strategy)) {
    throw Error(Errc::placeholder_mismatch, std::string(to_string(t.strategy)) + " template needs " +
                                                std::to_string(expected_placeholders(t.strategy)) +
                                                " input placeholder(s), found " + std::to_string(inputs));
  }
  const auto instr = detail::count_occurrences(t.pattern, kInstructionPlaceholder);
  if (instr > 1 || (instr == 1) != t.task_instruction.has_value()) {
    throw Error(Errc::placeholder_mismatch,
                "task instruction slot and task_instruction field must appear together exactly once");
  }
}

inline RenderedInput render(const Template& tmpl, std::string_view input) {
  if (detail::is_blank(input)) throw Error(Errc::empty_input, "input is empty after trimming");
  validate(tmpl);

  RenderedInput out;
  const std::string_view pattern = tmpl.pattern;
  std::size_t occurrence = 0;
  std::size_t pos = 0;
  while (pos < pattern.size()) {
    const auto next_input = pattern.find(kInputPlaceholder, pos);
    const auto next_instr = pattern.find(kInstructionPlaceholder, pos);
    const auto next = std::min(next_input, next_instr);
    const auto literal = pattern.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos);
    if (!literal.empty()) {
      const auto begin = out.text.size();
      out.text.append(literal);
      detail::push_segment(out.segments, SegmentLabel::scaffold, begin, out.text.size());
    }
    if (next == std::string_view::npos) break;

    const auto begin = out.text.size();
    if (next == next_input) {
      out.text.append(input);
      const auto label = occurrence == 0 ? SegmentLabel::first_occurrence : SegmentLabel::second_occurrence;
      detail::push_segment(out.segments, label, begin, out.text.size());
      ++occurrence;
      pos = next + kInputPlaceholder.size();
    } else {
      out.text.append(*tmpl.task_instruction);
      detail::push_segment(out.segments, SegmentLabel::instruction, begin, out.text.size());
      pos = next + kInstructionPlaceholder.size();
    }
  }
  return out;
}

/// Assigns every token to the segment that contains its first byte.
inline SpanIndexSet align_spans(const RenderedInput& rendered,
                                const std::vector<std::pair<std::size_t, std::size_t>>& token_offsets) {
  SpanIndexSet spans;
  spans.token_count = token_offsets.size();
  const auto len = rendered.text.size();
  std::size_t seg = 0;
  for (std::size_t i = 0; i < token_offsets.size(); ++i) {
    const auto [begin, end] = token_offsets[i];
    if (begin >= len || end > len || end < begin) {
      throw Error(Errc::token_out_of_range, "token " + std::to_string(i) + " spans [" + std::to_string(begin) +
                                                "," + std::to_string(end) + ") in text of " +
                                                std::to_string(len) + " bytes");
    }
    // Offsets are sorted, so the containing segment only moves forward.
    if (seg < rendered.segments.size() && rendered.segments[seg].begin > begin) seg = 0;
    while (seg < rendered.segments.size() && rendered.segments[seg].end <= begin) ++seg;
    if (seg == rendered.segments.size()) {
      throw Error(Errc::token_out_of_range, "token " + std::to_string(i) + " is outside every segment");
    }
    spans[rendered.segments[seg].label].push_back(i);
  }
  if (rendered.find(SegmentLabel::second_occurrence) && spans[SegmentLabel::second_occurrence].empty()) {
    throw Error(Errc::empty_second_occurrence, "no token starts inside the second occurrence");
  }
  return spans;
}

// ---------------------------------------------------------------------------
// Canonical templates.

inline Template default_template(Strategy strategy) {
  Template t;
  t.strategy = strategy;
  t.separator = ": ";
  switch (strategy) {
    case Strategy::classical:
      t.instruction_verb = "Write";
      t.wording = "Write a sentence";
      t.pattern = "Write a sentence: {S}";
      break;
    case Strategy::echo:
      t.instruction_verb = "Rewrite";
      t.wording = "Rewrite the following sentence";
      t.prefix_second = "The rewritten sentence: ";
      t.pattern = "Rewrite the following sentence: {S}\nThe rewritten sentence: {S}";
      break;
    case Strategy::summarization:
      t.instruction_verb = "Summarize";
      t.wording = "Summarize the sentence";
      t.suffix = "in one word";
      t.pattern = "Summarize the sentence: {S} in one word:";
      break;
  }
  return t;
}

/// Fine-tuning prompts. Queries and symmetric inputs carry the task
/// instruction; documents never do.
inline Template training_template(Strategy strategy, TemplateRole role, std::optional<std::string> instruction) {
  if (strategy == Strategy::summarization) {
    throw Error(Errc::invalid_config, "training templates exist only for classical and echo");
  }
  Template t;
  t.strategy = strategy;
  t.role = role;
  t.separator = "\n";
  if (role == TemplateRole::query_or_symmetric) {
    if (!instruction || instruction->empty()) {
      throw Error(Errc::placeholder_mismatch, "query/symmetric training template requires an instruction");
    }
    t.task_instruction = std::move(instruction);
    t.prefix_first = "Query: ";
    t.prefix_second = "Query again: ";
    t.pattern = strategy == Strategy::echo ? "Instruct: {instruction}\nQuery: {S}\nQuery again: {S}"
                                           : "Instruct: {instruction}\nQuery: {S}";
  } else {
    t.prefix_first = "Document: ";
    t.prefix_second = "Document again: ";
    t.pattern = strategy == Strategy::echo ? "Document: {S}\nDocument again: {S}" : "Document: {S}";
  }
  return t;
}

// ---------------------------------------------------------------------------
// Randomized prompt families.

struct InstructionFamily {
  std::string verb;
  std::vector<std::string> wordings;
};

struct StrategyPools {
  std::vector<InstructionFamily> instructions;
  std::vector<std::string> separators;
  /// One entry per prefix choice; echo entries hold two prefixes.
  std::vector<std::vector<std::string>> prefixes;
  std::vector<std::string> suffixes;  // summarization only
};

enum class Casing { as_is, upper, title };

struct TemplateFamilies {
  std::vector<Casing> casings{Casing::as_is};
  std::array<StrategyPools, 3> pools;

  const StrategyPools& operator[](Strategy s) const { return pools[static_cast<std::size_t>(s)]; }
  StrategyPools& operator[](Strategy s) { return pools[static_cast<std::size_t>(s)]; }
};

namespace detail {

inline Casing parse_casing(const std::string& name) {
  if (name == "as_is") return Casing::as_is;
  if (name == "upper") return Casing::upper;
  if (name == "title") return Casing::title;
  throw Error(Errc::invalid_config, "unknown casing '" + name + "'");
}

inline std::string apply_casing(std::string_view s, Casing casing) {
  std::string out(s);
  bool word_start = true;
  for (auto& ch : out) {
    const auto c = static_cast<unsigned char>(ch);
    if (casing == Casing::upper) {
      ch = static_cast<char>(std::toupper(c));
    } else if (casing == Casing::title && word_start) {
      ch = static_cast<char>(std::toupper(c));
    }
    word_start = std::isspace(c) != 0;
  }
  return out;
}

template <typename T>
const T& pick(const std::vector<T>& pool, Xoshiro256ss& rng, std::string_view what) {
  if (pool.empty()) throw Error(Errc::invalid_config, "empty " + std::string(what) + " pool");
  return pool[rng.below(pool.size())];
}

}  // namespace detail

/// Parses the template-family config.
///
/// Schema:
/// {
///   "version": 1,
///   "casings": ["as_is" | "upper" | "title", ...],
///   "classical" | "echo" | "summarization": {
///     "instructions": [{"verb": str, "wordings": [str, ...]}, ...],
///     "separators": [str, ...],
///     "prefixes": [[str] | [str, str], ...],   // two entries for echo
///     "suffixes": [str, ...]                    // summarization only
///   }
/// }
inline TemplateFamilies parse_template_families(std::string_view json_text) {
  using nlohmann::json;
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(Errc::invalid_config, std::string("template family config: ") + e.what());
  }
  TemplateFamilies fam;
  try {
    if (doc.value("version", 0) != 1) throw Error(Errc::invalid_config, "template family config must be version 1");
    if (doc.contains("casings")) {
      fam.casings.clear();
      for (const auto& c : doc.at("casings")) fam.casings.push_back(detail::parse_casing(c.get<std::string>()));
    }
    for (auto s : {Strategy::classical, Strategy::echo, Strategy::summarization}) {
      const auto& node = doc.at(std::string(to_string(s)));
      auto& pools = fam[s];
      for (const auto& inst : node.at("instructions")) {
        pools.instructions.push_back(
            {inst.at("verb").get<std::string>(), inst.at("wordings").get<std::vector<std::string>>()});
      }
      pools.separators = node.at("separators").get<std::vector<std::string>>();
      pools.prefixes = node.at("prefixes").get<std::vector<std::vector<std::string>>>();
      if (node.contains("suffixes")) pools.suffixes = node.at("suffixes").get<std::vector<std::string>>();
      const std::size_t width = s == Strategy::echo ? 2 : 1;
      for (const auto& p : pools.prefixes) {
        if (p.size() != width) {
          throw Error(Errc::invalid_config, std::string(to_string(s)) + " prefixes must have " +
                                                std::to_string(width) + " entries");
        }
      }
      if (s == Strategy::summarization && pools.suffixes.empty()) {
        throw Error(Errc::invalid_config, "summarization needs at least one suffix");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::invalid_config, std::string("template family config: ") + e.what());
  }
  return fam;
}

inline TemplateFamilies load_template_families(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot open template family config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_template_families(buf.str());
}

/// Draws `count` templates. Each draw picks, uniformly and in this order:
/// instruction, wording, casing, separator, prefix, and (summarization) suffix.
/// Draws share one stream, so a shorter list is a prefix of a longer one.
inline std::vector<Template> sample_templates(Strategy strategy, std::size_t count, std::uint64_t seed,
                                              const TemplateFamilies& families) {
  const auto& pools = families[strategy];
  Xoshiro256ss rng(seed);
  std::vector<Template> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Template t;
    t.strategy = strategy;
    const auto& family = detail::pick(pools.instructions, rng, "instruction");
    const auto casing = detail::pick(families.casings, rng, "casing");
    t.instruction_verb = family.verb;
    t.wording = detail::apply_casing(detail::pick(family.wordings, rng, "wording"), casing);
    t.separator = detail::pick(pools.separators, rng, "separator");
    const auto& prefix = detail::pick(pools.prefixes, rng, "prefix");
    t.prefix_first = prefix.at(0);

    std::string p = t.wording + t.separator + t.prefix_first + std::string(kInputPlaceholder);
    switch (strategy) {
      case Strategy::classical:
        break;
      case Strategy::echo:
        t.prefix_second = prefix.at(1);
        p += t.separator + t.prefix_second + std::string(kInputPlaceholder);
        break;
      case Strategy::summarization:
        t.suffix = detail::apply_casing(detail::pick(pools.suffixes, rng, "suffix"), casing);
        p += " " + t.suffix + t.separator;
        break;
    }
    t.pattern = std::move(p);
    out.push_back(std::move(t));
  }
  return out;
}

inline nlohmann::json to_json(const Template& t) {
  nlohmann::json j{{"strategy", to_string(t.strategy)},
                   {"role", t.role == TemplateRole::document ? "document" : "query_or_symmetric"},
                   {"instruction_verb", t.instruction_verb},
                   {"wording", t.wording},
                   {"separator", t.separator},
                   {"prefix_first", t.prefix_first},
                   {"pattern", t.pattern}};
  if (t.strategy == Strategy::echo) j["prefix_second"] = t.prefix_second;
  if (t.strategy == Strategy::summarization) j["suffix"] = t.suffix;
  if (t.task_instruction) j["task_instruction"] = *t.task_instruction;
  return j;
}

}  // namespace echoembed
