#include <gtest/gtest.h>

#include <set>

#include "echoembed/templating.hpp"

using namespace echoembed;

namespace {

void expect_covering(const RenderedInput& r) {
  std::size_t pos = 0;
  std::string joined;
  for (const auto& s : r.segments) {
    EXPECT_EQ(s.begin, pos);
    EXPECT_LT(s.begin, s.end);
    pos = s.end;
    joined += r.substring(s);
  }
  EXPECT_EQ(pos, r.text.size());
  EXPECT_EQ(joined, r.text);
}

TemplateFamilies bundled() { return load_template_families(std::filesystem::path(ECHOEMBED_DATA_DIR) / "template_families.json"); }

}  // namespace

TEST(Render, EchoDefaultRepeatsInputByteForByte) {
  const auto r = render(default_template(Strategy::echo), "She loves summer");
  EXPECT_EQ(r.text, "Rewrite the following sentence: She loves summer\nThe rewritten sentence: She loves summer");
  ASSERT_EQ(r.count(SegmentLabel::first_occurrence), 1u);
  ASSERT_EQ(r.count(SegmentLabel::second_occurrence), 1u);
  const auto first = *r.find(SegmentLabel::first_occurrence);
  const auto second = *r.find(SegmentLabel::second_occurrence);
  EXPECT_EQ(r.substring(first), "She loves summer");
  EXPECT_EQ(r.substring(second), "She loves summer");
  EXPECT_EQ(first.begin, 32u);
  EXPECT_EQ(second.end, r.text.size());
  expect_covering(r);
}

TEST(Render, ClassicalSingleCharacterInput) {
  const auto r = render(default_template(Strategy::classical), "x");
  ASSERT_EQ(r.count(SegmentLabel::first_occurrence), 1u);
  EXPECT_EQ(r.substring(*r.find(SegmentLabel::first_occurrence)), "x");
  EXPECT_EQ(r.count(SegmentLabel::second_occurrence), 0u);
  expect_covering(r);
}

TEST(Render, SummarizationDefault) {
  const auto r = render(default_template(Strategy::summarization), "She loves summer");
  EXPECT_EQ(r.text, "Summarize the sentence: She loves summer in one word:");
  expect_covering(r);
}

TEST(Render, EmptyOrBlankInputRejected) {
  for (const char* in : {"", "   ", "\n\t"}) {
    try {
      render(default_template(Strategy::echo), in);
      FAIL() << "accepted blank input";
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), Errc::empty_input);
    }
  }
}

TEST(Render, PlaceholderCountMustMatchStrategy) {
  auto t = default_template(Strategy::echo);
  t.pattern = "Rewrite: {S}";
  try {
    render(t, "a");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::placeholder_mismatch);
  }
  auto c = default_template(Strategy::classical);
  c.pattern = "{S} {S}";
  EXPECT_THROW(render(c, "a"), Error);
}

TEST(Render, InstructionSlotRequiresInstruction) {
  auto t = training_template(Strategy::echo, TemplateRole::query_or_symmetric, "Find a paraphrase");
  const auto r = render(t, "cats purr");
  EXPECT_EQ(r.text, "Instruct: Find a paraphrase\nQuery: cats purr\nQuery again: cats purr");
  ASSERT_TRUE(r.find(SegmentLabel::instruction));
  EXPECT_EQ(r.substring(*r.find(SegmentLabel::instruction)), "Find a paraphrase");
  expect_covering(r);

  t.task_instruction.reset();
  EXPECT_THROW(render(t, "cats purr"), Error);
  EXPECT_THROW(training_template(Strategy::echo, TemplateRole::query_or_symmetric, std::nullopt), Error);
}

TEST(Render, DocumentTemplateHasNoInstruction) {
  const auto r = render(training_template(Strategy::echo, TemplateRole::document, std::nullopt), "d");
  EXPECT_EQ(r.text, "Document: d\nDocument again: d");
  EXPECT_FALSE(r.find(SegmentLabel::instruction));
}

TEST(Render, IsPureFunction) {
  const auto t = default_template(Strategy::echo);
  EXPECT_EQ(render(t, "same input").text, render(t, "same input").text);
  EXPECT_EQ(render(t, "same input").segments, render(t, "same input").segments);
}

TEST(Render, InputContainingPlaceholderTextIsLiteral) {
  const auto r = render(default_template(Strategy::echo), "a {S} b");
  EXPECT_EQ(r.substring(*r.find(SegmentLabel::second_occurrence)), "a {S} b");
  EXPECT_EQ(r.count(SegmentLabel::second_occurrence), 1u);
}

TEST(AlignSpans, HandTokenizedExample) {
  RenderedInput r{"a: cat cat",
                  {{SegmentLabel::scaffold, 0, 3},
                   {SegmentLabel::first_occurrence, 3, 7},
                   {SegmentLabel::second_occurrence, 7, 10}}};
  const auto s = align_spans(r, {{0, 2}, {3, 6}, {7, 10}});
  EXPECT_EQ(s[SegmentLabel::second_occurrence], std::vector<std::size_t>{2});
  EXPECT_EQ(s[SegmentLabel::first_occurrence], std::vector<std::size_t>{1});
  EXPECT_EQ(s[SegmentLabel::scaffold], std::vector<std::size_t>{0});
}

TEST(AlignSpans, StraddlingTokenGoesToSegmentOfFirstByte) {
  RenderedInput r{"a: cat cat",
                  {{SegmentLabel::scaffold, 0, 3},
                   {SegmentLabel::first_occurrence, 3, 7},
                   {SegmentLabel::second_occurrence, 7, 10}}};
  const auto s = align_spans(r, {{0, 2}, {5, 8}, {8, 10}});
  EXPECT_EQ(s[SegmentLabel::first_occurrence], std::vector<std::size_t>{1});
  EXPECT_EQ(s[SegmentLabel::second_occurrence], std::vector<std::size_t>{2});
}

TEST(AlignSpans, OutOfRangeOffsets) {
  const auto r = render(default_template(Strategy::classical), "x");
  try {
    align_spans(r, {{0, 5}, {r.text.size(), r.text.size() + 1}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::token_out_of_range);
  }
}

TEST(AlignSpans, EchoWithoutTokensInSecondOccurrence) {
  const auto r = render(default_template(Strategy::echo), "hi");
  try {
    align_spans(r, {{0, 7}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_second_occurrence);
  }
}

TEST(AlignSpans, TotalityOverWhitespaceTokens) {
  const auto r = render(default_template(Strategy::echo), "the quick brown fox");
  std::vector<std::pair<std::size_t, std::size_t>> offs;
  for (std::size_t i = 0; i < r.text.size();) {
    while (i < r.text.size() && std::isspace(static_cast<unsigned char>(r.text[i]))) ++i;
    const auto b = i;
    while (i < r.text.size() && !std::isspace(static_cast<unsigned char>(r.text[i]))) ++i;
    if (b < i) offs.emplace_back(b, i);
  }
  const auto s = align_spans(r, offs);
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& v : s.indices) {
    total += v.size();
    seen.insert(v.begin(), v.end());
  }
  EXPECT_EQ(total, offs.size());
  EXPECT_EQ(seen.size(), offs.size());
  EXPECT_EQ(s[SegmentLabel::first_occurrence].size(), 4u);
  EXPECT_EQ(s[SegmentLabel::second_occurrence].size(), 4u);
}

TEST(Sampler, DeterministicPerSeed) {
  const auto f = bundled();
  EXPECT_EQ(sample_templates(Strategy::classical, 12, 7, f), sample_templates(Strategy::classical, 12, 7, f));
  EXPECT_NE(sample_templates(Strategy::classical, 12, 7, f), sample_templates(Strategy::classical, 12, 8, f));
}

TEST(Sampler, ShorterListIsPrefixOfLonger) {
  const auto f = bundled();
  const auto a = sample_templates(Strategy::echo, 5, 3, f);
  const auto b = sample_templates(Strategy::echo, 9, 3, f);
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
}

TEST(Sampler, EveryDrawSatisfiesStrategyInvariants) {
  const auto f = bundled();
  for (auto s : {Strategy::classical, Strategy::echo, Strategy::summarization}) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      for (const auto& t : sample_templates(s, 5, seed, f)) {
        EXPECT_NO_THROW(validate(t));
        const auto r = render(t, "She loves summer");
        expect_covering(r);
        EXPECT_EQ(r.count(SegmentLabel::first_occurrence), 1u);
        EXPECT_EQ(r.count(SegmentLabel::second_occurrence), s == Strategy::echo ? 1u : 0u);
        if (s == Strategy::echo) {
          EXPECT_EQ(r.substring(*r.find(SegmentLabel::first_occurrence)),
                    r.substring(*r.find(SegmentLabel::second_occurrence)));
        }
      }
    }
  }
}

TEST(Sampler, SummarizationSuffixComesFromTheOneWordPool) {
  const auto f = bundled();
  const auto& pool = f[Strategy::summarization].suffixes;
  std::set<std::string> lowered;
  for (const auto& s : pool) {
    std::string l = s;
    for (auto& c : l) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    lowered.insert(l);
  }
  EXPECT_TRUE(lowered.count("in one word"));
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto t = sample_templates(Strategy::summarization, 1, seed, f).front();
    for (auto& c : t.suffix) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    EXPECT_TRUE(lowered.count(t.suffix)) << t.suffix;
  }
}

TEST(Sampler, InstructionVerbsPerStrategy) {
  const auto f = bundled();
  const std::map<Strategy, std::set<std::string>> verbs{
      {Strategy::classical, {"Write", "Say", "Complete", "Explain"}},
      {Strategy::echo, {"Repeat", "Rewrite", "Rephrase", "Fill in the blank"}},
      {Strategy::summarization, {"Summarize", "Categorize", "Understand", "Analyze"}}};
  for (const auto& [s, allowed] : verbs) {
    for (const auto& t : sample_templates(s, 40, 11, f)) EXPECT_TRUE(allowed.count(t.instruction_verb)) << t.instruction_verb;
  }
}

TEST(TemplateFamiliesConfig, RejectsMalformedConfig) {
  EXPECT_THROW(parse_template_families("{"), Error);
  EXPECT_THROW(parse_template_families(R"({"version":1})"), Error);
}
