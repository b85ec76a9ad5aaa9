#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

#include "echoembed/toy_model.hpp"

using namespace echoembed;

namespace {

ToyModelConfig small(std::uint64_t seed = 1) {
  ToyModelConfig c;
  c.vocab_size = 64;
  c.dim = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.max_seq_len = 16;
  c.seed = seed;
  return c;
}

bool rows_equal(const HiddenStates& a, const HiddenStates& b, std::size_t row) {
  const auto ra = a.row(row), rb = b.row(row);
  return std::equal(ra.begin(), ra.end(), rb.begin(), rb.end());
}

}  // namespace

TEST(ToyTokenizer, RepeatedWordsShareIdsAndOffsets) {
  const ToyTokenizer tok(1024);
  const auto t = tok.tokenize("cat cat");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.token_ids[0], t.token_ids[1]);
  EXPECT_EQ(t.offsets[0], ByteRange(0, 3));
  EXPECT_EQ(t.offsets[1], ByteRange(4, 7));
}

TEST(ToyTokenizer, EmptyTextGivesNoTokens) { EXPECT_EQ(ToyTokenizer(1024).tokenize("").size(), 0u); }

TEST(ToyTokenizer, CaseFolds) {
  const auto t = ToyTokenizer(1024).tokenize("A a");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.token_ids[0], t.token_ids[1]);
}

TEST(ToyTokenizer, IdsStayBelowReservedEndToken) {
  const ToyTokenizer tok(16);
  EXPECT_EQ(tok.eos_id(), 15u);
  for (const auto id : tok.tokenize("one two three four five six seven eight nine ten").token_ids) EXPECT_LT(id, 15u);
}

TEST(ToyTokenizer, OffsetsSkipRunsOfWhitespace) {
  const auto t = ToyTokenizer(64).tokenize("  a\t\nbc  ");
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t.offsets[0], ByteRange(2, 3));
  EXPECT_EQ(t.offsets[1], ByteRange(5, 7));
}

TEST(ToyInit, SameSeedBitwiseIdentical) {
  const auto a = ToyModel::init(small(5)), b = ToyModel::init(small(5));
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
}

TEST(ToyInit, DifferentSeedsDiffer) {
  const auto a = ToyModel::init(small(1)), b = ToyModel::init(small(2));
  EXPECT_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
}

TEST(ToyInit, RejectsIndivisibleHeads) {
  auto c = small();
  c.dim = 6;
  c.n_heads = 4;
  try {
    ToyModel::init(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::invalid_config);
  }
  c = small();
  c.n_layers = 0;
  EXPECT_THROW(ToyModel::init(c), Error);
}

TEST(ToyInit, ParameterScaleMatchesInitStd) {
  ToyModelConfig c;
  const auto m = ToyModel::init(c);
  double s2 = 0.0;
  for (double p : m.parameters()) s2 += p * p;
  const double sd = std::sqrt(s2 / static_cast<double>(m.parameter_count()));
  EXPECT_NEAR(sd, 0.02, 0.001);
}

TEST(ToyInit, TensorSlotsTileTheParameterBuffer) {
  const auto m = ToyModel::init(small());
  std::size_t off = 0;
  for (const auto& s : m.tensors()) {
    EXPECT_EQ(s.offset, off);
    off += s.size();
  }
  EXPECT_EQ(off, m.parameter_count());
  EXPECT_EQ(m.tensors().front().name, "token_embedding");
  EXPECT_EQ(m.tensors().back().name, "final_ln.bias");
}

TEST(Forward, CausalRowsIgnoreLaterTokens) {
  const auto m = ToyModel::init(small());
  const std::vector<std::uint32_t> a{0, 1, 2}, b{0, 1, 9};
  const auto ha = m.forward(a, AttentionMode::causal), hb = m.forward(b, AttentionMode::causal);
  EXPECT_TRUE(rows_equal(ha, hb, 0));
  EXPECT_TRUE(rows_equal(ha, hb, 1));
  EXPECT_FALSE(rows_equal(ha, hb, 2));
}

TEST(Forward, BidirectionalRowZeroSeesSuffix) {
  const auto m = ToyModel::init(small());
  const std::vector<std::uint32_t> a{0, 1, 2}, b{0, 1, 9};
  EXPECT_FALSE(rows_equal(m.forward(a, AttentionMode::bidirectional), m.forward(b, AttentionMode::bidirectional), 0));
}

TEST(Forward, ShapeDeterminismAndFiniteness) {
  const auto m = ToyModel::init(small());
  std::vector<std::uint32_t> ids(16);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<std::uint32_t>((i * 7) % 64);
  const auto h1 = m.forward(ids, AttentionMode::causal);
  const auto h2 = m.forward(ids, AttentionMode::causal);
  EXPECT_EQ(h1.rows, 16u);
  EXPECT_EQ(h1.dim, 8u);
  EXPECT_EQ(h1.data, h2.data);
  EXPECT_TRUE(h1.all_finite());
}

TEST(Forward, TooLongAndBadIds) {
  const auto m = ToyModel::init(small());
  std::vector<std::uint32_t> ids(17, 1);
  try {
    m.forward(ids, AttentionMode::causal);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::sequence_too_long);
  }
  const std::vector<std::uint32_t> bad{64};
  EXPECT_THROW(m.forward(bad, AttentionMode::causal), Error);
}

TEST(Forward, EmptySequenceGivesNoRows) {
  const auto m = ToyModel::init(small());
  EXPECT_EQ(m.forward(std::vector<std::uint32_t>{}, AttentionMode::causal).rows, 0u);
}

TEST(ToyBackendTest, EndTokenIsZeroWidthAtTextEnd) {
  ToyBackend be(ToyModel::init(small()));
  const auto out = be.encode_with_eos("a b");
  ASSERT_EQ(out.tokens.size(), 3u);
  EXPECT_EQ(out.tokens.token_ids.back(), 63u);
  EXPECT_EQ(out.tokens.offsets.back(), ByteRange(3, 3));
  const auto plain = be.encode("a b");
  EXPECT_TRUE(rows_equal(out.states, plain.states, 1));
}

TEST(Checkpoint, RoundTripPreservesFloatParameters) {
  const auto path = std::filesystem::temp_directory_path() / "echoembed_ckpt_test.bin";
  auto c = small(9);
  c.attention = AttentionMode::bidirectional;
  const auto m = ToyModel::init(c);
  save_checkpoint(m, path);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(back.config().dim, c.dim);
  EXPECT_EQ(back.config().seed, 9u);
  EXPECT_EQ(back.config().attention, AttentionMode::bidirectional);
  ASSERT_EQ(back.parameter_count(), m.parameter_count());
  for (std::size_t i = 0; i < m.parameter_count(); ++i) {
    EXPECT_EQ(back.parameters()[i], static_cast<double>(static_cast<float>(m.parameters()[i])));
  }
  // A second round trip is exact.
  save_checkpoint(back, path);
  const auto again = load_checkpoint(path);
  EXPECT_TRUE(std::equal(again.parameters().begin(), again.parameters().end(), back.parameters().begin()));
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruptFiles) {
  const auto path = std::filesystem::temp_directory_path() / "echoembed_bad_ckpt.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint(path), Error);
  EXPECT_THROW(load_checkpoint(path.string() + ".missing"), Error);
  std::filesystem::remove(path);
}
