#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "amom/amom.hpp"

using namespace amom;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "amom_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream os(p, std::ios::binary);
  os << body;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

}  // namespace

TEST(Vocab, OrderedByFrequencyThenToken) {
  const auto v = build_vocab({"a a b"});
  EXPECT_EQ(v.id("a"), 5);
  EXPECT_EQ(v.id("b"), 6);
  EXPECT_EQ(v.size(), 7u);

  const auto w = build_vocab({"z y", "y x z", "z"});
  EXPECT_EQ(w.id("z"), 5);
  EXPECT_EQ(w.id("y"), 6);
  EXPECT_EQ(w.id("x"), 7);
}

TEST(Vocab, MinFreqAboveAllCountsLeavesReservedOnly) {
  const auto v = build_vocab({"a a b"}, 3);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_EQ(v.id("a"), kUnk);
}

TEST(Vocab, RebuildIsIdentical) {
  const std::vector<std::string> text{"q w e r", "w e", "e"};
  EXPECT_EQ(build_vocab(text), build_vocab(text));
}

TEST(Vocab, SaveLoadUsesLineNumberPlusFive) {
  const auto v = build_vocab({"b a a c c c"});
  const auto p = scratch("vocab.txt");
  v.save(p.string());
  EXPECT_EQ(read_file(p), "c\na\nb\n");
  EXPECT_EQ(Vocabulary::load(p.string()), v);
}

TEST(Vocab, ReservedSpellingsNeverTokenizeToReservedIds) {
  const auto v = build_vocab({"x y"});
  for (const char* t : {"<pad>", "<unk>", "</s>", "<mask>", "<length>"}) EXPECT_EQ(v.id(t), kUnk);
  EXPECT_EQ(v.encode_line("</s> <mask> x"), (TokenSeq{kUnk, kUnk, 5, kEos}));
}

TEST(EncodeLine, RoundTripOovAndEmpty) {
  const auto v = build_vocab({"the cat sat"});
  const std::string line = "the  cat sat the";
  const auto ids = v.encode_line(line);
  EXPECT_EQ(ids.back(), kEos);
  EXPECT_EQ(v.decode_line(ids), "the cat sat the");
  EXPECT_EQ(v.encode_line("dog"), (TokenSeq{kUnk, kEos}));
  EXPECT_EQ(v.encode_line(""), TokenSeq{kEos});
  EXPECT_EQ(v.decode_line({kEos}), "");
}

TEST(Synthetic, TaskContracts) {
  for (auto task : {SyntheticTask::copy, SyntheticTask::reverse, SyntheticTask::sort}) {
    SyntheticTaskSpec s;
    s.task = task;
    s.pairs = 200;
    s.min_length = 3;
    s.max_length = 9;
    const auto c = generate_synthetic(s);
    ASSERT_EQ(c.size(), 200u);
    c.validate(s.vocab_size);
    for (const auto& p : c.pairs) {
      ASSERT_EQ(p.source.back(), kEos);
      ASSERT_EQ(p.target.back(), kEos);
      TokenSeq src(p.source.begin(), p.source.end() - 1), tgt(p.target.begin(), p.target.end() - 1);
      EXPECT_GE(src.size(), 3u);
      EXPECT_LE(src.size(), 9u);
      for (TokenId t : src) EXPECT_FALSE(is_reserved(t));
      TokenSeq want = src;
      if (task == SyntheticTask::reverse) std::reverse(want.begin(), want.end());
      if (task == SyntheticTask::sort) std::sort(want.begin(), want.end());
      EXPECT_EQ(tgt, want);
    }
  }
}

TEST(Synthetic, DecimalVocabularyRendersPairs) {
  const auto v = Vocabulary::synthetic(32);
  EXPECT_EQ(v.encode_line("7 12 5"), (TokenSeq{7, 12, 5, kEos}));
  SyntheticTaskSpec s;
  s.task = SyntheticTask::reverse;
  s.pairs = 20;
  for (const auto& p : generate_synthetic(s).pairs) {
    auto toks = split_whitespace(v.decode_line(p.source));
    std::reverse(toks.begin(), toks.end());
    std::string want;
    for (const auto& t : toks) want += (want.empty() ? "" : " ") + t;
    EXPECT_EQ(v.decode_line(p.target), want);
  }
}

TEST(Synthetic, AmbiguousTargetsUseOneTable) {
  SyntheticTaskSpec s;
  s.task = SyntheticTask::ambiguous_translate;
  s.pairs = 500;
  s.seed = 9;
  const auto c = generate_synthetic(s);
  const AmbiguousTables tables(s.vocab_size, s.seed);
  std::size_t a = 0, b = 0;
  for (const auto& p : c.pairs) {
    const auto v = tables.classify(p.source, p.target);
    ASSERT_NE(v, AmbiguousTables::Verdict::inconsistent);
    (v == AmbiguousTables::Verdict::all_a ? a : b)++;
  }
  EXPECT_GT(a, 150u);
  EXPECT_GT(b, 150u);
}

TEST(Synthetic, TablesAreDisjointBijections) {
  const AmbiguousTables t(32, 4);
  std::set<TokenId> seen;
  for (std::size_t i = 0; i < t.symbols(); ++i) {
    const TokenId s = static_cast<TokenId>(kFirstContentId + i);
    EXPECT_NE(t.a(s), t.b(s));
    seen.insert(t.a(s));
    seen.insert(t.b(s));
  }
  EXPECT_EQ(seen.size(), 2 * t.symbols());
}

TEST(Synthetic, CheckerRejectsMixedTables) {
  const AmbiguousTables t(32, 4);
  const TokenSeq src{5, 6, 7, kEos};
  EXPECT_EQ(t.classify(src, {t.a(5), t.a(6), t.a(7), kEos}), AmbiguousTables::Verdict::all_a);
  EXPECT_EQ(t.classify(src, {t.b(5), t.b(6), t.b(7), kEos}), AmbiguousTables::Verdict::all_b);
  EXPECT_EQ(t.classify(src, {t.a(5), t.b(6), t.a(7), kEos}), AmbiguousTables::Verdict::inconsistent);
  EXPECT_EQ(t.classify(src, {t.a(5), t.a(6), kEos}), AmbiguousTables::Verdict::inconsistent);
}

TEST(Synthetic, SeedReproducibility) {
  SyntheticTaskSpec s;
  s.task = SyntheticTask::ambiguous_translate;
  s.pairs = 300;
  EXPECT_EQ(generate_synthetic(s).pairs, generate_synthetic(s).pairs);
  auto other = s;
  other.seed = 2;
  EXPECT_NE(generate_synthetic(s).pairs, generate_synthetic(other).pairs);
}

TEST(Synthetic, SpecValidation) {
  SyntheticTaskSpec s;
  s.pairs = 0;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = {};
  s.min_length = 5;
  s.max_length = 4;
  EXPECT_THROW(generate_synthetic(s), ConfigError);
  s = {};
  EXPECT_THROW(s.validate(10), ConfigError);
  EXPECT_THROW(parse_synthetic_task("shuffle"), ConfigError);
  EXPECT_EQ(parse_synthetic_task("ambiguous-translate"), SyntheticTask::ambiguous_translate);
}

TEST(CorpusFiles, SaveLoadRoundTripKeepsTags) {
  SyntheticTaskSpec s;
  s.pairs = 40;
  auto c = generate_synthetic(s);
  for (std::size_t i = 0; i < c.size(); i += 3) c.pairs[i].tag = Provenance::distilled;
  const auto v = Vocabulary::synthetic(s.vocab_size);
  const auto src = scratch("rt.src"), tgt = scratch("rt.tgt"), tag = scratch("rt.tag");
  save_corpus(c, v, src.string(), tgt.string(), tag.string());
  const auto back = load_corpus(src.string(), tgt.string(), v, tag.string());
  EXPECT_EQ(back.skipped_blank, 0u);
  EXPECT_EQ(back.corpus.pairs, c.pairs);
}

TEST(CorpusFiles, MismatchedLineCountsNameBothCounts) {
  const auto src = scratch("mm.src"), tgt = scratch("mm.tgt");
  write_file(src, "a\nb\nc\n");
  write_file(tgt, "a\nb\n");
  const auto v = build_vocab({"a b c"});
  try {
    load_corpus(src.string(), tgt.string(), v);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2"), std::string::npos) << msg;
  }
  EXPECT_THROW(load_corpus((scratch("none.src")).string(), tgt.string(), v), DataError);
}

TEST(CorpusFiles, CrlfAcceptedAndBlankPairsCounted) {
  const auto src = scratch("crlf.src"), tgt = scratch("crlf.tgt");
  write_file(src, "a b\r\n\r\nc\r\n");
  write_file(tgt, "b a\r\nx\r\nc\r\n");
  const auto v = build_vocab({"a b c"});
  const auto got = load_corpus(src.string(), tgt.string(), v);
  EXPECT_EQ(got.skipped_blank, 1u);
  ASSERT_EQ(got.corpus.size(), 2u);
  EXPECT_EQ(v.decode_line(got.corpus.pairs[0].source), "a b");
  EXPECT_EQ(v.decode_line(got.corpus.pairs[1].target), "c");
  for (const auto& p : got.corpus.pairs)
    for (TokenId t : p.target) EXPECT_NE(t, kUnk);
}

TEST(CorpusFiles, LoadingDoesNotTouchInputs) {
  const auto src = scratch("ro.src"), tgt = scratch("ro.tgt");
  write_file(src, "a b\r\n");
  write_file(tgt, "b a\r\n");
  (void)load_corpus(src.string(), tgt.string(), build_vocab({"a b"}));
  EXPECT_EQ(read_file(src), "a b\r\n");
}

TEST(Corpus, ValidateAndCombine) {
  ParallelCorpus c;
  c.pairs.push_back({{5, kEos}, {}, Provenance::raw});
  EXPECT_THROW(c.validate(10), DataError);
  c.pairs[0].target = {12, kEos};
  EXPECT_THROW(c.validate(10), DataError);
  c.pairs[0].target = {6, kEos};
  EXPECT_NO_THROW(c.validate(10));

  ParallelCorpus d;
  d.pairs.push_back({{7, kEos}, {7, kEos}, Provenance::distilled});
  const auto both = combine(c, d);
  ASSERT_EQ(both.size(), 2u);
  EXPECT_EQ(both.pairs[0].tag, Provenance::raw);
  EXPECT_EQ(both.pairs[1].tag, Provenance::distilled);
  EXPECT_EQ(both.max_source_length(), 2u);
}
