#include <gtest/gtest.h>

#include <functional>
#include <map>

#include "amom/amom.hpp"
#include "metric_oracles.hpp"

using namespace amom;

namespace {

using oracle::Seq;
using oracle::oracle_bleu;
using oracle::oracle_lcs;
using oracle::oracle_levenshtein;
using oracle::random_seq;

std::vector<std::string> words(const std::string& s) { return split_whitespace(s); }
std::vector<std::vector<std::string>> one(const std::string& s) { return {words(s)}; }

}  // namespace

// ---------------------------------------------------------------------- BLEU

TEST(Bleu, IdenticalIsHundred) {
  const std::vector<Seq> h{{1, 2, 3, 4, 5}, {6, 7, 8, 9}};
  EXPECT_DOUBLE_EQ(corpus_bleu(h, h).bleu, 100.0);
}

TEST(Bleu, ClippedUnigramAndNoBigram) {
  const auto rep = corpus_bleu(one("the the the"), one("the cat"));
  EXPECT_DOUBLE_EQ(rep.precisions[0], 1.0 / 3.0);
  EXPECT_EQ(rep.matches[1], 0u);
  EXPECT_EQ(rep.bleu, 0.0);
}

TEST(Bleu, DisjointIsZero) {
  EXPECT_EQ(corpus_bleu(std::vector<Seq>{{1, 2, 3, 4}}, std::vector<Seq>{{5, 6, 7, 8}}).bleu, 0.0);
}

TEST(Bleu, BrevityPenalty) {
  const std::vector<Seq> h{{1, 2, 3, 4}}, r{{1, 2, 3, 4, 5, 6}};
  const auto rep = corpus_bleu(h, r);
  EXPECT_NEAR(rep.brevity_penalty, std::exp(1.0 - 6.0 / 4.0), 1e-15);
  EXPECT_NEAR(rep.bleu, 100.0 * std::exp(1.0 - 6.0 / 4.0), 1e-9);
}

TEST(Bleu, ReportIsSelfConsistent) {
  CounterRng rng(5, "analyze");
  std::vector<Seq> h, r;
  for (int i = 0; i < 20; ++i) {
    h.push_back(random_seq(rng, 12, 3));
    r.push_back(random_seq(rng, 12, 3));
  }
  const auto rep = corpus_bleu(h, r);
  double lp = 0;
  for (double p : rep.precisions) lp += std::log(p);
  EXPECT_NEAR(rep.bleu, rep.brevity_penalty * std::exp(lp / 4) * 100, 1e-9);
  EXPECT_GE(rep.bleu, 0.0);
  EXPECT_LE(rep.bleu, 100.0);
}

TEST(Bleu, MatchesBruteForceOracle) {
  CounterRng rng(1, "analyze");
  std::size_t nonzero = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Seq> h, r;
    const std::size_t n = 1 + rng.below(5);
    for (std::size_t i = 0; i < n; ++i) {
      h.push_back(random_seq(rng, 10, 4));
      // references are noisy edits of the hypothesis so higher orders match
      Seq ref = h.back();
      for (auto& t : ref)
        if (rng.bernoulli(0.2)) t = static_cast<int>(rng.below(4));
      if (rng.bernoulli(0.5)) ref.push_back(static_cast<int>(rng.below(4)));
      r.push_back(ref);
    }
    const double got = corpus_bleu(h, r).bleu, want = oracle_bleu(h, r);
    EXPECT_NEAR(got, want, 1e-9) << "trial " << trial;
    nonzero += want > 0;
  }
  EXPECT_GT(nonzero, 50u);
}

TEST(Bleu, EmptyCorpusAndMisalignmentThrow) {
  EXPECT_THROW(corpus_bleu(std::vector<Seq>{}, std::vector<Seq>{}), Error);
  EXPECT_THROW(corpus_bleu(std::vector<Seq>{{1}}, std::vector<Seq>{}), Error);
}

TEST(Bleu, PermutationInvariant) {
  CounterRng rng(3, "analyze");
  std::vector<Seq> h, r;
  for (int i = 0; i < 30; ++i) {
    h.push_back(random_seq(rng, 10, 3));
    r.push_back(random_seq(rng, 10, 3));
  }
  const double base = corpus_bleu(h, r).bleu;
  std::reverse(h.begin(), h.end());
  std::reverse(r.begin(), r.end());
  EXPECT_DOUBLE_EQ(corpus_bleu(h, r).bleu, base);
}

// --------------------------------------------------------------------- ROUGE

TEST(Rouge, WorkedExample) {
  const auto rep = rouge_scores(one("a b c"), one("a c"));
  EXPECT_NEAR(rep.rouge1_f, 80.0, 1e-12);
  EXPECT_NEAR(rep.rougeL_f, 80.0, 1e-12);
  EXPECT_EQ(rep.rouge2_f, 0.0);
}

TEST(Rouge, IdenticalAndDisjoint) {
  const auto same = rouge_scores(one("x y z"), one("x y z"));
  EXPECT_EQ(same.rouge1_f, 100.0);
  EXPECT_EQ(same.rouge2_f, 100.0);
  EXPECT_EQ(same.rougeL_f, 100.0);
  const auto single = rouge_scores(one("x"), one("x"));
  EXPECT_EQ(single.rouge2_f, 100.0);
  const auto none = rouge_scores(one("x y"), one("p q"));
  EXPECT_EQ(none.rouge1_f, 0.0);
  EXPECT_EQ(none.rouge2_f, 0.0);
  EXPECT_EQ(none.rougeL_f, 0.0);
}

TEST(Rouge, LcsMatchesMemoizedRecursion) {
  CounterRng rng(7, "analyze");
  for (int trial = 0; trial < 300; ++trial) {
    const Seq a = random_seq(rng, 12, 3), b = random_seq(rng, 12, 3);
    ASSERT_EQ(lcs_length(a, b), oracle_lcs(a, b)) << "trial " << trial;
  }
}

TEST(Rouge, AveragedOverPairsAndInRange) {
  const std::vector<std::vector<std::string>> h{words("a b c"), words("x y")}, r{words("a c"), words("x y")};
  const auto rep = rouge_scores(h, r);
  EXPECT_NEAR(rep.rouge1_f, 90.0, 1e-12);
  for (double v : {rep.rouge1_f, rep.rouge2_f, rep.rougeL_f}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 100.0);
  }
  EXPECT_THROW(rouge_scores(std::vector<Seq>{}, std::vector<Seq>{}), Error);
}

// ----------------------------------------------------------- edit similarity

TEST(EditSimilarity, WorkedExamples) {
  EXPECT_EQ(edit_similarity({"abc"}, {"abc"}), 100.0);
  EXPECT_NEAR(edit_similarity({"abc"}, {"abd"}), 100.0 * (1 - 1.0 / 3), 1e-12);
  EXPECT_EQ(edit_similarity({""}, {"ab"}), 0.0);
  EXPECT_EQ(edit_similarity({""}, {""}), 100.0);
  EXPECT_NEAR(edit_similarity({"abc", ""}, {"abd", ""}), (200.0 / 3 + 100) / 2, 1e-12);
}

TEST(EditSimilarity, LevenshteinMatchesOracle) {
  CounterRng rng(11, "analyze");
  for (int trial = 0; trial < 300; ++trial) {
    std::string a(rng.below(11), 'a'), b(rng.below(11), 'a');
    for (auto& ch : a) ch = static_cast<char>('a' + rng.below(3));
    for (auto& ch : b) ch = static_cast<char>('a' + rng.below(3));
    ASSERT_EQ(levenshtein(a, b), oracle_levenshtein(a, b)) << a << " / " << b;
  }
}

// ------------------------------------------------------------- bucketed BLEU

TEST(BucketedBleu, SingleBucketEqualsCorpus) {
  CounterRng rng(2, "analyze");
  std::vector<Seq> h, r, s;
  for (int i = 0; i < 25; ++i) {
    h.push_back(random_seq(rng, 10, 3));
    r.push_back(random_seq(rng, 10, 3));
    s.push_back(random_seq(rng, 20, 3));
  }
  const auto one = bucketed_bleu(h, r, s, {});
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].report.bleu, corpus_bleu(h, r).bleu);

  const auto low = bucketed_bleu(h, r, s, {100, 200});
  ASSERT_EQ(low.size(), 1u);
  EXPECT_EQ(low[0].hi, 100u);

  const auto parts = bucketed_bleu(h, r, s, {5, 10, 15});
  const auto whole = corpus_bleu(h, r);
  std::vector<std::size_t> m(4, 0), t(4, 0);
  std::size_t sentences = 0;
  for (const auto& b : parts) {
    sentences += b.sentences;
    for (int n = 0; n < 4; ++n) {
      m[n] += b.report.matches[n];
      t[n] += b.report.totals[n];
    }
  }
  EXPECT_EQ(sentences, h.size());
  EXPECT_EQ(m, whole.matches);
  EXPECT_EQ(t, whole.totals);
}

TEST(BucketedBleu, UnsortedEdgesRejected) {
  const std::vector<Seq> h{{1}};
  EXPECT_THROW(bucketed_bleu(h, h, h, {5, 3}), Error);
  EXPECT_THROW(bucketed_bleu(h, h, h, {5, 5}), Error);
}

// ------------------------------------------------------------------- latency

TEST(Latency, MoreIterationsCostMoreAndRatiosHold) {
  auto c = ModelConfig::toy(32);
  TransformerModel<float> nar(c, 1);
  c.autoregressive = true;
  TransformerModel<float> ar(c, 2);
  std::vector<TokenSeq> sample;
  CounterRng rng(1, "analyze");
  for (int i = 0; i < 4; ++i) {
    TokenSeq s(16);
    for (auto& t : s) t = static_cast<TokenId>(kFirstContentId + rng.below(20));
    s.push_back(kEos);
    sample.push_back(s);
  }
  const auto rep = measure_latency(ar, nar, sample, {1, 4});
  EXPECT_GT(rep.nar_ms.at(4), rep.nar_ms.at(1));
  EXPECT_GT(rep.ar_ms, 0.0);
  for (auto [t, s] : rep.speedup) EXPECT_DOUBLE_EQ(s, rep.ar_ms / rep.nar_ms.at(t));
  EXPECT_EQ(rep.ar_raw.size(), sample.size());
  EXPECT_THROW(measure_latency(ar, nar, {}, {1}), Error);
  EXPECT_THROW(measure_latency(ar, nar, sample, {1}, 2), Error);
}
