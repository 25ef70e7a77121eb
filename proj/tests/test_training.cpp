#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "training_oracles.hpp"

using namespace amom;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model(std::size_t vocab = 16) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ffn = 32;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.dropout_rate = 0.1;
  c.max_positions = 32;
  c.max_length_class = 16;
  return c;
}

ParallelCorpus task(SyntheticTask kind, std::size_t pairs, std::uint64_t seed, std::size_t vocab = 16,
                    std::size_t min_len = 2, std::size_t max_len = 6) {
  SyntheticTaskSpec s;
  s.task = kind;
  s.vocab_size = vocab;
  s.min_length = min_len;
  s.max_length = max_len;
  s.pairs = pairs;
  s.seed = seed;
  return generate_synthetic(s);
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("amom_test_training_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t line_count(const std::string& path) {
  std::ifstream is(path);
  std::size_t n = 0;
  std::string line;
  while (std::getline(is, line)) ++n;
  return n;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.tokens_per_batch = 64;
  cfg.lr = {1e-3, 10};
  cfg.valid_interval = 2;
  cfg.valid_sentences = 5;
  cfg.average_best = 2;
  return cfg;
}

}  // namespace

// ------------------------------------------------------------------ losses

TEST(MaskedCeLoss, ConfidentCorrectLogitsGiveZero) {
  Tensor<float> logits({2, 5}, -1e4f);
  logits[0 * 5 + 3] = 0;
  logits[1 * 5 + 1] = 0;
  const std::vector<TokenId> gold{3, 1};
  const std::vector<std::size_t> rows{0, 1};
  EXPECT_NEAR(masked_ce_loss(logits, gold, rows, 0.0).item(), 0.0, 1e-6);
}

TEST(MaskedCeLoss, UniformLogitsGiveLogV) {
  Tensor<double> logits({3, 7}, 0.25);
  const std::vector<TokenId> gold{1, 5, 6};
  const std::vector<std::size_t> rows{0, 2};
  EXPECT_NEAR(masked_ce_loss(logits, gold, rows, 0.0).item(), std::log(7.0), 1e-12);
  EXPECT_NEAR(masked_ce_loss(logits, gold, rows, 0.1).item(), std::log(7.0), 1e-12);
}

TEST(MaskedCeLoss, SmoothingHandValue) {
  // Two classes with log-probs log(0.8), log(0.2), gold = 0, eps = 0.1:
  // (1 - eps) * -log 0.8 + eps * mean(-log 0.8, -log 0.2).
  Tensor<double> logits({1, 2}, std::vector<double>{std::log(0.8), std::log(0.2)});
  const std::vector<TokenId> gold{0};
  const std::vector<std::size_t> rows{0};
  const double want = 0.9 * -std::log(0.8) + 0.1 * 0.5 * (-std::log(0.8) - std::log(0.2));
  EXPECT_NEAR(masked_ce_loss(logits, gold, rows, 0.1).item(), want, 1e-12);
}

TEST(MaskedCeLoss, UnmaskedRowsContributeNothing) {
  CounterRng r(1, "test");
  Tensor<float> logits({6, 9});
  for (auto& v : logits.data()) v = static_cast<float>(r.uniform(-3, 3));
  const std::vector<TokenId> gold{5, 6, 7, 8, 5, 6};
  const std::vector<std::size_t> rows{1, 4};
  const float base = masked_ce_loss(logits, gold, rows, 0.1).item();
  for (std::size_t row : {0, 2, 3, 5}) {
    auto moved = logits.clone();
    for (std::size_t v = 0; v < 9; ++v) moved[row * 9 + v] += static_cast<float>(r.uniform(-50, 50));
    EXPECT_EQ(masked_ce_loss(moved, gold, rows, 0.1).item(), base);
  }
  logits.set_requires_grad();
  Tape<float> tape;
  tape.backprop(masked_ce_loss(logits, gold, rows, 0.1));
  for (std::size_t row : {0, 2, 3, 5})
    for (std::size_t v = 0; v < 9; ++v) EXPECT_EQ(logits.grad()[row * 9 + v], 0.0f);
}

TEST(MaskedCeLoss, EmptyMaskSetIsRejected) {
  Tensor<float> logits({2, 5});
  const std::vector<TokenId> gold{5, 5};
  EXPECT_THROW(masked_ce_loss(logits, gold, std::span<const std::size_t>{}, 0.0), Error);
}

// ------------------------------------------------------------ train step

TEST(TrainStep, VanillaPolicyMatchesPlainCmlmBitForBit) {
  const auto data = task(SyntheticTask::reverse, 8, 3);
  TrainConfig cfg;
  cfg.policy = MaskingPolicy::vanilla_cmlm();
  cfg.lr = {1e-3, 4};
  TransformerModel<float> a(small_model(), 7), b(small_model(), 7);
  RngStreams ra(11), rb(11);
  TrainerState<float> state;
  AdamState<float> adam;
  for (std::uint64_t u = 0; u < 3; ++u) {
    const auto rep = amom_train_step(a, {data.pairs}, cfg, ra, state);
    const auto ref = oracle::plain_cmlm_step(b, data.pairs, cfg, rb, adam, u);
    EXPECT_EQ(rep.l_cmlm, ref.loss) << "update " << u;
    EXPECT_EQ(rep.l_length, ref.length_loss);
    EXPECT_EQ(rep.l_aday, 0.0);
    EXPECT_EQ(oracle::gradients_of(a), oracle::gradients_of(b));
    EXPECT_TRUE(oracle::bit_identical(a, b));
  }
}

TEST(TrainStep, TotalIsTheSumOfParts) {
  const auto data = task(SyntheticTask::reverse, 6, 4);
  for (int passes : {2, 3}) {
    TrainConfig cfg;
    cfg.policy.refine_passes = passes;
    TransformerModel<float> m(small_model(), 8);
    RngStreams rng(5);
    TrainerState<float> st;
    const auto rep = amom_train_step(m, {data.pairs}, cfg, rng, st);
    EXPECT_GT(rep.l_aday, 0.0);
    EXPECT_NEAR(rep.l_total, rep.l_cmlm + rep.l_aday + cfg.length_loss_weight * rep.l_length, 1e-6);
    EXPECT_EQ(rep.masked_token_counts.size(), static_cast<std::size_t>(passes));
  }
}

TEST(TrainStep, SecondPassLossIsAddedNotChained) {
  // Replaying the same draws with the second pass switched off reproduces the
  // first-pass loss exactly; the joint gradients differ only by the second
  // pass's contribution.
  const auto data = task(SyntheticTask::reverse, 6, 5);
  TrainConfig cfg;
  auto model_cfg = small_model();
  model_cfg.dropout_rate = 0;
  TransformerModel<float> joint(model_cfg, 9);
  RngStreams r1(6);
  const auto rep = amom_forward_backward(joint, data.pairs, cfg, r1);
  const auto g_joint = oracle::gradients_of(joint);

  TransformerModel<float> first(model_cfg, 9);
  TrainConfig one = cfg;
  one.policy.second_pass = SecondPassStrategy::none;
  one.policy.refine_passes = 1;
  RngStreams r2(6);
  const auto rep1 = amom_forward_backward(first, data.pairs, one, r2);
  EXPECT_EQ(rep1.l_cmlm, rep.l_cmlm);
  const auto g_first = oracle::gradients_of(first);

  bool second_contributes = false;
  for (std::size_t i = 0; i < g_joint.size(); ++i)
    for (std::size_t j = 0; j < g_joint[i].size(); ++j)
      second_contributes = second_contributes || std::abs(g_joint[i][j] - g_first[i][j]) > 1e-6;
  EXPECT_TRUE(second_contributes);
  EXPECT_EQ(rep1.l_length, rep.l_length);
}

TEST(TrainStep, SameSeedSameReport) {
  const auto data = task(SyntheticTask::reverse, 6, 6);
  TrainConfig cfg;
  LossReport reps[2];
  std::vector<std::vector<float>> grads[2];
  for (int k = 0; k < 2; ++k) {
    TransformerModel<float> m(small_model(), 10);
    RngStreams rng(7);
    TrainerState<float> st;
    reps[k] = amom_train_step(m, {data.pairs}, cfg, rng, st);
    grads[k] = oracle::gradients_of(m);
  }
  EXPECT_EQ(reps[0].l_total, reps[1].l_total);
  EXPECT_EQ(reps[0].l_aday, reps[1].l_aday);
  EXPECT_EQ(reps[0].beta, reps[1].beta);
  EXPECT_EQ(reps[0].masked_token_counts, reps[1].masked_token_counts);
  EXPECT_EQ(grads[0], grads[1]);
}

TEST(TrainStep, AccumulationAveragesBatches) {
  const auto data = task(SyntheticTask::copy, 8, 7);
  std::vector<SentencePair> half1(data.pairs.begin(), data.pairs.begin() + 4), half2(data.pairs.begin() + 4, data.pairs.end());
  TrainConfig cfg;
  cfg.policy = MaskingPolicy::vanilla_cmlm();
  cfg.clip_norm = 0;
  TransformerModel<float> m(small_model(), 11);
  RngStreams rng(8);
  TrainerState<float> st;
  const auto rep = amom_train_step(m, {half1, half2}, cfg, rng, st);
  TransformerModel<float> m1(small_model(), 11), m2(small_model(), 11);
  RngStreams rng2(8);
  const auto a = amom_forward_backward(m1, half1, cfg, rng2);
  const auto b = amom_forward_backward(m2, half2, cfg, rng2);
  EXPECT_NEAR(rep.l_cmlm, (a.l_cmlm + b.l_cmlm) / 2, 1e-12);
  EXPECT_EQ(st.update, 1u);
}

TEST(TrainStep, ReportsStayFiniteOverSeveralUpdates) {
  const auto data = task(SyntheticTask::reverse, 40, 8);
  TrainConfig cfg;
  cfg.lr = {1e-3, 5};
  TransformerModel<float> m(small_model(), 12);
  RngStreams rng(9);
  TrainerState<float> st;
  BatchStream stream(data, 64, rng["data-order"]);
  for (int u = 0; u < 10; ++u) {
    const auto rep = amom_train_step(m, {stream.next()}, cfg, rng, st);
    ASSERT_TRUE(std::isfinite(rep.l_total));
    ASSERT_GE(rep.beta, 0.0);
    ASSERT_LE(rep.beta, 1.0);
    ASSERT_GT(rep.alpha_pass1, 0.0);
  }
}

TEST(TrainStep, AutoregressiveStepTrainsOnEveryToken) {
  auto c = small_model();
  c.autoregressive = true;
  TransformerModel<float> m(c, 13);
  const auto data = task(SyntheticTask::copy, 5, 9);
  RngStreams rng(10);
  TrainerState<float> st;
  const auto rep = amom_train_step(m, {data.pairs}, TrainConfig{}, rng, st);
  std::size_t tokens = 0;
  for (const auto& p : data.pairs) tokens += p.target.size();
  EXPECT_EQ(rep.masked_token_counts, std::vector<std::size_t>{tokens});
}

TEST(TrainConfig, Validation) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate(10));
  cfg.label_smoothing = 0.4;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.length_loss_weight = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.tokens_per_batch = 8;
  EXPECT_THROW(cfg.validate(9), ConfigError);
}

// ----------------------------------------------------------------- batching

TEST(MakeBatches, EveryPairOnceWithinBudget) {
  const auto data = task(SyntheticTask::copy, 300, 10, 16, 1, 12);
  CounterRng rng(1, "data-order");
  const auto batches = make_batches(data, 50, rng);
  std::vector<int> seen(data.size(), 0);
  for (const auto& b : batches) {
    std::size_t worst = 0;
    for (auto i : b) {
      ++seen[i];
      worst = std::max(worst, pair_cost(data.pairs[i]));
    }
    EXPECT_LE(worst * b.size(), 50u);
  }
  for (int s : seen) EXPECT_EQ(s, 1);
  CounterRng again(1, "data-order");
  EXPECT_EQ(make_batches(data, 50, again), batches);
  EXPECT_THROW(make_batches(data, 5, rng), ConfigError);
}

// ---------------------------------------------------------------- averaging

TEST(AverageCheckpoints, MeanBestAndIdempotence) {
  auto dir = scratch("average");
  auto cfg = small_model();
  TransformerModel<float> zero(cfg, 1), two(cfg, 1), other(cfg, 2);
  for (auto& p : zero.parameters()) std::fill(p.data().begin(), p.data().end(), 0.0f);
  for (auto& p : two.parameters()) std::fill(p.data().begin(), p.data().end(), 2.0f);
  auto save = [&](const TransformerModel<float>& m, const std::string& name, double bleu) {
    CheckpointMeta meta;
    meta.path = (dir / name).string();
    meta.valid_bleu = bleu;
    save_checkpoint(meta.path, m, meta);
    return meta;
  };
  auto m0 = save(zero, "zero.ckpt", 10), m2 = save(two, "two.ckpt", 20), mo = save(other, "other.ckpt", 30);

  auto mean = average_checkpoints({m0, m2}, 5);
  for (auto& p : mean.parameters())
    for (float v : p.data()) ASSERT_EQ(v, 1.0f);
  EXPECT_TRUE(oracle::bit_identical(average_checkpoints({m0, m2, mo}, 1), other));
  EXPECT_TRUE(oracle::bit_identical(average_checkpoints({mo, mo}, 2), other));
  EXPECT_THROW(average_checkpoints({}, 1), Error);

  auto wider = cfg;
  wider.d_ffn = 48;
  TransformerModel<float> w(wider, 1);
  auto mw = save(w, "wider.ckpt", 5);
  EXPECT_THROW(average_checkpoints({m0, mw}, 2), ConfigError);
}

// --------------------------------------------------------------- train loop

TEST(TrainLoop, ZeroUpdatesWritesHeaderAndInitialCheckpoint) {
  auto dir = scratch("zero");
  const auto train = task(SyntheticTask::copy, 20, 11), valid = task(SyntheticTask::copy, 5, 12);
  auto cfg = quick_config();
  cfg.max_updates = 0;
  const auto res = train_loop(small_model(), cfg, train, valid, dir);
  EXPECT_EQ(line_count(res.metrics_path), 1u);
  std::ifstream is(res.metrics_path);
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header, kMetricsHeader);
  ASSERT_EQ(res.checkpoints.size(), 1u);
  EXPECT_EQ(res.checkpoints[0].update, 0u);
  EXPECT_TRUE(fs::exists(res.averaged_path));
}

TEST(TrainLoop, MetricsRowCountAndCheckpoints) {
  auto dir = scratch("rows");
  const auto train = task(SyntheticTask::copy, 40, 13), valid = task(SyntheticTask::copy, 5, 14);
  auto cfg = quick_config();
  cfg.max_updates = 7;
  cfg.valid_interval = 2;
  const auto res = train_loop(small_model(), cfg, train, valid, dir);
  EXPECT_EQ(line_count(res.metrics_path), 7u / 2 + 1);
  EXPECT_EQ(res.checkpoints.size(), 4u);
  for (std::size_t i = 0; i < res.checkpoints.size(); ++i) {
    EXPECT_EQ(res.checkpoints[i].update, 2 * i);
    EXPECT_TRUE(fs::exists(res.checkpoints[i].path));
  }
  auto averaged = load_checkpoint(res.averaged_path);
  EXPECT_EQ(averaged.meta.update, 7u);
}

TEST(TrainLoop, SameSeedSameMetrics) {
  const auto train = task(SyntheticTask::reverse, 40, 15), valid = task(SyntheticTask::reverse, 5, 16);
  auto cfg = quick_config();
  cfg.max_updates = 4;
  std::vector<std::string> rows[2];
  for (int k = 0; k < 2; ++k) {
    auto dir = scratch("repro" + std::to_string(k));
    const auto res = train_loop(small_model(), cfg, train, valid, dir);
    std::ifstream is(res.metrics_path);
    std::string line;
    while (std::getline(is, line)) rows[k].push_back(line.substr(0, line.rfind(',')));
  }
  EXPECT_EQ(rows[0], rows[1]);
}

TEST(TrainLoop, RejectsBadInputs) {
  auto dir = scratch("bad");
  const auto train = task(SyntheticTask::copy, 20, 17);
  auto cfg = quick_config();
  EXPECT_THROW(train_loop(small_model(), cfg, train, ParallelCorpus{}, dir), DataError);
  cfg.tokens_per_batch = 3;
  EXPECT_THROW(train_loop(small_model(), cfg, train, train, dir), ConfigError);
}

TEST(TrainLoop, CheckpointReloadGivesIdenticalReport) {
  auto dir = scratch("reload");
  const auto data = task(SyntheticTask::reverse, 6, 18);
  TransformerModel<float> m(small_model(), 14);
  save_checkpoint((dir / "m.ckpt").string(), m);
  auto loaded = load_checkpoint((dir / "m.ckpt").string()).model;
  RngStreams ra(3), rb(3);
  TrainConfig cfg;
  const auto a = amom_forward_backward(m, data.pairs, cfg, ra);
  const auto b = amom_forward_backward(loaded, data.pairs, cfg, rb);
  EXPECT_EQ(a.l_total, b.l_total);
  EXPECT_EQ(a.l_aday, b.l_aday);
}

TEST(TrainLoop, CopyTaskReachesNearPerfectBleu) {
  auto dir = scratch("copy");
  SyntheticTaskSpec spec;
  spec.task = SyntheticTask::copy;
  spec.vocab_size = 32;
  spec.pairs = 4200;
  spec.seed = 19;
  auto all = generate_synthetic(spec);
  ParallelCorpus train, valid;
  train.pairs.assign(all.pairs.begin(), all.pairs.begin() + 4000);
  valid.pairs.assign(all.pairs.begin() + 4000, all.pairs.end());
  TrainConfig cfg;
  cfg.max_updates = 2000;
  cfg.tokens_per_batch = 512;
  cfg.lr = {1e-3, 400};
  cfg.valid_interval = 1000;
  cfg.valid_sentences = 200;
  auto model = ModelConfig::toy(32);
  model.max_positions = 64;
  model.max_length_class = 32;
  const auto res = train_loop(model, cfg, train, valid, dir);
  const auto averaged = load_checkpoint(res.averaged_path).model;
  EXPECT_GE(validation_bleu(averaged, valid, 1, 3).bleu, 99.0);
}

// ------------------------------------------------------------- distillation

TEST(Distill, CopyTeacherReproducesSources) {
  auto dir = scratch("distill");
  auto c = small_model(12);
  c.autoregressive = true;
  c.d_model = 32;
  c.d_ffn = 64;
  c.dropout_rate = 0;
  const auto train = task(SyntheticTask::copy, 3000, 20, 12, 2, 5);
  const auto valid = task(SyntheticTask::copy, 30, 21, 12, 2, 5);
  TrainConfig cfg;
  cfg.max_updates = 600;
  cfg.tokens_per_batch = 256;
  cfg.lr = {2e-3, 100};
  cfg.label_smoothing = 0;
  cfg.valid_interval = 600;
  cfg.average_best = 1;
  const auto res = train_loop(c, cfg, train, valid, dir);
  const auto teacher = load_checkpoint(res.averaged_path).model;

  const auto first = distill_corpus(teacher, valid, 20);
  EXPECT_EQ(first.dropped, 0u);
  ASSERT_EQ(first.corpus.size(), valid.size());
  for (const auto& p : first.corpus.pairs) {
    EXPECT_EQ(p.target, p.source);
    EXPECT_EQ(p.tag, Provenance::distilled);
  }
  const auto second = distill_corpus(teacher, valid, 20);
  std::map<std::size_t, int> h1, h2;
  for (const auto& p : first.corpus.pairs) ++h1[p.target.size()];
  for (const auto& p : second.corpus.pairs) ++h2[p.target.size()];
  EXPECT_EQ(h1, h2);

  const auto both = combine(valid, first.corpus);
  EXPECT_EQ(both.size(), 2 * valid.size());
  std::size_t raw = 0, distilled = 0;
  for (const auto& p : both.pairs) (p.tag == Provenance::raw ? raw : distilled)++;
  EXPECT_EQ(raw, valid.size());
  EXPECT_EQ(distilled, valid.size());
}

TEST(Distill, RequiresAutoregressiveTeacher) {
  TransformerModel<float> nar(small_model(), 1);
  EXPECT_THROW(distill_corpus(nar, task(SyntheticTask::copy, 3, 1), 10), ConfigError);
}
