#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amom/checkpoint.hpp"
#include "amom/data.hpp"
#include "amom/eval.hpp"
#include "amom/inference.hpp"
#include "amom/masking.hpp"
#include "amom/model.hpp"
#include "amom/ops.hpp"
#include "amom/optim.hpp"

namespace amom {

struct TrainConfig {
  MaskingPolicy policy;
  std::size_t max_updates = 8000;
  std::size_t tokens_per_batch = 4096;
  std::size_t update_freq = 1;  // batches accumulated per update
  LrSchedule lr;
  double label_smoothing = 0.1;
  double length_loss_weight = 0.1;
  double clip_norm = 2.5;
  std::size_t valid_interval = 1000;
  std::size_t valid_sentences = 200;  // validation subset used for the logged BLEU; 0 = all
  std::size_t valid_length_beam = 3;
  std::size_t average_best = 5;
  std::uint64_t seed = 1;

  void validate(std::size_t longest_sentence = 0) const {
    policy.validate();
    if (!(label_smoothing >= 0 && label_smoothing <= 0.3)) throw ConfigError("train: label_smoothing must lie in [0, 0.3]");
    if (!(length_loss_weight >= 0)) throw ConfigError("train: length_loss_weight must be >= 0");
    if (!(clip_norm >= 0)) throw ConfigError("train: clip_norm must be >= 0");
    if (update_freq < 1) throw ConfigError("train: update_freq must be >= 1");
    if (valid_interval < 1) throw ConfigError("train: valid_interval must be >= 1");
    if (average_best < 1) throw ConfigError("train: average_best must be >= 1");
    if (!(lr.base_lr > 0) || lr.warmup_steps < 1) throw ConfigError("train: lr and warmup must be positive");
    if (tokens_per_batch < longest_sentence) {
      throw ConfigError("train: tokens_per_batch " + std::to_string(tokens_per_batch) + " is below the longest sentence (" +
                        std::to_string(longest_sentence) + " tokens)");
    }
  }
};

struct LossReport {
  double l_cmlm = 0;
  double l_aday = 0;
  double l_length = 0;
  double l_total = 0;
  double beta = 0;         // mean first-pass correctness over the batch
  double alpha_pass1 = 0;  // mean first-pass target mask ratio
  std::vector<std::size_t> masked_token_counts;  // per pass
  double grad_norm = 0;
};

// Mean label-smoothed NLL over the rows `mask_positions` of `logits`
// ([rows, V]); `gold_ids` is indexed by row as well.
template <class T>
Tensor<T> masked_ce_loss(const Tensor<T>& logits, std::span<const TokenId> gold_ids,
                         std::span<const std::size_t> mask_positions, double label_smoothing) {
  if (mask_positions.empty()) throw Error("masked_ce_loss: empty mask set");
  if (logits.rank() != 2 || gold_ids.size() != logits.dim(0)) throw ShapeError("masked_ce_loss: one gold id per logits row expected");
  std::vector<TokenId> targets;
  targets.reserve(mask_positions.size());
  for (auto p : mask_positions) {
    if (p >= logits.dim(0)) throw ShapeError("masked_ce_loss: mask position out of range");
    targets.push_back(gold_ids[p]);
  }
  return nll_loss(log_softmax(gather_rows(logits, mask_positions), 1), std::span<const TokenId>(targets), label_smoothing);
}

// Length loss: NLL of class L_Y - 1 under the encoder's length logits.
template <class T>
Tensor<T> length_loss(const EncoderOutput<T>& enc, const std::vector<TokenSeq>& targets) {
  const std::size_t classes = enc.length_logits.dim(1);
  std::vector<TokenId> cls;
  for (const auto& t : targets) {
    if (t.empty() || t.size() > classes) {
      throw DataError("length_loss: target length " + std::to_string(t.size()) + " outside [1, " + std::to_string(classes) + "]");
    }
    cls.push_back(static_cast<TokenId>(t.size() - 1));
  }
  return nll_loss(log_softmax(enc.length_logits, 1), std::span<const TokenId>(cls), 0.0);
}

namespace detail {

struct PassBatch {
  std::vector<TokenSeq> x;  // masked sources (without [LENGTH])
  std::vector<MaskedPass> y;
};

struct PassOutput {
  std::vector<TokenSeq> pred;        // per sentence, argmax at every target slot
  std::vector<std::vector<double>> conf;  // per sentence, log-prob of the slot's pass-2 content
};

// Flattened decoder rows of the masked slots and gold ids per row.
inline void masked_rows(const std::vector<MaskedPass>& passes, const std::vector<TokenSeq>& gold, std::size_t cols,
                        std::vector<std::size_t>& rows, std::vector<TokenId>& gold_flat) {
  rows.clear();
  gold_flat.assign(passes.size() * cols, kPad);
  for (std::size_t s = 0; s < passes.size(); ++s) {
    std::copy(gold[s].begin(), gold[s].end(), gold_flat.begin() + s * cols);
    for (auto p : passes[s].mask_positions) rows.push_back(s * cols + p);
  }
}

template <class T>
PassOutput read_predictions(const Tensor<T>& logits, const std::vector<MaskedPass>& passes, std::size_t cols, std::size_t V) {
  PassOutput out;
  const T* z = logits.data().data();
  for (std::size_t s = 0; s < passes.size(); ++s) {
    const std::size_t L = passes[s].y_input.size();
    TokenSeq pred(L);
    std::vector<double> conf(L);
    for (std::size_t p = 0; p < L; ++p) {
      const T* row = z + (s * cols + p) * V;
      const auto choice = best_in_row(row, V);
      pred[p] = choice.token;
      const TokenId content = passes[s].y_input[p] == kMask ? choice.token : passes[s].y_input[p];
      conf[p] = choice.log_prob + static_cast<double>(row[content]) - static_cast<double>(row[choice.token]);
    }
    out.pred.push_back(std::move(pred));
    out.conf.push_back(std::move(conf));
  }
  return out;
}

}  // namespace detail

// Forward and backward of one AMOM (or plain CMLM) batch. Gradients are
// accumulated into the model's parameters; nothing is updated.
//
// Pass 1 masks the target uniformly and the source at phi(alpha). Each
// further pass re-masks the target from the previous pass's argmax
// predictions (no gradient flows through them) and draws a fresh source
// mask at the new target ratio.
template <class T>
LossReport amom_forward_backward(const TransformerModel<T>& model, const std::vector<SentencePair>& batch,
                                 const TrainConfig& cfg, RngStreams& rng) {
  if (batch.empty()) throw Error("amom_train_step: empty batch");
  const auto& policy = cfg.policy;
  const std::size_t V = model.config().vocab_size;
  std::vector<TokenSeq> gold;
  for (const auto& p : batch) gold.push_back(p.target);

  Tape<T> tape;
  LossReport rep;
  detail::PassBatch pass;
  for (const auto& p : batch) {
    auto y = uniform_mask_y(p.target, rng["mask-y"]);
    pass.x.push_back(mask_x(p.source, y.alpha, policy.phi, rng["mask-x"]));
    rep.alpha_pass1 += y.alpha;
    pass.y.push_back(std::move(y));
  }
  rep.alpha_pass1 /= static_cast<double>(batch.size());

  auto run_pass = [&](const detail::PassBatch& pb, Tensor<T>& loss, Tensor<T>* len_loss) {
    const auto enc = model.encode(encoder_batch(pb.x), &rng["dropout"]);
    std::vector<TokenSeq> yin;
    for (const auto& y : pb.y) yin.push_back(y.y_input);
    const TokenBatch yb = TokenBatch::from(yin);
    const Tensor<T> logits = model.decode(yb, enc, &rng["dropout"]);
    std::vector<std::size_t> rows;
    std::vector<TokenId> gold_flat;
    detail::masked_rows(pb.y, gold, yb.cols, rows, gold_flat);
    rep.masked_token_counts.push_back(rows.size());
    loss = masked_ce_loss(logits, std::span<const TokenId>(gold_flat), std::span<const std::size_t>(rows), cfg.label_smoothing);
    if (len_loss) *len_loss = length_loss(enc, gold);
    return detail::read_predictions(logits, pb.y, yb.cols, V);
  };

  Tensor<T> l_cmlm, l_len;
  auto preds = run_pass(pass, l_cmlm, &l_len);
  for (std::size_t s = 0; s < batch.size(); ++s) rep.beta += compute_beta(preds.pred[s], gold[s], pass.y[s].mask_positions);
  rep.beta /= static_cast<double>(batch.size());

  std::optional<Tensor<T>> l_aday;
  for (int extra = 1; extra < policy.refine_passes; ++extra) {
    detail::PassBatch next;
    for (std::size_t s = 0; s < batch.size(); ++s) {
      const auto& prev = pass.y[s];
      MaskedPass y;
      if (policy.second_pass == SecondPassStrategy::uniform) {
        y = uniform_second_pass(preds.pred[s], gold[s], prev, policy, rng["mask-y"]);
      } else {
        const double beta = compute_beta(preds.pred[s], gold[s], prev.mask_positions);
        const auto plan = plan_second_pass(beta, policy.effective_psi(), policy.psi_convention);
        y = adaptive_mask_y(preds.pred[s], gold[s], prev, plan, policy, rng["mask-y"], preds.conf[s]);
      }
      next.x.push_back(mask_x(batch[s].source, y.alpha, policy.phi, rng["mask-x"]));
      next.y.push_back(std::move(y));
    }
    Tensor<T> l_pass;
    preds = run_pass(next, l_pass, nullptr);
    l_aday = l_aday ? add(*l_aday, l_pass) : l_pass;
    pass = std::move(next);
  }

  Tensor<T> total = l_cmlm;
  if (l_aday) total = add(total, *l_aday);
  total = add(total, scale(l_len, static_cast<T>(cfg.length_loss_weight)));
  rep.l_cmlm = l_cmlm.item();
  rep.l_aday = l_aday ? static_cast<double>(l_aday->item()) : 0.0;
  rep.l_length = l_len.item();
  rep.l_total = total.item();
  tape.backprop(total);
  return rep;
}

// Teacher-forced step of an autoregressive model: decoder input is EOS
// followed by the target without its last token.
template <class T>
LossReport ar_forward_backward(const TransformerModel<T>& model, const std::vector<SentencePair>& batch, const TrainConfig& cfg,
                               RngStreams& rng) {
  if (batch.empty()) throw Error("ar_train_step: empty batch");
  if (!model.config().autoregressive) throw ConfigError("ar_train_step: model is not autoregressive");
  Tape<T> tape;
  std::vector<TokenSeq> src, yin, gold;
  for (const auto& p : batch) {
    src.push_back(p.source);
    TokenSeq in{kEos};
    in.insert(in.end(), p.target.begin(), p.target.end() - 1);
    yin.push_back(std::move(in));
    gold.push_back(p.target);
  }
  const auto enc = model.encode(encoder_batch(src), &rng["dropout"]);
  const TokenBatch yb = TokenBatch::from(yin);
  const Tensor<T> logits = model.decode(yb, enc, &rng["dropout"]);
  std::vector<std::size_t> rows;
  std::vector<TokenId> gold_flat(yb.rows * yb.cols, kPad);
  for (std::size_t s = 0; s < gold.size(); ++s) {
    std::copy(gold[s].begin(), gold[s].end(), gold_flat.begin() + s * yb.cols);
    for (std::size_t p = 0; p < gold[s].size(); ++p) rows.push_back(s * yb.cols + p);
  }
  const Tensor<T> loss =
      masked_ce_loss(logits, std::span<const TokenId>(gold_flat), std::span<const std::size_t>(rows), cfg.label_smoothing);
  LossReport rep;
  rep.l_cmlm = rep.l_total = loss.item();
  rep.masked_token_counts.push_back(rows.size());
  tape.backprop(loss);
  return rep;
}

template <class T>
struct TrainerState {
  AdamState<T> adam;
  std::uint64_t update = 0;
};

// One optimizer update over `batches` (gradient accumulation when more than
// one): zero grads, forward/backward each, average, clip, Adam.
template <class T>
LossReport amom_train_step(TransformerModel<T>& model, const std::vector<std::vector<SentencePair>>& batches,
                           const TrainConfig& cfg, RngStreams& rng, TrainerState<T>& state) {
  auto params = model.parameters();
  zero_grads(params);
  LossReport sum;
  try {
    for (const auto& b : batches) {
      auto r = model.config().autoregressive ? ar_forward_backward(model, b, cfg, rng) : amom_forward_backward(model, b, cfg, rng);
      sum.l_cmlm += r.l_cmlm;
      sum.l_aday += r.l_aday;
      sum.l_length += r.l_length;
      sum.l_total += r.l_total;
      sum.beta += r.beta;
      sum.alpha_pass1 += r.alpha_pass1;
      sum.masked_token_counts.resize(std::max(sum.masked_token_counts.size(), r.masked_token_counts.size()), 0);
      for (std::size_t i = 0; i < r.masked_token_counts.size(); ++i) sum.masked_token_counts[i] += r.masked_token_counts[i];
    }
  } catch (const NumericError& e) {
    zero_grads(params);
    throw NumericError(std::string(e.what()) + " (update " + std::to_string(state.update + 1) + ", batch of " +
                       std::to_string(batches.empty() ? 0 : batches.front().size()) + " sentences)");
  }
  const double n = static_cast<double>(batches.size());
  for (double* v : {&sum.l_cmlm, &sum.l_aday, &sum.l_length, &sum.l_total, &sum.beta, &sum.alpha_pass1}) *v /= n;
  if (batches.size() > 1) {
    const T f = static_cast<T>(1.0 / n);
    for (auto& p : params)
      if (p.has_grad())
        for (auto& g : p.mutable_grad()) g *= f;
  }
  sum.grad_norm = clip_grad_norm(params, cfg.clip_norm);
  adam_step(params, state.adam, cfg.lr.at(state.update + 1));
  ++state.update;
  return sum;
}

// ------------------------------------------------------------------ batches

// Token cost of a pair inside a batch: the longer of encoder row
// ([LENGTH] + source) and target.
inline std::size_t pair_cost(const SentencePair& p) { return std::max(p.source.size() + 1, p.target.size()); }

// Shuffles with `rng`, stable-sorts by cost and cuts length-homogeneous
// batches with count * max cost <= tokens_per_batch; batch order is then
// shuffled again.
inline std::vector<std::vector<std::size_t>> make_batches(const ParallelCorpus& corpus, std::size_t tokens_per_batch,
                                                          CounterRng& rng) {
  std::vector<std::size_t> order(corpus.pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  order = sample_without_replacement(order, order.size(), rng);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return pair_cost(corpus.pairs[a]) < pair_cost(corpus.pairs[b]); });
  std::vector<std::vector<std::size_t>> batches;
  std::vector<std::size_t> cur;
  std::size_t cur_max = 0;
  for (auto i : order) {
    const std::size_t c = pair_cost(corpus.pairs[i]);
    if (c > tokens_per_batch) throw ConfigError("tokens_per_batch is smaller than a sentence of " + std::to_string(c) + " tokens");
    const std::size_t m = std::max(cur_max, c);
    if (!cur.empty() && m * (cur.size() + 1) > tokens_per_batch) {
      batches.push_back(std::move(cur));
      cur.clear();
      cur_max = 0;
    }
    cur.push_back(i);
    cur_max = std::max(cur_max, c);
  }
  if (!cur.empty()) batches.push_back(std::move(cur));
  return sample_without_replacement(batches, batches.size(), rng);
}

// Endless deterministic stream of batches; reshuffles every epoch.
class BatchStream {
 public:
  BatchStream(const ParallelCorpus& corpus, std::size_t tokens_per_batch, CounterRng& rng)
      : corpus_(corpus), tokens_(tokens_per_batch), rng_(rng) {
    if (corpus.pairs.empty()) throw DataError("training corpus is empty");
  }

  std::vector<SentencePair> next() {
    if (pos_ == order_.size()) {
      order_ = make_batches(corpus_, tokens_, rng_);
      pos_ = 0;
      ++epoch_;
    }
    std::vector<SentencePair> out;
    for (auto i : order_[pos_]) out.push_back(corpus_.pairs[i]);
    ++pos_;
    return out;
  }
  std::size_t epoch() const { return epoch_; }

 private:
  const ParallelCorpus& corpus_;
  std::size_t tokens_;
  CounterRng& rng_;
  std::vector<std::vector<std::size_t>> order_;
  std::size_t pos_ = 0;
  std::size_t epoch_ = 0;
};

// ------------------------------------------------------------- validation

inline std::vector<TokenSeq> content_of(const std::vector<TokenSeq>& seqs) {
  std::vector<TokenSeq> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(strip_special(s));
  return out;
}

// Corpus BLEU of a NAR model decoded with T iterations and the given length
// beam; AR models are decoded greedily instead.
template <class T>
BleuReport validation_bleu(const TransformerModel<T>& model, const ParallelCorpus& valid, std::size_t iterations,
                           std::size_t length_beam, std::vector<TokenSeq>* hyps_out = nullptr) {
  std::vector<TokenSeq> src, refs, hyps;
  for (const auto& p : valid.pairs) {
    src.push_back(p.source);
    refs.push_back(strip_special(p.target));
  }
  if (model.config().autoregressive) {
    const std::size_t max_len = std::min(model.config().max_positions, model.config().max_length_class);
    for (const auto& s : src) hyps.push_back(ar_greedy_decode(model, s, max_len));
  } else {
    DecodeConfig dc;
    dc.iterations = iterations;
    dc.length_beam = length_beam;
    for (auto& h : decode_corpus(model, src, dc)) hyps.push_back(std::move(h.tokens));
  }
  hyps = content_of(hyps);
  if (hyps_out) *hyps_out = hyps;
  return corpus_bleu(hyps, refs);
}

// ------------------------------------------------------------ checkpoints

// Element-wise mean of the k best checkpoints by validation BLEU (ties keep
// input order).
inline TransformerModel<float> average_checkpoints(std::vector<CheckpointMeta> metas, std::size_t k = 5) {
  if (metas.empty()) throw Error("average_checkpoints: no checkpoints");
  if (k < 1) throw Error("average_checkpoints: k must be >= 1");
  std::stable_sort(metas.begin(), metas.end(), [](const auto& a, const auto& b) { return a.valid_bleu > b.valid_bleu; });
  metas.resize(std::min(k, metas.size()));
  auto first = load_checkpoint(metas.front().path);
  const std::string hash = config_hash(first.model.config());
  auto params = first.model.parameters();
  std::vector<std::vector<double>> acc;
  for (const auto& p : params) acc.emplace_back(p.data().begin(), p.data().end());
  for (std::size_t i = 1; i < metas.size(); ++i) {
    auto other = load_checkpoint(metas[i].path);
    if (config_hash(other.model.config()) != hash) {
      throw ConfigError("average_checkpoints: " + metas[i].path + " has a different model config than " + metas.front().path);
    }
    auto op = other.model.parameters();
    for (std::size_t j = 0; j < op.size(); ++j) {
      auto d = op[j].data();
      for (std::size_t e = 0; e < d.size(); ++e) acc[j][e] += d[e];
    }
  }
  const double n = static_cast<double>(metas.size());
  for (std::size_t j = 0; j < params.size(); ++j) {
    auto d = params[j].data();
    for (std::size_t e = 0; e < d.size(); ++e) d[e] = static_cast<float>(acc[j][e] / n);
  }
  return std::move(first.model);
}

// --------------------------------------------------------------- the loop

inline constexpr const char* kMetricsHeader = "update,lr,l_cmlm,l_aday,l_length,valid_bleu_iter1,valid_bleu_iter10,wall_secs";

struct TrainResult {
  std::vector<CheckpointMeta> checkpoints;  // initial checkpoint first
  std::string metrics_path;
  std::string averaged_path;
  std::size_t skipped_updates = 0;
};

using TrainLogger = std::function<void(const std::string&)>;

namespace detail {

inline std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace detail

// Trains `model_config` from seed `cfg.seed` on `train`, validating on
// `valid` every valid_interval updates. Writes into `out_dir`:
//   metrics.csv                one row per validation (header first)
//   checkpoints/update_N.ckpt  initial and per-validation checkpoints
//   averaged.ckpt              mean of the average_best best checkpoints
inline TrainResult train_loop(const ModelConfig& model_config, const TrainConfig& cfg, const ParallelCorpus& train,
                              const ParallelCorpus& valid, const std::filesystem::path& out_dir,
                              const TrainLogger& log = {}) {
  namespace fs = std::filesystem;
  std::size_t longest = 0;
  for (const auto& p : train.pairs) longest = std::max(longest, pair_cost(p));
  cfg.validate(longest);
  model_config.validate();
  train.validate(model_config.vocab_size);
  if (valid.pairs.empty()) throw DataError("validation corpus is empty");
  for (const auto& p : train.pairs) {
    if (p.target.size() > model_config.max_length_class || p.source.size() + 1 > model_config.max_positions)
      throw DataError("training pair longer than the model supports");
  }
  ParallelCorpus valid_sub = valid;
  if (cfg.valid_sentences && valid_sub.pairs.size() > cfg.valid_sentences) valid_sub.pairs.resize(cfg.valid_sentences);

  std::error_code ec;
  fs::create_directories(out_dir / "checkpoints", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "checkpoints").string() + ": " + ec.message());

  TransformerModel<float> model(model_config, cfg.seed);
  RngStreams rng(cfg.seed);
  TrainerState<float> state;
  TrainResult result;
  result.metrics_path = (out_dir / "metrics.csv").string();
  std::ofstream metrics(result.metrics_path);
  if (!metrics) throw DataError("cannot write " + result.metrics_path);
  metrics << kMetricsHeader << '\n' << std::flush;

  auto save = [&](double bleu) {
    CheckpointMeta meta;
    meta.update = state.update;
    meta.valid_bleu = bleu;
    meta.path = (out_dir / "checkpoints" / ("update_" + std::to_string(state.update) + ".ckpt")).string();
    meta.config_hash = config_hash(model_config);
    save_checkpoint(meta.path, model, meta);
    result.checkpoints.push_back(meta);
  };
  save(0.0);

  const auto t0 = std::chrono::steady_clock::now();
  BatchStream stream(train, cfg.tokens_per_batch, rng["data-order"]);
  double sum_cmlm = 0, sum_aday = 0, sum_len = 0;
  std::size_t since = 0, streak = 0;
  while (state.update < cfg.max_updates) {
    std::vector<std::vector<SentencePair>> batches;
    for (std::size_t i = 0; i < cfg.update_freq; ++i) batches.push_back(stream.next());
    try {
      const auto r = amom_train_step(model, batches, cfg, rng, state);
      streak = 0;
      sum_cmlm += r.l_cmlm;
      sum_aday += r.l_aday;
      sum_len += r.l_length;
      ++since;
    } catch (const NumericError& e) {
      ++result.skipped_updates;
      if (log) log(std::string("skipped update: ") + e.what());
      if (++streak > 10) throw NumericError("more than 10 consecutive non-finite losses; last: " + std::string(e.what()));
      continue;
    }
    if (state.update % cfg.valid_interval == 0) {
      const double b1 = validation_bleu(model, valid_sub, 1, cfg.valid_length_beam).bleu;
      const double b10 = model_config.autoregressive ? b1 : validation_bleu(model, valid_sub, 10, cfg.valid_length_beam).bleu;
      const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const double n = static_cast<double>(std::max<std::size_t>(since, 1));
      metrics << state.update << ',' << detail::fmt(cfg.lr.at(state.update), "%.8g") << ',' << detail::fmt(sum_cmlm / n) << ','
              << detail::fmt(sum_aday / n) << ',' << detail::fmt(sum_len / n) << ',' << detail::fmt(b1, "%.4f") << ','
              << detail::fmt(b10, "%.4f") << ',' << detail::fmt(wall, "%.1f") << '\n'
              << std::flush;
      if (!metrics) throw DataError("write failed for " + result.metrics_path);
      if (log) {
        log("update " + std::to_string(state.update) + " l_cmlm " + detail::fmt(sum_cmlm / n, "%.4f") + " l_aday " +
            detail::fmt(sum_aday / n, "%.4f") + " bleu@1 " + detail::fmt(b1, "%.2f") + " bleu@10 " + detail::fmt(b10, "%.2f") +
            " (" + detail::fmt(wall, "%.0f") + "s)");
      }
      sum_cmlm = sum_aday = sum_len = 0;
      since = 0;
      save(b10);
    }
  }
  std::vector<CheckpointMeta> candidates(result.checkpoints.begin() + (result.checkpoints.size() > 1 ? 1 : 0),
                                         result.checkpoints.end());
  auto averaged = average_checkpoints(candidates, cfg.average_best);
  result.averaged_path = (out_dir / "averaged.ckpt").string();
  CheckpointMeta meta;
  meta.update = state.update;
  meta.path = result.averaged_path;
  save_checkpoint(result.averaged_path, averaged, meta);
  return result;
}

// ------------------------------------------------------------ distillation

struct DistillResult {
  ParallelCorpus corpus;
  std::size_t dropped = 0;  // pairs whose teacher output was empty
};

// Replaces every target with the teacher's greedy output (EOS appended);
// pairs are tagged distilled.
template <class T>
DistillResult distill_corpus(const TransformerModel<T>& teacher, const ParallelCorpus& corpus, std::size_t max_output_length) {
  if (!teacher.config().autoregressive) throw ConfigError("distill: the teacher must be autoregressive");
  if (corpus.pairs.empty()) throw DataError("distill: empty corpus");
  DistillResult out;
  const std::size_t max_len = std::min(max_output_length, teacher.config().max_length_class - 1);
  for (const auto& p : corpus.pairs) {
    TokenSeq hyp = strip_special(ar_greedy_decode(teacher, p.source, max_len));
    if (hyp.empty()) {
      ++out.dropped;
      continue;
    }
    hyp.push_back(kEos);
    out.corpus.pairs.push_back({p.source, std::move(hyp), Provenance::distilled});
  }
  return out;
}

}  // namespace amom
