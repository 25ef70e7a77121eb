#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "amom/model.hpp"

namespace amom {

struct DecodeConfig {
  std::size_t iterations = 10;  // T
  std::size_t length_beam = 3;  // B
  bool dedup_consecutive = false;
  std::size_t max_output_length = 200;

  void validate(const ModelConfig& model) const {
    if (iterations < 1) throw ConfigError("decode: iterations must be >= 1");
    if (length_beam < 1 || length_beam > model.max_length_class)
      throw ConfigError("decode: length_beam must lie in [1, max_length_class]");
  }
};

inline constexpr double kUnscored = -std::numeric_limits<double>::infinity();

struct DecodeState {
  TokenSeq tokens;
  std::vector<double> scores;  // log-prob of the committed token; -inf while masked
  std::size_t iteration = 0;
};

struct Hypothesis {
  TokenSeq tokens;
  std::size_t length = 0;
  double mean_log_prob = 0;
};

// Number of slots remasked at refinement iteration t (1 <= t <= T-1):
// floor(L * (T - t) / T), kept within [1, L - 1].
inline std::size_t schedule_mask_count(std::size_t length, std::size_t total_iterations, std::size_t t) {
  if (total_iterations < 2 || t < 1 || t > total_iterations - 1) {
    throw Error("schedule_mask_count: iteration " + std::to_string(t) + " outside [1, " +
                std::to_string(total_iterations == 0 ? 0 : total_iterations - 1) + "]");
  }
  std::size_t n = length * (total_iterations - t) / total_iterations;
  n = std::max<std::size_t>(n, 1);
  return std::min(n, length > 0 ? length - 1 : 0);
}

inline std::vector<TokenId> dedup_consecutive(const std::vector<TokenId>& tokens) {
  std::vector<TokenId> out;
  for (TokenId t : tokens)
    if (out.empty() || out.back() != t) out.push_back(t);
  return out;
}

namespace detail {

// Ids the decoder may commit: anything but PAD, MASK and LENGTH.
inline bool emittable(std::size_t id) { return id != kPad && id != kMask && id != kLength; }

struct RowChoice {
  TokenId token = kUnk;
  double log_prob = 0;
};

template <class T>
RowChoice best_in_row(const T* logits, std::size_t vocab) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < vocab; ++v) mx = std::max<double>(mx, logits[v]);
  double z = 0;
  for (std::size_t v = 0; v < vocab; ++v) z += std::exp(static_cast<double>(logits[v]) - mx);
  const double lse = mx + std::log(z);
  RowChoice best{kUnk, -std::numeric_limits<double>::infinity()};
  bool found = false;
  for (std::size_t v = 0; v < vocab; ++v) {
    if (!emittable(v)) continue;
    if (!found || logits[v] > logits[best.token]) {
      best.token = static_cast<TokenId>(v);
      found = true;
    }
  }
  best.log_prob = static_cast<double>(logits[best.token]) - lse;
  return best;
}

}  // namespace detail

using DecodeObserver = std::function<void(std::size_t iteration, const std::vector<DecodeState>&,
                                          const std::vector<std::vector<std::size_t>>& remasked)>;

// Mask-predict for several target lengths at once; row r of `enc` conditions
// candidate r. Iteration 1 predicts every slot; each refinement iteration
// remasks the schedule_mask_count lowest-scoring slots (ties to the lower
// index) and only those slots receive new tokens and scores.
template <class T>
std::vector<DecodeState> mask_predict_batch(const TransformerModel<T>& model, const EncoderOutput<T>& enc,
                                            const std::vector<std::size_t>& lengths, std::size_t iterations,
                                            const DecodeObserver& observer = {}) {
  if (iterations < 1) throw Error("mask_predict: iterations must be >= 1");
  if (lengths.size() != enc.batch) throw ShapeError("mask_predict: one length per encoder row expected");
  const std::size_t V = model.config().vocab_size;
  const std::size_t rows = lengths.size();
  std::vector<DecodeState> states(rows);
  std::vector<TokenSeq> inputs(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (lengths[r] < 1) throw Error("mask_predict: target length must be >= 1");
    states[r].tokens.assign(lengths[r], kMask);
    states[r].scores.assign(lengths[r], kUnscored);
  }
  std::vector<std::vector<std::size_t>> remasked(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    remasked[r].resize(lengths[r]);
    std::iota(remasked[r].begin(), remasked[r].end(), std::size_t{0});
  }
  for (std::size_t it = 1; it <= iterations; ++it) {
    if (it > 1) {
      const std::size_t t = it - 1;
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t n = schedule_mask_count(lengths[r], iterations, t);
        std::vector<std::size_t> order(lengths[r]);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return states[r].scores[a] < states[r].scores[b]; });
        order.resize(n);
        std::sort(order.begin(), order.end());
        remasked[r] = order;
        for (auto p : order) {
          states[r].tokens[p] = kMask;
          states[r].scores[p] = kUnscored;
        }
      }
    }
    for (std::size_t r = 0; r < rows; ++r) inputs[r] = states[r].tokens;
    const TokenBatch y = TokenBatch::from(inputs);
    const Tensor<T> logits = model.decode(y, enc);
    for (std::size_t r = 0; r < rows; ++r) {
      for (auto p : remasked[r]) {
        const auto choice = detail::best_in_row(logits.data().data() + (r * y.cols + p) * V, V);
        states[r].tokens[p] = choice.token;
        states[r].scores[p] = choice.log_prob;
      }
      states[r].iteration = it;
    }
    if (observer) observer(it, states, remasked);
  }
  return states;
}

// Single-sentence mask-predict at a given target length. `source` is the
// content + EOS sequence, without [LENGTH].
template <class T>
DecodeState mask_predict(const TransformerModel<T>& model, const TokenSeq& source, std::size_t target_length,
                         const DecodeConfig& config, const DecodeObserver& observer = {}) {
  const auto enc = model.encode(encoder_batch({source}));
  return mask_predict_batch(model, enc, {target_length}, config.iterations, observer).front();
}

namespace detail {

inline Hypothesis to_hypothesis(const DecodeState& s) {
  Hypothesis h;
  h.tokens = s.tokens;
  h.length = s.tokens.size();
  h.mean_log_prob = std::accumulate(s.scores.begin(), s.scores.end(), 0.0) / static_cast<double>(s.scores.size());
  return h;
}

// Highest mean log-prob, ties to the shorter hypothesis.
inline std::size_t pick_best(const std::vector<Hypothesis>& hyps) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < hyps.size(); ++i) {
    const auto& a = hyps[i];
    const auto& b = hyps[best];
    if (a.mean_log_prob > b.mean_log_prob || (a.mean_log_prob == b.mean_log_prob && a.length < b.length)) best = i;
  }
  return best;
}

}  // namespace detail

// Length beam over many sources: each source is encoded once, its top-B
// predicted lengths decoded side by side, and the best candidate kept.
template <class T>
std::vector<Hypothesis> decode_corpus(const TransformerModel<T>& model, const std::vector<TokenSeq>& sources,
                                      const DecodeConfig& config, std::size_t sentences_per_batch = 32) {
  config.validate(model.config());
  std::vector<Hypothesis> out(sources.size());
  const std::size_t max_len = std::min(model.config().max_positions, config.max_output_length);
  for (std::size_t start = 0; start < sources.size(); start += sentences_per_batch) {
    const std::size_t end = std::min(sources.size(), start + sentences_per_batch);
    std::vector<TokenSeq> chunk(sources.begin() + static_cast<std::ptrdiff_t>(start),
                                sources.begin() + static_cast<std::ptrdiff_t>(end));
    const auto enc = model.encode(encoder_batch(chunk));
    std::vector<std::size_t> owner, lengths;
    for (std::size_t s = 0; s < chunk.size(); ++s) {
      for (const auto& c : predict_length_topk(enc, config.length_beam, s)) {
        owner.push_back(s);
        lengths.push_back(std::min(c.length, max_len));
      }
    }
    // Gather the encoder rows each candidate conditions on.
    EncoderOutput<T> cand;
    {
      const std::size_t d = enc.hidden.dim(1), C = enc.length_logits.dim(1), L = enc.length;
      cand.batch = owner.size();
      cand.length = L;
      cand.hidden = Tensor<T>({owner.size() * L, d});
      cand.length_logits = Tensor<T>({owner.size(), C});
      for (std::size_t r = 0; r < owner.size(); ++r) {
        std::copy_n(enc.hidden.data().begin() + owner[r] * L * d, L * d, cand.hidden.data().begin() + r * L * d);
        std::copy_n(enc.length_logits.data().begin() + owner[r] * C, C, cand.length_logits.data().begin() + r * C);
        cand.key_valid.insert(cand.key_valid.end(), enc.key_valid.begin() + owner[r] * L,
                              enc.key_valid.begin() + (owner[r] + 1) * L);
      }
    }
    const auto states = mask_predict_batch(model, cand, lengths, config.iterations);
    for (std::size_t s = 0; s < chunk.size(); ++s) {
      std::vector<Hypothesis> hyps;
      for (std::size_t r = 0; r < owner.size(); ++r)
        if (owner[r] == s) hyps.push_back(detail::to_hypothesis(states[r]));
      Hypothesis best = hyps[detail::pick_best(hyps)];
      if (config.dedup_consecutive) best.tokens = dedup_consecutive(best.tokens);
      out[start + s] = std::move(best);
    }
  }
  return out;
}

// Mask-predict over the top-B predicted lengths of one source; keeps the
// candidate with the highest mean token log-probability.
template <class T>
Hypothesis decode_with_length_beam(const TransformerModel<T>& model, const TokenSeq& source, const DecodeConfig& config) {
  return decode_corpus(model, {source}, config, 1).front();
}

// Left-to-right argmax decoding with an autoregressive model. The decoder
// input starts with EOS as the begin-of-sentence symbol. Returned tokens
// exclude the final EOS. With stop_at_eos = false exactly max_length tokens
// are produced.
template <class T>
TokenSeq ar_greedy_decode(const TransformerModel<T>& model, const TokenSeq& source, std::size_t max_length,
                          bool stop_at_eos = true) {
  const std::size_t V = model.config().vocab_size;
  const auto enc = model.encode(encoder_batch({source}));
  TokenSeq prefix{kEos};
  TokenSeq out;
  max_length = std::min(max_length, model.config().max_positions);
  while (out.size() < max_length) {
    const TokenBatch y = TokenBatch::from({prefix});
    const Tensor<T> logits = model.decode(y, enc);
    const auto choice = detail::best_in_row(logits.data().data() + (y.cols - 1) * V, V);
    if (choice.token == kEos && stop_at_eos) break;
    out.push_back(choice.token);
    prefix.push_back(choice.token);
  }
  return out;
}

// Content tokens of a hypothesis (EOS, PAD, MASK, LENGTH dropped).
inline TokenSeq strip_special(const TokenSeq& tokens) {
  TokenSeq out;
  for (TokenId t : tokens)
    if (t != kEos && t != kPad && t != kMask && t != kLength) out.push_back(t);
  return out;
}

}  // namespace amom
