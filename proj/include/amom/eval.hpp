#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "amom/inference.hpp"
#include "amom/kernels.hpp"

namespace amom {

struct BleuReport {
  double bleu = 0;                  // percentage
  std::vector<double> precisions;   // p_1..p_N as fractions
  std::vector<std::size_t> matches;  // clipped n-gram matches per order
  std::vector<std::size_t> totals;   // hypothesis n-grams per order
  double brevity_penalty = 1;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

namespace detail {

template <class Tok>
std::map<std::vector<Tok>, std::size_t> ngram_counts(const std::vector<Tok>& s, std::size_t n) {
  std::map<std::vector<Tok>, std::size_t> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++out[std::vector<Tok>(s.begin() + i, s.begin() + i + n)];
  return out;
}

template <class Tok>
std::size_t clipped_overlap(const std::vector<Tok>& hyp, const std::vector<Tok>& ref, std::size_t n) {
  const auto h = ngram_counts(hyp, n);
  const auto r = ngram_counts(ref, n);
  std::size_t m = 0;
  for (const auto& [g, c] : h) {
    auto it = r.find(g);
    if (it != r.end()) m += std::min(c, it->second);
  }
  return m;
}

template <class A, class B>
void check_aligned(const A& hyps, const B& refs, const char* op) {
  if (hyps.empty()) throw Error(std::string(op) + ": empty corpus");
  if (hyps.size() != refs.size()) {
    throw Error(std::string(op) + ": " + std::to_string(hyps.size()) + " hypotheses vs " + std::to_string(refs.size()) +
                " references");
  }
}

}  // namespace detail

// BLEU from accumulated n-gram statistics (no smoothing).
inline BleuReport bleu_from_counts(std::vector<std::size_t> matches, std::vector<std::size_t> totals, std::size_t hyp_len,
                                   std::size_t ref_len) {
  BleuReport rep;
  rep.matches = std::move(matches);
  rep.totals = std::move(totals);
  rep.hyp_length = hyp_len;
  rep.ref_length = ref_len;
  const std::size_t n = rep.matches.size();
  rep.precisions.resize(n);
  double log_sum = 0;
  bool zero = hyp_len == 0;
  for (std::size_t i = 0; i < n; ++i) {
    rep.precisions[i] = rep.totals[i] ? static_cast<double>(rep.matches[i]) / static_cast<double>(rep.totals[i]) : 0.0;
    if (rep.precisions[i] == 0) zero = true;
    else log_sum += std::log(rep.precisions[i]);
  }
  rep.brevity_penalty = hyp_len == 0 ? 0.0
                        : hyp_len < ref_len
                            ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                            : 1.0;
  rep.bleu = zero ? 0.0 : rep.brevity_penalty * std::exp(log_sum / static_cast<double>(n)) * 100.0;
  return rep;
}

// Corpus BLEU with clipped n-gram counts pooled over the corpus.
template <class Tok>
BleuReport corpus_bleu(const std::vector<std::vector<Tok>>& hyps, const std::vector<std::vector<Tok>>& refs,
                       std::size_t max_n = 4) {
  detail::check_aligned(hyps, refs, "corpus_bleu");
  if (max_n < 1) throw Error("corpus_bleu: max_n must be >= 1");
  std::vector<std::size_t> matches(max_n, 0), totals(max_n, 0);
  std::size_t c = 0, r = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    c += hyps[i].size();
    r += refs[i].size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      matches[n - 1] += detail::clipped_overlap(hyps[i], refs[i], n);
      if (hyps[i].size() >= n) totals[n - 1] += hyps[i].size() - n + 1;
    }
  }
  return bleu_from_counts(std::move(matches), std::move(totals), c, r);
}

struct RougeReport {
  double rouge1_f = 0;
  double rouge2_f = 0;
  double rougeL_f = 0;
};

template <class Tok>
std::size_t lcs_length(const std::vector<Tok>& a, const std::vector<Tok>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

namespace detail {

inline double f1_percent(std::size_t overlap, std::size_t hyp_n, std::size_t ref_n) {
  if (overlap == 0 || hyp_n == 0 || ref_n == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(hyp_n);
  const double r = static_cast<double>(overlap) / static_cast<double>(ref_n);
  return 100.0 * 2.0 * p * r / (p + r);
}

inline std::size_t ngram_total(std::size_t len, std::size_t n) { return len >= n ? len - n + 1 : 0; }

}  // namespace detail

// Per-pair ROUGE-1/2/L F1, averaged over pairs. An exactly matching pair
// scores 100 on every measure.
template <class Tok>
RougeReport rouge_scores(const std::vector<std::vector<Tok>>& hyps, const std::vector<std::vector<Tok>>& refs) {
  detail::check_aligned(hyps, refs, "rouge_scores");
  RougeReport rep;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto& h = hyps[i];
    const auto& r = refs[i];
    if (h == r) {
      rep.rouge1_f += 100;
      rep.rouge2_f += 100;
      rep.rougeL_f += 100;
      continue;
    }
    rep.rouge1_f += detail::f1_percent(detail::clipped_overlap(h, r, 1), h.size(), r.size());
    rep.rouge2_f += detail::f1_percent(detail::clipped_overlap(h, r, 2), detail::ngram_total(h.size(), 2),
                                       detail::ngram_total(r.size(), 2));
    rep.rougeL_f += detail::f1_percent(lcs_length(h, r), h.size(), r.size());
  }
  const double n = static_cast<double>(hyps.size());
  rep.rouge1_f /= n;
  rep.rouge2_f /= n;
  rep.rougeL_f /= n;
  return rep;
}

inline std::size_t levenshtein(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0u : 1u)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Mean over pairs of 100 * (1 - lev(h, r) / max(|h|, |r|)), on characters.
inline double edit_similarity(const std::vector<std::string>& hyps, const std::vector<std::string>& refs) {
  detail::check_aligned(hyps, refs, "edit_similarity");
  double total = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const std::size_t m = std::max(hyps[i].size(), refs[i].size());
    total += m == 0 ? 100.0 : 100.0 * (1.0 - static_cast<double>(levenshtein(hyps[i], refs[i])) / static_cast<double>(m));
  }
  return total / static_cast<double>(hyps.size());
}

struct BucketBleu {
  std::size_t lo = 0;   // inclusive source length
  std::size_t hi = 0;   // exclusive; 0 = unbounded
  std::size_t sentences = 0;
  BleuReport report;
};

// Edges e_1 < ... < e_n split source lengths into [0,e_1), [e_1,e_2), ...,
// [e_n, inf). Empty buckets are left out.
template <class Tok>
std::vector<BucketBleu> bucketed_bleu(const std::vector<std::vector<Tok>>& hyps, const std::vector<std::vector<Tok>>& refs,
                                      const std::vector<std::vector<Tok>>& sources, const std::vector<std::size_t>& edges,
                                      std::size_t max_n = 4) {
  detail::check_aligned(hyps, refs, "bucketed_bleu");
  if (sources.size() != hyps.size()) throw Error("bucketed_bleu: sources not aligned with hypotheses");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (edges[i] <= edges[i - 1]) throw Error("bucketed_bleu: bucket edges must be strictly increasing");
  std::vector<std::vector<std::size_t>> members(edges.size() + 1);
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const std::size_t b = static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), sources[i].size()) - edges.begin());
    members[b].push_back(i);
  }
  std::vector<BucketBleu> out;
  for (std::size_t b = 0; b < members.size(); ++b) {
    if (members[b].empty()) continue;
    std::vector<std::vector<Tok>> h, r;
    for (auto i : members[b]) {
      h.push_back(hyps[i]);
      r.push_back(refs[i]);
    }
    out.push_back({b == 0 ? 0 : edges[b - 1], b < edges.size() ? edges[b] : 0, members[b].size(), corpus_bleu(h, r, max_n)});
  }
  return out;
}

struct LatencyReport {
  double ar_ms = 0;
  std::map<std::size_t, double> nar_ms;   // by T
  std::map<std::size_t, double> speedup;  // ar_ms / nar_ms(T)
  std::vector<double> ar_raw;
  std::map<std::size_t, std::vector<double>> nar_raw;
  std::size_t sentences = 0;
  std::size_t warmup = 0;
};

// Wall-clock per sentence at batch 1 on one thread. Both decoders produce
// as many target tokens as the source has (EOS included): the AR model runs
// greedy steps without stopping at EOS, the NAR model runs mask-predict at
// that length. The first `warmup` sentences are decoded and not timed.
template <class T>
LatencyReport measure_latency(const TransformerModel<T>& ar_model, const TransformerModel<T>& nar_model,
                              const std::vector<TokenSeq>& sample, const std::vector<std::size_t>& iterations,
                              std::size_t warmup = 3) {
  if (sample.empty()) throw Error("measure_latency: empty sample");
  if (warmup < 3) throw Error("measure_latency: at least 3 warmup runs are required");
  if (iterations.empty()) throw Error("measure_latency: no iteration counts given");
  ThreadCapGuard single(1);
  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };
  auto run_ar = [&](const TokenSeq& s) { (void)ar_greedy_decode(ar_model, s, s.size(), false); };
  auto run_nar = [&](const TokenSeq& s, std::size_t t) {
    DecodeConfig c;
    c.iterations = t;
    (void)mask_predict(nar_model, s, s.size(), c);
  };
  for (std::size_t w = 0; w < warmup; ++w) {
    const auto& s = sample[w % sample.size()];
    run_ar(s);
    for (auto t : iterations) run_nar(s, t);
  }
  LatencyReport rep;
  rep.sentences = sample.size();
  rep.warmup = warmup;
  for (const auto& s : sample) {
    auto t0 = clock::now();
    run_ar(s);
    rep.ar_raw.push_back(ms_since(t0));
    for (auto t : iterations) {
      t0 = clock::now();
      run_nar(s, t);
      rep.nar_raw[t].push_back(ms_since(t0));
    }
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  rep.ar_ms = mean(rep.ar_raw);
  for (auto& [t, v] : rep.nar_raw) {
    rep.nar_ms[t] = mean(v);
    rep.speedup[t] = rep.ar_ms / rep.nar_ms[t];
  }
  return rep;
}

}  // namespace amom
