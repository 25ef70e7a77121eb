#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "amom/checkpoint.hpp"
#include "amom/config.hpp"
#include "amom/data.hpp"
#include "amom/eval.hpp"
#include "amom/inference.hpp"
#include "amom/masking.hpp"
#include "amom/training.hpp"

namespace amom {

namespace fs = std::filesystem;

struct RunContext {
  ExperimentConfig config;
  fs::path out;
  bool dry_run = false;
  std::ostream* log = &std::cerr;
};

struct Dataset {
  Vocabulary vocab;
  ParallelCorpus train, valid, test;
  bool synthetic = false;
};

enum DataNeeds : unsigned { kNeedTrain = 1, kNeedValid = 2, kNeedTest = 4 };

namespace detail {

inline bool synthetic_task(const ExperimentConfig& c) { return c.has("data.synthetic.task"); }

inline ParallelCorpus load_split(const ExperimentConfig& c, const Vocabulary& v, const std::string& split, bool tags) {
  const std::string s = "data." + split + ".source", t = "data." + split + ".target";
  if (!c.has(s) || !c.has(t)) throw ConfigError("missing required path: " + s + " and " + t);
  auto loaded = load_corpus(c.str(s), c.str(t), v, tags && c.has("data.train.tags") ? c.str("data.train.tags") : "");
  if (loaded.corpus.empty()) throw DataError("no usable pairs in " + c.str(s));
  return std::move(loaded.corpus);
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
  if (!os) throw DataError("write failed for " + path.string());
}

inline void prepare_out(const RunContext& ctx) {
  std::error_code ec;
  fs::create_directories(ctx.out, ec);
  if (ec) throw DataError("cannot create run directory " + ctx.out.string() + ": " + ec.message());
  write_text(ctx.out / "config.resolved", ctx.config.resolved_text());
}

inline LoadedCheckpoint checkpoint_from(const ExperimentConfig& c, const std::string& key = "checkpoint") {
  if (!c.has(key)) throw ConfigError("missing required path: " + key);
  return load_checkpoint(c.str(key));
}

inline std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace detail

// Synthetic data is generated in one stream and split train | valid | test,
// so all splits share the task's tables.
inline Dataset load_data(const ExperimentConfig& c, unsigned needs) {
  Dataset d;
  if (detail::synthetic_task(c)) {
    d.synthetic = true;
    const std::size_t n_train = c.integer("data.synthetic.pairs"), n_valid = c.integer("data.synthetic.valid_pairs"),
                      n_test = c.integer("data.synthetic.test_pairs");
    auto all = generate_synthetic(c.synthetic(n_train + n_valid + n_test));
    auto take = [&](std::size_t from, std::size_t n) {
      ParallelCorpus p;
      p.pairs.assign(all.pairs.begin() + static_cast<std::ptrdiff_t>(from),
                     all.pairs.begin() + static_cast<std::ptrdiff_t>(from + n));
      return p;
    };
    d.train = take(0, n_train);
    d.valid = take(n_train, n_valid);
    d.test = take(n_train + n_valid, n_test);
    d.vocab = Vocabulary::synthetic(c.integer("data.synthetic.vocab_size"));
    if ((needs & kNeedValid) && d.valid.empty()) throw ConfigError("data.synthetic.valid_pairs must be >= 1");
    if ((needs & kNeedTest) && d.test.empty()) throw ConfigError("data.synthetic.test_pairs must be >= 1");
    return d;
  }
  if (c.has("data.vocab")) {
    d.vocab = Vocabulary::load(c.str("data.vocab"));
  } else {
    if (!c.has("data.train.source") || !c.has("data.train.target"))
      throw ConfigError("missing required path: data.vocab (or training files to build it from)");
    auto lines = detail::read_lines(c.str("data.train.source"));
    auto tgt = detail::read_lines(c.str("data.train.target"));
    lines.insert(lines.end(), tgt.begin(), tgt.end());
    d.vocab = build_vocab(lines, c.integer("data.min_freq"));
  }
  if (needs & kNeedTrain) d.train = detail::load_split(c, d.vocab, "train", true);
  if (needs & kNeedValid) d.valid = detail::load_split(c, d.vocab, "valid", false);
  if (needs & kNeedTest) d.test = detail::load_split(c, d.vocab, "test", false);
  return d;
}

// --------------------------------------------------------------- train

inline int run_train(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto tc = c.train();
  const auto data = load_data(c, kNeedTrain | kNeedValid);
  const auto mc = c.model(data.vocab.size());
  if (mc.vocab_size < data.vocab.size()) throw ConfigError("model.vocab_size is smaller than the data vocabulary");
  std::size_t longest = 0;
  for (const auto& p : data.train.pairs) longest = std::max(longest, pair_cost(p));
  tc.validate(longest);
  data.train.validate(mc.vocab_size);
  data.valid.validate(mc.vocab_size);
  if (ctx.dry_run) {
    *ctx.log << "train: config and data valid (" << data.train.size() << " training pairs, vocabulary " << data.vocab.size()
             << ")\n";
    return 0;
  }
  detail::prepare_out(ctx);
  data.vocab.save((ctx.out / "vocab.txt").string());
  std::ofstream tlog(ctx.out / "train.log");
  auto res = train_loop(mc, tc, data.train, data.valid, ctx.out, [&](const std::string& line) {
    *ctx.log << line << '\n';
    tlog << line << '\n' << std::flush;
  });
  *ctx.log << "train: " << res.checkpoints.size() << " checkpoints, averaged model " << res.averaged_path << '\n';
  return 0;
}

// ------------------------------------------------------------- distill

inline int run_distill(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto data = load_data(c, kNeedTrain);
  auto teacher = detail::checkpoint_from(c, "distill.teacher");
  if (!teacher.model.config().autoregressive) throw ConfigError("distill.teacher must be an autoregressive checkpoint");
  data.train.validate(teacher.model.config().vocab_size);
  if (ctx.dry_run) {
    *ctx.log << "distill: config and data valid (" << data.train.size() << " pairs)\n";
    return 0;
  }
  detail::prepare_out(ctx);
  auto res = distill_corpus(teacher.model, data.train, c.integer("decode.max_output_length"));
  ParallelCorpus out = c.boolean("distill.combine") ? combine(data.train, res.corpus) : res.corpus;
  save_corpus(out, data.vocab, (ctx.out / "distilled.src").string(), (ctx.out / "distilled.tgt").string(),
              (ctx.out / "distilled.tags").string());
  data.vocab.save((ctx.out / "vocab.txt").string());
  *ctx.log << "distill: " << res.corpus.size() << " distilled pairs, " << res.dropped << " dropped (empty teacher output), "
           << out.size() << " written\n";
  return 0;
}

// -------------------------------------------------------------- decode

struct DecodedSentence {
  TokenSeq source;
  TokenSeq tokens;
  double mean_log_prob = 0;
  std::size_t iterations = 0;
  double latency_ms = 0;
};

// Batch-1 decoding of every source with the model's own decoder (greedy
// for autoregressive checkpoints).
template <class T>
std::vector<DecodedSentence> decode_sources(const TransformerModel<T>& model, const std::vector<TokenSeq>& sources,
                                            const DecodeConfig& dc) {
  std::vector<DecodedSentence> out;
  for (const auto& s : sources) {
    DecodedSentence d;
    d.source = s;
    const auto t0 = std::chrono::steady_clock::now();
    if (model.config().autoregressive) {
      d.tokens = ar_greedy_decode(model, s, dc.max_output_length);
      if (dc.dedup_consecutive) d.tokens = dedup_consecutive(d.tokens);
      d.iterations = d.tokens.size() + 1;
    } else {
      auto h = decode_with_length_beam(model, s, dc);
      d.tokens = std::move(h.tokens);
      d.mean_log_prob = h.mean_log_prob;
      d.iterations = dc.iterations;
    }
    d.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<TokenSeq> decode_inputs(const ExperimentConfig& c, const Dataset& data) {
  std::vector<TokenSeq> sources;
  if (c.has("decode.input")) {
    for (const auto& line : detail::read_lines(c.str("decode.input"))) sources.push_back(data.vocab.encode_line(line));
  } else {
    for (const auto& p : data.test.pairs) sources.push_back(p.source);
  }
  return sources;
}

inline int run_decode(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto dc = c.decode();
  const auto data = load_data(c, c.has("decode.input") ? 0u : kNeedTest);
  auto ckpt = detail::checkpoint_from(c);
  dc.validate(ckpt.model.config());
  const auto sources = decode_inputs(c, data);
  if (ctx.dry_run) {
    *ctx.log << "decode: config and data valid (" << sources.size() << " sentences)\n";
    return 0;
  }
  detail::prepare_out(ctx);
  const auto decoded = decode_sources(ckpt.model, sources, dc);
  const bool jsonl = c.str("decode.format") == "jsonl";
  std::ofstream os(ctx.out / (jsonl ? "hypotheses.jsonl" : "hypotheses.txt"), std::ios::binary);
  for (const auto& d : decoded) {
    const std::string hyp = data.vocab.decode_line(d.tokens);
    if (jsonl) {
      nlohmann::ordered_json j;
      j["source"] = data.vocab.decode_line(d.source);
      j["hypothesis"] = hyp;
      j["length"] = d.tokens.size();
      j["mean_logprob"] = d.mean_log_prob;
      j["iterations"] = d.iterations;
      j["latency_ms"] = d.latency_ms;
      os << j.dump() << '\n';
    } else {
      os << hyp << '\n';
    }
  }
  if (!os) throw DataError("write failed for decode output");
  *ctx.log << "decode: " << decoded.size() << " sentences\n";
  return 0;
}

// ------------------------------------------------------------ evaluate

struct EvaluationRow {
  std::string metric, name;
  double value;
};

// Metric rows for token-string hypotheses against references.
inline std::vector<EvaluationRow> evaluation_rows(const std::vector<std::string>& hyp_lines, const std::vector<std::string>& ref_lines,
                                                  const std::vector<std::string>& src_lines,
                                                  const std::vector<std::size_t>& edges) {
  std::vector<std::vector<std::string>> hyps, refs, srcs;
  for (const auto& l : hyp_lines) hyps.push_back(split_whitespace(l));
  for (const auto& l : ref_lines) refs.push_back(split_whitespace(l));
  for (const auto& l : src_lines) srcs.push_back(split_whitespace(l));
  std::vector<EvaluationRow> rows;
  const auto b = corpus_bleu(hyps, refs);
  rows.push_back({"bleu", "corpus", b.bleu});
  for (std::size_t n = 0; n < b.precisions.size(); ++n) rows.push_back({"bleu", "p" + std::to_string(n + 1), 100 * b.precisions[n]});
  rows.push_back({"bleu", "brevity_penalty", b.brevity_penalty});
  rows.push_back({"bleu", "hyp_length", static_cast<double>(b.hyp_length)});
  rows.push_back({"bleu", "ref_length", static_cast<double>(b.ref_length)});
  const auto r = rouge_scores(hyps, refs);
  rows.push_back({"rouge", "rouge1_f", r.rouge1_f});
  rows.push_back({"rouge", "rouge2_f", r.rouge2_f});
  rows.push_back({"rouge", "rougeL_f", r.rougeL_f});
  rows.push_back({"edit_similarity", "corpus", edit_similarity(hyp_lines, ref_lines)});
  if (!srcs.empty()) {
    for (const auto& bucket : bucketed_bleu(hyps, refs, srcs, edges)) {
      const std::string name = std::to_string(bucket.lo) + "-" + (bucket.hi ? std::to_string(bucket.hi) : std::string("inf"));
      rows.push_back({"bucket_bleu", name, bucket.report.bleu});
      rows.push_back({"bucket_sentences", name, static_cast<double>(bucket.sentences)});
    }
  }
  return rows;
}

inline int run_evaluate(const RunContext& ctx) {
  const auto& c = ctx.config;
  std::vector<std::string> hyps, refs, srcs;
  std::optional<double> consistency;
  const auto edges = c.integers("evaluate.bucket_edges");
  if (c.has("evaluate.hypotheses")) {
    if (!c.has("evaluate.references")) throw ConfigError("missing required path: evaluate.references");
    hyps = detail::read_lines(c.str("evaluate.hypotheses"));
    refs = detail::read_lines(c.str("evaluate.references"));
    if (c.has("evaluate.sources")) srcs = detail::read_lines(c.str("evaluate.sources"));
    if (hyps.size() != refs.size()) {
      throw DataError("evaluate: " + std::to_string(hyps.size()) + " hypotheses vs " + std::to_string(refs.size()) + " references");
    }
    if (!srcs.empty() && srcs.size() != hyps.size()) throw DataError("evaluate: sources not aligned with hypotheses");
    if (ctx.dry_run) {
      *ctx.log << "evaluate: inputs valid (" << hyps.size() << " pairs)\n";
      return 0;
    }
  } else {
    const auto dc = c.decode();
    const auto data = load_data(c, kNeedTest);
    auto ckpt = detail::checkpoint_from(c);
    dc.validate(ckpt.model.config());
    if (ctx.dry_run) {
      *ctx.log << "evaluate: config and data valid (" << data.test.size() << " test pairs)\n";
      return 0;
    }
    std::vector<TokenSeq> sources;
    for (const auto& p : data.test.pairs) sources.push_back(p.source);
    const auto decoded = decode_sources(ckpt.model, sources, dc);
    std::size_t consistent = 0;
    std::optional<AmbiguousTables> tables;
    if (data.synthetic && c.str("data.synthetic.task") == "ambiguous-translate")
      tables.emplace(c.integer("data.synthetic.vocab_size"), c.integer("data.synthetic.seed"));
    for (std::size_t i = 0; i < decoded.size(); ++i) {
      hyps.push_back(data.vocab.decode_line(decoded[i].tokens));
      refs.push_back(data.vocab.decode_line(data.test.pairs[i].target));
      srcs.push_back(data.vocab.decode_line(data.test.pairs[i].source));
      if (tables) consistent += tables->classify(data.test.pairs[i].source, decoded[i].tokens) != AmbiguousTables::Verdict::inconsistent;
    }
    if (tables) consistency = 100.0 * static_cast<double>(consistent) / static_cast<double>(decoded.size());
  }
  if (hyps.empty()) throw DataError("evaluate: empty corpus");
  detail::prepare_out(ctx);
  auto rows = evaluation_rows(hyps, refs, srcs, edges);
  if (consistency) rows.push_back({"consistency", "single_table_percent", *consistency});
  std::string csv = "metric,name,value\n";
  for (const auto& r : rows) csv += r.metric + "," + r.name + "," + detail::csv_number(r.value) + "\n";
  detail::write_text(ctx.out / "evaluation.csv", csv);
  *ctx.log << "evaluate: BLEU " << detail::csv_number(rows.front().value) << '\n';
  return 0;
}

// ------------------------------------------------------ analyze-masking

inline constexpr const char* kAnalysisHeader = "beta_err,analytic_Er,empirical_Er,trials,convention";

// Expected fraction of the target that is wrong and remasked: E[m]/L with
// m ~ Uniform{1..L} taken as 1/2, times beta_err, times the predicted-slot
// remask probability at correctness 1 - beta_err.
inline double analytic_remask_ratio(double beta_err, const MappingFunction& psi, PsiConvention convention) {
  return 0.5 * beta_err * plan_second_pass(1.0 - beta_err, psi, convention).p_pred;
}

inline int run_analyze_masking(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto policy = c.masking();
  const auto convention = parse_psi_convention(c.str("analyze.convention"));
  const auto betas = c.reals("analyze.betas");
  const std::size_t L = c.integer("analyze.length"), trials = c.integer("analyze.trials");
  if (betas.empty()) throw ConfigError("analyze.betas is empty");
  for (double b : betas)
    if (!(b >= 0 && b <= 1)) throw ConfigError("analyze.betas entries must lie in [0,1]");
  if (trials < 10000) throw ConfigError("analyze.trials must be >= 10000");
  if (L < 1) throw ConfigError("analyze.length must be >= 1");
  if (ctx.dry_run) {
    *ctx.log << "analyze-masking: config valid (" << betas.size() << " points)\n";
    return 0;
  }
  detail::prepare_out(ctx);
  RngStreams rng(c.integer("seed"));
  std::string csv = std::string(kAnalysisHeader) + "\n";
  for (double b : betas) {
    const double analytic = analytic_remask_ratio(b, policy.psi, convention);
    const double empirical = simulate_remask_expectation(L, b, policy.psi, convention, trials, rng["analyze"]);
    csv += detail::csv_number(b) + "," + detail::csv_number(analytic) + "," + detail::csv_number(empirical) + "," +
           std::to_string(trials) + "," + c.str("analyze.convention") + "\n";
  }
  detail::write_text(ctx.out / "analysis.csv", csv);
  *ctx.log << "analyze-masking: " << betas.size() << " rows\n";
  return 0;
}

// -------------------------------------------------------- sweep-mapping

inline std::vector<MappingFunction> default_sweep_points(const std::string& target) {
  using K = MappingKind;
  if (target == "phi") {
    return {{K::linear, 0.25, 0.15}, {K::linear, 0.3, 0.1}, {K::linear, 0.35, 0.15}, {K::linear, 0.4, 0.1}, {K::linear, 0.1, 0.3},
            {K::linear, 0.1, 0.4},   {K::convex, 0.3, 0.1}, {K::concave, 0.3, 0.1},  {K::ladder, 0.3, 0.1}};
  }
  return {{K::linear, 0.1, 0.9}, {K::linear, 0.2, 0.8}, {K::linear, 0.3, 0.7},  {K::linear, 0.2, 0.5}, {K::linear, 0.5, 0.8},
          {K::linear, 0.8, 0.2}, {K::convex, 0.2, 0.8}, {K::concave, 0.2, 0.8}, {K::ladder, 0.2, 0.8}};
}

inline std::vector<MappingFunction> sweep_points(const ExperimentConfig& c) {
  const std::string target = c.str("sweep.target");
  if (target != "phi" && target != "psi") throw ConfigError("sweep.target must be phi or psi");
  if (!c.has("sweep.points")) return default_sweep_points(target);
  std::vector<MappingFunction> out;
  for (const auto& item : detail::split(c.str("sweep.points"), ',')) {
    auto parts = detail::split(item, ':');
    double a = 0, b = 0;
    if (parts.size() != 3 || !detail::parse_real(parts[1], a) || !detail::parse_real(parts[2], b))
      throw ConfigError("sweep.points entry '" + item + "' is not kind:a:b");
    out.push_back({parse_mapping_kind(parts[0]), a, b});
  }
  if (out.empty()) throw ConfigError("sweep.points is empty");
  return out;
}

inline int run_sweep_mapping(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto points = sweep_points(c);
  const std::string target = c.str("sweep.target");
  const auto dc = c.decode();
  const auto data = load_data(c, kNeedTrain | kNeedValid | kNeedTest);
  std::vector<ExperimentConfig> configs;
  for (const auto& p : points) {
    ExperimentConfig pc = c;
    pc.set("masking." + target + ".kind", to_string(p.kind));
    pc.set("masking." + target + ".a", detail::csv_number(p.a));
    pc.set("masking." + target + ".b", detail::csv_number(p.b));
    (void)pc.train();
    configs.push_back(std::move(pc));
  }
  const auto mc = c.model(data.vocab.size());
  dc.validate(mc);
  if (ctx.dry_run) {
    *ctx.log << "sweep-mapping: config and data valid (" << points.size() << " grid points)\n";
    return 0;
  }
  detail::prepare_out(ctx);
  std::string csv = "target,mapping,a,b,bleu\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const fs::path dir = ctx.out / ("point_" + std::to_string(i));
    fs::create_directories(dir);
    detail::write_text(dir / "config.resolved", configs[i].resolved_text());
    auto res = train_loop(mc, configs[i].train(), data.train, data.valid, dir,
                          [&](const std::string& line) { *ctx.log << "[" << i << "] " << line << '\n'; });
    auto model = load_checkpoint(res.averaged_path).model;
    const double bleu = validation_bleu(model, data.test, dc.iterations, dc.length_beam).bleu;
    csv += target + "," + to_string(points[i].kind) + "," + detail::csv_number(points[i].a) + "," +
           detail::csv_number(points[i].b) + "," + detail::csv_number(bleu) + "\n";
    detail::write_text(ctx.out / "sweep.csv", csv);
  }
  *ctx.log << "sweep-mapping: " << points.size() << " grid points\n";
  return 0;
}

// ------------------------------------------------------------- latency

// Sources of at least `min_length` tokens (EOS included): drawn from the
// configured synthetic task, or filtered from the test split.
inline std::vector<TokenSeq> latency_sample(const ExperimentConfig& c, std::size_t count, std::size_t min_length) {
  std::vector<TokenSeq> out;
  if (detail::synthetic_task(c)) {
    auto spec = c.synthetic(count);
    spec.min_length = std::max<std::size_t>(min_length, 2) - 1;
    spec.max_length = spec.min_length + 16;
    for (auto& p : generate_synthetic(spec).pairs) out.push_back(std::move(p.source));
    return out;
  }
  const auto data = load_data(c, kNeedTest);
  for (const auto& p : data.test.pairs)
    if (p.source.size() >= min_length && out.size() < count) out.push_back(p.source);
  if (out.size() < count) {
    throw DataError("latency: only " + std::to_string(out.size()) + " test sentences have >= " + std::to_string(min_length) +
                    " tokens, " + std::to_string(count) + " requested");
  }
  return out;
}

inline nlohmann::ordered_json latency_json(const LatencyReport& r) {
  nlohmann::ordered_json j;
  j["sentences"] = r.sentences;
  j["warmup"] = r.warmup;
  j["ar_ms"] = r.ar_ms;
  for (auto& [t, v] : r.nar_ms) j["nar_ms"][std::to_string(t)] = v;
  for (auto& [t, v] : r.speedup) j["speedup"][std::to_string(t)] = v;
  j["raw"]["ar"] = r.ar_raw;
  for (auto& [t, v] : r.nar_raw) j["raw"]["nar"][std::to_string(t)] = v;
  return j;
}

inline int run_latency(const RunContext& ctx) {
  const auto& c = ctx.config;
  const std::size_t count = c.integer("latency.sentences"), min_len = c.integer("latency.min_length");
  const auto iterations = c.integers("latency.iterations");
  const std::size_t warmup = c.integer("latency.warmup");
  if (count < 1) throw ConfigError("latency.sentences must be >= 1");
  if (warmup < 3) throw ConfigError("latency.warmup must be >= 3");
  if (iterations.empty()) throw ConfigError("latency.iterations is empty");
  for (auto t : iterations)
    if (t < 1) throw ConfigError("latency.iterations entries must be >= 1");
  std::optional<TransformerModel<float>> nar, ar;
  if (c.has("checkpoint")) nar.emplace(detail::checkpoint_from(c).model);
  if (c.has("latency.ar_checkpoint")) ar.emplace(detail::checkpoint_from(c, "latency.ar_checkpoint").model);
  const std::size_t vocab = nar ? nar->config().vocab_size
                            : ar ? ar->config().vocab_size
                                 : (detail::synthetic_task(c) ? c.integer("data.synthetic.vocab_size") : load_data(c, 0).vocab.size());
  if (!nar) {
    auto mc = c.model(vocab);
    mc.autoregressive = false;
    nar.emplace(mc, c.integer("seed"));
  }
  if (!ar) {
    auto mc = nar->config();
    mc.autoregressive = true;
    ar.emplace(mc, c.integer("seed"));
  }
  if (nar->config().autoregressive) throw ConfigError("checkpoint must be a non-autoregressive model");
  if (!ar->config().autoregressive) throw ConfigError("latency.ar_checkpoint must be an autoregressive model");
  const auto sample = latency_sample(c, count, min_len);
  if (ctx.dry_run) {
    *ctx.log << "latency: config and data valid (" << sample.size() << " sentences)\n";
    return 0;
  }
  detail::prepare_out(ctx);
  const auto rep = measure_latency(*ar, *nar, sample, iterations, warmup);
  detail::write_text(ctx.out / "latency.json", latency_json(rep).dump(2) + "\n");
  *ctx.log << "latency: AR " << detail::csv_number(rep.ar_ms) << " ms/sentence\n";
  for (auto& [t, ms] : rep.nar_ms)
    *ctx.log << "latency: NAR T=" << t << " " << detail::csv_number(ms) << " ms/sentence, speedup "
             << detail::csv_number(rep.speedup.at(t)) << "\n";
  return 0;
}

// -------------------------------------------------------------- dispatch

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"train",           "distill",       "decode", "evaluate",
                                                 "analyze-masking", "sweep-mapping", "latency"};
  return names;
}

inline int run_command(const std::string& name, const RunContext& ctx) {
  if (name == "train") return run_train(ctx);
  if (name == "distill") return run_distill(ctx);
  if (name == "decode") return run_decode(ctx);
  if (name == "evaluate") return run_evaluate(ctx);
  if (name == "analyze-masking") return run_analyze_masking(ctx);
  if (name == "sweep-mapping") return run_sweep_mapping(ctx);
  if (name == "latency") return run_latency(ctx);
  throw ConfigError("unknown command '" + name + "'");
}

// Exit status for an exception escaping a command.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

}  // namespace amom
