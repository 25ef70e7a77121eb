#pragma once

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "amom/data.hpp"
#include "amom/inference.hpp"
#include "amom/masking.hpp"
#include "amom/model.hpp"
#include "amom/training.hpp"

namespace amom {

enum class ValueType { integer, real, boolean, text, real_list, int_list };

struct ConfigKey {
  ValueType type;
  std::string default_value;  // empty for integer/real keys = taken from the model preset
  std::string help;
};

// Every key the toolkit understands, with its type and default.
inline const std::map<std::string, ConfigKey>& config_registry() {
  static const std::map<std::string, ConfigKey> keys = {
      {"seed", {ValueType::integer, "1", "experiment seed; every RNG stream derives from it"}},

      {"model.preset", {ValueType::text, "toy", "toy | small"}},
      {"model.vocab_size", {ValueType::integer, "", "vocabulary size (default: taken from the data)"}},
      {"model.d_model", {ValueType::integer, "", "hidden size"}},
      {"model.n_heads", {ValueType::integer, "", "attention heads"}},
      {"model.d_ffn", {ValueType::integer, "", "feed-forward size"}},
      {"model.n_enc_layers", {ValueType::integer, "", "encoder layers"}},
      {"model.n_dec_layers", {ValueType::integer, "", "decoder layers"}},
      {"model.dropout", {ValueType::real, "", "dropout rate"}},
      {"model.max_positions", {ValueType::integer, "", "longest sequence"}},
      {"model.max_length_class", {ValueType::integer, "", "number of length classes"}},
      {"model.autoregressive", {ValueType::boolean, "false", "causal decoder (teacher / latency baseline)"}},

      {"masking.phi.kind", {ValueType::text, "linear", "source mapping: linear | convex | concave | ladder | fixed"}},
      {"masking.phi.a", {ValueType::real, "0.3", "source mapping limit a"}},
      {"masking.phi.b", {ValueType::real, "0.1", "source mapping limit b"}},
      {"masking.psi.kind", {ValueType::text, "linear", "target remask mapping"}},
      {"masking.psi.a", {ValueType::real, "0.2", "target mapping limit a"}},
      {"masking.psi.b", {ValueType::real, "0.8", "target mapping limit b"}},
      {"masking.second_pass", {ValueType::text, "adaptive", "adaptive | uniform | none"}},
      {"masking.passes", {ValueType::integer, "2", "decoder passes per step (1..3)"}},
      {"masking.same_ratio", {ValueType::boolean, "false", "remask ratio equals beta"}},
      {"masking.ground_truth_obs", {ValueType::boolean, "false", "kept predicted slots carry gold ids"}},
      {"masking.confidence_based", {ValueType::boolean, "false", "remask lowest-confidence slots instead of sampling"}},
      {"masking.psi_convention", {ValueType::text, "main_text", "main_text | appendix"}},

      {"train.max_updates", {ValueType::integer, "8000", "optimizer updates"}},
      {"train.tokens_per_batch", {ValueType::integer, "4096", "token budget per batch"}},
      {"train.update_freq", {ValueType::integer, "1", "batches accumulated per update"}},
      {"train.lr", {ValueType::real, "0.0005", "peak learning rate"}},
      {"train.warmup", {ValueType::integer, "10000", "warmup updates"}},
      {"train.label_smoothing", {ValueType::real, "0.1", "label smoothing"}},
      {"train.length_loss_weight", {ValueType::real, "0.1", "length loss weight"}},
      {"train.clip_norm", {ValueType::real, "2.5", "gradient clipping norm (0 = off)"}},
      {"train.valid_interval", {ValueType::integer, "1000", "updates between validations"}},
      {"train.valid_sentences", {ValueType::integer, "200", "validation sentences used for logged BLEU (0 = all)"}},
      {"train.valid_length_beam", {ValueType::integer, "3", "length beam for validation BLEU"}},
      {"train.average_best", {ValueType::integer, "5", "checkpoints averaged at the end"}},

      {"decode.iterations", {ValueType::integer, "10", "mask-predict iterations T"}},
      {"decode.length_beam", {ValueType::integer, "3", "length candidates B"}},
      {"decode.dedup", {ValueType::boolean, "false", "merge consecutive duplicate tokens"}},
      {"decode.max_output_length", {ValueType::integer, "200", "longest output"}},
      {"decode.format", {ValueType::text, "text", "text | jsonl"}},
      {"decode.input", {ValueType::text, "", "source sentences to decode (default: the test split)"}},

      {"checkpoint", {ValueType::text, "", "model checkpoint for decode / evaluate / latency"}},

      {"data.train.source", {ValueType::text, "", "training source file"}},
      {"data.train.target", {ValueType::text, "", "training target file"}},
      {"data.train.tags", {ValueType::text, "", "optional provenance tags file (raw | distilled per line)"}},
      {"data.valid.source", {ValueType::text, "", "validation source file"}},
      {"data.valid.target", {ValueType::text, "", "validation target file"}},
      {"data.test.source", {ValueType::text, "", "test source file"}},
      {"data.test.target", {ValueType::text, "", "test target file"}},
      {"data.vocab", {ValueType::text, "", "vocabulary file (default: built from the training text)"}},
      {"data.min_freq", {ValueType::integer, "1", "minimum token frequency when building a vocabulary"}},
      {"data.synthetic.task", {ValueType::text, "", "copy | reverse | sort | ambiguous-translate (replaces data files)"}},
      {"data.synthetic.vocab_size", {ValueType::integer, "32", "synthetic vocabulary size"}},
      {"data.synthetic.min_length", {ValueType::integer, "4", "shortest synthetic sentence"}},
      {"data.synthetic.max_length", {ValueType::integer, "16", "longest synthetic sentence"}},
      {"data.synthetic.pairs", {ValueType::integer, "20000", "training pairs"}},
      {"data.synthetic.valid_pairs", {ValueType::integer, "1000", "validation pairs"}},
      {"data.synthetic.test_pairs", {ValueType::integer, "1000", "test pairs"}},
      {"data.synthetic.seed", {ValueType::integer, "1", "generator seed"}},
      {"data.synthetic.ambiguity_rate", {ValueType::real, "0.5", "probability of table B (ambiguous-translate)"}},

      {"distill.teacher", {ValueType::text, "", "autoregressive teacher checkpoint"}},
      {"distill.combine", {ValueType::boolean, "true", "append the raw pairs to the distilled ones"}},

      {"evaluate.hypotheses", {ValueType::text, "", "hypothesis file (default: decode the test split)"}},
      {"evaluate.references", {ValueType::text, "", "reference file"}},
      {"evaluate.sources", {ValueType::text, "", "source file for length buckets"}},
      {"evaluate.bucket_edges", {ValueType::int_list, "", "source-length bucket edges, e.g. 8,12"}},

      {"analyze.betas", {ValueType::real_list, "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1", "error rates to simulate"}},
      {"analyze.length", {ValueType::integer, "100", "target length L"}},
      {"analyze.trials", {ValueType::integer, "100000", "Monte Carlo trials per point"}},
      {"analyze.convention", {ValueType::text, "appendix", "psi convention for the study"}},

      {"sweep.target", {ValueType::text, "phi", "phi | psi"}},
      {"sweep.points", {ValueType::text, "", "kind:a:b entries separated by commas (default grid per target)"}},

      {"latency.ar_checkpoint", {ValueType::text, "", "AR model (default: untrained toy model)"}},
      {"latency.sentences", {ValueType::integer, "100", "timed sentences"}},
      {"latency.min_length", {ValueType::integer, "32", "shortest source (tokens, EOS included)"}},
      {"latency.iterations", {ValueType::int_list, "1,4,10", "NAR iteration counts"}},
      {"latency.warmup", {ValueType::integer, "3", "untimed warmup sentences"}},
  };
  return keys;
}

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_int(const std::string& s, long long& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && p == end;
}

inline bool parse_real(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

inline bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") return out = true, true;
  if (s == "false" || s == "0" || s == "no") return out = false, true;
  return false;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::string item;
  std::istringstream is(s);
  while (std::getline(is, item, sep)) out.push_back(trim(item));
  return out;
}

inline bool type_ok(ValueType t, const std::string& v) {
  long long i;
  double d;
  bool b;
  switch (t) {
    case ValueType::integer: return parse_int(v, i) && i >= 0;
    case ValueType::real: return parse_real(v, d);
    case ValueType::boolean: return parse_bool(v, b);
    case ValueType::text: return true;
    case ValueType::real_list:
      for (const auto& x : split(v, ','))
        if (!parse_real(x, d)) return false;
      return true;
    case ValueType::int_list:
      for (const auto& x : split(v, ','))
        if (!parse_int(x, i) || i < 0) return false;
      return true;
  }
  return false;
}

inline const char* type_name(ValueType t) {
  switch (t) {
    case ValueType::integer: return "non-negative integer";
    case ValueType::real: return "number";
    case ValueType::boolean: return "boolean";
    case ValueType::text: return "string";
    case ValueType::real_list: return "comma-separated numbers";
    case ValueType::int_list: return "comma-separated integers";
  }
  return "?";
}

}  // namespace detail

// Flat dotted key=value configuration. Keys are checked against
// config_registry() on every assignment.
class ExperimentConfig {
 public:
  ExperimentConfig() {
    for (const auto& [k, info] : config_registry()) values_[k] = info.default_value;
  }

  void set(const std::string& key, const std::string& value) {
    auto it = config_registry().find(key);
    if (it == config_registry().end()) throw ConfigError("unknown config key '" + key + "'");
    const bool inherit = value.empty() && it->second.default_value.empty();
    if (!inherit && !detail::type_ok(it->second.type, value)) {
      throw ConfigError("config key '" + key + "' expects a " + detail::type_name(it->second.type) + ", got '" + value + "'");
    }
    values_[key] = value;
  }

  // "key=value"
  void apply(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
    set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }
  bool has(const std::string& key) const { return !str(key).empty(); }
  std::size_t integer(const std::string& key) const {
    long long v = 0;
    if (!detail::parse_int(str(key), v)) throw ConfigError("config key '" + key + "' is not set");
    return static_cast<std::size_t>(v);
  }
  double real(const std::string& key) const {
    double v = 0;
    if (!detail::parse_real(str(key), v)) throw ConfigError("config key '" + key + "' is not set");
    return v;
  }
  bool boolean(const std::string& key) const {
    bool v = false;
    if (!detail::parse_bool(str(key), v)) throw ConfigError("config key '" + key + "' is not set");
    return v;
  }
  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& x : detail::split(str(key), ',')) out.push_back(std::strtod(x.c_str(), nullptr));
    return out;
  }
  std::vector<std::size_t> integers(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& x : detail::split(str(key), ',')) out.push_back(std::stoull(x));
    return out;
  }

  // Model shape: preset first, then explicit model.* keys. The vocabulary
  // size falls back to `data_vocab` when model.vocab_size is unset.
  ModelConfig model(std::size_t data_vocab) const {
    const std::string preset = str("model.preset");
    ModelConfig m;
    if (preset == "toy") m = ModelConfig::toy(data_vocab);
    else if (preset == "small") m = ModelConfig::small(data_vocab);
    else throw ConfigError("unknown model preset '" + preset + "'");
    auto take = [&](const char* key, std::size_t& field) {
      if (has(key)) field = integer(key);
    };
    take("model.vocab_size", m.vocab_size);
    take("model.d_model", m.d_model);
    take("model.n_heads", m.n_heads);
    take("model.d_ffn", m.d_ffn);
    take("model.n_enc_layers", m.n_enc_layers);
    take("model.n_dec_layers", m.n_dec_layers);
    take("model.max_positions", m.max_positions);
    take("model.max_length_class", m.max_length_class);
    if (has("model.dropout")) m.dropout_rate = real("model.dropout");
    m.autoregressive = boolean("model.autoregressive");
    m.validate();
    return m;
  }

  MaskingPolicy masking() const {
    MaskingPolicy p;
    p.phi = {parse_mapping_kind(str("masking.phi.kind")), real("masking.phi.a"), real("masking.phi.b")};
    p.psi = {parse_mapping_kind(str("masking.psi.kind")), real("masking.psi.a"), real("masking.psi.b")};
    p.second_pass = parse_second_pass(str("masking.second_pass"));
    p.refine_passes = static_cast<int>(integer("masking.passes"));
    p.same_ratio = boolean("masking.same_ratio");
    p.ground_truth_obs = boolean("masking.ground_truth_obs");
    p.confidence_based = boolean("masking.confidence_based");
    p.psi_convention = parse_psi_convention(str("masking.psi_convention"));
    p.validate();
    return p;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.policy = masking();
    t.max_updates = integer("train.max_updates");
    t.tokens_per_batch = integer("train.tokens_per_batch");
    t.update_freq = integer("train.update_freq");
    t.lr.base_lr = real("train.lr");
    t.lr.warmup_steps = integer("train.warmup");
    t.label_smoothing = real("train.label_smoothing");
    t.length_loss_weight = real("train.length_loss_weight");
    t.clip_norm = real("train.clip_norm");
    t.valid_interval = integer("train.valid_interval");
    t.valid_sentences = integer("train.valid_sentences");
    t.valid_length_beam = integer("train.valid_length_beam");
    t.average_best = integer("train.average_best");
    t.seed = integer("seed");
    t.validate();
    return t;
  }

  DecodeConfig decode() const {
    DecodeConfig d;
    d.iterations = integer("decode.iterations");
    d.length_beam = integer("decode.length_beam");
    d.dedup_consecutive = boolean("decode.dedup");
    d.max_output_length = integer("decode.max_output_length");
    const auto fmt = str("decode.format");
    if (fmt != "text" && fmt != "jsonl") throw ConfigError("decode.format must be text or jsonl");
    return d;
  }

  // Synthetic spec for `pairs` sentences of the configured task.
  SyntheticTaskSpec synthetic(std::size_t pairs) const {
    SyntheticTaskSpec s;
    s.task = parse_synthetic_task(str("data.synthetic.task"));
    s.vocab_size = integer("data.synthetic.vocab_size");
    s.min_length = integer("data.synthetic.min_length");
    s.max_length = integer("data.synthetic.max_length");
    s.pairs = pairs;
    s.seed = integer("data.synthetic.seed");
    s.ambiguity_rate = real("data.synthetic.ambiguity_rate");
    s.validate();
    return s;
  }

  // key=value lines in key order.
  std::string resolved_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Config file (may be empty path): "key = value" lines, '#' comments.
// Overrides are applied after the file, left to right.
inline ExperimentConfig parse_config(const std::string& path, const std::vector<std::string>& overrides = {}) {
  ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      try {
        cfg.apply(line);
      } catch (const ConfigError& e) {
        throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }
  for (const auto& o : overrides) cfg.apply(o);
  return cfg;
}

}  // namespace amom
