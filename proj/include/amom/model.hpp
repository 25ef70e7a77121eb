#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "amom/data.hpp"
#include "amom/ops.hpp"
#include "amom/rng.hpp"
#include "amom/tensor.hpp"

namespace amom {

struct ModelConfig {
  std::size_t vocab_size = 32;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ffn = 128;
  std::size_t n_enc_layers = 3;
  std::size_t n_dec_layers = 3;
  double dropout_rate = 0.1;
  std::size_t max_positions = 256;
  std::size_t max_length_class = 200;
  bool autoregressive = false;  // causal decoder with shifted inputs (teacher / baseline)

  static ModelConfig toy(std::size_t vocab_size) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    return c;
  }

  // Transformer_small shape.
  static ModelConfig small(std::size_t vocab_size) {
    ModelConfig c;
    c.vocab_size = vocab_size;
    c.d_model = 512;
    c.n_heads = 4;
    c.d_ffn = 1024;
    c.n_enc_layers = 6;
    c.n_dec_layers = 6;
    c.dropout_rate = 0.3;
    c.max_positions = 1024;
    c.max_length_class = 200;
    return c;
  }

  void validate() const {
    if (vocab_size <= static_cast<std::size_t>(kFirstContentId)) throw ConfigError("model: vocab_size must exceed the reserved ids");
    if (d_model == 0 || n_heads == 0 || d_ffn == 0 || max_positions == 0 || max_length_class == 0)
      throw ConfigError("model: all extents must be positive");
    if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
    if (max_length_class > max_positions) throw ConfigError("model: max_length_class must not exceed max_positions");
    if (!(dropout_rate >= 0 && dropout_rate < 1)) throw ConfigError("model: dropout outside [0,1)");
  }

  std::vector<std::pair<std::string, std::string>> to_pairs() const {
    std::ostringstream dr;
    dr.precision(17);
    dr << dropout_rate;
    return {{"vocab_size", std::to_string(vocab_size)},
            {"d_model", std::to_string(d_model)},
            {"n_heads", std::to_string(n_heads)},
            {"d_ffn", std::to_string(d_ffn)},
            {"n_enc_layers", std::to_string(n_enc_layers)},
            {"n_dec_layers", std::to_string(n_dec_layers)},
            {"dropout_rate", dr.str()},
            {"max_positions", std::to_string(max_positions)},
            {"max_length_class", std::to_string(max_length_class)},
            {"autoregressive", autoregressive ? "1" : "0"}};
  }

  static ModelConfig from_pairs(const std::map<std::string, std::string>& kv) {
    ModelConfig c;
    auto get = [&](const char* k) -> const std::string& {
      auto it = kv.find(k);
      if (it == kv.end()) throw DataError(std::string("model config missing key ") + k);
      return it->second;
    };
    c.vocab_size = std::stoul(get("vocab_size"));
    c.d_model = std::stoul(get("d_model"));
    c.n_heads = std::stoul(get("n_heads"));
    c.d_ffn = std::stoul(get("d_ffn"));
    c.n_enc_layers = std::stoul(get("n_enc_layers"));
    c.n_dec_layers = std::stoul(get("n_dec_layers"));
    c.dropout_rate = std::stod(get("dropout_rate"));
    c.max_positions = std::stoul(get("max_positions"));
    c.max_length_class = std::stoul(get("max_length_class"));
    c.autoregressive = get("autoregressive") == "1";
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

// Closed-form parameter count of TransformerModel for `c`.
inline std::size_t count_params(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.d_ffn;
  const std::size_t attn = 4 * d * d + 4 * d;
  const std::size_t ffn = d * f + f + f * d + d;
  const std::size_t norm = 2 * d;
  const std::size_t enc_layer = attn + ffn + 2 * norm;
  const std::size_t dec_layer = 2 * attn + ffn + 3 * norm;
  return c.vocab_size * d + c.n_enc_layers * enc_layer + c.n_dec_layers * dec_layer + 2 * norm +
         d * c.max_length_class + c.max_length_class;
}

// Padded rows of token ids, row-major.
struct TokenBatch {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<TokenId> ids;

  static TokenBatch from(const std::vector<TokenSeq>& seqs) {
    TokenBatch b;
    b.rows = seqs.size();
    for (const auto& s : seqs) b.cols = std::max(b.cols, s.size());
    b.ids.assign(b.rows * b.cols, kPad);
    for (std::size_t r = 0; r < b.rows; ++r) std::copy(seqs[r].begin(), seqs[r].end(), b.ids.begin() + r * b.cols);
    return b;
  }

  TokenId at(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }

  std::vector<std::uint8_t> valid() const {
    std::vector<std::uint8_t> v(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) v[i] = ids[i] != kPad;
    return v;
  }
};

template <class T>
struct EncoderOutput {
  Tensor<T> hidden;         // [batch * length, d_model], slot 0 of each row is [LENGTH]
  Tensor<T> length_logits;  // [batch, max_length_class]; class c <-> target length c + 1
  std::vector<std::uint8_t> key_valid;
  std::size_t batch = 0;
  std::size_t length = 0;

  // Row `r` repeated `times` times, detached.
  EncoderOutput replicate(std::size_t r, std::size_t times) const {
    EncoderOutput out;
    const std::size_t d = hidden.dim(1), c = length_logits.dim(1);
    out.batch = times;
    out.length = length;
    out.hidden = Tensor<T>({times * length, d});
    out.length_logits = Tensor<T>({times, c});
    for (std::size_t t = 0; t < times; ++t) {
      std::copy_n(hidden.data().begin() + r * length * d, length * d, out.hidden.data().begin() + t * length * d);
      std::copy_n(length_logits.data().begin() + r * c, c, out.length_logits.data().begin() + t * c);
      out.key_valid.insert(out.key_valid.end(), key_valid.begin() + r * length, key_valid.begin() + (r + 1) * length);
    }
    return out;
  }
};

struct LengthCandidate {
  std::size_t length = 0;
  double log_prob = 0;
};

// Top-k target lengths of batch row `row`, by log-probability descending,
// ties to the shorter length.
template <class T>
std::vector<LengthCandidate> predict_length_topk(const EncoderOutput<T>& enc, std::size_t k, std::size_t row = 0) {
  const std::size_t classes = enc.length_logits.dim(1);
  if (k < 1 || k > classes) throw Error("predict_length_topk: k=" + std::to_string(k) + " outside [1, " + std::to_string(classes) + "]");
  const T* z = enc.length_logits.data().data() + row * classes;
  double mx = z[0];
  for (std::size_t i = 1; i < classes; ++i) mx = std::max<double>(mx, z[i]);
  double s = 0;
  for (std::size_t i = 0; i < classes; ++i) s += std::exp(z[i] - mx);
  const double lse = mx + std::log(s);
  std::vector<LengthCandidate> all(classes);
  for (std::size_t i = 0; i < classes; ++i) all[i] = {i + 1, static_cast<double>(z[i]) - lse};
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.log_prob > b.log_prob; });
  all.resize(k);
  return all;
}

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

// Encoder-decoder transformer with pre-layer-norm blocks, sinusoidal
// positions, shared (tied) embeddings and a [LENGTH] classification head.
template <class T>
class TransformerModel {
 public:
  struct Linear {
    Tensor<T> weight, bias;  // [in, out], [out]
  };
  struct Norm {
    Tensor<T> gain, bias;
  };
  struct Attention {
    Linear q, k, v, o;
  };
  struct EncoderLayer {
    Norm ln_attn;
    Attention self_attn;
    Norm ln_ffn;
    Linear ffn_in, ffn_out;
  };
  struct DecoderLayer {
    Norm ln_self;
    Attention self_attn;
    Norm ln_cross;
    Attention cross_attn;
    Norm ln_ffn;
    Linear ffn_in, ffn_out;
  };

  TransformerModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    CounterRng rng(seed, "init");
    const std::size_t d = config_.d_model, f = config_.d_ffn;
    embedding_ = uniform({config_.vocab_size, d}, d, rng);
    for (std::size_t i = 0; i < config_.n_enc_layers; ++i) {
      EncoderLayer l;
      l.ln_attn = norm(d);
      l.self_attn = attention_block(d, rng);
      l.ln_ffn = norm(d);
      l.ffn_in = linear_layer(d, f, rng);
      l.ffn_out = linear_layer(f, d, rng);
      encoder_.push_back(std::move(l));
    }
    for (std::size_t i = 0; i < config_.n_dec_layers; ++i) {
      DecoderLayer l;
      l.ln_self = norm(d);
      l.self_attn = attention_block(d, rng);
      l.ln_cross = norm(d);
      l.cross_attn = attention_block(d, rng);
      l.ln_ffn = norm(d);
      l.ffn_in = linear_layer(d, f, rng);
      l.ffn_out = linear_layer(f, d, rng);
      decoder_.push_back(std::move(l));
    }
    enc_final_ = norm(d);
    dec_final_ = norm(d);
    length_head_ = linear_layer(d, config_.max_length_class, rng);
    build_positions();
    for (auto& p : parameters()) p.set_requires_grad(true);
  }

  TransformerModel(TransformerModel&&) noexcept = default;
  TransformerModel& operator=(TransformerModel&&) noexcept = default;
  TransformerModel(const TransformerModel&) = delete;
  TransformerModel& operator=(const TransformerModel&) = delete;

  // Deep copy with independent parameter storage.
  TransformerModel clone() const {
    TransformerModel m(config_, 0);
    auto dst = m.named_parameters();
    auto src = named_parameters();
    for (std::size_t i = 0; i < src.size(); ++i)
      std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.data().begin());
    return m;
  }

  const ModelConfig& config() const { return config_; }
  const Tensor<T>& embedding() const { return embedding_; }

  // Every parameter in a fixed order (the checkpoint manifest order).
  std::vector<NamedTensor<T>> named_parameters() const {
    std::vector<NamedTensor<T>> out;
    out.push_back({"embedding", embedding_});
    auto add_lin = [&](const std::string& p, const Linear& l) {
      out.push_back({p + ".weight", l.weight});
      out.push_back({p + ".bias", l.bias});
    };
    auto add_norm = [&](const std::string& p, const Norm& n) {
      out.push_back({p + ".gain", n.gain});
      out.push_back({p + ".bias", n.bias});
    };
    auto add_attn = [&](const std::string& p, const Attention& a) {
      add_lin(p + ".q", a.q);
      add_lin(p + ".k", a.k);
      add_lin(p + ".v", a.v);
      add_lin(p + ".o", a.o);
    };
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      const auto& l = encoder_[i];
      const std::string p = "encoder." + std::to_string(i);
      add_norm(p + ".ln_attn", l.ln_attn);
      add_attn(p + ".self_attn", l.self_attn);
      add_norm(p + ".ln_ffn", l.ln_ffn);
      add_lin(p + ".ffn_in", l.ffn_in);
      add_lin(p + ".ffn_out", l.ffn_out);
    }
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const auto& l = decoder_[i];
      const std::string p = "decoder." + std::to_string(i);
      add_norm(p + ".ln_self", l.ln_self);
      add_attn(p + ".self_attn", l.self_attn);
      add_norm(p + ".ln_cross", l.ln_cross);
      add_attn(p + ".cross_attn", l.cross_attn);
      add_norm(p + ".ln_ffn", l.ln_ffn);
      add_lin(p + ".ffn_in", l.ffn_in);
      add_lin(p + ".ffn_out", l.ffn_out);
    }
    add_norm("encoder.final_norm", enc_final_);
    add_norm("decoder.final_norm", dec_final_);
    add_lin("length_head", length_head_);
    return out;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    for (auto& p : named_parameters()) out.push_back(p.tensor);
    return out;
  }

  // Number of decode() calls on this object since construction.
  std::size_t decode_calls() const { return decode_calls_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto& p : named_parameters()) n += p.tensor.numel();
    return n;
  }

  // `x` rows must start with [LENGTH]. Dropout is active iff `dropout_rng`
  // is given (training mode).
  EncoderOutput<T> encode(const TokenBatch& x, CounterRng* dropout_rng = nullptr) const {
    check_tokens(x, "encode");
    const std::size_t B = x.rows, L = x.cols;
    EncoderOutput<T> out;
    out.batch = B;
    out.length = L;
    out.key_valid = x.valid();
    Tensor<T> h = embed(x, dropout_rng);
    AttentionLayout lay{B, L, L, config_.n_heads, out.key_valid, false};
    for (const auto& l : encoder_) {
      Tensor<T> a = layer_norm(h, l.ln_attn.gain, l.ln_attn.bias, 1);
      a = attend(l.self_attn, a, a, lay);
      h = add(h, drop(a, dropout_rng));
      Tensor<T> f = layer_norm(h, l.ln_ffn.gain, l.ln_ffn.bias, 1);
      f = linear(relu(linear(f, l.ffn_in.weight, l.ffn_in.bias)), l.ffn_out.weight, l.ffn_out.bias);
      h = add(h, drop(f, dropout_rng));
    }
    h = layer_norm(h, enc_final_.gain, enc_final_.bias, 1);
    std::vector<std::size_t> length_rows(B);
    for (std::size_t b = 0; b < B; ++b) length_rows[b] = b * L;
    out.length_logits = linear(gather_rows(h, length_rows), length_head_.weight, length_head_.bias);
    out.hidden = h;
    return out;
  }

  // Vocabulary logits [rows * cols, V] for every decoder input slot. The
  // decoder is non-causal unless the model is autoregressive.
  Tensor<T> decode(const TokenBatch& y, const EncoderOutput<T>& enc, CounterRng* dropout_rng = nullptr) const {
    check_tokens(y, "decode");
    ++decode_calls_;
    if (y.rows != enc.batch) {
      throw ShapeError("decode: decoder batch " + std::to_string(y.rows) + " != encoder batch " + std::to_string(enc.batch));
    }
    const std::size_t B = y.rows, L = y.cols;
    Tensor<T> h = embed(y, dropout_rng);
    AttentionLayout self_lay{B, L, L, config_.n_heads, y.valid(), config_.autoregressive};
    AttentionLayout cross_lay{B, L, enc.length, config_.n_heads, enc.key_valid, false};
    for (const auto& l : decoder_) {
      Tensor<T> a = layer_norm(h, l.ln_self.gain, l.ln_self.bias, 1);
      a = attend(l.self_attn, a, a, self_lay);
      h = add(h, drop(a, dropout_rng));
      Tensor<T> c = layer_norm(h, l.ln_cross.gain, l.ln_cross.bias, 1);
      c = attend(l.cross_attn, c, enc.hidden, cross_lay);
      h = add(h, drop(c, dropout_rng));
      Tensor<T> f = layer_norm(h, l.ln_ffn.gain, l.ln_ffn.bias, 1);
      f = linear(relu(linear(f, l.ffn_in.weight, l.ffn_in.bias)), l.ffn_out.weight, l.ffn_out.bias);
      h = add(h, drop(f, dropout_rng));
    }
    h = layer_norm(h, dec_final_.gain, dec_final_.bias, 1);
    return matmul(h, transpose(embedding_));
  }

 private:
  mutable std::size_t decode_calls_ = 0;

  static Tensor<T> uniform(Shape shape, std::size_t fan_in, CounterRng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
  }
  static Norm norm(std::size_t d) { return {Tensor<T>({d}, T{1}), Tensor<T>({d}, T{0})}; }
  static Linear linear_layer(std::size_t in, std::size_t out, CounterRng& rng) {
    return {uniform({in, out}, in, rng), Tensor<T>({out}, T{0})};
  }
  static Attention attention_block(std::size_t d, CounterRng& rng) {
    Attention a;
    a.q = linear_layer(d, d, rng);
    a.k = linear_layer(d, d, rng);
    a.v = linear_layer(d, d, rng);
    a.o = linear_layer(d, d, rng);
    return a;
  }

  void build_positions() {
    const std::size_t d = config_.d_model;
    positions_.assign(config_.max_positions * d, T{0});
    for (std::size_t pos = 0; pos < config_.max_positions; ++pos)
      for (std::size_t i = 0; i < d; i += 2) {
        const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
        positions_[pos * d + i] = static_cast<T>(std::sin(static_cast<double>(pos) * freq));
        if (i + 1 < d) positions_[pos * d + i + 1] = static_cast<T>(std::cos(static_cast<double>(pos) * freq));
      }
  }

  void check_tokens(const TokenBatch& b, const char* op) const {
    if (b.cols > config_.max_positions) {
      throw ShapeError(std::string(op) + ": sequence length " + std::to_string(b.cols) + " exceeds max_positions " +
                       std::to_string(config_.max_positions));
    }
    for (TokenId t : b.ids)
      if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size)
        throw DataError(std::string(op) + ": unknown token id " + std::to_string(t));
  }

  Tensor<T> embed(const TokenBatch& b, CounterRng* dropout_rng) const {
    const std::size_t d = config_.d_model;
    Tensor<T> pos({b.rows * b.cols, d});
    for (std::size_t r = 0; r < b.rows; ++r)
      std::copy_n(positions_.begin(), b.cols * d, pos.data().begin() + r * b.cols * d);
    Tensor<T> e = scale(embedding_lookup(embedding_, std::span<const TokenId>(b.ids)),
                        static_cast<T>(std::sqrt(static_cast<double>(d))));
    return drop(add(e, pos), dropout_rng);
  }

  Tensor<T> drop(const Tensor<T>& x, CounterRng* rng) const {
    if (!rng) return x;
    return dropout(x, config_.dropout_rate, *rng, true);
  }

  Tensor<T> attend(const Attention& a, const Tensor<T>& query_in, const Tensor<T>& kv_in,
                   const AttentionLayout& lay) const {
    Tensor<T> q = linear(query_in, a.q.weight, a.q.bias);
    Tensor<T> k = linear(kv_in, a.k.weight, a.k.bias);
    Tensor<T> v = linear(kv_in, a.v.weight, a.v.bias);
    return linear(attention(q, k, v, lay), a.o.weight, a.o.bias);
  }

  ModelConfig config_;
  Tensor<T> embedding_;
  std::vector<EncoderLayer> encoder_;
  std::vector<DecoderLayer> decoder_;
  Norm enc_final_, dec_final_;
  Linear length_head_;
  std::vector<T> positions_;
};

// Encoder input rows: [LENGTH] followed by each source sequence.
inline TokenBatch encoder_batch(const std::vector<TokenSeq>& sources) {
  std::vector<TokenSeq> rows;
  rows.reserve(sources.size());
  for (const auto& s : sources) {
    TokenSeq r{kLength};
    r.insert(r.end(), s.begin(), s.end());
    rows.push_back(std::move(r));
  }
  return TokenBatch::from(rows);
}

}  // namespace amom
