#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "amom/error.hpp"
#include "amom/rng.hpp"

namespace amom {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kMask = 3;
inline constexpr TokenId kLength = 4;
inline constexpr TokenId kFirstContentId = 5;

inline bool is_reserved(TokenId id) { return id >= 0 && id < kFirstContentId; }

inline std::vector<std::string> split_whitespace(std::string_view line) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

class Vocabulary {
 public:
  Vocabulary() {
    for (const char* t : {"<pad>", "<unk>", "</s>", "<mask>", "<length>"}) add(t);
  }

  // Content tokens in id order starting at id 5.
  static Vocabulary from_tokens(const std::vector<std::string>& tokens) {
    Vocabulary v;
    for (const auto& t : tokens) {
      if (v.index_.count(t)) throw DataError("vocabulary: duplicate token '" + t + "'");
      v.add(t);
    }
    return v;
  }

  // Token for content id k is its decimal spelling, so "7" <-> 7.
  static Vocabulary synthetic(std::size_t size) {
    std::vector<std::string> tokens;
    for (std::size_t id = kFirstContentId; id < size; ++id) tokens.push_back(std::to_string(id));
    return from_tokens(tokens);
  }

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  TokenId id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end() || is_reserved(it->second)) return kUnk;
    return it->second;
  }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  // Whitespace tokens, EOS appended; unknown tokens become UNK.
  TokenSeq encode_line(std::string_view text) const {
    TokenSeq out;
    for (const auto& t : split_whitespace(text)) out.push_back(id(t));
    out.push_back(kEos);
    return out;
  }

  // Space-joined tokens with EOS, PAD, MASK and LENGTH dropped.
  std::string decode_line(const TokenSeq& ids) const {
    std::string out;
    for (TokenId t : ids) {
      if (t == kEos || t == kPad || t == kMask || t == kLength) continue;
      if (!out.empty()) out += ' ';
      out += token(t);
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot write vocabulary file " + path);
    for (std::size_t i = kFirstContentId; i < tokens_.size(); ++i) os << tokens_[i] << '\n';
    if (!os) throw DataError("write failed for " + path);
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot read vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(is, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      tokens.push_back(line);
    }
    return from_tokens(tokens);
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  void add(const std::string& t) {
    index_.emplace(t, static_cast<TokenId>(tokens_.size()));
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Tokens with frequency >= min_freq, ordered by (frequency desc, token asc).
inline Vocabulary build_vocab(const std::vector<std::string>& lines, std::size_t min_freq = 1) {
  std::map<std::string, std::size_t> counts;
  const Vocabulary reserved;
  for (const auto& line : lines)
    for (auto& t : split_whitespace(line))
      if (!reserved.contains(t)) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (auto& [tok, c] : counts)
    if (c >= min_freq) kept.emplace_back(tok, c);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (auto& [tok, c] : kept) tokens.push_back(tok);
  return Vocabulary::from_tokens(tokens);
}

enum class Provenance { raw, distilled };

inline const char* to_string(Provenance p) { return p == Provenance::raw ? "raw" : "distilled"; }

struct SentencePair {
  TokenSeq source;  // content ids followed by EOS
  TokenSeq target;  // content ids followed by EOS
  Provenance tag = Provenance::raw;

  bool operator==(const SentencePair&) const = default;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
  std::size_t max_source_length() const {
    std::size_t m = 0;
    for (const auto& p : pairs) m = std::max(m, p.source.size());
    return m;
  }
  std::size_t max_target_length() const {
    std::size_t m = 0;
    for (const auto& p : pairs) m = std::max(m, p.target.size());
    return m;
  }

  // Both sides non-empty and every id inside the vocabulary.
  void validate(std::size_t vocab_size) const {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto& p = pairs[i];
      if (p.source.empty() || p.target.empty()) throw DataError("corpus pair " + std::to_string(i) + " has an empty side");
      for (const auto* seq : {&p.source, &p.target})
        for (TokenId t : *seq)
          if (t < 0 || static_cast<std::size_t>(t) >= vocab_size)
            throw DataError("corpus pair " + std::to_string(i) + " holds id " + std::to_string(t) +
                            " outside the vocabulary");
    }
  }
};

// Concatenation with tags preserved.
inline ParallelCorpus combine(const ParallelCorpus& a, const ParallelCorpus& b) {
  ParallelCorpus out = a;
  out.pairs.insert(out.pairs.end(), b.pairs.begin(), b.pairs.end());
  return out;
}

// ------------------------------------------------------------- corpus files

namespace detail {

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline bool blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace detail

struct LoadedCorpus {
  ParallelCorpus corpus;
  std::size_t skipped_blank = 0;
};

// Two aligned UTF-8 files, one sentence per line. An optional third file
// carries one provenance tag ("raw" / "distilled") per line.
inline LoadedCorpus load_corpus(const std::string& src_path, const std::string& tgt_path, const Vocabulary& vocab,
                                const std::string& tag_path = {}) {
  auto src = detail::read_lines(src_path);
  auto tgt = detail::read_lines(tgt_path);
  if (src.size() != tgt.size()) {
    throw DataError("line-count mismatch: " + src_path + " has " + std::to_string(src.size()) + " lines, " +
                    tgt_path + " has " + std::to_string(tgt.size()));
  }
  std::vector<std::string> tags;
  if (!tag_path.empty()) {
    tags = detail::read_lines(tag_path);
    if (tags.size() != src.size()) throw DataError("tag file " + tag_path + " does not match the corpus line count");
  }
  LoadedCorpus out;
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (detail::blank(src[i]) || detail::blank(tgt[i])) {
      ++out.skipped_blank;
      continue;
    }
    SentencePair p{vocab.encode_line(src[i]), vocab.encode_line(tgt[i]), Provenance::raw};
    if (!tags.empty()) {
      if (tags[i] == "distilled") p.tag = Provenance::distilled;
      else if (tags[i] != "raw") throw DataError("unknown provenance tag '" + tags[i] + "'");
    }
    out.corpus.pairs.push_back(std::move(p));
  }
  return out;
}

inline void save_corpus(const ParallelCorpus& corpus, const Vocabulary& vocab, const std::string& src_path,
                        const std::string& tgt_path, const std::string& tag_path = {}) {
  std::ofstream s(src_path, std::ios::binary), t(tgt_path, std::ios::binary);
  if (!s || !t) throw DataError("cannot write corpus files " + src_path + ", " + tgt_path);
  std::ofstream g;
  if (!tag_path.empty()) {
    g.open(tag_path, std::ios::binary);
    if (!g) throw DataError("cannot write " + tag_path);
  }
  for (const auto& p : corpus.pairs) {
    s << vocab.decode_line(p.source) << '\n';
    t << vocab.decode_line(p.target) << '\n';
    if (g.is_open()) g << to_string(p.tag) << '\n';
  }
  if (!s || !t) throw DataError("write failed for corpus files");
}

// ------------------------------------------------------------ synthetic data

enum class SyntheticTask { copy, reverse, sort, ambiguous_translate };

inline SyntheticTask parse_synthetic_task(const std::string& s) {
  if (s == "copy") return SyntheticTask::copy;
  if (s == "reverse") return SyntheticTask::reverse;
  if (s == "sort") return SyntheticTask::sort;
  if (s == "ambiguous-translate") return SyntheticTask::ambiguous_translate;
  throw ConfigError("unknown synthetic task '" + s + "'");
}

struct SyntheticTaskSpec {
  SyntheticTask task = SyntheticTask::copy;
  std::size_t vocab_size = 32;
  std::size_t min_length = 4;
  std::size_t max_length = 16;
  std::size_t pairs = 1000;
  std::uint64_t seed = 1;
  double ambiguity_rate = 0.5;  // probability that a sentence uses table B

  void validate(std::size_t max_positions = 1u << 30) const {
    if (pairs < 1) throw ConfigError("synthetic: pair count must be >= 1");
    if (min_length < 1 || min_length > max_length) throw ConfigError("synthetic: bad length range");
    if (max_length + 2 > max_positions) throw ConfigError("synthetic: lengths exceed model max_positions");
    const std::size_t content = vocab_size > kFirstContentId ? vocab_size - kFirstContentId : 0;
    if (content < (task == SyntheticTask::ambiguous_translate ? 2u : 1u))
      throw ConfigError("synthetic: vocabulary too small");
    if (!(ambiguity_rate >= 0 && ambiguity_rate <= 1)) throw ConfigError("synthetic: ambiguity_rate outside [0,1]");
  }
};

// Two disjoint translation tables for ambiguous-translate. Source symbols
// are the first n content ids; table A maps them onto the same block,
// table B onto the next block. A latent per-sentence coin picks one table
// for every token of the sentence.
class AmbiguousTables {
 public:
  enum class Verdict { all_a, all_b, inconsistent };

  AmbiguousTables(std::size_t vocab_size, std::uint64_t seed) {
    symbols_ = (vocab_size - kFirstContentId) / 2;
    CounterRng rng(seed, "ambiguous-tables");
    std::vector<TokenId> a(symbols_), b(symbols_);
    std::iota(a.begin(), a.end(), kFirstContentId);
    std::iota(b.begin(), b.end(), static_cast<TokenId>(kFirstContentId + symbols_));
    table_a_ = sample_without_replacement(a, symbols_, rng);
    table_b_ = sample_without_replacement(b, symbols_, rng);
  }

  std::size_t symbols() const { return symbols_; }
  TokenId a(TokenId s) const { return table_a_.at(static_cast<std::size_t>(s - kFirstContentId)); }
  TokenId b(TokenId s) const { return table_b_.at(static_cast<std::size_t>(s - kFirstContentId)); }

  // Compares content tokens only (EOS and other reserved ids are ignored).
  Verdict classify(const TokenSeq& source, const TokenSeq& hypothesis) const {
    auto content = [](const TokenSeq& s) {
      TokenSeq out;
      for (TokenId t : s)
        if (!is_reserved(t)) out.push_back(t);
      return out;
    };
    const TokenSeq src = content(source), hyp = content(hypothesis);
    if (src.size() != hyp.size() || src.empty()) return Verdict::inconsistent;
    bool all_a = true, all_b = true;
    for (std::size_t i = 0; i < src.size(); ++i) {
      if (static_cast<std::size_t>(src[i] - kFirstContentId) >= symbols_) return Verdict::inconsistent;
      all_a = all_a && hyp[i] == a(src[i]);
      all_b = all_b && hyp[i] == b(src[i]);
    }
    if (all_a) return Verdict::all_a;
    if (all_b) return Verdict::all_b;
    return Verdict::inconsistent;
  }

 private:
  std::size_t symbols_ = 0;
  TokenSeq table_a_, table_b_;
};

inline ParallelCorpus generate_synthetic(const SyntheticTaskSpec& spec) {
  spec.validate();
  CounterRng rng(spec.seed, "synthetic");
  std::optional<AmbiguousTables> tables;
  std::size_t alphabet = spec.vocab_size - kFirstContentId;
  if (spec.task == SyntheticTask::ambiguous_translate) {
    tables.emplace(spec.vocab_size, spec.seed);
    alphabet = tables->symbols();
  }
  ParallelCorpus corpus;
  corpus.pairs.reserve(spec.pairs);
  for (std::size_t n = 0; n < spec.pairs; ++n) {
    const std::size_t len = spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
    TokenSeq src(len);
    for (auto& t : src) t = static_cast<TokenId>(kFirstContentId + rng.below(alphabet));
    TokenSeq tgt;
    switch (spec.task) {
      case SyntheticTask::copy: tgt = src; break;
      case SyntheticTask::reverse: tgt.assign(src.rbegin(), src.rend()); break;
      case SyntheticTask::sort:
        tgt = src;
        std::sort(tgt.begin(), tgt.end());
        break;
      case SyntheticTask::ambiguous_translate: {
        const bool use_b = rng.bernoulli(spec.ambiguity_rate);
        for (TokenId s : src) tgt.push_back(use_b ? tables->b(s) : tables->a(s));
        break;
      }
    }
    src.push_back(kEos);
    tgt.push_back(kEos);
    corpus.pairs.push_back({std::move(src), std::move(tgt), Provenance::raw});
  }
  return corpus;
}

}  // namespace amom
