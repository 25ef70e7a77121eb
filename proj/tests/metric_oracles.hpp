// Brute-force references for the metric implementations.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "amom/rng.hpp"

namespace amom::oracle {

using Seq = std::vector<int>;

// Brute-force BLEU: every n-gram is counted by a linear scan over the
// sentence, clipped by the same scan over the reference.
inline double oracle_bleu(const std::vector<Seq>& hyps, const std::vector<Seq>& refs) {
  auto occurrences = [](const Seq& s, const Seq& g) {
    std::size_t k = 0;
    for (std::size_t i = 0; i + g.size() <= s.size(); ++i)
      if (std::equal(g.begin(), g.end(), s.begin() + static_cast<long>(i))) ++k;
    return k;
  };
  double log_p = 0;
  std::size_t c = 0, r = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    c += hyps[i].size();
    r += refs[i].size();
  }
  for (std::size_t n = 1; n <= 4; ++n) {
    std::size_t match = 0, total = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
      const Seq& h = hyps[i];
      for (std::size_t s = 0; s + n <= h.size(); ++s) {
        ++total;
        const Seq g(h.begin() + static_cast<long>(s), h.begin() + static_cast<long>(s + n));
        // count this occurrence only if it is within the clip
        std::size_t earlier = 0;
        for (std::size_t u = 0; u < s; ++u)
          if (std::equal(g.begin(), g.end(), h.begin() + static_cast<long>(u))) ++earlier;
        if (earlier < occurrences(refs[i], g)) ++match;
      }
    }
    if (match == 0) return 0.0;
    log_p += std::log(static_cast<double>(match) / static_cast<double>(total));
  }
  const double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
  return 100.0 * bp * std::exp(log_p / 4.0);
}

inline std::size_t oracle_lcs(const Seq& a, const Seq& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size() || j == b.size()) return 0;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    return memo[key] = v;
  };
  return go(0, 0);
}

inline std::size_t oracle_levenshtein(const std::string& a, const std::string& b) {
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> memo;
  std::function<std::size_t(std::size_t, std::size_t)> go = [&](std::size_t i, std::size_t j) -> std::size_t {
    if (i == a.size()) return b.size() - j;
    if (j == b.size()) return a.size() - i;
    auto key = std::make_pair(i, j);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const std::size_t v =
        std::min({go(i + 1, j) + 1, go(i, j + 1) + 1, go(i + 1, j + 1) + (a[i] == b[j] ? 0u : 1u)});
    return memo[key] = v;
  };
  return go(0, 0);
}

inline Seq random_seq(CounterRng& rng, std::size_t max_len, std::size_t alphabet) {
  Seq s(1 + rng.below(max_len));
  for (auto& t : s) t = static_cast<int>(rng.below(alphabet));
  return s;
}

}  // namespace amom::oracle
