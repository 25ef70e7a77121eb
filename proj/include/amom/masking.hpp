#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "amom/data.hpp"
#include "amom/error.hpp"
#include "amom/rng.hpp"

namespace amom {

enum class MappingKind { linear, convex, concave, ladder, fixed };

inline MappingKind parse_mapping_kind(const std::string& s) {
  if (s == "linear") return MappingKind::linear;
  if (s == "convex") return MappingKind::convex;
  if (s == "concave") return MappingKind::concave;
  if (s == "ladder") return MappingKind::ladder;
  if (s == "fixed") return MappingKind::fixed;
  throw ConfigError("unknown mapping kind '" + s + "'");
}

inline const char* to_string(MappingKind k) {
  switch (k) {
    case MappingKind::linear: return "linear";
    case MappingKind::convex: return "convex";
    case MappingKind::concave: return "concave";
    case MappingKind::ladder: return "ladder";
    case MappingKind::fixed: return "fixed";
  }
  return "?";
}

inline constexpr double kLadderStep = 0.05;

// Maps a ratio in [0,1] to a masking ratio bounded by the limits a and b.
//   linear  (b-a) r + a
//   convex  (b-a) r^2 + b
//   concave (a-b) r^2 + 2(b-a) r + b
//   ladder  linear, rounded to the nearest multiple of 0.05
//   fixed   a, whatever r is
// The result is always clamped to [0,1].
struct MappingFunction {
  MappingKind kind = MappingKind::linear;
  double a = 0.3;
  double b = 0.1;

  double operator()(double r) const {
    double v = 0;
    switch (kind) {
      case MappingKind::linear: v = (b - a) * r + a; break;
      case MappingKind::convex: v = (b - a) * r * r + b; break;
      case MappingKind::concave: v = (a - b) * r * r + 2 * (b - a) * r + b; break;
      case MappingKind::ladder: v = std::round(((b - a) * r + a) / kLadderStep) * kLadderStep; break;
      case MappingKind::fixed: v = a; break;
    }
    return std::clamp(v, 0.0, 1.0);
  }

  static MappingFunction fixed(double ratio) { return {MappingKind::fixed, ratio, ratio}; }
  static MappingFunction identity() { return {MappingKind::linear, 0.0, 1.0}; }
};

inline double eval_mapping(const MappingFunction& f, double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw Error("eval_mapping: ratio " + std::to_string(r) + " outside [0,1]");
  return f(r);
}

enum class SecondPassStrategy { adaptive, uniform, none };

// main_text: predicted slots are remasked with 1 - psi(beta), observed slots
// with psi(beta). appendix: the two probabilities are swapped.
enum class PsiConvention { main_text, appendix };

inline SecondPassStrategy parse_second_pass(const std::string& s) {
  if (s == "adaptive") return SecondPassStrategy::adaptive;
  if (s == "uniform") return SecondPassStrategy::uniform;
  if (s == "none") return SecondPassStrategy::none;
  throw ConfigError("unknown second-pass strategy '" + s + "'");
}

inline PsiConvention parse_psi_convention(const std::string& s) {
  if (s == "main_text") return PsiConvention::main_text;
  if (s == "appendix") return PsiConvention::appendix;
  throw ConfigError("unknown psi convention '" + s + "'");
}

struct MaskingPolicy {
  MappingFunction phi{MappingKind::linear, 0.3, 0.1};
  MappingFunction psi{MappingKind::linear, 0.2, 0.8};
  SecondPassStrategy second_pass = SecondPassStrategy::adaptive;
  bool same_ratio = false;  // psi replaced by the identity: remask ratio = beta
  int refine_passes = 2;
  bool ground_truth_obs = false;  // surviving predicted slots carry gold ids
  bool confidence_based = false;  // lowest-confidence selection instead of Bernoulli draws
  PsiConvention psi_convention = PsiConvention::main_text;

  void validate() const {
    if (refine_passes < 1 || refine_passes > 3) throw ConfigError("masking: refine passes must be 1, 2 or 3");
    if ((refine_passes == 1) != (second_pass == SecondPassStrategy::none))
      throw ConfigError("masking: one pass exactly when the second-pass strategy is none");
    for (const auto* f : {&phi, &psi})
      if (!(f->a >= 0 && f->a <= 1 && f->b >= 0 && f->b <= 1)) throw ConfigError("masking: mapping limits must lie in [0,1]");
  }

  // The psi actually used to plan the second pass.
  MappingFunction effective_psi() const { return same_ratio ? MappingFunction::identity() : psi; }

  // Plain CMLM: no source masking, no second pass.
  static MaskingPolicy vanilla_cmlm() {
    MaskingPolicy p;
    p.phi = MappingFunction::fixed(0.0);
    p.second_pass = SecondPassStrategy::none;
    p.refine_passes = 1;
    return p;
  }
};

// One masking realisation of a (source, target) pair. Positions are 0-based
// target indices.
struct MaskedPass {
  TokenSeq x_masked;
  TokenSeq y_input;
  std::vector<std::size_t> mask_positions;
  std::vector<std::size_t> obs_positions;
  double alpha = 0;
  std::size_t n_mask = 0;
  std::size_t n_obs = 0;
};

struct SecondPassPlan {
  double beta = 0;
  double psi_value = 0;
  double p_pred = 0;  // per-slot remask probability on predicted (previously masked) slots
  double p_obs = 0;   // per-slot remask probability on observed slots
};

// Counts are rounded half-up.
inline std::size_t round_count(double v) { return static_cast<std::size_t>(std::floor(v + 0.5 + 1e-9)); }

namespace detail {

inline MaskedPass make_pass(const TokenSeq& base, std::vector<std::size_t> masked) {
  std::sort(masked.begin(), masked.end());
  MaskedPass out;
  out.y_input = base;
  std::vector<std::uint8_t> is_masked(base.size(), 0);
  for (auto p : masked) {
    out.y_input[p] = kMask;
    is_masked[p] = 1;
  }
  for (std::size_t i = 0; i < base.size(); ++i) (is_masked[i] ? out.mask_positions : out.obs_positions).push_back(i);
  out.n_mask = out.mask_positions.size();
  out.n_obs = out.obs_positions.size();
  out.alpha = static_cast<double>(out.n_mask) / static_cast<double>(base.size());
  return out;
}

inline std::vector<std::size_t> iota_positions(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace detail

// m ~ Uniform{1..L}, then m distinct positions uniformly; those slots become
// [MASK].
inline MaskedPass uniform_mask_y(const TokenSeq& y, CounterRng& rng) {
  if (y.empty()) throw Error("uniform_mask_y: empty target");
  const std::size_t m = 1 + static_cast<std::size_t>(rng.below(y.size()));
  return detail::make_pass(y, sample_without_replacement(detail::iota_positions(y.size()), m, rng));
}

// Masks round(phi(alpha_dec) * L_X) source tokens chosen uniformly without
// replacement. L_X counts every token except [LENGTH] and padding; special
// tokens ([LENGTH], EOS, PAD, MASK) are never selected.
inline TokenSeq mask_x(const TokenSeq& x, double alpha_dec, const MappingFunction& phi, CounterRng& rng) {
  if (!(alpha_dec >= 0 && alpha_dec <= 1)) throw Error("mask_x: alpha outside [0,1]");
  std::vector<std::size_t> maskable;
  std::size_t length = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] != kLength && x[i] != kPad) ++length;
    if (!is_reserved(x[i]) || x[i] == kUnk) maskable.push_back(i);
  }
  const std::size_t count = std::min(round_count(phi(alpha_dec) * static_cast<double>(length)), maskable.size());
  TokenSeq out = x;
  if (count == 0) return out;
  for (auto p : sample_without_replacement(maskable, count, rng)) out[p] = kMask;
  return out;
}

// Fraction of masked positions whose prediction equals the gold id.
inline double compute_beta(std::span<const TokenId> pred_ids, std::span<const TokenId> gold_ids,
                           std::span<const std::size_t> mask_positions) {
  if (mask_positions.empty()) throw Error("compute_beta: empty mask set");
  std::size_t correct = 0;
  for (auto p : mask_positions) correct += pred_ids[p] == gold_ids[p];
  return static_cast<double>(correct) / static_cast<double>(mask_positions.size());
}

inline SecondPassPlan plan_second_pass(double beta, const MappingFunction& psi, PsiConvention convention) {
  if (!(beta >= 0 && beta <= 1)) throw Error("plan_second_pass: beta outside [0,1]");
  SecondPassPlan plan;
  plan.beta = beta;
  plan.psi_value = psi(beta);
  if (convention == PsiConvention::main_text) {
    plan.p_pred = 1.0 - plan.psi_value;
    plan.p_obs = plan.psi_value;
  } else {
    plan.p_pred = plan.psi_value;
    plan.p_obs = 1.0 - plan.psi_value;
  }
  return plan;
}

namespace detail {

// Slots of `pass` that stay observed carry: previous content for observed
// slots; the prediction (or gold, when ground_truth_obs) for previously
// masked slots.
inline MaskedPass rebuild(const TokenSeq& pred_ids, const TokenSeq& gold_ids, const MaskedPass& pass,
                          std::vector<std::size_t> selected, bool ground_truth_obs) {
  TokenSeq base = pass.y_input;
  for (auto p : pass.mask_positions) base[p] = ground_truth_obs ? gold_ids[p] : pred_ids[p];
  return make_pass(base, std::move(selected));
}

// `k` slots of `group` with the lowest confidence, ties to the lower index.
inline std::vector<std::size_t> lowest_confidence(const std::vector<std::size_t>& group, std::span<const double> conf,
                                                  std::size_t k) {
  std::vector<std::size_t> order = group;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return conf[a] < conf[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

}  // namespace detail

// Second masking pass over the target. Every previously masked slot is
// remasked with plan.p_pred and every observed slot with plan.p_obs, in
// position order; an empty selection force-masks one uniformly chosen slot.
// With policy.confidence_based, round(p * group size) lowest-confidence
// slots of each group are taken instead (confidences indexed by position).
inline MaskedPass adaptive_mask_y(const TokenSeq& pred_ids, const TokenSeq& gold_ids, const MaskedPass& pass,
                                  const SecondPassPlan& plan, const MaskingPolicy& policy, CounterRng& rng,
                                  std::span<const double> confidences = {}) {
  const std::size_t L = pass.y_input.size();
  if (pred_ids.size() < L || gold_ids.size() < L) throw Error("adaptive_mask_y: predictions do not cover the target");
  std::vector<std::size_t> selected;
  if (policy.confidence_based) {
    if (confidences.size() < L) throw Error("adaptive_mask_y: confidence-based selection needs per-slot confidences");
    auto a = detail::lowest_confidence(pass.mask_positions, confidences,
                                       round_count(plan.p_pred * static_cast<double>(pass.n_mask)));
    auto b = detail::lowest_confidence(pass.obs_positions, confidences,
                                       round_count(plan.p_obs * static_cast<double>(pass.n_obs)));
    selected = std::move(a);
    selected.insert(selected.end(), b.begin(), b.end());
  } else {
    std::vector<std::uint8_t> was_masked(L, 0);
    for (auto p : pass.mask_positions) was_masked[p] = 1;
    for (std::size_t i = 0; i < L; ++i)
      if (rng.bernoulli(was_masked[i] ? plan.p_pred : plan.p_obs)) selected.push_back(i);
  }
  if (selected.empty()) selected.push_back(static_cast<std::size_t>(rng.below(L)));
  return detail::rebuild(pred_ids, gold_ids, pass, std::move(selected), policy.ground_truth_obs);
}

// Second pass drawn like the first (uniform count, uniform positions)
// instead of from psi.
inline MaskedPass uniform_second_pass(const TokenSeq& pred_ids, const TokenSeq& gold_ids, const MaskedPass& pass,
                                      const MaskingPolicy& policy, CounterRng& rng) {
  const std::size_t L = pass.y_input.size();
  const std::size_t m = 1 + static_cast<std::size_t>(rng.below(L));
  auto selected = sample_without_replacement(detail::iota_positions(L), m, rng);
  return detail::rebuild(pred_ids, gold_ids, pass, std::move(selected), policy.ground_truth_obs);
}

// Expected fraction of wrong tokens remasked under p = 0.6 (1 - beta) + 0.2
// with beta the error rate: 0.4 beta - 0.3 beta^2.
inline double expected_remask_ratio(double beta_err) {
  if (!(beta_err >= 0 && beta_err <= 1)) throw Error("expected_remask_ratio: beta outside [0,1]");
  return 0.4 * beta_err - 0.3 * beta_err * beta_err;
}

// Monte Carlo counterpart of expected_remask_ratio: m ~ Uniform{1..L},
// round(beta_err * m) wrong predictions, each remasked with the predicted-slot
// probability of `convention` evaluated at correctness 1 - beta_err. Returns
// the mean over trials of (#wrong remasked) / L.
inline double simulate_remask_expectation(std::size_t L, double beta_err, const MappingFunction& psi,
                                          PsiConvention convention, std::size_t trials, CounterRng& rng) {
  if (trials < 10000) throw Error("simulate_remask_expectation: needs at least 1e4 trials");
  if (L < 1) throw Error("simulate_remask_expectation: L must be positive");
  const SecondPassPlan plan = plan_second_pass(1.0 - beta_err, psi, convention);
  double total = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    const std::size_t m = 1 + static_cast<std::size_t>(rng.below(L));
    const std::size_t wrong = round_count(beta_err * static_cast<double>(m));
    std::size_t remasked = 0;
    for (std::size_t i = 0; i < wrong; ++i) remasked += rng.bernoulli(plan.p_pred);
    total += static_cast<double>(remasked) / static_cast<double>(L);
  }
  return total / static_cast<double>(trials);
}

}  // namespace amom
