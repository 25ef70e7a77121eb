// Finite-difference checks of every differentiable primitive, in double.
// Shared by the numeric unit tests and the acceptance binary.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "amom/gradcheck.hpp"
#include "amom/ops.hpp"
#include "amom/rng.hpp"

namespace amom::checks {

using TD = Tensor<double>;

inline TD random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  CounterRng rng(seed, "test-tensor");
  TD t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// sum(out * W) with a fixed random W, so every output element matters.
inline TD weighted_sum(const TD& out, std::uint64_t seed) { return sum(mul(out, random_tensor(out.shape(), seed + 99))); }

struct PrimitiveError {
  std::string name;
  double error;
};

inline constexpr double kPrimitiveStep = 1e-3;

// Max relative error per primitive for inputs drawn from `s`.
inline std::vector<PrimitiveError> primitive_gradient_errors(std::uint64_t s) {
  using F = std::function<TD(const TD&)>;
  std::vector<PrimitiveError> out;
  auto check = [&](std::string name, const F& f, const TD& x) {
    out.push_back({std::move(name), gradient_check<double>(f, x, kPrimitiveStep)});
  };

  TD a = random_tensor({3, 4}, s), b = random_tensor({4, 5}, s + 1), c = random_tensor({3, 4}, s + 2);
  check("matmul/lhs", [&](const TD& x) { return weighted_sum(matmul(x, b), s); }, a);
  check("matmul/rhs", [&](const TD& x) { return weighted_sum(matmul(a, x), s); }, b);
  check("add", [&](const TD& x) { return weighted_sum(add(x, c), s); }, a);
  check("add/broadcast", [&](const TD& x) { return weighted_sum(add(c, x), s); }, random_tensor({4}, s + 3));
  check("mul", [&](const TD& x) { return weighted_sum(mul(x, c), s); }, a);
  check("mul/broadcast", [&](const TD& x) { return weighted_sum(mul(c, x), s); }, random_tensor({4}, s + 4));
  check("scale", [&](const TD& x) { return weighted_sum(scale(x, 1.7), s); }, a);
  // keep relu inputs away from the kink
  TD away = random_tensor({3, 4}, s + 5, 0.05, 1.0);
  for (std::size_t i = 0; i < away.numel(); i += 2) away[i] = -away[i];
  check("relu", [&](const TD& x) { return weighted_sum(relu(x), s); }, away);
  check("sum", [&](const TD& x) { return sum(x); }, a);
  check("mean", [&](const TD& x) { return scale(mean(mul(x, x)), 3.0); }, a);
  for (std::size_t axis : {0, 1}) {
    const std::string ax = "/axis" + std::to_string(axis);
    check("softmax" + ax, [&](const TD& x) { return weighted_sum(softmax(x, axis), s); }, a);
    check("log_softmax" + ax, [&](const TD& x) { return weighted_sum(log_softmax(x, axis), s); }, a);
  }
  TD gain = random_tensor({4}, s + 6, 0.5, 1.5), bias = random_tensor({4}, s + 7);
  check("layer_norm/x", [&](const TD& x) { return weighted_sum(layer_norm(x, gain, bias, 1), s); }, a);
  check("layer_norm/gain", [&](const TD& g) { return weighted_sum(layer_norm(a, g, bias, 1), s); }, gain);
  check("layer_norm/bias", [&](const TD& bb) { return weighted_sum(layer_norm(a, gain, bb, 1), s); }, bias);
  TD gain3 = random_tensor({3}, s + 8, 0.5, 1.5), bias3 = random_tensor({3}, s + 9);
  check("layer_norm/axis0", [&](const TD& x) { return weighted_sum(layer_norm(x, gain3, bias3, 0), s); }, a);
  const std::vector<std::int32_t> ids{2, 0, 2, 1};
  check("embedding_lookup",
        [&](const TD& t) { return weighted_sum(embedding_lookup(t, std::span<const std::int32_t>(ids)), s); }, c);
  const std::vector<std::size_t> rows{2, 0, 2};
  check("gather_rows", [&](const TD& x) { return weighted_sum(gather_rows(x, std::span<const std::size_t>(rows)), s); },
        a);
  check("dropout",
        [&](const TD& x) {
          CounterRng r(s, "dropout");
          return weighted_sum(dropout(x, 0.3, r), s);
        },
        a);
  check("reshape", [&](const TD& x) { return weighted_sum(reshape(x, {2, 6}), s); }, a);
  check("transpose", [&](const TD& x) { return weighted_sum(transpose(x), s); }, a);
  TD t3 = random_tensor({2, 3, 4}, s + 10);
  check("transpose/3d", [&](const TD& x) { return weighted_sum(transpose(x, 0, 2), s); }, t3);
  check("concat/axis1", [&](const TD& x) { return weighted_sum(concat<double>({x, c, x}, 1), s); }, a);
  check("concat/axis0", [&](const TD& x) { return weighted_sum(concat<double>({c, x}, 0), s); }, a);
  check("slice", [&](const TD& x) { return weighted_sum(slice(x, 1, 1, 3), s); }, a);
  const std::vector<std::uint8_t> mask{1, 0, 0, 1, 0, 1, 0, 0, 1, 1, 0, 0};
  check("mask_fill",
        [&](const TD& x) { return weighted_sum(mask_fill(x, std::span<const std::uint8_t>(mask), -2.0), s); }, a);
  const std::vector<std::int32_t> targets{3, 0, 1};
  for (double eps : {0.0, 0.1}) {
    check(eps == 0 ? "nll_loss" : "nll_loss/smoothed",
          [&](const TD& x) { return nll_loss(log_softmax(x, 1), std::span<const std::int32_t>(targets), eps); }, a);
  }
  TD w = random_tensor({4, 5}, s + 11), bl = random_tensor({5}, s + 12);
  check("linear", [&](const TD& x) { return weighted_sum(linear(x, w, bl), s); }, a);

  const std::size_t B = 2, Lq = 3, Lk = 4, d = 4;
  TD q = random_tensor({B * Lq, d}, s + 13), k = random_tensor({B * Lk, d}, s + 14), v = random_tensor({B * Lk, d}, s + 15);
  AttentionLayout cross{B, Lq, Lk, 2, {1, 1, 1, 0, 1, 1, 0, 0}, false};
  check("attention/q", [&](const TD& x) { return weighted_sum(attention(x, k, v, cross), s); }, q);
  check("attention/k", [&](const TD& x) { return weighted_sum(attention(q, x, v, cross), s); }, k);
  check("attention/v", [&](const TD& x) { return weighted_sum(attention(q, k, x, cross), s); }, v);
  TD sq = random_tensor({B * Lk, d}, s + 16);
  AttentionLayout causal{B, Lk, Lk, 2, {}, true};
  check("attention/causal_self", [&](const TD& x) { return weighted_sum(attention(x, x, x, causal), s); }, sq);
  return out;
}

}  // namespace amom::checks
